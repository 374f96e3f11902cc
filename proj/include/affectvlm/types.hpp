#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace avlm {

enum class Emotion : std::uint8_t { happy = 0, sad, angry, disgust, fear, surprise };
inline constexpr std::size_t kNumEmotions = 6;
inline constexpr std::array<Emotion, kNumEmotions> kAllEmotions{
    Emotion::happy, Emotion::sad, Emotion::angry, Emotion::disgust, Emotion::fear, Emotion::surprise};

enum class AgeGroup : std::uint8_t { young = 0, middle_aged, older };
enum class Gender : std::uint8_t { female = 0, male };
enum class Ethnicity : std::uint8_t { asian = 0, black, white, hispanic };

inline constexpr std::array<AgeGroup, 3> kAllAgeGroups{AgeGroup::young, AgeGroup::middle_aged, AgeGroup::older};
inline constexpr std::array<Gender, 2> kAllGenders{Gender::female, Gender::male};
inline constexpr std::array<Ethnicity, 4> kAllEthnicities{Ethnicity::asian, Ethnicity::black, Ethnicity::white,
                                                           Ethnicity::hispanic};

constexpr std::string_view to_string(Emotion e) {
    constexpr std::array<std::string_view, kNumEmotions> names{"happy", "sad", "angry", "disgust", "fear", "surprise"};
    return names[static_cast<std::size_t>(e)];
}
constexpr std::string_view to_string(AgeGroup a) {
    constexpr std::array<std::string_view, 3> names{"young", "middle-aged", "older"};
    return names[static_cast<std::size_t>(a)];
}
constexpr std::string_view to_string(Gender g) { return g == Gender::female ? "female" : "male"; }
constexpr std::string_view to_string(Ethnicity e) {
    constexpr std::array<std::string_view, 4> names{"Asian", "Black", "White", "Hispanic"};
    return names[static_cast<std::size_t>(e)];
}

namespace detail {
template <class Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::array<Enum, N>& all, std::string_view what) {
    for (auto v : all)
        if (to_string(v) == text) return v;
    throw InvalidInput("unknown " + std::string(what) + " '" + std::string(text) + "'");
}
}  // namespace detail

inline Emotion parse_emotion(std::string_view s) { return detail::parse_enum(s, kAllEmotions, "emotion"); }
inline AgeGroup parse_age_group(std::string_view s) { return detail::parse_enum(s, kAllAgeGroups, "age group"); }
inline Gender parse_gender(std::string_view s) { return detail::parse_enum(s, kAllGenders, "gender"); }
inline Ethnicity parse_ethnicity(std::string_view s) { return detail::parse_enum(s, kAllEthnicities, "ethnicity"); }

struct SubjectMeta {
    std::uint32_t subject_id = 0;
    AgeGroup age_group = AgeGroup::young;
    Gender gender = Gender::female;
    Ethnicity ethnicity = Ethnicity::asian;

    friend bool operator==(const SubjectMeta&, const SubjectMeta&) = default;
};

using Point3 = std::array<float, 3>;
using PointCloud = std::vector<Point3>;

struct FaceSequence {
    SubjectMeta subject;
    Emotion emotion = Emotion::happy;
    std::vector<PointCloud> frames;

    std::size_t num_frames() const { return frames.size(); }
    std::size_t num_points() const { return frames.empty() ? 0 : frames.front().size(); }
    const PointCloud& apex() const { return frames.back(); }

    friend bool operator==(const FaceSequence&, const FaceSequence&) = default;
};

using Corpus = std::vector<FaceSequence>;

enum class ViewName : std::uint8_t { frontal = 0, left, right };
inline constexpr std::size_t kNumViews = 3;
inline constexpr std::array<ViewName, kNumViews> kAllViews{ViewName::frontal, ViewName::left, ViewName::right};

constexpr std::string_view to_string(ViewName v) {
    constexpr std::array<std::string_view, kNumViews> names{"frontal", "left", "right"};
    return names[static_cast<std::size_t>(v)];
}

struct ViewAngle {
    ViewName name = ViewName::frontal;
    double yaw_degrees = 0.0;

    static ViewAngle frontal() { return {ViewName::frontal, 0.0}; }
    static ViewAngle left(double yaw = 30.0) { return {ViewName::left, -yaw}; }
    static ViewAngle right(double yaw = 30.0) { return {ViewName::right, yaw}; }

    friend bool operator==(const ViewAngle&, const ViewAngle&) = default;
};

struct Resolution {
    int height = 64;
    int width = 64;
    friend bool operator==(const Resolution&, const Resolution&) = default;
};

// Row-major grayscale image with values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

    double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
    double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
    std::size_t size() const { return pixels.size(); }

    friend bool operator==(const Image&, const Image&) = default;
};

enum class ImageKind : std::uint8_t { depth = 0, dynamic };

struct ViewImage {
    ViewAngle view;
    Image image;
    ImageKind kind = ImageKind::depth;

    friend bool operator==(const ViewImage&, const ViewImage&) = default;
};

// Views ordered (frontal, left, right).
using MultiviewSample = std::array<ViewImage, kNumViews>;

}  // namespace avlm
