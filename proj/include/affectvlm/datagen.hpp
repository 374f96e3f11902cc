#pragma once

// Synthetic 3D/4D face corpus. Each face is a height-field over an ellipse
// (a front-facing scan), perturbed by a smooth per-subject identity field
// and by a per-emotion deformation field ramped from neutral to apex.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace avlm {

struct CorpusSpec {
    std::uint32_t n_subjects = 10;
    std::uint32_t frames_per_sequence = 8;
    std::uint32_t points_per_face = 2048;
    std::uint64_t seed = 7;
    double identity_scale = 0.3;
    double expression_scale = 1.0;

    friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

inline void to_json(nlohmann::json& j, const CorpusSpec& s) {
    j = {{"n_subjects", s.n_subjects},
         {"frames_per_sequence", s.frames_per_sequence},
         {"points_per_face", s.points_per_face},
         {"seed", s.seed},
         {"identity_scale", s.identity_scale},
         {"expression_scale", s.expression_scale}};
}

inline void from_json(const nlohmann::json& j, CorpusSpec& s) {
    CorpusSpec d;
    s.n_subjects = j.value("n_subjects", d.n_subjects);
    s.frames_per_sequence = j.value("frames_per_sequence", d.frames_per_sequence);
    s.points_per_face = j.value("points_per_face", d.points_per_face);
    s.seed = j.value("seed", d.seed);
    s.identity_scale = j.value("identity_scale", d.identity_scale);
    s.expression_scale = j.value("expression_scale", d.expression_scale);
}

namespace datagen {

// Head ellipse semi-axes (x, y) and peak depth.
inline constexpr double kHeadA = 0.55;
inline constexpr double kHeadB = 0.75;
inline constexpr double kHeadDepth = 0.5;

// Stream tags for the counter-based generator.
enum : std::uint64_t { kTagMeta = 1, kTagPoint = 2, kTagIdentity = 3, kTagExpression = 4 };

struct Bump {
    double cx, cy, sigma;
    double dx, dy, dz;
};

// Displacement bumps per emotion, in normalized head units at unit scale.
// Left/right pairs are mirrored so every expression is bilaterally symmetric.
inline const std::vector<Bump>& emotion_field(Emotion e) {
    static const std::array<std::vector<Bump>, kNumEmotions> fields{{
        // happy: mouth corners pulled up and out, cheeks raised
        {{-0.18, -0.38, 0.08, -0.03, 0.08, 0.05}, {0.18, -0.38, 0.08, 0.03, 0.08, 0.05},
         {-0.28, -0.12, 0.10, 0.0, 0.04, 0.08}, {0.28, -0.12, 0.10, 0.0, 0.04, 0.08}},
        // sad: mouth corners down, inner brows raised, chin pushed up
        {{-0.18, -0.38, 0.08, 0.0, -0.08, -0.03}, {0.18, -0.38, 0.08, 0.0, -0.08, -0.03},
         {-0.08, 0.33, 0.07, 0.0, 0.06, 0.03}, {0.08, 0.33, 0.07, 0.0, 0.06, 0.03},
         {0.0, -0.58, 0.09, 0.0, 0.02, 0.06}},
        // angry: brows lowered and drawn together, lips pressed
        {{-0.2, 0.35, 0.08, 0.02, -0.07, 0.06}, {0.2, 0.35, 0.08, -0.02, -0.07, 0.06},
         {0.0, -0.38, 0.09, 0.0, 0.0, -0.07}},
        // disgust: nose wrinkled, upper lip raised
        {{0.0, 0.06, 0.08, 0.0, 0.03, 0.08}, {0.0, -0.27, 0.08, 0.0, 0.06, 0.06},
         {-0.12, -0.05, 0.06, 0.0, 0.03, 0.04}, {0.12, -0.05, 0.06, 0.0, 0.03, 0.04}},
        // fear: brows raised, eyes widened, mouth stretched sideways
        {{-0.2, 0.35, 0.10, 0.0, 0.07, 0.0}, {0.2, 0.35, 0.10, 0.0, 0.07, 0.0},
         {-0.2, 0.2, 0.07, 0.0, 0.0, 0.05}, {0.2, 0.2, 0.07, 0.0, 0.0, 0.05},
         {-0.18, -0.38, 0.07, -0.05, -0.03, -0.04}, {0.18, -0.38, 0.07, 0.05, -0.03, -0.04}},
        // surprise: brows high, mouth open, jaw dropped
        {{-0.2, 0.36, 0.12, 0.0, 0.12, 0.02}, {0.2, 0.36, 0.12, 0.0, 0.12, 0.02},
         {0.0, -0.38, 0.10, 0.0, -0.10, -0.15}, {0.0, -0.6, 0.12, 0.0, -0.10, 0.0}},
    }};
    return fields[static_cast<std::size_t>(e)];
}

inline double gauss(double x, double y, double cx, double cy, double sigma) {
    const double dx = x - cx, dy = y - cy;
    return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
}

struct IdentityField {
    double sx = 1.0, sy = 1.0, sz = 1.0;
    std::vector<Bump> bumps;
};

inline IdentityField make_identity(const CorpusSpec& spec, std::uint32_t subject) {
    Rng rng{spec.seed, subject, kTagIdentity};
    IdentityField id;
    const double s = spec.identity_scale;
    id.sx = 1.0 + s * rng.uniform(-0.25, 0.25);
    id.sy = 1.0 + s * rng.uniform(-0.25, 0.25);
    id.sz = 1.0 + s * rng.uniform(-0.4, 0.4);
    for (int k = 0; k < 5; ++k) {
        Bump b;
        b.cx = rng.uniform(-0.45, 0.45);
        b.cy = rng.uniform(-0.65, 0.65);
        b.sigma = rng.uniform(0.10, 0.25);
        b.dx = s * rng.uniform(-0.03, 0.03);
        b.dy = s * rng.uniform(-0.03, 0.03);
        b.dz = s * rng.uniform(-0.12, 0.12);
        id.bumps.push_back(b);
    }
    return id;
}

inline SubjectMeta make_meta(const CorpusSpec& spec, std::uint32_t subject) {
    Rng rng{spec.seed, subject, kTagMeta};
    SubjectMeta m;
    m.subject_id = subject;
    m.age_group = kAllAgeGroups[rng.below(kAllAgeGroups.size())];
    m.gender = kAllGenders[rng.below(kAllGenders.size())];
    m.ethnicity = kAllEthnicities[rng.below(kAllEthnicities.size())];
    return m;
}

// Neutral-pose point i of a subject: uniform over the head ellipse, lifted
// onto an ellipsoidal height field with a nose ridge and eye sockets.
inline std::array<double, 3> neutral_point(const CorpusSpec& spec, std::uint32_t subject, std::uint32_t i,
                                           const IdentityField& id) {
    const std::uint64_t h1 = hash_keys({spec.seed, subject, kTagPoint, i, 0});
    const std::uint64_t h2 = hash_keys({spec.seed, subject, kTagPoint, i, 1});
    const double r = std::sqrt(to_unit(h1));
    const double theta = 2.0 * std::numbers::pi * to_unit(h2);
    const double x = kHeadA * r * std::cos(theta);
    const double y = kHeadB * r * std::sin(theta);
    double z = kHeadDepth * std::sqrt(std::max(0.0, 1.0 - r * r));
    z += 0.15 * gauss(x, y, 0.0, 0.0, 0.07);                                         // nose
    z -= 0.05 * (gauss(x, y, -0.2, 0.2, 0.07) + gauss(x, y, 0.2, 0.2, 0.07));       // eye sockets
    std::array<double, 3> p{x * id.sx, y * id.sy, z * id.sz};
    for (const auto& b : id.bumps) {
        const double g = gauss(x, y, b.cx, b.cy, b.sigma);
        p[0] += g * b.dx;
        p[1] += g * b.dy;
        p[2] += g * b.dz;
    }
    return p;
}

}  // namespace datagen

// Builds one subject/emotion sequence; frame t has deformation amplitude
// t / (T - 1), so frame 0 is neutral and the last frame is the apex.
inline FaceSequence generate_sequence(const CorpusSpec& spec, std::uint32_t subject, Emotion emotion) {
    using namespace datagen;
    const IdentityField id = make_identity(spec, subject);
    Rng expr_rng{spec.seed, subject, static_cast<std::uint64_t>(emotion), kTagExpression};
    const double intensity = spec.expression_scale * expr_rng.uniform(0.85, 1.15);

    const std::size_t P = spec.points_per_face;
    std::vector<std::array<double, 3>> base(P);
    std::vector<std::array<double, 3>> disp(P, {0.0, 0.0, 0.0});
    for (std::uint32_t i = 0; i < P; ++i) {
        base[i] = neutral_point(spec, subject, i, id);
        if (intensity == 0.0) continue;
        for (const auto& b : emotion_field(emotion)) {
            const double g = gauss(base[i][0], base[i][1], b.cx * id.sx, b.cy * id.sy, b.sigma);
            disp[i][0] += intensity * g * b.dx;
            disp[i][1] += intensity * g * b.dy;
            disp[i][2] += intensity * g * b.dz;
        }
    }

    FaceSequence seq;
    seq.subject = make_meta(spec, subject);
    seq.emotion = emotion;
    const std::uint32_t T = spec.frames_per_sequence;
    seq.frames.resize(T);
    for (std::uint32_t t = 0; t < T; ++t) {
        const double ramp = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0;
        auto& frame = seq.frames[t];
        frame.resize(P);
        for (std::size_t i = 0; i < P; ++i)
            for (int c = 0; c < 3; ++c)
                frame[i][c] = static_cast<float>(std::clamp(base[i][c] + ramp * disp[i][c], -1.0, 1.0));
    }
    return seq;
}

inline Corpus generate_corpus(const CorpusSpec& spec) {
    if (spec.n_subjects < 10)
        throw ProtocolError("corpus needs at least 10 subjects for 10-fold subject splits, got " +
                            std::to_string(spec.n_subjects));
    if (spec.frames_per_sequence < 1) throw InvalidInput("frames_per_sequence must be >= 1");
    if (spec.points_per_face < 1) throw InvalidInput("points_per_face must be >= 1");
    if (spec.identity_scale < 0 || spec.expression_scale < 0) throw InvalidInput("scales must be nonnegative");
    Corpus corpus;
    corpus.reserve(static_cast<std::size_t>(spec.n_subjects) * kNumEmotions);
    for (std::uint32_t s = 0; s < spec.n_subjects; ++s)
        for (Emotion e : kAllEmotions) corpus.push_back(generate_sequence(spec, s, e));
    return corpus;
}

// ---------------------------------------------------------------------------
// Corpus directory: corpus.json (index + metadata) plus one little-endian
// float32 frame file per sequence.

inline constexpr int kCorpusFormatVersion = 1;

inline std::string sequence_file_name(std::size_t index) {
    std::string digits = std::to_string(index);
    return "seq_" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits + ".bin";
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir,
                        const std::optional<CorpusSpec>& spec = std::nullopt) {
    std::filesystem::create_directories(dir);
    nlohmann::json index = nlohmann::json::array();
    for (std::size_t k = 0; k < corpus.size(); ++k) {
        const auto& seq = corpus[k];
        const std::size_t P = seq.num_points();
        io::Writer w;
        for (const auto& frame : seq.frames) {
            if (frame.size() != P) throw InvalidInput("sequence has frames with differing point counts");
            for (const auto& p : frame)
                for (float c : p) w.put(c);
        }
        const auto name = sequence_file_name(k);
        io::write_file(dir / name, w.bytes());
        index.push_back({{"file", name},
                         {"subject_id", seq.subject.subject_id},
                         {"age_group", to_string(seq.subject.age_group)},
                         {"gender", to_string(seq.subject.gender)},
                         {"ethnicity", to_string(seq.subject.ethnicity)},
                         {"emotion", to_string(seq.emotion)},
                         {"frames", seq.num_frames()},
                         {"points", P}});
    }
    nlohmann::json doc{{"format", "avlm-corpus"}, {"format_version", kCorpusFormatVersion}, {"sequences", index}};
    if (spec) doc["spec"] = *spec;
    io::write_text(dir / "corpus.json", doc.dump(2) + "\n");
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
    const auto text = io::read_text(dir / "corpus.json");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("corpus.json: " + std::string(e.what()), e.byte);
    }
    if (!doc.is_object() || !doc.contains("format_version"))
        throw FormatVersionError("corpus.json: missing mandatory format_version field");
    if (doc["format_version"] != kCorpusFormatVersion)
        throw FormatVersionError("corpus.json: unsupported format_version " + doc["format_version"].dump() +
                                 " (expected " + std::to_string(kCorpusFormatVersion) + ")");
    Corpus corpus;
    try {
        for (const auto& entry : doc.at("sequences")) {
            FaceSequence seq;
            seq.subject.subject_id = entry.at("subject_id").get<std::uint32_t>();
            seq.subject.age_group = parse_age_group(entry.at("age_group").get<std::string>());
            seq.subject.gender = parse_gender(entry.at("gender").get<std::string>());
            seq.subject.ethnicity = parse_ethnicity(entry.at("ethnicity").get<std::string>());
            seq.emotion = parse_emotion(entry.at("emotion").get<std::string>());
            const auto T = entry.at("frames").get<std::size_t>();
            const auto P = entry.at("points").get<std::size_t>();
            const auto file = entry.at("file").get<std::string>();
            const auto bytes = io::read_file(dir / file);
            const std::size_t expected = T * P * 3 * sizeof(float);
            if (bytes.size() != expected)
                throw ParseError(file + ": expected " + std::to_string(expected) + " bytes, found " +
                                     std::to_string(bytes.size()),
                                 std::min(bytes.size(), expected));
            io::Reader r(bytes, file);
            seq.frames.assign(T, PointCloud(P));
            for (auto& frame : seq.frames)
                for (auto& p : frame)
                    for (float& c : p) c = r.get<float>();
            corpus.push_back(std::move(seq));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("corpus.json: malformed index: " + std::string(e.what()), 0);
    }
    return corpus;
}

inline std::optional<CorpusSpec> load_corpus_spec(const std::filesystem::path& dir) {
    const auto doc = nlohmann::json::parse(io::read_text(dir / "corpus.json"));
    if (!doc.contains("spec")) return std::nullopt;
    return doc["spec"].get<CorpusSpec>();
}

}  // namespace avlm
