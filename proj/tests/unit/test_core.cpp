#include <gtest/gtest.h>

#include <set>
#include <vector>

#include "affectvlm/binary_io.hpp"
#include "affectvlm/errors.hpp"
#include "affectvlm/rng.hpp"
#include "affectvlm/types.hpp"

using namespace avlm;

TEST(Rng, SplitMixReferenceValues) {
    // First outputs of the reference SplitMix64 generator seeded with 0.
    std::uint64_t state = 0;
    auto next = [&] { return mix64(state++ * 0x9E3779B97F4A7C15ULL); };
    EXPECT_EQ(next(), 0xE220A8397B1DCDAFULL);
    EXPECT_EQ(next(), 0x6E789E6AA1B965F4ULL);
    EXPECT_EQ(next(), 0x06C45D188009454FULL);
}

TEST(Rng, StreamsAreReproducibleAndKeyed) {
    Rng a{1, 2, 3}, b{1, 2, 3}, c{1, 2, 4};
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next();
        EXPECT_EQ(x, b.next());
        EXPECT_NE(x, c.next());
    }
}

TEST(Rng, UniformStaysInRange) {
    Rng r{42};
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        const double v = r.uniform(-2.0, 3.0);
        ASSERT_GE(v, -2.0);
        ASSERT_LT(v, 3.0);
    }
}

TEST(Rng, BelowCoversRangeRoughlyUniformly) {
    Rng r{7};
    std::vector<int> counts(6, 0);
    for (int i = 0; i < 60000; ++i) ++counts[r.below(6)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
    EXPECT_EQ(r.below(1), 0u);
    EXPECT_EQ(r.below(0), 0u);
}

TEST(Rng, ShuffleIsAPermutation) {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    Rng r{9};
    r.shuffle(std::span<int>(v));
    std::set<int> s(v.begin(), v.end());
    EXPECT_EQ(s.size(), 50u);
    std::vector<int> sorted(50);
    for (int i = 0; i < 50; ++i) sorted[i] = i;
    EXPECT_NE(v, sorted);
}

TEST(BinaryIo, RoundTripsLittleEndianValues) {
    io::Writer w;
    w.put<std::uint32_t>(0x01020304u);
    w.put<double>(-1.5);
    w.put<float>(0.25f);
    w.put_string("abc");
    const auto& bytes = w.bytes();
    EXPECT_EQ(bytes[0], 0x04);
    EXPECT_EQ(bytes[3], 0x01);
    io::Reader r(bytes, "buf");
    EXPECT_EQ(r.get<std::uint32_t>(), 0x01020304u);
    EXPECT_EQ(r.get<double>(), -1.5);
    EXPECT_EQ(r.get<float>(), 0.25f);
    EXPECT_EQ(r.get_string(3), "abc");
}

TEST(BinaryIo, TruncationReportsByteOffset) {
    io::Writer w;
    w.put<std::uint32_t>(5);
    const auto& bytes = w.bytes();
    io::Reader r(bytes, "buf");
    r.get<std::uint32_t>();
    try {
        r.get<std::uint32_t>();
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.byte_offset, 4u);
        EXPECT_NE(std::string(e.what()).find("byte offset 4"), std::string::npos);
    }
}

TEST(BinaryIo, Fnv1aKnownVectors) {
    const std::string empty, a = "a";
    EXPECT_EQ(io::fnv1a64({}), 0xCBF29CE484222325ULL);
    EXPECT_EQ(io::fnv1a64(std::span(reinterpret_cast<const unsigned char*>(a.data()), 1)), 0xAF63DC4C8601EC8CULL);
    EXPECT_EQ(io::hex64(0xABCull), "0000000000000abc");
}

TEST(Types, EnumNamesRoundTrip) {
    for (auto e : kAllEmotions) EXPECT_EQ(parse_emotion(to_string(e)), e);
    for (auto a : kAllAgeGroups) EXPECT_EQ(parse_age_group(to_string(a)), a);
    for (auto g : kAllGenders) EXPECT_EQ(parse_gender(to_string(g)), g);
    for (auto e : kAllEthnicities) EXPECT_EQ(parse_ethnicity(to_string(e)), e);
    EXPECT_EQ(to_string(AgeGroup::middle_aged), "middle-aged");
    EXPECT_THROW(parse_emotion("contempt"), InvalidInput);
}

TEST(Types, ViewAnglesAreSymmetric) {
    EXPECT_EQ(ViewAngle::frontal().yaw_degrees, 0.0);
    EXPECT_EQ(ViewAngle::left().yaw_degrees, -30.0);
    EXPECT_EQ(ViewAngle::right().yaw_degrees, 30.0);
    EXPECT_EQ(ViewAngle::left(12.5).yaw_degrees, -ViewAngle::right(12.5).yaw_degrees);
}
