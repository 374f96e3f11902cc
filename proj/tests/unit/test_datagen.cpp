#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "affectvlm/datagen.hpp"
#include "affectvlm/views.hpp"
#include "test_helpers.hpp"

using namespace avlm;
using test::TempDir;

TEST(Datagen, CountsFollowCorpusSettings) {
    CorpusSpec s;  // seed 7, 10 subjects, T=8, P=2048
    const auto c = generate_corpus(s);
    ASSERT_EQ(c.size(), 60u);
    for (const auto& seq : c) {
        EXPECT_EQ(seq.num_frames(), 8u);
        for (const auto& f : seq.frames) EXPECT_EQ(f.size(), 2048u);
    }
}

TEST(Datagen, OneSequencePerSubjectAndEmotion) {
    const auto c = generate_corpus(test::small_spec());
    std::set<std::pair<std::uint32_t, Emotion>> seen;
    std::map<std::uint32_t, SubjectMeta> meta;
    for (const auto& seq : c) {
        EXPECT_TRUE(seen.insert({seq.subject.subject_id, seq.emotion}).second);
        auto [it, fresh] = meta.emplace(seq.subject.subject_id, seq.subject);
        if (!fresh) EXPECT_EQ(it->second, seq.subject);
    }
    EXPECT_EQ(meta.size(), 10u);
}

TEST(Datagen, RejectsTooFewSubjects) {
    auto s = test::small_spec();
    s.n_subjects = 9;
    EXPECT_THROW(generate_corpus(s), ProtocolError);
}

TEST(Datagen, SameSpecGivesIdenticalSerializedCorpora) {
    TempDir a("gen-a"), b("gen-b");
    save_corpus(generate_corpus(test::small_spec()), a.path());
    save_corpus(generate_corpus(test::small_spec()), b.path());
    for (const auto& e : std::filesystem::directory_iterator(a.path())) {
        const auto name = e.path().filename();
        EXPECT_EQ(io::read_file(e.path()), io::read_file(b.path() / name)) << name;
    }
}

TEST(Datagen, DifferentSeedsDiffer) {
    auto s = test::small_spec();
    const auto c1 = generate_corpus(s);
    s.seed = 8;
    EXPECT_NE(generate_corpus(s)[0].frames, c1[0].frames);
}

TEST(Datagen, ZeroExpressionScaleMakesEmotionsIdentical) {
    auto s = test::small_spec();
    s.expression_scale = 0;
    const auto c = generate_corpus(s);
    std::map<std::uint32_t, const FaceSequence*> first;
    for (const auto& seq : c) {
        auto [it, fresh] = first.emplace(seq.subject.subject_id, &seq);
        if (!fresh) EXPECT_EQ(seq.frames, it->second->frames);
    }
}

TEST(Datagen, CoordinatesBoundedAndRampMonotone) {
    const auto c = generate_corpus(test::small_spec(512, 6));
    for (const auto& seq : c) {
        for (const auto& f : seq.frames)
            for (const auto& p : f)
                for (float v : p) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
        double prev = 0;
        for (std::size_t t = 1; t < seq.num_frames(); ++t) {
            double amp = 0;
            for (std::size_t i = 0; i < seq.num_points(); ++i)
                for (int k = 0; k < 3; ++k) amp += std::abs(seq.frames[t][i][k] - seq.frames[0][i][k]);
            EXPECT_GE(amp, prev - 1e-9);
            prev = amp;
        }
        EXPECT_GT(prev, 0.0);
    }
}

TEST(Datagen, FrameZeroIsNeutral) {
    const auto c = generate_corpus(test::small_spec());
    std::map<std::uint32_t, const PointCloud*> neutral;
    for (const auto& seq : c) {
        auto [it, fresh] = neutral.emplace(seq.subject.subject_id, &seq.frames[0]);
        if (!fresh) EXPECT_EQ(seq.frames[0], *it->second);
    }
}

TEST(Datagen, SingleFrameSequencesAreNeutral) {
    const auto c = generate_corpus(test::small_spec(256, 1));
    for (const auto& seq : c) ASSERT_EQ(seq.num_frames(), 1u);
    EXPECT_EQ(c[0].frames[0], c[1].frames[0]);
}

TEST(Datagen, ExpressionsSeparateUnderNearestCentroid) {
    auto s = test::small_spec(2048, 2);
    s.identity_scale = 0.1;
    s.expression_scale = 1.5;
    const auto c = generate_corpus(s);
    std::array<std::vector<double>, kNumEmotions> centroid;
    std::array<int, kNumEmotions> count{};
    for (auto& v : centroid) v.assign(64 * 64, 0.0);
    for (const auto& seq : c) {
        if (seq.subject.subject_id >= 8) continue;
        const auto img = project(seq.apex(), ViewAngle::frontal(), {}).image;
        auto& cen = centroid[static_cast<std::size_t>(seq.emotion)];
        for (std::size_t i = 0; i < img.size(); ++i) cen[i] += img.pixels[i];
        ++count[static_cast<std::size_t>(seq.emotion)];
    }
    int correct = 0, total = 0;
    for (const auto& seq : c) {
        if (seq.subject.subject_id < 8) continue;
        const auto img = project(seq.apex(), ViewAngle::frontal(), {}).image;
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t e = 0; e < kNumEmotions; ++e) {
            double d = 0;
            for (std::size_t i = 0; i < img.size(); ++i) {
                const double diff = img.pixels[i] - centroid[e][i] / count[e];
                d += diff * diff;
            }
            if (d < best_d) best_d = d, best = e;
        }
        correct += best == static_cast<std::size_t>(seq.emotion);
        ++total;
    }
    EXPECT_GT(static_cast<double>(correct) / total, 0.5);
}

TEST(CorpusIo, RoundTripIsExact) {
    TempDir d("rt");
    const auto c = generate_corpus(test::small_spec());
    save_corpus(c, d.path(), test::small_spec());
    EXPECT_EQ(load_corpus(d.path()), c);
    const auto spec = load_corpus_spec(d.path());
    ASSERT_TRUE(spec.has_value());
    EXPECT_EQ(spec->n_subjects, 10u);
}

TEST(CorpusIo, EmptyCorpusIsValid) {
    TempDir d("empty");
    save_corpus({}, d.path());
    EXPECT_TRUE(load_corpus(d.path()).empty());
}

TEST(CorpusIo, TruncatedFrameFileIsAParseError) {
    TempDir d("trunc");
    save_corpus(generate_corpus(test::small_spec(64, 2)), d.path());
    const auto file = d.path() / "seq_00003.bin";
    auto bytes = io::read_file(file);
    const std::size_t full = bytes.size();
    bytes.resize(full - 10);
    io::write_file(file, bytes);
    try {
        load_corpus(d.path());
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.byte_offset, full - 10);
        EXPECT_NE(std::string(e.what()).find("seq_00003.bin"), std::string::npos);
    }
}

TEST(CorpusIo, MalformedIndexIsAParseError) {
    TempDir d("bad");
    save_corpus(generate_corpus(test::small_spec(64, 2)), d.path());
    io::write_text(d.path() / "corpus.json", "{\"format_version\": 1, \"sequences\": [");
    EXPECT_THROW(load_corpus(d.path()), ParseError);
}

TEST(CorpusIo, VersionMismatchIsRejected) {
    TempDir d("ver");
    save_corpus(generate_corpus(test::small_spec(64, 2)), d.path());
    auto doc = nlohmann::json::parse(io::read_text(d.path() / "corpus.json"));
    doc["format_version"] = 2;
    io::write_text(d.path() / "corpus.json", doc.dump());
    EXPECT_THROW(load_corpus(d.path()), FormatVersionError);
    doc.erase("format_version");
    io::write_text(d.path() / "corpus.json", doc.dump());
    EXPECT_THROW(load_corpus(d.path()), FormatVersionError);
}
