#include <gtest/gtest.h>

#include <chrono>

#include "affectvlm/encoders.hpp"
#include "affectvlm/gradcheck.hpp"
#include "fixtures.hpp"

using namespace avlm;

namespace {

ModelConfig small_model(EngineId engine) {
    ModelConfig m = fixtures::gradcheck_model();
    m.engine = engine;
    if (engine != EngineId::tiny_conv) m.image_height = m.image_width = 32;
    m.patch_proj_dim = 8;
    return m;
}

Image random_image(int n, std::uint64_t seed) {
    Rng rng{seed};
    Image img(n, n);
    for (auto& p : img.pixels) p = rng.uniform();
    return img;
}

}  // namespace

TEST(Encoders, OutputsAreUnitNorm) {
    for (auto engine : {EngineId::patch_mlp_16, EngineId::patch_mlp_32, EngineId::tiny_conv}) {
        const auto m = small_model(engine);
        const auto p = init_params(m, 1);
        for (std::uint64_t s = 0; s < 5; ++s) {
            const auto z = encode_image(random_image(m.image_height, s), p);
            EXPECT_EQ(z.size(), m.embed_dim);
            EXPECT_NEAR(z.norm(), 1.0, 1e-6);
        }
        EXPECT_NEAR(encode_text(tokenize("a weeping man"), p).norm(), 1.0, 1e-6);
    }
}

TEST(Encoders, ZeroInputWithZeroParamsMapsToE1) {
    ModelParams p(small_model(EngineId::tiny_conv));
    const auto z = encode_image(Image(16, 16), p);
    Embedding e1 = Embedding::Zero(z.size());
    e1[0] = 1;
    EXPECT_EQ(z, e1);
    EXPECT_EQ(encode_text(tokenize("calm"), p), e1);
}

TEST(Encoders, DeterministicForward) {
    const auto m = small_model(EngineId::tiny_conv);
    const auto p = init_params(m, 2);
    const auto img = random_image(16, 9);
    EXPECT_EQ(encode_image(img, p), encode_image(img, p));
    EXPECT_EQ(init_params(m, 2).values, p.values);
    EXPECT_NE(init_params(m, 3).values, p.values);
}

TEST(Encoders, DimensionMismatchNamesShapes) {
    const auto p = init_params(small_model(EngineId::tiny_conv), 1);
    try {
        encode_image(Image(20, 16), p);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("16x16"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("20x16"), std::string::npos);
    }
    EXPECT_THROW(encode_text({}, p), InvalidInput);
}

TEST(Encoders, EnginesShareEmbeddingDimension) {
    for (auto engine : {EngineId::patch_mlp_16, EngineId::patch_mlp_32, EngineId::tiny_conv}) {
        ModelConfig m;
        m.engine = engine;
        EXPECT_EQ(encode_image(Image(64, 64, 0.5), init_params(m, 1)).size(), 64);
    }
}

TEST(TextEncoder, TokenOrderDoesNotMatter) {
    const auto p = init_params(small_model(EngineId::tiny_conv), 4);
    EXPECT_EQ(encode_text({5, 9, 9, 1}, p), encode_text({9, 1, 5, 9}, p));
}

TEST(TextEncoder, HandComputedToyVocabulary) {
    ModelConfig m = small_model(EngineId::tiny_conv);
    m.token_dim = 2;
    m.text_hidden = 2;
    m.embed_dim = 2;
    ModelParams p(m);
    p.tensor("text.embedding").row(0) << 1, 0;
    p.tensor("text.embedding").row(1) << 0, 2;
    p.tensor("text.fc1.weight") << 0.5, 0, 0, 0.5;
    p.tensor("text.head.weight") << 1, 1, 1, -1;
    p.tensor("text.head.bias") << 0.1, 0;
    const auto both = encode_text({0, 1}, p);
    EXPECT_NEAR(both[0], 0.9656398979541113, 1e-15);
    EXPECT_NEAR(both[1], -0.25988379610736323, 1e-15);
    const auto one = encode_text({1}, p);
    EXPECT_NEAR(one[0], 0.7492490936134264, 1e-15);
    EXPECT_NEAR(one[1], -0.6622883025687976, 1e-15);
}

TEST(Backward, MatchesFiniteDifferencesOnEveryParameter) {
    const auto m = fixtures::gradcheck_model();
    const auto batch = fixtures::gradcheck_batch(m);
    const auto rep = check_gradients(init_params(m, 5), batch);
    EXPECT_GT(rep.min_hinge_distance, 1e-3);
    EXPECT_EQ(rep.n_params, make_layout(m).size());
    EXPECT_LE(rep.max_rel_params, 1e-4) << "worst tensor " << rep.worst_param;
    EXPECT_LE(rep.max_rel_embeddings, 1e-4);
    EXPECT_LE(rep.rel_alpha, 1e-4);
}

TEST(Backward, PatchEngineMatchesFiniteDifferences) {
    auto m = small_model(EngineId::patch_mlp_16);
    auto batch = fixtures::gradcheck_batch(m);
    const auto rep = check_gradients(init_params(m, 6), batch);
    EXPECT_LE(rep.max_rel(), 1e-4) << "worst tensor " << rep.worst_param;
}

TEST(Backward, DeadTextPathGivesExactZero) {
    const auto m = fixtures::gradcheck_model();
    const auto p = init_params(m, 7);
    TextEncoderPass tp;
    const std::vector<TokenSeq> texts{tokenize("a gasping woman"), tokenize("a trembling man")};
    const Mat& out = tp.forward(p, texts);
    GradAccumulator g(p);
    tp.backward(p, Mat::Zero(out.rows(), out.cols()), g);
    for (double v : g.values) ASSERT_EQ(v, 0.0);
}

TEST(Backward, LinearInUpstreamGradient) {
    const auto m = fixtures::gradcheck_model();
    const auto p = init_params(m, 8);
    const auto batch = fixtures::gradcheck_batch(m);
    std::vector<const Image*> ptrs;
    for (const auto& im : batch.images) ptrs.push_back(&im);
    ImageEncoderPass ip;
    const Mat& out = ip.forward(p, ptrs);
    Mat up = Mat::Zero(out.rows(), out.cols());
    Rng rng{1};
    for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = rng.uniform(-1, 1);
    GradAccumulator g1(p), g2(p);
    ip.backward(p, up, g1);
    ip.backward(p, Mat(2.0 * up), g2);
    for (std::size_t i = 0; i < g1.values.size(); ++i) ASSERT_NEAR(g2.values[i], 2.0 * g1.values[i], 1e-12);
}

TEST(Backward, RequiresForwardPass) {
    const auto p = init_params(fixtures::gradcheck_model(), 1);
    GradAccumulator g(p);
    EXPECT_THROW(ImageEncoderPass().backward(p, Mat::Zero(8, 1), g), UsageError);
    EXPECT_THROW(TextEncoderPass().backward(p, Mat::Zero(8, 1), g), UsageError);
}
