#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <cstdint>

#include "affectvlm/datagen.hpp"
#include "affectvlm/gradcheck.hpp"
#include "affectvlm/prompts.hpp"
#include "affectvlm/views.hpp"

namespace avlm::fixtures {

// Small enough that every parameter can be perturbed in about a second.
inline ModelConfig gradcheck_model() {
    ModelConfig m;
    m.engine = EngineId::tiny_conv;
    m.image_height = m.image_width = 16;
    m.embed_dim = 8;
    m.conv1_channels = 2;
    m.conv2_channels = 2;
    m.image_hidden = 8;
    m.token_dim = 2;
    m.text_hidden = 8;
    return m;
}

// One sample per emotion, three rendered views and two class prompts each.
inline FixedBatch gradcheck_batch(const ModelConfig& m, std::uint64_t seed = 3) {
    CorpusSpec spec;
    spec.n_subjects = 10;
    spec.frames_per_sequence = 2;
    spec.points_per_face = 1024;
    spec.seed = seed;
    FixedBatch b;
    std::vector<BatchItem> text_items;
    for (std::uint32_t id = 0; id < kNumEmotions; ++id) {
        const Emotion e = kAllEmotions[id];
        for (const auto& v : render_apex(generate_sequence(spec, id, e), {30.0, {m.image_height, m.image_width}})) {
            b.images.push_back(v.image);
            b.items.push_back({e, v.view.name, id});
        }
        for (const auto& p : class_prompt_set(e, 2, seed)) {
            b.texts.push_back(tokenize(p.text));
            text_items.push_back({e, std::nullopt, id});
        }
    }
    b.items.insert(b.items.end(), text_items.begin(), text_items.end());
    b.pairs = mine_pairs(b.items, seed);
    return b;
}

}  // namespace avlm::fixtures
