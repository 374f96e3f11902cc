#pragma once

// Training loop: class-balanced batches, mixed-view augmentation, prompt
// sampling, pair mining, loss, backprop and a data-parallel gradient
// all-reduce.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <atomic>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "affectloss.hpp"
#include "classify.hpp"
#include "comm.hpp"
#include "dynimg.hpp"
#include "encoders.hpp"
#include "errors.hpp"
#include "mixaug.hpp"
#include "optim.hpp"
#include "prompts.hpp"
#include "rng.hpp"
#include "types.hpp"
#include "views.hpp"

namespace avlm {

enum class InputMode { apex, dynamic };

constexpr std::string_view to_string(InputMode m) { return m == InputMode::apex ? "apex" : "dynamic"; }
inline InputMode parse_input_mode(std::string_view s) {
    if (s == "apex") return InputMode::apex;
    if (s == "dynamic") return InputMode::dynamic;
    throw InvalidInput("unknown input mode '" + std::string(s) + "'");
}

struct TrainConfig {
    int epochs = 50;
    int batch_size = 8;  // samples per step across all workers
    double lr = 1e-3;
    double alpha_lr = 1e-4;  // learning rate of the margin
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 1;
    int workers = 1;
    int shards = 1;            // a batch is split into this many independently mined shards
    double temperature = 0.0;  // 0: exact hinge
    SimilarityKind similarity = SimilarityKind::cosine;
    ModelConfig model{};
    int n_text = 2;             // prompts drawn per sample per step
    int prompts_per_class = 8;  // prompt pool size per sample and class prompt-set size at inference
    bool prompt_augmentation = true;
    bool mixaug = true;
    bool single_view = false;
    InputMode input_mode = InputMode::apex;
    RankPoolConfig rank_pool{};
    double side_yaw_degrees = 30.0;
    long max_steps = 0;  // 0: no cap

    int effective_shards() const { return std::max(shards, workers); }

    PromptSetSpec inference_prompts() const {
        return {prompt_augmentation ? static_cast<std::size_t>(prompts_per_class) : 1u, seed};
    }

    ViewConfig view_config() const { return {side_yaw_degrees, {model.image_height, model.image_width}}; }

    void validate() const {
        if (epochs < 0) throw InvalidInput("train: epochs must be >= 0");
        if (workers < 1) throw InvalidInput("train: workers must be >= 1");
        if (shards < 1) throw InvalidInput("train: shards must be >= 1");
        const int s = effective_shards();
        if (s % workers != 0) throw InvalidInput("train: shards must be a multiple of workers");
        if (batch_size < 2 || batch_size % s != 0 || batch_size / s < 2)
            throw InvalidInput("train: batch_size must split into shards of at least 2 samples");
        if (!(lr >= 0) || !std::isfinite(lr)) throw InvalidInput("train: lr must be finite and >= 0");
        if (!(alpha_lr >= 0) || !std::isfinite(alpha_lr)) throw InvalidInput("train: alpha_lr must be finite and >= 0");
        if (!(temperature >= 0)) throw InvalidInput("train: temperature must be >= 0");
        if (n_text < 0) throw InvalidInput("train: n_text must be >= 0");
        if (prompts_per_class < 1) throw InvalidInput("train: prompts_per_class must be >= 1");
        model.validate();
        rank_pool.validate();
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
    j = {{"engine", to_string(m.engine)},     {"image_height", m.image_height},     {"image_width", m.image_width},
         {"embed_dim", m.embed_dim},          {"patch_proj_dim", m.patch_proj_dim}, {"conv1_channels", m.conv1_channels},
         {"conv2_channels", m.conv2_channels}, {"image_hidden", m.image_hidden},     {"token_dim", m.token_dim},
         {"text_hidden", m.text_hidden}};
}

namespace train_detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> keys, std::string_view what) {
    if (!j.is_object()) throw InvalidInput(std::string(what) + " must be a JSON object");
    for (const auto& [k, _] : j.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw InvalidInput("unknown " + std::string(what) + " key '" + k + "'");
}

}  // namespace train_detail

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
    train_detail::reject_unknown(j,
                                 {"engine", "image_height", "image_width", "embed_dim", "patch_proj_dim",
                                  "conv1_channels", "conv2_channels", "image_hidden", "token_dim", "text_hidden"},
                                 "model");
    ModelConfig d;
    m.engine = parse_engine(j.value("engine", std::string(to_string(d.engine))));
    m.image_height = j.value("image_height", d.image_height);
    m.image_width = j.value("image_width", d.image_width);
    m.embed_dim = j.value("embed_dim", d.embed_dim);
    m.patch_proj_dim = j.value("patch_proj_dim", d.patch_proj_dim);
    m.conv1_channels = j.value("conv1_channels", d.conv1_channels);
    m.conv2_channels = j.value("conv2_channels", d.conv2_channels);
    m.image_hidden = j.value("image_hidden", d.image_hidden);
    m.token_dim = j.value("token_dim", d.token_dim);
    m.text_hidden = j.value("text_hidden", d.text_hidden);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"lr", c.lr},
         {"alpha_lr", c.alpha_lr},
         {"optimizer", to_string(c.optimizer)},
         {"seed", c.seed},
         {"workers", c.workers},
         {"shards", c.shards},
         {"temperature", c.temperature},
         {"similarity", to_string(c.similarity)},
         {"model", c.model},
         {"n_text", c.n_text},
         {"prompts_per_class", c.prompts_per_class},
         {"prompt_augmentation", c.prompt_augmentation},
         {"mixaug", c.mixaug},
         {"single_view", c.single_view},
         {"input_mode", to_string(c.input_mode)},
         {"rank_pool",
          {{"method", c.rank_pool.method == RankPoolMethod::exact ? "exact" : "approximate"},
           {"lambda", c.rank_pool.lambda},
           {"max_iters", c.rank_pool.max_iters},
           {"step_size", c.rank_pool.step_size},
           {"tol", c.rank_pool.tol}}},
         {"side_yaw_degrees", c.side_yaw_degrees},
         {"max_steps", c.max_steps}};
}

inline RankPoolMethod parse_rank_pool_method(std::string_view s) {
    if (s == "exact") return RankPoolMethod::exact;
    if (s == "approximate") return RankPoolMethod::approximate;
    throw InvalidInput("unknown rank pooling method '" + std::string(s) + "'");
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    train_detail::reject_unknown(
        j,
        {"epochs", "batch_size", "lr", "alpha_lr", "optimizer", "seed", "workers", "shards", "temperature", "similarity", "model",
         "n_text", "prompts_per_class", "prompt_augmentation", "mixaug", "single_view", "input_mode", "rank_pool",
         "side_yaw_degrees", "max_steps"},
        "train config");
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.alpha_lr = j.value("alpha_lr", d.alpha_lr);
    c.optimizer = parse_optimizer(j.value("optimizer", std::string(to_string(d.optimizer))));
    c.seed = j.value("seed", d.seed);
    c.workers = j.value("workers", d.workers);
    c.shards = j.value("shards", d.shards);
    c.temperature = j.value("temperature", d.temperature);
    c.similarity = parse_similarity(j.value("similarity", std::string(to_string(d.similarity))));
    c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
    c.n_text = j.value("n_text", d.n_text);
    c.prompts_per_class = j.value("prompts_per_class", d.prompts_per_class);
    c.prompt_augmentation = j.value("prompt_augmentation", d.prompt_augmentation);
    c.mixaug = j.value("mixaug", d.mixaug);
    c.single_view = j.value("single_view", d.single_view);
    c.input_mode = parse_input_mode(j.value("input_mode", std::string(to_string(d.input_mode))));
    c.rank_pool = d.rank_pool;
    if (j.contains("rank_pool")) {
        const auto& r = j.at("rank_pool");
        train_detail::reject_unknown(r, {"method", "lambda", "max_iters", "step_size", "tol"}, "rank_pool");
        c.rank_pool.method = parse_rank_pool_method(r.value("method", std::string("approximate")));
        c.rank_pool.lambda = r.value("lambda", d.rank_pool.lambda);
        c.rank_pool.max_iters = r.value("max_iters", d.rank_pool.max_iters);
        c.rank_pool.step_size = r.value("step_size", d.rank_pool.step_size);
        c.rank_pool.tol = r.value("tol", d.rank_pool.tol);
    }
    c.side_yaw_degrees = j.value("side_yaw_degrees", d.side_yaw_degrees);
    c.max_steps = j.value("max_steps", d.max_steps);
}

// ---------------------------------------------------------------------------
// Prepared samples

struct TrainSample {
    std::uint32_t sample_id = 0;  // index into the corpus
    SubjectMeta subject;
    Emotion emotion = Emotion::happy;
    MultiviewSample views;                // clean model inputs
    std::vector<TokenSeq> prompt_pool;    // candidate training prompts
};

inline MultiviewSample model_inputs(const FaceSequence& seq, const TrainConfig& cfg) {
    const auto vc = cfg.view_config();
    return cfg.input_mode == InputMode::apex ? render_apex(seq, vc) : dynamic_multiview(seq, cfg.rank_pool, vc);
}

inline std::vector<TokenSeq> training_prompt_pool(const PromptBank& bank, Emotion e, const SubjectMeta& meta,
                                                  const TrainConfig& cfg) {
    std::vector<TokenSeq> pool;
    if (cfg.prompt_augmentation) {
        const auto seed = hash_keys({cfg.seed, 0x9201ULL, meta.subject_id});
        for (const auto& s : expand(bank, e, PromptMeta::from(meta), static_cast<std::size_t>(cfg.prompts_per_class), seed)
                                 .prompts)
            pool.push_back(tokenize(s));
    } else {
        for (const auto& cp : class_prompt_set(bank, e, 1, cfg.seed)) pool.push_back(tokenize(cp.text));
    }
    return pool;
}

inline std::vector<TrainSample> prepare_samples(const Corpus& corpus, const TrainConfig& cfg,
                                                const PromptBank& bank = default_prompt_bank()) {
    if (corpus.empty()) throw InvalidInput("train: corpus is empty");
    std::vector<TrainSample> out;
    out.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& seq = corpus[i];
        out.push_back({static_cast<std::uint32_t>(i), seq.subject, seq.emotion, model_inputs(seq, cfg),
                       training_prompt_pool(bank, seq.emotion, seq.subject, cfg)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Class-balanced batches

// Per-class shuffles interleaved round-robin in a fresh class order each
// round; adjacent entries never share an emotion while two or more classes
// remain, so every shard of >= 2 samples spans >= 2 emotions. Batches are
// returned as index lists; the remainder is dropped.
inline std::vector<std::vector<std::size_t>> balanced_batches(std::span<const Emotion> labels, std::size_t batch_size,
                                                              std::size_t shards, std::uint64_t seed,
                                                              std::uint64_t epoch) {
    if (shards < 1 || batch_size % shards != 0 || batch_size / shards < 2)
        throw InvalidInput("balanced_batches: batch must split into shards of at least 2");
    std::array<std::vector<std::size_t>, kNumEmotions> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    std::size_t present = 0;
    for (std::size_t c = 0; c < kNumEmotions; ++c) {
        if (by_class[c].empty()) continue;
        ++present;
        Rng rng{seed, epoch, c, 0xBA7CULL};
        rng.shuffle(std::span<std::size_t>(by_class[c]));
    }
    if (present < 2) throw ProtocolError("balanced_batches: training data holds fewer than two emotions");

    std::vector<std::size_t> order;
    order.reserve(labels.size());
    Rng rng{seed, epoch, 0xB0BULL};
    for (std::size_t k = 0; order.size() < labels.size(); ++k) {
        std::vector<std::size_t> round;
        for (std::size_t c = 0; c < kNumEmotions; ++c)
            if (k < by_class[c].size()) round.push_back(c);
        rng.shuffle(std::span<std::size_t>(round));
        if (!order.empty() && round.size() > 1 && static_cast<std::size_t>(labels[order.back()]) == round[0])
            std::swap(round[0], round[1]);
        for (std::size_t c : round) order.push_back(by_class[c][k]);
    }

    std::vector<std::vector<std::size_t>> batches;
    const std::size_t shard_size = batch_size / shards;
    for (std::size_t b = 0; b + batch_size <= order.size(); b += batch_size) {
        std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                       order.begin() + static_cast<std::ptrdiff_t>(b + batch_size));
        bool ok = true;
        for (std::size_t s = 0; s < shards && ok; ++s) {
            std::set<Emotion> em;
            for (std::size_t i = 0; i < shard_size; ++i) em.insert(labels[batch[s * shard_size + i]]);
            ok = em.size() >= 2;
        }
        if (ok) batches.push_back(std::move(batch));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Training

struct StepMetrics {
    long step = 0;
    int epoch = 0;
    double l_mc_pos = 0;
    double l_mc_neg = 0;
    double l_mt = 0;
    double total = 0;
    double alpha = 0;
};

inline nlohmann::json to_json(const StepMetrics& m) {
    return {{"step", m.step},   {"epoch", m.epoch},   {"l_mc_pos", m.l_mc_pos}, {"l_mc_neg", m.l_mc_neg},
            {"l_mt", m.l_mt},   {"total", m.total},   {"alpha", m.alpha}};
}

struct TrainResult {
    ModelParams params;
    std::vector<StepMetrics> metrics;
    double seconds = 0;
};

namespace train_detail {

inline std::vector<double> flatten(const ModelParams& p) {
    std::vector<double> v = p.values;
    v.push_back(p.alpha);
    return v;
}

inline void unflatten(const std::vector<double>& v, ModelParams& p) {
    if (v.size() != p.values.size() + 1) throw ShapeError("parameter broadcast has the wrong size");
    std::copy(v.begin(), v.end() - 1, p.values.begin());
    p.alpha = v.back();
}

// Gradient and loss terms of one shard: [weights..., alpha, l_pos, l_neg, l_mt, total].
inline std::vector<double> shard_gradient(const ModelParams& p, std::span<const TrainSample> data,
                                          std::span<const std::size_t> shard, const TrainConfig& cfg, int epoch,
                                          long step, std::size_t shard_index) {
    const std::size_t n_views = cfg.single_view ? 1 : kNumViews;
    std::vector<Image> images;
    std::vector<BatchItem> items;
    images.reserve(shard.size() * n_views);
    for (std::size_t idx : shard) {
        const auto& s = data[idx];
        MultiviewSample views = s.views;
        if (cfg.mixaug) views = avlm::apply(views, plan_sample(cfg.seed, static_cast<std::uint64_t>(epoch), s.sample_id));
        for (std::size_t v = 0; v < n_views; ++v) {
            images.push_back(std::move(views[v].image));
            items.push_back({s.emotion, views[v].view.name, s.sample_id});
        }
    }
    std::vector<TokenSeq> texts;
    for (std::size_t idx : shard) {
        const auto& s = data[idx];
        std::vector<std::size_t> pick(s.prompt_pool.size());
        for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
        Rng rng{cfg.seed, static_cast<std::uint64_t>(epoch), s.sample_id, 0x7E47ULL};
        rng.shuffle(std::span<std::size_t>(pick));
        const std::size_t k = std::min(pick.size(), static_cast<std::size_t>(cfg.n_text));
        for (std::size_t i = 0; i < k; ++i) {
            texts.push_back(s.prompt_pool[pick[i]]);
            items.push_back({s.emotion, std::nullopt, s.sample_id});
        }
    }

    std::vector<const Image*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    ImageEncoderPass ipass;
    TextEncoderPass tpass;
    const Eigen::Index ni = static_cast<Eigen::Index>(images.size());
    const Eigen::Index nt = static_cast<Eigen::Index>(texts.size());
    Mat E(p.config.embed_dim, ni + nt);
    E.leftCols(ni) = ipass.forward(p, ptrs);
    if (nt > 0) E.rightCols(nt) = tpass.forward(p, texts);

    const auto pairs = mine_pairs(items, hash_keys({cfg.seed, static_cast<std::uint64_t>(step), shard_index}));
    const auto loss = evaluate_loss(E, pairs, p.alpha, {cfg.similarity, cfg.temperature});

    GradAccumulator g(p);
    ipass.backward(p, loss.d_embeddings.leftCols(ni), g);
    if (nt > 0) tpass.backward(p, loss.d_embeddings.rightCols(nt), g);
    std::vector<double> out = std::move(g.values);
    out.push_back(loss.d_alpha);
    out.push_back(loss.breakdown.l_mc_pos);
    out.push_back(loss.breakdown.l_mc_neg);
    out.push_back(loss.breakdown.l_mt);
    out.push_back(loss.breakdown.total);
    return out;
}

}  // namespace train_detail

// One worker's training loop. Every rank runs this with the same data and
// config; rank r owns shards [r*k, (r+1)*k) of each batch, k = shards/world.
// Only rank 0 writes `log`.
inline TrainResult train_worker(std::span<const TrainSample> data, const TrainConfig& cfg, Communicator& comm,
                                std::ostream* log = nullptr) {
    cfg.validate();
    if (data.empty()) throw InvalidInput("train: no training samples");
    const int world = comm.size();
    const int shards = cfg.effective_shards();
    if (world != cfg.workers) throw InvalidInput("train: communicator size differs from config workers");
    const auto t0 = std::chrono::steady_clock::now();

    TrainResult res;
    res.params = init_params(cfg.model, cfg.seed);
    {
        auto flat = train_detail::flatten(res.params);
        comm.broadcast(flat);
        train_detail::unflatten(flat, res.params);
    }
    ModelParams& p = res.params;
    Optimizer opt(cfg.optimizer, cfg.lr, cfg.alpha_lr);
    const std::size_t n = p.values.size();

    std::vector<Emotion> labels;
    for (const auto& s : data) labels.push_back(s.emotion);
    const std::size_t shard_size = static_cast<std::size_t>(cfg.batch_size / shards);
    const int per_rank = shards / world;

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = balanced_batches(labels, static_cast<std::size_t>(cfg.batch_size),
                                              static_cast<std::size_t>(shards), cfg.seed, static_cast<std::uint64_t>(epoch));
        for (const auto& batch : batches) {
            if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
            ++step;
            std::vector<std::vector<double>> parts;
            for (int k = 0; k < per_rank; ++k) {
                const std::size_t s = static_cast<std::size_t>(comm.rank() * per_rank + k);
                const std::span<const std::size_t> shard(batch.data() + s * shard_size, shard_size);
                parts.push_back(train_detail::shard_gradient(p, data, shard, cfg, epoch, step, s));
            }
            auto flat = reduce_mean(parts);
            comm.allreduce_mean(flat);

            StepMetrics m{step, epoch, flat[n + 1], flat[n + 2], flat[n + 3], flat[n + 4], 0};
            if (!std::isfinite(m.total))
                throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(step), step);
            GradAccumulator g;
            flat.resize(n + 1);
            g.alpha = flat[n];
            flat.pop_back();
            g.values = std::move(flat);
            opt.step(p, g);
            if (!p.all_finite())
                throw DivergenceError("training diverged: non-finite parameters after step " + std::to_string(step),
                                      step);
            m.alpha = p.alpha;
            res.metrics.push_back(m);
            if (log && comm.rank() == 0) *log << to_json(m).dump() << '\n' << std::flush;
        }
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

inline TrainResult train_serial(std::span<const TrainSample> data, TrainConfig cfg, std::ostream* log = nullptr) {
    if (cfg.workers != 1) throw InvalidInput("train_serial: workers must be 1");
    LocalCommunicator comm;
    return train_worker(data, cfg, comm, log);
}

inline std::filesystem::path fresh_launch_file() {
    static std::atomic<unsigned> counter{0};
    auto path = std::filesystem::temp_directory_path() /
                ("avlm-launch-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove(path);
    return path;
}

// Runs cfg.workers ranks as threads talking over loopback TCP; returns each
// rank's result in rank order.
inline std::vector<TrainResult> train_parallel(std::span<const TrainSample> data, const TrainConfig& cfg,
                                               std::ostream* log = nullptr) {
    cfg.validate();
    const int world = cfg.workers;
    Rendezvous rv;
    rv.launch_file = fresh_launch_file();
    std::vector<TrainResult> results(static_cast<std::size_t>(world));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(world));
    std::vector<std::thread> threads;
    for (int r = 0; r < world; ++r)
        threads.emplace_back([&, r] {
            try {
                TcpCommunicator comm(r, world, rv);
                results[static_cast<std::size_t>(r)] = train_worker(data, cfg, comm, r == 0 ? log : nullptr);
            } catch (...) {
                errors[static_cast<std::size_t>(r)] = std::current_exception();
            }
        });
    for (auto& t : threads) t.join();
    std::filesystem::remove(rv.launch_file);
    // Prefer a root cause over the connection errors it triggers on peers.
    std::exception_ptr first_comm;
    for (auto& e : errors) {
        if (!e) continue;
        try {
            std::rethrow_exception(e);
        } catch (const CommError&) {
            if (!first_comm) first_comm = e;
        } catch (...) {
            throw;
        }
    }
    if (first_comm) std::rethrow_exception(first_comm);
    return results;
}

inline TrainResult train(std::span<const TrainSample> data, const TrainConfig& cfg, std::ostream* log = nullptr) {
    if (cfg.workers == 1) return train_serial(data, cfg, log);
    return std::move(train_parallel(data, cfg, log).front());
}

// Sidecar fields needed to rebuild the inference head.
inline nlohmann::json checkpoint_sidecar(const TrainConfig& cfg) {
    const auto ps = cfg.inference_prompts();
    return {{"prompts_per_class", ps.per_class},
            {"prompt_seed", ps.seed},
            {"single_view", cfg.single_view},
            {"input_mode", to_string(cfg.input_mode)},
            {"train_config", cfg}};
}

}  // namespace avlm
