#pragma once

// Subject-independent k-fold evaluation and the ablation table.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "classify.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "trainer.hpp"

namespace avlm {

inline constexpr std::size_t kNumFolds = 10;

struct FoldSplit {
    std::array<std::vector<std::uint32_t>, kNumFolds> folds;

    std::set<std::uint32_t> test_subjects(std::size_t k) const { return {folds.at(k).begin(), folds.at(k).end()}; }
    std::set<std::uint32_t> train_subjects(std::size_t k) const {
        std::set<std::uint32_t> out;
        for (std::size_t f = 0; f < kNumFolds; ++f)
            if (f != k) out.insert(folds[f].begin(), folds[f].end());
        return out;
    }
};

// Subjects sorted, shuffled by seed, dealt round-robin.
inline FoldSplit make_folds(std::vector<std::uint32_t> subjects, std::uint64_t seed) {
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    if (subjects.size() < kNumFolds)
        throw ProtocolError("make_folds: need at least 10 subjects, got " + std::to_string(subjects.size()));
    Rng rng{seed, 0xF01DULL};
    rng.shuffle(std::span<std::uint32_t>(subjects));
    FoldSplit out;
    for (std::size_t i = 0; i < subjects.size(); ++i) out.folds[i % kNumFolds].push_back(subjects[i]);
    return out;
}

inline FoldSplit make_folds(const Corpus& corpus, std::uint64_t seed) {
    std::vector<std::uint32_t> ids;
    for (const auto& s : corpus) ids.push_back(s.subject.subject_id);
    return make_folds(std::move(ids), seed);
}

using Confusion = std::array<std::array<std::size_t, kNumEmotions>, kNumEmotions>;  // [true][predicted]

struct EvalResult {
    double accuracy = 0;
    Confusion confusion{};
    std::size_t n = 0;
};

inline EvalResult evaluate(const ModelParams& p, std::span<const TrainSample> test, const TrainConfig& cfg,
                           const std::set<std::uint32_t>& train_subjects) {
    for (const auto& s : test)
        if (train_subjects.count(s.subject.subject_id))
            throw ProtocolError("evaluate: subject " + std::to_string(s.subject.subject_id) +
                                " appears in both training and test data");
    if (test.empty()) throw InvalidInput("evaluate: empty test set");
    const Mat class_emb = class_text_embeddings(p, cfg.inference_prompts());
    EvalResult r;
    std::size_t correct = 0;
    for (const auto& s : test) {
        const auto c = classify_sample(p, class_emb, s.views, cfg.single_view);
        ++r.confusion[static_cast<std::size_t>(s.emotion)][static_cast<std::size_t>(c.predicted)];
        if (c.predicted == s.emotion) ++correct;
    }
    r.n = test.size();
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
    return r;
}

struct CvReport {
    std::vector<double> folds;
    double mean = 0;
    double std = 0;  // sample standard deviation over folds
    Confusion confusion{};
    double seconds = 0;
};

inline nlohmann::json to_json(const CvReport& r) {
    nlohmann::json conf = nlohmann::json::array();
    for (const auto& row : r.confusion) conf.push_back(row);
    return {{"folds", r.folds}, {"mean", r.mean}, {"std", r.std}, {"confusion", conf}, {"seconds", r.seconds}};
}

inline void summarize(CvReport& r) {
    const double k = static_cast<double>(r.folds.size());
    double sum = 0;
    for (double a : r.folds) sum += a;
    r.mean = sum / k;
    double ss = 0;
    for (double a : r.folds) ss += (a - r.mean) * (a - r.mean);
    r.std = r.folds.size() > 1 ? std::sqrt(ss / (k - 1)) : 0.0;
}

struct CvOptions {
    std::uint64_t fold_seed = 0;
    bool untrained = false;  // random-weight baseline: skip training
    std::ostream* progress = nullptr;
};

// Train + evaluate on every fold. `data` must come from prepare_samples.
inline CvReport cross_validate(std::span<const TrainSample> data, const TrainConfig& cfg, const CvOptions& opt = {}) {
    std::vector<std::uint32_t> ids;
    for (const auto& s : data) ids.push_back(s.subject.subject_id);
    const FoldSplit split = make_folds(ids, opt.fold_seed);
    const auto t0 = std::chrono::steady_clock::now();
    CvReport rep;
    for (std::size_t k = 0; k < kNumFolds; ++k) {
        const auto test_ids = split.test_subjects(k);
        const auto train_ids = split.train_subjects(k);
        std::vector<TrainSample> train_set, test_set;
        for (const auto& s : data) (test_ids.count(s.subject.subject_id) ? test_set : train_set).push_back(s);
        ModelParams params;
        if (opt.untrained) {
            params = init_params(cfg.model, cfg.seed);
        } else {
            params = train(train_set, cfg).params;
        }
        const auto ev = evaluate(params, test_set, cfg, train_ids);
        rep.folds.push_back(ev.accuracy);
        for (std::size_t i = 0; i < kNumEmotions; ++i)
            for (std::size_t j = 0; j < kNumEmotions; ++j) rep.confusion[i][j] += ev.confusion[i][j];
        if (opt.progress)
            *opt.progress << "fold " << k << ": accuracy " << ev.accuracy << " (" << ev.n << " samples)\n"
                          << std::flush;
    }
    summarize(rep);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

inline CvReport cross_validate(const Corpus& corpus, const TrainConfig& cfg, const CvOptions& opt = {}) {
    const auto data = prepare_samples(corpus, cfg);
    return cross_validate(data, cfg, opt);
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
    std::string name;
    CvReport report;
};

inline std::vector<std::pair<std::string, TrainConfig>> ablation_variants(const TrainConfig& full) {
    TrainConfig no_mix = full;
    no_mix.mixaug = false;
    TrainConfig one_prompt = full;
    one_prompt.prompt_augmentation = false;
    TrainConfig single = full;
    single.single_view = true;
    return {{"full", full}, {"no-mixaug", no_mix}, {"no-prompt-augmentation", one_prompt}, {"single-view", single}};
}

// Runs the variants in order; `first` lets a caller reuse an already
// computed report for the full model.
inline std::vector<AblationRow> run_ablations(const Corpus& corpus, const TrainConfig& full, const CvOptions& opt = {},
                                              const CvReport* first = nullptr) {
    std::vector<AblationRow> rows;
    for (const auto& [name, cfg] : ablation_variants(full)) {
        if (name == "full" && first) {
            rows.push_back({name, *first});
            continue;
        }
        if (opt.progress) *opt.progress << "ablation " << name << '\n';
        rows.push_back({name, cross_validate(corpus, cfg, opt)});
    }
    return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(24) << "variant" << std::right << std::setw(10) << "mean" << std::setw(10) << "std"
       << std::setw(12) << "delta" << '\n';
    const double base = rows.empty() ? 0 : rows.front().report.mean;
    os << std::fixed << std::setprecision(4);
    for (const auto& r : rows)
        os << std::left << std::setw(24) << r.name << std::right << std::setw(10) << r.report.mean << std::setw(10)
           << r.report.std << std::setw(12) << (r.report.mean - base) << '\n';
    return os.str();
}

inline nlohmann::json to_json(const std::vector<AblationRow>& rows) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) j.push_back({{"variant", r.name}, {"report", to_json(r.report)}});
    return j;
}

}  // namespace avlm
