#pragma once

// Command-line front end. cli_dispatch returns 0 on success, 1 on a usage
// error and 2 on a runtime error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "classify.hpp"
#include "datagen.hpp"
#include "dynimg.hpp"
#include "evaluate.hpp"
#include "mixaug.hpp"
#include "png_io.hpp"
#include "prompts.hpp"
#include "serve.hpp"
#include "trainer.hpp"
#include "views.hpp"

namespace avlm {

// A config file holds {"train": {...}, "corpus": {...}, "fold_seed": n};
// a bare train config object is accepted too.
struct ExperimentConfig {
    CorpusSpec corpus{};
    TrainConfig train{};
    std::uint64_t fold_seed = 0;
};

inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
    ExperimentConfig out;
    if (j.is_object() && (j.contains("train") || j.contains("corpus") || j.contains("fold_seed"))) {
        for (const auto& [k, _] : j.items())
            if (k != "train" && k != "corpus" && k != "fold_seed" && k != "comment")
                throw InvalidInput("unknown config key '" + k + "'");
        if (j.contains("train")) out.train = j.at("train").get<TrainConfig>();
        if (j.contains("corpus")) out.corpus = j.at("corpus").get<CorpusSpec>();
        out.fold_seed = j.value("fold_seed", out.fold_seed);
    } else {
        out.train = j.get<TrainConfig>();
    }
    out.train.validate();
    return out;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
    const auto text = io::read_text(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), e.byte);
    }
    return parse_experiment(j);
}

namespace cli_detail {

inline std::string view_file(std::size_t seq, ViewName v, const std::string& ext) {
    std::string base = sequence_file_name(seq);
    base.resize(base.size() - 4);
    return base + "_" + std::string(to_string(v)) + ext;
}

inline void write_png(const std::filesystem::path& path, const Image& img) { io::write_file(path, png::encode(img)); }

inline Image read_png(const std::filesystem::path& path) { return png::decode(io::read_file(path)); }

// Tiles equally sized images into a grid, row-major.
inline Image tile(const std::vector<Image>& images, std::size_t cols) {
    if (images.empty()) throw InvalidInput("tile: no images");
    const int h = images[0].height, w = images[0].width;
    const std::size_t rows = (images.size() + cols - 1) / cols;
    Image out(static_cast<int>(rows) * h, static_cast<int>(cols) * w);
    for (std::size_t k = 0; k < images.size(); ++k) {
        const int r0 = static_cast<int>(k / cols) * h, c0 = static_cast<int>(k % cols) * w;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) out.at(r0 + r, c0 + c) = images[k].at(r, c);
    }
    return out;
}

}  // namespace cli_detail

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace cli_detail;
    namespace fs = std::filesystem;

    CLI::App app{"Multiview vision-language facial affect pipeline", "avlm"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    // gen-data
    CorpusSpec spec;
    std::string out_dir, spec_file;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic 3D/4D face corpus");
    gen->add_option("--seed", spec.seed, "Corpus seed");
    gen->add_option("--subjects", spec.n_subjects, "Number of subjects");
    gen->add_option("--frames", spec.frames_per_sequence, "Frames per sequence");
    gen->add_option("--points", spec.points_per_face, "Points per face");
    gen->add_option("--identity-scale", spec.identity_scale, "Identity perturbation scale");
    gen->add_option("--expression-scale", spec.expression_scale, "Expression displacement scale");
    gen->add_option("--config", spec_file, "Experiment config; its corpus block replaces the defaults")
        ->check(CLI::ExistingFile);
    gen->add_option("--out", out_dir, "Output directory")->required();

    // render-views
    std::string corpus_dir;
    int size = 64;
    double yaw = 30.0;
    std::optional<std::size_t> only_index;
    std::optional<std::size_t> frame_index;
    auto* rv = app.add_subcommand("render-views", "Render frontal/left/right depth PNGs");
    rv->add_option("--corpus", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    rv->add_option("--out", out_dir, "Output directory")->required();
    rv->add_option("--index", only_index, "Render only this sequence");
    rv->add_option("--frame", frame_index, "Frame to render (default: apex)");
    rv->add_option("--size", size, "Image height and width")->check(CLI::Range(8, 1024));
    rv->add_option("--yaw", yaw, "Side view yaw in degrees");

    // rankpool
    std::string method = "approximate";
    auto* rp = app.add_subcommand("rankpool", "Rank-pool each view of every sequence into dynamic images");
    rp->add_option("--in", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    rp->add_option("--method", method, "exact or approximate")->check(CLI::IsMember({"exact", "approximate"}));
    rp->add_option("--out", out_dir, "Output directory")->required();
    rp->add_option("--index", only_index, "Pool only this sequence");
    rp->add_option("--size", size, "Image height and width")->check(CLI::Range(8, 1024));

    // augment-preview
    std::uint64_t seed = 0;
    std::size_t n = 4;
    std::uint64_t epoch = 0;
    auto* ap = app.add_subcommand("augment-preview", "Write before/after grids of mixed-view augmentation");
    ap->add_option("--seed", seed, "Augmentation seed");
    ap->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
    ap->add_option("--epoch", epoch, "Epoch index");
    ap->add_option("--corpus", corpus_dir, "Corpus directory (default: generate 10 subjects)");
    ap->add_option("--out", out_dir, "Output directory")->required();

    // prompts
    std::string emotion, age, gender, ethnicity;
    bool class_set = false;
    auto* pr = app.add_subcommand("prompts", "Print expanded prompts for an emotion");
    pr->add_option("--emotion", emotion, "Emotion")->required();
    pr->add_option("--n", n, "Number of prompts")->check(CLI::PositiveNumber);
    pr->add_option("--seed", seed, "Expansion seed");
    pr->add_option("--age", age, "young, middle-aged or older");
    pr->add_option("--gender", gender, "female or male");
    pr->add_option("--ethnicity", ethnicity, "Asian, Black, White or Hispanic");
    pr->add_flag("--class-set", class_set, "Print the balanced class prompt set used at inference (default without metadata)");

    // train
    std::string config_file, ckpt, metrics_file, launch_file;
    int workers = 0;
    std::optional<int> rank;
    auto* tr = app.add_subcommand("train", "Train a model");
    tr->add_option("--corpus", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--config", config_file, "Experiment config JSON")->required()->check(CLI::ExistingFile);
    tr->add_option("--workers", workers, "Data-parallel workers (overrides the config)")->check(CLI::PositiveNumber);
    tr->add_option("--out", ckpt, "Checkpoint path")->required();
    tr->add_option("--metrics", metrics_file, "Metrics log (JSON lines; default <out>.metrics.jsonl)");
    tr->add_option("--rank", rank, "Run only this rank (multi-process mode)");
    tr->add_option("--launch-file", launch_file, "Rendezvous file for multi-process mode");

    // eval-cv
    std::string report;
    bool baseline = false;
    auto* cv = app.add_subcommand("eval-cv", "10-fold subject-independent cross-validation");
    cv->add_option("--corpus", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    cv->add_option("--config", config_file, "Experiment config JSON")->required()->check(CLI::ExistingFile);
    cv->add_option("--report", report, "Report JSON path")->required();
    cv->add_flag("--baseline", baseline, "Evaluate random-weight models instead of training");

    // ablate
    auto* ab = app.add_subcommand("ablate", "Cross-validate the full model and its ablations");
    ab->add_option("--corpus", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    ab->add_option("--config", config_file, "Experiment config JSON")->required()->check(CLI::ExistingFile);
    ab->add_option("--report", report, "Report JSON path")->required();

    // scaling
    int max_workers = 4;
    long steps = 20;
    auto* sc = app.add_subcommand("scaling", "Report training steps/sec against worker count");
    sc->add_option("--corpus", corpus_dir, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    sc->add_option("--config", config_file, "Experiment config JSON")->required()->check(CLI::ExistingFile);
    sc->add_option("--max-workers", max_workers, "Largest worker count")->check(CLI::Range(1, 64));
    sc->add_option("--steps", steps, "Steps per measurement")->check(CLI::PositiveNumber);

    // infer
    std::string frontal, left, right;
    auto* inf = app.add_subcommand("infer", "Classify three view PNGs");
    inf->add_option("--frontal", frontal, "Frontal view PNG")->required()->check(CLI::ExistingFile);
    inf->add_option("--left", left, "Left view PNG")->required()->check(CLI::ExistingFile);
    inf->add_option("--right", right, "Right view PNG")->required()->check(CLI::ExistingFile);
    inf->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);

    // serve
    std::vector<std::string> ckpts;
    std::string host = "127.0.0.1";
    int port = 8080;
    auto* sv = app.add_subcommand("serve", "Run the HTTP inference service");
    sv->add_option("--ckpt", ckpts, "Checkpoint(s); the first is the default model")->check(CLI::ExistingFile);
    sv->add_option("--host", host, "Bind address");
    sv->add_option("--port", port, "Port (0: any free port)")->check(CLI::Range(0, 65535));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const CLI::App* sub = nullptr;
        for (const auto* s : app.get_subcommands()) sub = s;
        err << (sub ? sub->help() : app.help());
        return 1;
    }

    try {
        if (gen->parsed()) {
            if (!spec_file.empty()) {
                const CorpusSpec cli_spec = spec;
                spec = load_experiment(spec_file).corpus;
                if (gen->count("--seed")) spec.seed = cli_spec.seed;
                if (gen->count("--subjects")) spec.n_subjects = cli_spec.n_subjects;
            }
            const auto corpus = generate_corpus(spec);
            save_corpus(corpus, out_dir, spec);
            out << "wrote " << corpus.size() << " sequences to " << out_dir << '\n';
        } else if (rv->parsed()) {
            const auto corpus = load_corpus(corpus_dir);
            fs::create_directories(out_dir);
            const ViewConfig vc{yaw, {size, size}};
            std::size_t written = 0;
            for (std::size_t k = 0; k < corpus.size(); ++k) {
                if (only_index && *only_index != k) continue;
                const auto& seq = corpus[k];
                const std::size_t f = frame_index.value_or(seq.num_frames() - 1);
                if (f >= seq.num_frames()) throw InvalidInput("frame index out of range");
                for (const auto& v : render_multiview(seq, f, vc)) {
                    write_png(fs::path(out_dir) / view_file(k, v.view.name, ".png"), v.image);
                    ++written;
                }
            }
            if (only_index && written == 0) throw InvalidInput("sequence index out of range");
            out << "wrote " << written << " images to " << out_dir << '\n';
        } else if (rp->parsed()) {
            const auto corpus = load_corpus(corpus_dir);
            fs::create_directories(out_dir);
            RankPoolConfig rcfg;
            rcfg.method = parse_rank_pool_method(method);
            const ViewConfig vc{30.0, {size, size}};
            std::size_t written = 0;
            for (std::size_t k = 0; k < corpus.size(); ++k) {
                if (only_index && *only_index != k) continue;
                const auto angles = view_angles(vc.side_yaw_degrees);
                for (std::size_t v = 0; v < kNumViews; ++v) {
                    std::vector<FeatureVec> stack;
                    for (const auto& frame : corpus[k].frames) stack.push_back(project(frame, angles[v], vc.resolution).image.pixels);
                    const FeatureVec u = rank_pool(stack, rcfg);
                    write_png(fs::path(out_dir) / view_file(k, angles[v].name, ".png"), to_dynamic_image(u, vc.resolution));
                    io::Writer w;
                    w.put<std::uint32_t>(static_cast<std::uint32_t>(size));
                    w.put<std::uint32_t>(static_cast<std::uint32_t>(size));
                    for (double x : u) w.put(static_cast<float>(x));
                    io::write_file(fs::path(out_dir) / view_file(k, angles[v].name, ".f32"), w.bytes());
                    ++written;
                }
            }
            out << "wrote " << written << " dynamic images to " << out_dir << '\n';
        } else if (ap->parsed()) {
            Corpus corpus;
            if (corpus_dir.empty()) corpus = generate_corpus(CorpusSpec{});
            else corpus = load_corpus(corpus_dir);
            fs::create_directories(out_dir);
            const auto plans = plan_epoch(n, seed, epoch);
            std::vector<Image> cells;
            nlohmann::json doc = nlohmann::json::array();
            for (std::size_t i = 0; i < n; ++i) {
                const auto clean = render_apex(corpus[i % corpus.size()]);
                const auto aug = avlm::apply(clean, plans[i]);
                nlohmann::json ops = nlohmann::json::array();
                for (std::size_t v = 0; v < kNumViews; ++v) {
                    cells.push_back(clean[v].image);
                    const auto& op = plans[i].ops[v];
                    ops.push_back({{"kind", to_string(op.kind)},
                                   {"angle_degrees", op.angle_degrees},
                                   {"crop_fraction", op.crop_fraction},
                                   {"crop_offset_x", op.crop_offset_x},
                                   {"crop_offset_y", op.crop_offset_y},
                                   {"scale_factor", op.scale_factor}});
                }
                for (std::size_t v = 0; v < kNumViews; ++v) cells.push_back(aug[v].image);
                doc.push_back({{"sample", i}, {"ops", ops}});
            }
            write_png(fs::path(out_dir) / "augment_preview.png", tile(cells, 2 * kNumViews));
            io::write_text(fs::path(out_dir) / "augment_preview.json", doc.dump(2) + "\n");
            out << "wrote " << n << " rows (clean | augmented) to " << out_dir << '\n';
        } else if (pr->parsed()) {
            const Emotion e = parse_emotion(emotion);
            // Every template has a demographic slot, so without metadata the
            // balanced set over all combinations is printed.
            if (class_set || (age.empty() && gender.empty() && ethnicity.empty())) {
                for (const auto& cp : class_prompt_set(e, n, seed)) out << cp.text << '\n';
            } else {
                PromptMeta meta;
                if (!age.empty()) meta.age_group = parse_age_group(age);
                if (!gender.empty()) meta.gender = parse_gender(gender);
                if (!ethnicity.empty()) meta.ethnicity = parse_ethnicity(ethnicity);
                const auto res = expand(default_prompt_bank(), e, meta, n, seed);
                for (const auto& p : res.prompts) out << p << '\n';
                if (res.truncated) err << "note: only " << res.prompts.size() << " distinct prompts exist\n";
            }
        } else if (tr->parsed()) {
            auto exp = load_experiment(config_file);
            if (workers > 0) exp.train.workers = workers;
            exp.train.validate();
            const auto corpus = load_corpus(corpus_dir);
            const auto data = prepare_samples(corpus, exp.train);
            if (metrics_file.empty()) metrics_file = ckpt + ".metrics.jsonl";
            std::ofstream log;
            const bool writes = !rank || *rank == 0;
            if (writes) {
                if (fs::path(metrics_file).has_parent_path()) fs::create_directories(fs::path(metrics_file).parent_path());
                log.open(metrics_file, std::ios::trunc);
            }
            TrainResult res;
            if (rank) {
                if (launch_file.empty()) throw UsageError("--rank requires --launch-file");
                Rendezvous rvz;
                rvz.launch_file = launch_file;
                TcpCommunicator comm(*rank, exp.train.workers, rvz);
                res = train_worker(data, exp.train, comm, writes ? &log : nullptr);
            } else {
                res = train(data, exp.train, &log);
            }
            if (writes) {
                save_checkpoint(res.params, ckpt, checkpoint_sidecar(exp.train));
                const auto& last = res.metrics.empty() ? StepMetrics{} : res.metrics.back();
                out << "trained " << res.metrics.size() << " steps in " << std::fixed << std::setprecision(1)
                    << res.seconds << " s; final loss " << std::setprecision(6) << last.total << "; checkpoint "
                    << ckpt << '\n';
            }
        } else if (cv->parsed()) {
            const auto exp = load_experiment(config_file);
            const auto corpus = load_corpus(corpus_dir);
            const auto rep = cross_validate(corpus, exp.train, {exp.fold_seed, baseline, &err});
            auto j = to_json(rep);
            j["baseline"] = baseline;
            io::write_text(report, j.dump(2) + "\n");
            out << "mean accuracy " << rep.mean << " +/- " << rep.std << '\n';
        } else if (ab->parsed()) {
            const auto exp = load_experiment(config_file);
            const auto corpus = load_corpus(corpus_dir);
            const auto rows = run_ablations(corpus, exp.train, {exp.fold_seed, false, &err});
            io::write_text(report, to_json(rows).dump(2) + "\n");
            out << ablation_table(rows);
        } else if (sc->parsed()) {
            auto exp = load_experiment(config_file);
            const auto corpus = load_corpus(corpus_dir);
            exp.train.max_steps = steps;
            exp.train.epochs = std::max(exp.train.epochs, 1000);
            out << std::left << std::setw(10) << "workers" << "steps/sec\n";
            for (int w = 1; w <= max_workers; w *= 2) {
                auto cfg = exp.train;
                cfg.workers = w;
                cfg.shards = w;
                if (cfg.batch_size % w != 0 || cfg.batch_size / w < 2) break;
                const auto data = prepare_samples(corpus, cfg);
                const auto t0 = std::chrono::steady_clock::now();
                const auto res = train(data, cfg);
                const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                out << std::left << std::setw(10) << w << std::fixed << std::setprecision(2)
                    << static_cast<double>(res.metrics.size()) / s << '\n';
            }
        } else if (inf->parsed()) {
            auto registry = std::make_shared<ModelRegistry>();
            registry->load(ckpt);
            ClassifyRequest req;
            const std::array<std::string, kNumViews> files{frontal, left, right};
            for (std::size_t v = 0; v < kNumViews; ++v) {
                const auto bytes = io::read_file(files[v]);
                req.images[v] = std::string(bytes.begin(), bytes.end());
            }
            out << classify_request(req, *registry).dump() << '\n';
        } else if (sv->parsed()) {
            auto registry = std::make_shared<ModelRegistry>();
            for (const auto& c : ckpts) registry->load(c);
            InferenceServer server(registry);
            const int bound = server.bind(host, port);
            out << "listening on http://" << host << ':' << bound << '\n' << std::flush;
            server.run();
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const HttpError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

}  // namespace avlm
