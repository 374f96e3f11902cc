#pragma once

// HTTP inference service:
//   POST /classify   multipart (fields frontal, left, right; optional
//                    <view>_frames, model) or JSON with base64 PNGs
//   GET  /health     {"status":"ok","model_id":...}
//   GET  /models     loaded checkpoints and known engines

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "base64.hpp"
#include "checkpoint.hpp"
#include "classify.hpp"
#include "dynimg.hpp"
#include "errors.hpp"
#include "png_io.hpp"
#include "trainer.hpp"
#include "types.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a _res macro that
// clashes with Eigen parameter names.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif
#include <httplib.h>

namespace avlm {

inline constexpr std::size_t kMaxPayloadBytes = 16u << 20;
inline constexpr std::string_view kThreeViewsError = "exactly three views required";

// Error carrying the HTTP status it maps to.
struct HttpError : std::runtime_error {
    HttpError(int code, const std::string& what) : std::runtime_error(what), status(code) {}
    int status;
};

struct ServedModel {
    std::string model_id;
    std::filesystem::path path;
    ModelParams params;
    Mat class_embeddings;
    PromptSetSpec prompts;
    RankPoolConfig rank_pool;
};

// Read-only once serving starts.
class ModelRegistry {
public:
    const ServedModel& add(ModelParams params, std::string model_id, std::filesystem::path path,
                           const nlohmann::json& sidecar = nlohmann::json::object()) {
        ServedModel m;
        m.model_id = std::move(model_id);
        m.path = std::move(path);
        m.prompts.per_class = sidecar.value("prompts_per_class", m.prompts.per_class);
        m.prompts.seed = sidecar.value("prompt_seed", m.prompts.seed);
        if (sidecar.contains("train_config")) m.rank_pool = sidecar.at("train_config").get<TrainConfig>().rank_pool;
        m.params = std::move(params);
        m.class_embeddings = class_text_embeddings(m.params, m.prompts);
        models_.push_back(std::move(m));
        return models_.back();
    }

    const ServedModel& load(const std::filesystem::path& ckpt) {
        auto loaded = load_checkpoint(ckpt);
        nlohmann::json sidecar = nlohmann::json::object();
        if (std::filesystem::exists(sidecar_path(ckpt))) sidecar = nlohmann::json::parse(io::read_text(sidecar_path(ckpt)));
        return add(std::move(loaded.params), loaded.model_id, ckpt, sidecar);
    }

    bool empty() const { return models_.empty(); }
    const std::vector<ServedModel>& models() const { return models_; }

    // Empty selector: the first model. Otherwise a model id, a checkpoint
    // file name, or an engine name (first match).
    const ServedModel& select(const std::string& selector) const {
        if (models_.empty()) throw HttpError(503, "no checkpoint loaded");
        if (selector.empty()) return models_.front();
        for (const auto& m : models_)
            if (m.model_id == selector || m.path.filename().string() == selector) return m;
        for (const auto& m : models_)
            if (to_string(m.params.config.engine) == selector) return m;
        throw HttpError(404, "unknown model '" + selector + "'");
    }

    nlohmann::json describe() const {
        nlohmann::json list = nlohmann::json::array();
        for (std::size_t i = 0; i < models_.size(); ++i) {
            const auto& m = models_[i];
            list.push_back({{"model_id", m.model_id},
                            {"path", m.path.string()},
                            {"engine", to_string(m.params.config.engine)},
                            {"embed_dim", m.params.config.embed_dim},
                            {"image_height", m.params.config.image_height},
                            {"image_width", m.params.config.image_width},
                            {"default", i == 0}});
        }
        return {{"models", list}, {"engines", {"patch-mlp-16", "patch-mlp-32", "tiny-conv"}}};
    }

private:
    std::vector<ServedModel> models_;
};

struct ClassifyRequest {
    std::array<std::optional<std::string>, kNumViews> images;  // PNG bytes
    std::array<std::vector<std::string>, kNumViews> sequences;  // PNG bytes per frame
    std::string model;
};

inline constexpr std::array<std::string_view, kNumViews> kViewFields{"frontal", "left", "right"};

inline ClassifyRequest parse_json_request(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw HttpError(400, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
    auto bytes = [](const nlohmann::json& v) {
        if (!v.is_string()) throw HttpError(400, "images must be base64 strings");
        try {
            const auto raw = b64::decode(v.get<std::string>());
            return std::string(raw.begin(), raw.end());
        } catch (const InvalidInput& e) {
            throw HttpError(400, e.what());
        }
    };
    ClassifyRequest req;
    const nlohmann::json* seqs = j.contains("sequences") ? &j.at("sequences") : nullptr;
    for (std::size_t v = 0; v < kNumViews; ++v) {
        const std::string key(kViewFields[v]);
        if (j.contains(key) && !j.at(key).is_null()) req.images[v] = bytes(j.at(key));
        if (seqs && seqs->is_object() && seqs->contains(key)) {
            const auto& frames = seqs->at(key);
            if (!frames.is_array()) throw HttpError(400, "sequences." + key + " must be an array");
            for (const auto& f : frames) req.sequences[v].push_back(bytes(f));
        }
    }
    if (j.contains("model") && j.at("model").is_string()) req.model = j.at("model").get<std::string>();
    return req;
}

inline ClassifyRequest parse_multipart_request(const httplib::Request& r) {
    ClassifyRequest req;
    for (std::size_t v = 0; v < kNumViews; ++v) {
        const std::string key(kViewFields[v]);
        if (r.has_file(key)) req.images[v] = r.get_file_value(key).content;
        for (const auto& f : r.get_file_values(key + "_frames")) req.sequences[v].push_back(f.content);
    }
    if (r.has_file("model")) req.model = r.get_file_value("model").content;
    return req;
}

namespace serve_detail {

inline Image decode_view(const std::string& png, std::size_t v) {
    try {
        return png::decode(std::span(reinterpret_cast<const unsigned char*>(png.data()), png.size()));
    } catch (const InvalidInput&) {
        throw HttpError(400, "undecodable PNG for view '" + std::string(kViewFields[v]) + "'");
    }
}

}  // namespace serve_detail

// Validates, decodes and classifies; the response is the JSON body.
inline nlohmann::ordered_json classify_request(const ClassifyRequest& req, const ModelRegistry& registry) {
    const ServedModel& model = registry.select(req.model);
    for (std::size_t v = 0; v < kNumViews; ++v)
        if (!req.images[v] && req.sequences[v].empty()) throw HttpError(400, std::string(kThreeViewsError));

    std::array<Image, kNumViews> views;
    for (std::size_t v = 0; v < kNumViews; ++v) {
        if (!req.sequences[v].empty()) {
            std::vector<FeatureVec> frames;
            Image first;
            for (const auto& f : req.sequences[v]) {
                Image im = serve_detail::decode_view(f, v);
                if (frames.empty()) first = im;
                else if (im.height != first.height || im.width != first.width)
                    throw HttpError(400, "sequence frames must share one size");
                frames.push_back(std::move(im.pixels));
            }
            const FeatureVec u =
                frames.size() == 1 ? frames.front() : rank_pool(frames, model.rank_pool);
            views[v] = to_dynamic_image(u, {first.height, first.width});
        } else {
            views[v] = serve_detail::decode_view(*req.images[v], v);
        }
    }
    for (std::size_t v = 1; v < kNumViews; ++v)
        if (views[v].height != views[0].height || views[v].width != views[0].width)
            throw HttpError(400, "all views must have the same dimensions");
    const auto& cfg = model.params.config;
    if (views[0].height != cfg.image_height || views[0].width != cfg.image_width)
        throw HttpError(400, "images are " + std::to_string(views[0].height) + "x" + std::to_string(views[0].width) +
                                 " but the model expects " + std::to_string(cfg.image_height) + "x" +
                                 std::to_string(cfg.image_width));

    const std::array<const Image*, kNumViews> ptrs{&views[0], &views[1], &views[2]};
    const auto c = classify_views(model.params, model.class_embeddings, ptrs);
    nlohmann::ordered_json probs = nlohmann::ordered_json::object();
    for (std::size_t e = 0; e < kNumEmotions; ++e) probs[std::string(to_string(kAllEmotions[e]))] = c.probabilities[e];
    nlohmann::ordered_json per_view = nlohmann::ordered_json::array();
    for (auto e : c.per_view) per_view.push_back(std::string(to_string(e)));
    return {{"probabilities", probs},
            {"predicted", std::string(to_string(c.predicted))},
            {"per_view_agreement", per_view},
            {"model_id", model.model_id}};
}

class InferenceServer {
public:
    explicit InferenceServer(std::shared_ptr<const ModelRegistry> registry) : registry_(std::move(registry)) {
        routes();
    }
    ~InferenceServer() { stop(); }

    // Binds host:port (0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port) {
        const bool ok = port == 0 ? (port_ = server_.bind_to_any_port(host)) > 0 : server_.bind_to_port(host, port);
        if (!ok) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port) + " (address in use?)");
        if (port != 0) port_ = port;
        return port_;
    }

    void run() { server_.listen_after_bind(); }

    void start() {
        thread_ = std::thread([this] { run(); });
        server_.wait_until_ready();
    }

    void stop() {
        if (server_.is_running()) server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const { return port_; }

private:
    static void send_json(httplib::Response& res, int status, const std::string& body) {
        res.status = status;
        res.set_content(body, "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& msg) {
        send_json(res, status, nlohmann::json{{"error", msg}}.dump());
    }

    void routes() {
        server_.set_payload_max_length(kMaxPayloadBytes);
        server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                     {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                     {"Access-Control-Allow-Headers", "Content-Type"}});
        server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
        server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
            if (registry_->empty()) return send_json(res, 503, R"({"status":"no-model","model_id":null})");
            send_json(res, 200, nlohmann::json{{"status", "ok"}, {"model_id", registry_->models().front().model_id}}.dump());
        });
        server_.Get("/models", [this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, registry_->describe().dump());
        });
        server_.Post("/classify", [this](const httplib::Request& req, httplib::Response& res) {
            try {
                const ClassifyRequest cr = req.is_multipart_form_data() ? parse_multipart_request(req)
                                                                       : parse_json_request(req.body);
                send_json(res, 200, classify_request(cr, *registry_).dump());
            } catch (const HttpError& e) {
                send_error(res, e.status, e.what());
            } catch (const InvalidInput& e) {
                send_error(res, 400, e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            }
        });
        server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (!res.body.empty()) return;
            if (res.status == 413) send_error(res, 413, "payload exceeds 16 MiB");
            else if (res.status == 404) send_error(res, 404, "not found");
        });
    }

    std::shared_ptr<const ModelRegistry> registry_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace avlm
