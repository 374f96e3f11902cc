#pragma once

// Image and text towers mapping views and prompts into one unit-norm
// embedding space, with hand-written reverse-mode gradients.
//
// Image (patch-mlp-P): mean of the P x P patches -> linear patch projection
//   -> tanh MLP (2 layers) -> linear head -> L2 normalize. Averaging patches
//   before the (linear) projection equals projecting each patch and then
//   averaging.
// Image (tiny-conv): two 3x3 stride-2 convolutions with tanh, flattened,
//   then the same MLP and head.
// Text: mean of token embedding rows -> tanh layer -> linear head -> L2
//   normalize.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "prompts.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace avlm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Embedding = Eigen::VectorXd;

enum class EngineId : std::uint32_t { patch_mlp_16 = 0, patch_mlp_32 = 1, tiny_conv = 2 };

constexpr std::string_view to_string(EngineId e) {
    switch (e) {
        case EngineId::patch_mlp_16: return "patch-mlp-16";
        case EngineId::patch_mlp_32: return "patch-mlp-32";
        case EngineId::tiny_conv: return "tiny-conv";
    }
    return "unknown";
}

inline EngineId parse_engine(std::string_view s) {
    for (auto e : {EngineId::patch_mlp_16, EngineId::patch_mlp_32, EngineId::tiny_conv})
        if (to_string(e) == s) return e;
    throw InvalidInput("unknown engine '" + std::string(s) + "'");
}

struct ModelConfig {
    EngineId engine = EngineId::tiny_conv;
    int image_height = 64;
    int image_width = 64;
    int embed_dim = 64;
    int patch_proj_dim = 64;  // patch-mlp engines
    int conv1_channels = 4;   // tiny-conv
    int conv2_channels = 8;
    int image_hidden = 64;
    int token_dim = 32;
    int text_hidden = 64;
    std::uint32_t vocab_size = kVocabSize;

    int patch_size() const { return engine == EngineId::patch_mlp_16 ? 16 : 32; }

    int conv1_out(int n) const { return (n + 1) / 2; }

    int feature_dim() const {
        if (engine == EngineId::tiny_conv)
            return conv2_channels * conv1_out(conv1_out(image_height)) * conv1_out(conv1_out(image_width));
        return patch_proj_dim;
    }

    void validate() const {
        if (image_height < 8 || image_width < 8) throw InvalidInput("model: image must be at least 8x8");
        if (embed_dim < 2) throw InvalidInput("model: embedding dimension must be >= 2");
        if (engine != EngineId::tiny_conv) {
            const int p = patch_size();
            if (image_height % p != 0 || image_width % p != 0)
                throw InvalidInput("model: image size must be a multiple of the patch size " + std::to_string(p));
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named tensors packed into one flat column-major buffer.
class ParamLayout {
public:
    struct Entry {
        std::string name;
        std::size_t offset;
        int rows;
        int cols;
        int fan_in;
        std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
    };

    void add(std::string name, int rows, int cols, int fan_in) {
        index_[name] = entries_.size();
        entries_.push_back({std::move(name), total_, rows, cols, fan_in});
        total_ += entries_.back().size();
    }
    const Entry& at(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) throw InvalidInput("no parameter named " + name);
        return entries_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return total_; }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
    std::size_t total_ = 0;
};

inline ParamLayout make_layout(const ModelConfig& cfg) {
    cfg.validate();
    ParamLayout l;
    if (cfg.engine == EngineId::tiny_conv) {
        l.add("image.conv1.weight", cfg.conv1_channels, 9, 9);
        l.add("image.conv1.bias", cfg.conv1_channels, 1, 9);
        l.add("image.conv2.weight", cfg.conv2_channels, 9 * cfg.conv1_channels, 9 * cfg.conv1_channels);
        l.add("image.conv2.bias", cfg.conv2_channels, 1, 9 * cfg.conv1_channels);
    } else {
        const int p2 = cfg.patch_size() * cfg.patch_size();
        l.add("image.patch.weight", cfg.patch_proj_dim, p2, p2);
        l.add("image.patch.bias", cfg.patch_proj_dim, 1, p2);
    }
    const int f = cfg.feature_dim();
    l.add("image.fc1.weight", cfg.image_hidden, f, f);
    l.add("image.fc1.bias", cfg.image_hidden, 1, f);
    l.add("image.fc2.weight", cfg.image_hidden, cfg.image_hidden, cfg.image_hidden);
    l.add("image.fc2.bias", cfg.image_hidden, 1, cfg.image_hidden);
    l.add("image.head.weight", cfg.embed_dim, cfg.image_hidden, cfg.image_hidden);
    l.add("image.head.bias", cfg.embed_dim, 1, cfg.image_hidden);
    l.add("text.embedding", static_cast<int>(cfg.vocab_size), cfg.token_dim, 1);
    l.add("text.fc1.weight", cfg.text_hidden, cfg.token_dim, cfg.token_dim);
    l.add("text.fc1.bias", cfg.text_hidden, 1, cfg.token_dim);
    l.add("text.head.weight", cfg.embed_dim, cfg.text_hidden, cfg.text_hidden);
    l.add("text.head.bias", cfg.embed_dim, 1, cfg.text_hidden);
    return l;
}

using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

// Margin bounds; the margin is clamped into this range after every step.
inline constexpr double kAlphaMin = 0.05;
inline constexpr double kAlphaMax = 1.0;
inline constexpr double kAlphaInit = 0.2;

struct ModelParams {
    ModelConfig config;
    ParamLayout layout;
    std::vector<double> values;
    double alpha = kAlphaInit;

    ModelParams() = default;
    explicit ModelParams(const ModelConfig& cfg) : config(cfg), layout(make_layout(cfg)), values(layout.size(), 0.0) {}

    MatMap tensor(const std::string& name) {
        const auto& e = layout.at(name);
        return MatMap(values.data() + e.offset, e.rows, e.cols);
    }
    ConstMatMap tensor(const std::string& name) const {
        const auto& e = layout.at(name);
        return ConstMatMap(values.data() + e.offset, e.rows, e.cols);
    }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return std::isfinite(alpha);
    }
};

// uniform(-s, s) with s = 1/sqrt(fan_in), one stream per tensor.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p(cfg);
    std::uint64_t k = 0;
    for (const auto& e : p.layout.entries()) {
        Rng rng{seed, 0x1417ULL, k++};
        const double s = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
        for (std::size_t i = 0; i < e.size(); ++i) p.values[e.offset + i] = rng.uniform(-s, s);
    }
    p.alpha = kAlphaInit;
    return p;
}

struct GradAccumulator {
    std::vector<double> values;
    double alpha = 0;

    GradAccumulator() = default;
    explicit GradAccumulator(const ModelParams& p) : values(p.values.size(), 0.0) {}

    void zero() {
        std::fill(values.begin(), values.end(), 0.0);
        alpha = 0;
    }
    MatMap tensor(const ParamLayout& layout, const std::string& name) {
        const auto& e = layout.at(name);
        return MatMap(values.data() + e.offset, e.rows, e.cols);
    }
};

namespace enc_detail {

inline Vec tanh(const Vec& x) { return x.array().tanh().matrix(); }

// L2 normalization; a zero vector maps to e1 with zero Jacobian.
inline constexpr double kNormFloor = 1e-12;

inline void normalize_columns(const Mat& z, Mat& out, Vec& norms) {
    out.resize(z.rows(), z.cols());
    norms.resize(z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double n = z.col(j).norm();
        norms[j] = n;
        if (n < kNormFloor) {
            out.col(j).setZero();
            out(0, j) = 1.0;
        } else {
            out.col(j) = z.col(j) / n;
        }
    }
}

// d(z/|z|)/dz applied to upstream g: (I - e e^T) g / |z|.
inline Mat normalize_backward(const Mat& unit, const Vec& norms, const Mat& upstream) {
    Mat dz(unit.rows(), unit.cols());
    for (Eigen::Index j = 0; j < unit.cols(); ++j) {
        if (norms[j] < kNormFloor) {
            dz.col(j).setZero();
            continue;
        }
        const double proj = unit.col(j).dot(upstream.col(j));
        dz.col(j) = (upstream.col(j) - proj * unit.col(j)) / norms[j];
    }
    return dz;
}

// 3x3, stride 2, zero padding 1. `in` is channels x (h*w) with row-major
// spatial index. Returns (channels*9) x (ho*wo).
inline Mat im2col(const Mat& in, int h, int w) {
    const int ho = (h + 1) / 2, wo = (w + 1) / 2;
    const int ch = static_cast<int>(in.rows());
    Mat col = Mat::Zero(ch * 9, ho * wo);
    for (int c = 0; c < ch; ++c)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const int row = c * 9 + ky * 3 + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = 2 * oy + ky - 1;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = 2 * ox + kx - 1;
                        if (ix < 0 || ix >= w) continue;
                        col(row, oy * wo + ox) = in(c, iy * w + ix);
                    }
                }
            }
    return col;
}

inline Mat col2im(const Mat& col, int channels, int h, int w) {
    const int ho = (h + 1) / 2, wo = (w + 1) / 2;
    Mat out = Mat::Zero(channels, h * w);
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const int row = c * 9 + ky * 3 + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = 2 * oy + ky - 1;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = 2 * ox + kx - 1;
                        if (ix < 0 || ix >= w) continue;
                        out(c, iy * w + ix) += col(row, oy * wo + ox);
                    }
                }
            }
    return out;
}

}  // namespace enc_detail

// Forward pass over a batch of images, caching what backward needs.
class ImageEncoderPass {
public:
    // Returns embed_dim x batch, unit-norm columns.
    const Mat& forward(const ModelParams& p, std::span<const Image* const> images) {
        const auto& cfg = p.config;
        const auto B = static_cast<Eigen::Index>(images.size());
        for (const Image* img : images)
            if (img->height != cfg.image_height || img->width != cfg.image_width)
                throw ShapeError("image encoder expects " + std::to_string(cfg.image_height) + "x" +
                                 std::to_string(cfg.image_width) + ", got " + std::to_string(img->height) + "x" +
                                 std::to_string(img->width));
        engine_ = cfg.engine;
        features_.resize(cfg.feature_dim(), B);
        if (cfg.engine == EngineId::tiny_conv) {
            conv_.assign(images.size(), {});
            const int h = cfg.image_height, w = cfg.image_width;
            const int h1 = cfg.conv1_out(h), w1 = cfg.conv1_out(w);
            const auto W1 = p.tensor("image.conv1.weight");
            const auto b1 = p.tensor("image.conv1.bias");
            const auto W2 = p.tensor("image.conv2.weight");
            const auto b2 = p.tensor("image.conv2.bias");
            for (Eigen::Index j = 0; j < B; ++j) {
                auto& cc = conv_[static_cast<std::size_t>(j)];
                const Image& img = *images[static_cast<std::size_t>(j)];
                const Mat in = Eigen::Map<const Mat>(img.pixels.data(), 1, static_cast<Eigen::Index>(img.size()));
                cc.col1 = enc_detail::im2col(in, h, w);
                cc.y1 = ((W1 * cc.col1).colwise() + b1.col(0)).array().tanh().matrix();
                cc.col2 = enc_detail::im2col(cc.y1, h1, w1);
                cc.y2 = ((W2 * cc.col2).colwise() + b2.col(0)).array().tanh().matrix();
                features_.col(j) = Eigen::Map<const Vec>(cc.y2.data(), cc.y2.size());
            }
        } else {
            const int P = cfg.patch_size();
            const int ny = cfg.image_height / P, nx = cfg.image_width / P;
            mean_patch_.resize(P * P, B);
            for (Eigen::Index j = 0; j < B; ++j) {
                const Image& img = *images[static_cast<std::size_t>(j)];
                for (int ky = 0; ky < P; ++ky)
                    for (int kx = 0; kx < P; ++kx) {
                        double s = 0;
                        for (int py = 0; py < ny; ++py)
                            for (int px = 0; px < nx; ++px) s += img.at(py * P + ky, px * P + kx);
                        mean_patch_(ky * P + kx, j) = s / (ny * nx);
                    }
            }
            features_ = (p.tensor("image.patch.weight") * mean_patch_).colwise() + p.tensor("image.patch.bias").col(0);
        }
        h1_ = ((p.tensor("image.fc1.weight") * features_).colwise() + p.tensor("image.fc1.bias").col(0))
                  .array()
                  .tanh()
                  .matrix();
        h2_ = ((p.tensor("image.fc2.weight") * h1_).colwise() + p.tensor("image.fc2.bias").col(0)).array().tanh().matrix();
        z_ = (p.tensor("image.head.weight") * h2_).colwise() + p.tensor("image.head.bias").col(0);
        enc_detail::normalize_columns(z_, out_, norms_);
        cached_ = true;
        return out_;
    }

    const Mat& output() const { return out_; }
    const Vec& pre_norms() const { return norms_; }

    // Accumulates d(loss)/d(params) given d(loss)/d(embeddings).
    void backward(const ModelParams& p, const Mat& d_embed, GradAccumulator& g) const {
        if (!cached_) throw UsageError("image encoder backward called without a cached forward pass");
        if (d_embed.rows() != out_.rows() || d_embed.cols() != out_.cols())
            throw ShapeError("image encoder backward: upstream gradient shape mismatch");
        const auto& L = p.layout;
        const Mat dz = enc_detail::normalize_backward(out_, norms_, d_embed);
        g.tensor(L, "image.head.weight") += dz * h2_.transpose();
        g.tensor(L, "image.head.bias") += dz.rowwise().sum();
        const Mat da2 = ((p.tensor("image.head.weight").transpose() * dz).array() * (1.0 - h2_.array().square())).matrix();
        g.tensor(L, "image.fc2.weight") += da2 * h1_.transpose();
        g.tensor(L, "image.fc2.bias") += da2.rowwise().sum();
        const Mat da1 = ((p.tensor("image.fc2.weight").transpose() * da2).array() * (1.0 - h1_.array().square())).matrix();
        g.tensor(L, "image.fc1.weight") += da1 * features_.transpose();
        g.tensor(L, "image.fc1.bias") += da1.rowwise().sum();
        const Mat dfeat = p.tensor("image.fc1.weight").transpose() * da1;

        const auto& cfg = p.config;
        if (engine_ == EngineId::tiny_conv) {
            const int h1 = cfg.conv1_out(cfg.image_height), w1 = cfg.conv1_out(cfg.image_width);
            const auto W2 = p.tensor("image.conv2.weight");
            auto gW1 = g.tensor(L, "image.conv1.weight");
            auto gb1 = g.tensor(L, "image.conv1.bias");
            auto gW2 = g.tensor(L, "image.conv2.weight");
            auto gb2 = g.tensor(L, "image.conv2.bias");
            for (std::size_t j = 0; j < conv_.size(); ++j) {
                const auto& cc = conv_[j];
                const Mat dy2 = Eigen::Map<const Mat>(dfeat.col(static_cast<Eigen::Index>(j)).data(), cc.y2.rows(),
                                                      cc.y2.cols());
                const Mat da_c2 = (dy2.array() * (1.0 - cc.y2.array().square())).matrix();
                gW2 += da_c2 * cc.col2.transpose();
                gb2 += da_c2.rowwise().sum();
                const Mat dy1 = enc_detail::col2im(W2.transpose() * da_c2, cfg.conv1_channels, h1, w1);
                const Mat da_c1 = (dy1.array() * (1.0 - cc.y1.array().square())).matrix();
                gW1 += da_c1 * cc.col1.transpose();
                gb1 += da_c1.rowwise().sum();
            }
        } else {
            g.tensor(L, "image.patch.weight") += dfeat * mean_patch_.transpose();
            g.tensor(L, "image.patch.bias") += dfeat.rowwise().sum();
        }
    }

private:
    struct ConvCache {
        Mat col1, y1, col2, y2;
    };
    EngineId engine_ = EngineId::tiny_conv;
    std::vector<ConvCache> conv_;
    Mat mean_patch_, features_, h1_, h2_, z_, out_;
    Vec norms_;
    bool cached_ = false;
};

class TextEncoderPass {
public:
    const Mat& forward(const ModelParams& p, std::span<const TokenSeq> prompts) {
        const auto& cfg = p.config;
        const auto B = static_cast<Eigen::Index>(prompts.size());
        const auto E = p.tensor("text.embedding");
        pooled_.resize(cfg.token_dim, B);
        for (Eigen::Index j = 0; j < B; ++j) {
            const auto& toks = prompts[static_cast<std::size_t>(j)];
            if (toks.empty()) throw InvalidInput("text encoder: empty token sequence");
            Vec acc = Vec::Zero(cfg.token_dim);
            for (auto t : toks) {
                if (t >= cfg.vocab_size) throw ShapeError("text encoder: token id out of vocabulary");
                acc += E.row(t).transpose();
            }
            pooled_.col(j) = acc / static_cast<double>(toks.size());
        }
        tokens_.assign(prompts.begin(), prompts.end());
        h_ = ((p.tensor("text.fc1.weight") * pooled_).colwise() + p.tensor("text.fc1.bias").col(0)).array().tanh().matrix();
        z_ = (p.tensor("text.head.weight") * h_).colwise() + p.tensor("text.head.bias").col(0);
        enc_detail::normalize_columns(z_, out_, norms_);
        cached_ = true;
        return out_;
    }

    const Mat& output() const { return out_; }

    void backward(const ModelParams& p, const Mat& d_embed, GradAccumulator& g) const {
        if (!cached_) throw UsageError("text encoder backward called without a cached forward pass");
        if (d_embed.rows() != out_.rows() || d_embed.cols() != out_.cols())
            throw ShapeError("text encoder backward: upstream gradient shape mismatch");
        const auto& L = p.layout;
        const Mat dz = enc_detail::normalize_backward(out_, norms_, d_embed);
        g.tensor(L, "text.head.weight") += dz * h_.transpose();
        g.tensor(L, "text.head.bias") += dz.rowwise().sum();
        const Mat da = ((p.tensor("text.head.weight").transpose() * dz).array() * (1.0 - h_.array().square())).matrix();
        g.tensor(L, "text.fc1.weight") += da * pooled_.transpose();
        g.tensor(L, "text.fc1.bias") += da.rowwise().sum();
        const Mat dpooled = p.tensor("text.fc1.weight").transpose() * da;
        auto gE = g.tensor(L, "text.embedding");
        for (std::size_t j = 0; j < tokens_.size(); ++j) {
            const double inv = 1.0 / static_cast<double>(tokens_[j].size());
            for (auto t : tokens_[j]) gE.row(t) += inv * dpooled.col(static_cast<Eigen::Index>(j)).transpose();
        }
    }

private:
    std::vector<TokenSeq> tokens_;
    Mat pooled_, h_, z_, out_;
    Vec norms_;
    bool cached_ = false;
};

inline Embedding encode_image(const Image& img, const ModelParams& p) {
    ImageEncoderPass pass;
    const Image* ptr = &img;
    return pass.forward(p, std::span<const Image* const>(&ptr, 1)).col(0);
}

inline Embedding encode_text(const TokenSeq& tokens, const ModelParams& p) {
    if (tokens.empty()) throw InvalidInput("encode_text: empty token sequence");
    TextEncoderPass pass;
    return pass.forward(p, std::span<const TokenSeq>(&tokens, 1)).col(0);
}

}  // namespace avlm
