#include "hvla/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "hvla/rng.hpp"

namespace hvla {

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

Image hflip(const Image& img) {
    Image out{img.h, img.w, std::vector<double>(img.v.size())};
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) out.at(y, x) = img.at(y, img.w - 1 - x);
    }
    return out;
}

Image rotate_image(const Image& img, double degrees) {
    const double norm = degrees - 360.0 * std::floor(degrees / 360.0);
    if (norm == 0.0) return img;
    Image out{img.h, img.w, std::vector<double>(img.v.size(), 0.0)};
    if (norm == 180.0) {
        for (int y = 0; y < img.h; ++y) {
            for (int x = 0; x < img.w; ++x) out.at(y, x) = img.at(img.h - 1 - y, img.w - 1 - x);
        }
        return out;
    }
    const double theta = norm * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double cy = (img.h - 1) * 0.5, cx = (img.w - 1) * 0.5;
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double dy = y - cy, dx = x - cx;
            // bilinear sample with border replication: convex combinations
            // keep constants constant and values inside [0,1]
            const double sy = std::clamp(cy + c * dy + s * dx, 0.0, img.h - 1.0);
            const double sx = std::clamp(cx - s * dy + c * dx, 0.0, img.w - 1.0);
            const int y0 = static_cast<int>(std::floor(sy));
            const int x0 = static_cast<int>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            const int y1 = clampi(y0 + 1, img.h - 1), x1 = clampi(x0 + 1, img.w - 1);
            out.at(y, x) = (1.0 - fy) * ((1.0 - fx) * img.at(y0, x0) + fx * img.at(y0, x1)) +
                           fy * ((1.0 - fx) * img.at(y1, x0) + fx * img.at(y1, x1));
        }
    }
    return out;
}

Image contrast_stretch(const Image& img, double strength) {
    const auto [mn, mx] = std::minmax_element(img.v.begin(), img.v.end());
    const double lo = *mn, hi = *mx;
    if (hi - lo < 1e-12) return img;
    Image out{img.h, img.w, std::vector<double>(img.v.size())};
    const double inv = 1.0 / (hi - lo);
    for (size_t i = 0; i < img.v.size(); ++i) {
        const double stretched = (img.v[i] - lo) * inv;
        out.v[i] = (1.0 - strength) * img.v[i] + strength * stretched;
    }
    return out;
}

std::pair<Image, Image> augment(const Image& img, uint64_t seed) {
    Rng rng(seed);
    auto one_view = [&]() {
        Image view = rng.uniform() < 0.5 ? hflip(img) : img;
        view = rotate_image(view, rng.uniform(0.0, 180.0));
        return contrast_stretch(view, rng.uniform());
    };
    Image v1 = one_view();
    Image v2 = one_view();
    return {std::move(v1), std::move(v2)};
}

// ---------------------------------------------------------------------------
// vision encoder
// ---------------------------------------------------------------------------

namespace {

Tensor he_conv(int64_t co, int64_t ci, int64_t k, Rng& rng) {
    std::vector<double> w(static_cast<size_t>(co * ci * k * k));
    const double std = std::sqrt(2.0 / static_cast<double>(ci * k * k));
    for (auto& x : w) x = rng.normal(0.0, std);
    return Tensor::from_data({co, ci, k, k}, std::move(w), /*requires_grad=*/true);
}

// Biases start at small random values rather than zero: with an all-dead
// relu input a zero bias would park the next preactivation exactly on the
// relu kink, where the derivative convention and finite differences disagree.
Tensor small_bias(int64_t n, Rng& rng) {
    std::vector<double> b(static_cast<size_t>(n));
    for (auto& x : b) x = rng.normal(0.0, 0.01);
    return Tensor::from_data({n}, std::move(b), /*requires_grad=*/true);
}

}  // namespace

VisionEncoder::VisionEncoder(const VisionConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    if (cfg_.widths.size() != kStages) {
        throw std::invalid_argument("vision encoder expects " + std::to_string(kStages) +
                                    " stage widths, got " + std::to_string(cfg_.widths.size()));
    }
    for (size_t i = 1; i < cfg_.widths.size(); ++i) {
        if (cfg_.widths[i] <= cfg_.widths[i - 1]) {
            throw std::invalid_argument("stage channel widths must strictly increase");
        }
    }
    Rng rng(derive_seed(init_seed, "vision_init"));
    int64_t ci = 1;
    for (int s = 0; s < kStages; ++s) {
        const int64_t co = cfg_.widths[static_cast<size_t>(s)];
        const std::string p = "vision.s" + std::to_string(s) + ".";
        params_[p + "c0.w"] = he_conv(co, ci, 3, rng);
        params_[p + "c0.b"] = small_bias(co, rng);
        params_[p + "c1.w"] = he_conv(co, co, 3, rng);
        params_[p + "c1.b"] = small_bias(co, rng);
        ci = co;
    }
}

FeaturePyramid VisionEncoder::forward(const Image& img) const {
    if (img.h < kMinExtent || img.w < kMinExtent || img.h % kMinExtent || img.w % kMinExtent) {
        throw std::invalid_argument("vision encoder requires extents divisible by " +
                                    std::to_string(kMinExtent) + ", got " +
                                    std::to_string(img.h) + "x" + std::to_string(img.w));
    }
    Tensor x = Tensor::from_data({1, img.h, img.w}, img.v);
    FeaturePyramid pyr;
    for (int s = 0; s < kStages; ++s) {
        const std::string p = "vision.s" + std::to_string(s) + ".";
        x = relu(conv2d(x, params_.at(p + "c0.w"), params_.at(p + "c0.b"), 2, 1));
        x = relu(conv2d(x, params_.at(p + "c1.w"), params_.at(p + "c1.b"), 1, 1));
        pyr.stage_maps.push_back(x);
    }
    const auto& last = pyr.stage_maps.back();
    const int64_t c = last.dim(0);
    pyr.high_level = reshape(mean(reshape(last, {c, last.dim(1) * last.dim(2)}), 1), {c});
    return pyr;
}

// ---------------------------------------------------------------------------
// reports / text encoder
// ---------------------------------------------------------------------------

void validate_report(const ReportPair& report) {
    if (report.findings.empty() || report.impressions.empty()) {
        throw std::invalid_argument("report: findings and impressions must be non-empty");
    }
    if (report.findings.size() + report.impressions.size() < 3) {
        throw std::invalid_argument("report: fewer than three tokens");
    }
}

namespace {

// Random matrix with orthonormal columns (rows >= cols) or rows (otherwise),
// via modified Gram-Schmidt. Orthonormal frozen layers preserve angles, so
// unrelated token sets stay near-orthogonal through the map.
std::vector<double> random_orthonormal(int64_t rows, int64_t cols, Rng& rng) {
    const bool by_cols = rows >= cols;
    const int64_t n = by_cols ? rows : cols;  // vector length
    const int64_t k = by_cols ? cols : rows;  // number of vectors
    std::vector<std::vector<double>> vecs(static_cast<size_t>(k),
                                          std::vector<double>(static_cast<size_t>(n)));
    for (auto& v : vecs) {
        for (auto& x : v) x = rng.normal();
    }
    for (int64_t i = 0; i < k; ++i) {
        auto& vi = vecs[static_cast<size_t>(i)];
        for (int64_t j = 0; j < i; ++j) {
            const auto& vj = vecs[static_cast<size_t>(j)];
            double dot = 0.0;
            for (int64_t t = 0; t < n; ++t) dot += vi[static_cast<size_t>(t)] * vj[static_cast<size_t>(t)];
            for (int64_t t = 0; t < n; ++t) vi[static_cast<size_t>(t)] -= dot * vj[static_cast<size_t>(t)];
        }
        double norm = 0.0;
        for (double x : vi) norm += x * x;
        norm = std::sqrt(norm);
        for (auto& x : vi) x /= norm;
    }
    std::vector<double> m(static_cast<size_t>(rows * cols));
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            m[static_cast<size_t>(r * cols + c)] =
                by_cols ? vecs[static_cast<size_t>(c)][static_cast<size_t>(r)]
                        : vecs[static_cast<size_t>(r)][static_cast<size_t>(c)];
        }
    }
    return m;
}

}  // namespace

TextEncoder::TextEncoder(int64_t vocab_size, const TextConfig& cfg)
    : vocab_size_(vocab_size), cfg_(cfg) {
    if (vocab_size_ <= 0) throw std::invalid_argument("text encoder: empty vocabulary");
    Rng rng(derive_seed(cfg_.frozen_seed, "text_init"));
    embed_.resize(static_cast<size_t>(vocab_size_ * cfg_.d_embed));
    for (auto& x : embed_) x = rng.normal();
    w1_ = random_orthonormal(cfg_.d_hidden, cfg_.d_embed, rng);
    w2_ = random_orthonormal(cfg_.d_out, cfg_.d_hidden, rng);
}

std::vector<double> TextEncoder::encode(const std::vector<int32_t>& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("text encoder: empty token sequence");
    std::vector<double> pooled(static_cast<size_t>(cfg_.d_embed), 0.0);
    for (int32_t t : tokens) {
        if (t < 0 || t >= vocab_size_) {
            throw std::invalid_argument("text encoder: token id " + std::to_string(t) +
                                        " outside vocabulary of size " +
                                        std::to_string(vocab_size_));
        }
        const double* row = embed_.data() + static_cast<size_t>(t) * cfg_.d_embed;
        for (int64_t i = 0; i < cfg_.d_embed; ++i) pooled[static_cast<size_t>(i)] += row[i];
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (auto& x : pooled) x *= inv;

    std::vector<double> hidden(static_cast<size_t>(cfg_.d_hidden), 0.0);
    for (int64_t i = 0; i < cfg_.d_hidden; ++i) {
        const double* row = w1_.data() + static_cast<size_t>(i) * cfg_.d_embed;
        double acc = 0.0;
        for (int64_t j = 0; j < cfg_.d_embed; ++j) acc += row[j] * pooled[static_cast<size_t>(j)];
        hidden[static_cast<size_t>(i)] = std::tanh(acc);
    }
    std::vector<double> out(static_cast<size_t>(cfg_.d_out), 0.0);
    for (int64_t i = 0; i < cfg_.d_out; ++i) {
        const double* row = w2_.data() + static_cast<size_t>(i) * cfg_.d_hidden;
        double acc = 0.0;
        for (int64_t j = 0; j < cfg_.d_hidden; ++j) acc += row[j] * hidden[static_cast<size_t>(j)];
        out[static_cast<size_t>(i)] = acc;
    }
    return out;
}

uint64_t TextEncoder::params_hash() const {
    uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const std::vector<double>& v) {
        for (double d : v) {
            uint64_t bits;
            std::memcpy(&bits, &d, sizeof(bits));
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 1099511628211ULL;
            }
        }
    };
    feed(embed_);
    feed(w1_);
    feed(w2_);
    return h;
}

}  // namespace hvla
