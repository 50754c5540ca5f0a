#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hvla/tensor.hpp"

namespace hvla {

// ---------------------------------------------------------------------------
// images and augmentation
// ---------------------------------------------------------------------------

struct Image {
    int h = 0;
    int w = 0;
    std::vector<double> v;  // row-major, values in [0,1]

    double& at(int y, int x) { return v[static_cast<size_t>(y * w + x)]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y * w + x)]; }
};

Image hflip(const Image& img);
// Bilinear rotation about the image center, zero fill outside; exact grid
// mapping at multiples of 180 degrees.
Image rotate_image(const Image& img, double degrees);
// Min-max stretch blended with the identity by `strength` in [0,1]; constant
// images pass through unchanged.
Image contrast_stretch(const Image& img, double strength);

// Two independently augmented views (flip / rotation in [0,180] / contrast),
// deterministic in `seed`.
std::pair<Image, Image> augment(const Image& img, uint64_t seed);

// ---------------------------------------------------------------------------
// vision encoder
// ---------------------------------------------------------------------------

struct VisionConfig {
    std::vector<int64_t> widths{16, 32, 64, 128};  // strictly increasing
};

struct FeaturePyramid {
    std::vector<Tensor> stage_maps;  // 4 maps (C_i, H_i, W_i), extents halving
    Tensor high_level;               // global average pool of the last stage
};

// 4-stage strided convolutional encoder; each stage is conv(s2) + relu +
// conv(s1) + relu. Channel widths strictly increase with depth.
class VisionEncoder {
public:
    VisionEncoder(const VisionConfig& cfg, uint64_t init_seed);

    FeaturePyramid forward(const Image& img) const;

    const VisionConfig& config() const { return cfg_; }
    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }

    static constexpr int kStages = 4;
    // each stage halves the extents, so inputs must divide 2^kStages
    static constexpr int kMinExtent = 1 << kStages;

private:
    VisionConfig cfg_;
    std::map<std::string, Tensor> params_;
};

// ---------------------------------------------------------------------------
// reports and the frozen text encoder
// ---------------------------------------------------------------------------

struct ReportPair {
    std::vector<int32_t> findings;     // descriptive tokens
    std::vector<int32_t> impressions;  // conclusive tokens
};

// Both parts non-empty and at least three tokens in total.
void validate_report(const ReportPair& report);

struct TextConfig {
    int64_t d_embed = 128;
    int64_t d_hidden = 128;
    int64_t d_out = 128;  // d_t
    uint64_t frozen_seed = 0x7ea7;
};

// Frozen random embedding table + mean pool + frozen bias-free two-layer tanh
// map. No trainable parameters; encode() is a pure function of the tokens.
class TextEncoder {
public:
    TextEncoder(int64_t vocab_size, const TextConfig& cfg);

    std::vector<double> encode(const std::vector<int32_t>& tokens) const;

    int64_t vocab_size() const { return vocab_size_; }
    int64_t out_dim() const { return cfg_.d_out; }
    const TextConfig& config() const { return cfg_; }

    // FNV-1a over all frozen tables; used to assert the frozen contract.
    uint64_t params_hash() const;

private:
    int64_t vocab_size_;
    TextConfig cfg_;
    std::vector<double> embed_;  // V x d_embed
    std::vector<double> w1_;     // d_hidden x d_embed
    std::vector<double> w2_;     // d_out x d_hidden
};

}  // namespace hvla
