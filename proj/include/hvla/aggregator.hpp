#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hvla/rng.hpp"
#include "hvla/tensor.hpp"

namespace hvla {

struct AggregatorConfig {
    int64_t grid = 4;    // G; token dimension is G*G
    int64_t heads = 4;   // must divide G*G
    int64_t d_out = 128; // output dimension of the CLS readout
    int64_t ffn_hidden = 32;
    std::vector<double> drop_ratios{0.85, 0.9, 0.9, 0.9};  // shallowest first
};

// max(1, floor((1 - ratio) * channels)); the small epsilon makes the floor
// behave as in real arithmetic when (1 - ratio) is not representable.
int64_t keep_count(int64_t channels, double ratio);

// Sorted retained channel indices, a uniform sample without replacement.
std::vector<int64_t> drop_channels(int64_t channels, double ratio, Rng& rng);

// (C,H,W) -> (C, G*G): adaptive mean pool each channel to GxG then flatten,
// one token per channel.
Tensor pool_flatten(const Tensor& stage_map, int64_t grid);

// Channel-tokens from all stages after pooling and dropping. `positions`
// holds each token's pre-drop global channel index (stage offsets applied),
// which also selects its positional-embedding row.
struct TokenSequence {
    Tensor tokens;  // L x G*G
    std::vector<int> level_of_origin;
    std::vector<int64_t> positions;
};

// Fuses pooled, channel-dropped multi-stage feature maps into one vector:
// CLS + positional embedding + one MHSA block, CLS readout mapped to d_out.
class Aggregator {
public:
    Aggregator(const AggregatorConfig& cfg, std::vector<int64_t> stage_widths, uint64_t seed);

    TokenSequence build_tokens(const std::vector<Tensor>& stage_maps, Rng& drop_rng) const;
    Tensor attend(const TokenSequence& seq) const;
    Tensor forward(const std::vector<Tensor>& stage_maps, Rng& drop_rng) const;

    // Post-softmax attention matrices for the given sequence, one per head.
    std::vector<Tensor> attention_matrices(const TokenSequence& seq) const;

    int64_t token_dim() const { return cfg_.grid * cfg_.grid; }
    int64_t max_tokens() const { return l_max_; }
    const AggregatorConfig& config() const { return cfg_; }
    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }

private:
    struct Block;
    Block run_block(const TokenSequence& seq) const;

    AggregatorConfig cfg_;
    std::vector<int64_t> stage_widths_;
    int64_t l_max_ = 0;
    std::map<std::string, Tensor> params_;
};

}  // namespace hvla
