#include "hvla/aggregator.hpp"

#include <cmath>
#include <stdexcept>

namespace hvla {

int64_t keep_count(int64_t channels, double ratio) {
    if (ratio < 0.0 || ratio >= 1.0) {
        throw std::invalid_argument("drop ratio must be in [0,1), got " + std::to_string(ratio));
    }
    const auto kept = static_cast<int64_t>(
        std::floor((1.0 - ratio) * static_cast<double>(channels) + 1e-9));
    return std::max<int64_t>(1, kept);
}

std::vector<int64_t> drop_channels(int64_t channels, double ratio, Rng& rng) {
    return rng.sample_indices(channels, keep_count(channels, ratio));
}

Tensor pool_flatten(const Tensor& stage_map, int64_t grid) {
    if (stage_map.rank() != 3) {
        throw std::invalid_argument("pool_flatten: expected (C,H,W), got " +
                                    shape_str(stage_map.shape()));
    }
    if (grid < 1) throw std::invalid_argument("pool_flatten: grid must be >= 1");
    Tensor pooled = adaptive_avg_pool2d(stage_map, static_cast<int>(grid), static_cast<int>(grid));
    return reshape(pooled, {stage_map.dim(0), grid * grid});
}

namespace {

Tensor normal_param(Shape shape, double std, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.normal(0.0, std);
    return Tensor::from_data(std::move(shape), std::move(v), /*requires_grad=*/true);
}

}  // namespace

struct Aggregator::Block {
    Tensor out;                 // (L+1, d)
    std::vector<Tensor> attn;   // per-head (L+1, L+1)
};

Aggregator::Aggregator(const AggregatorConfig& cfg, std::vector<int64_t> stage_widths,
                       uint64_t seed)
    : cfg_(cfg), stage_widths_(std::move(stage_widths)) {
    const int64_t d = token_dim();
    if (cfg_.heads < 1 || d % cfg_.heads != 0) {
        throw std::invalid_argument("head count " + std::to_string(cfg_.heads) +
                                    " must divide token dimension " + std::to_string(d));
    }
    if (cfg_.drop_ratios.size() != stage_widths_.size()) {
        throw std::invalid_argument("expected one drop ratio per stage");
    }
    for (double r : cfg_.drop_ratios) keep_count(1, r);  // range check
    for (int64_t w : stage_widths_) l_max_ += w;

    Rng rng(derive_seed(seed, "aggregator_init"));
    const int64_t dh = d / cfg_.heads;
    params_["agg.cls"] = normal_param({d}, 0.02, rng);
    params_["agg.pos"] = normal_param({l_max_ + 1, d}, 0.02, rng);
    const double s_attn = 1.0 / std::sqrt(static_cast<double>(d));
    for (int64_t h = 0; h < cfg_.heads; ++h) {
        const std::string p = "agg.h" + std::to_string(h) + ".";
        params_[p + "wq"] = normal_param({d, dh}, s_attn, rng);
        params_[p + "wk"] = normal_param({d, dh}, s_attn, rng);
        params_[p + "wv"] = normal_param({d, dh}, s_attn, rng);
    }
    // biases start slightly off zero so no relu preactivation can sit exactly
    // on the kink at init
    params_["agg.wo"] = normal_param({d, d}, s_attn, rng);
    params_["agg.bo"] = normal_param({d}, 0.01, rng);
    params_["agg.ffn.w1"] = normal_param({d, cfg_.ffn_hidden},
                                         std::sqrt(2.0 / static_cast<double>(d)), rng);
    params_["agg.ffn.b1"] = normal_param({cfg_.ffn_hidden}, 0.01, rng);
    params_["agg.ffn.w2"] = normal_param({cfg_.ffn_hidden, d},
                                         std::sqrt(2.0 / static_cast<double>(cfg_.ffn_hidden)),
                                         rng);
    params_["agg.ffn.b2"] = normal_param({d}, 0.01, rng);
    params_["agg.out.w"] = normal_param({d, cfg_.d_out}, s_attn, rng);
    params_["agg.out.b"] = normal_param({cfg_.d_out}, 0.01, rng);
}

TokenSequence Aggregator::build_tokens(const std::vector<Tensor>& stage_maps,
                                       Rng& drop_rng) const {
    if (stage_maps.size() != stage_widths_.size()) {
        throw std::invalid_argument("expected " + std::to_string(stage_widths_.size()) +
                                    " stage maps, got " + std::to_string(stage_maps.size()));
    }
    TokenSequence seq;
    std::vector<Tensor> parts;
    int64_t offset = 0;
    for (size_t s = 0; s < stage_maps.size(); ++s) {
        const int64_t c = stage_maps[s].dim(0);
        if (c != stage_widths_[s]) {
            throw std::invalid_argument("stage " + std::to_string(s) + " has " +
                                        std::to_string(c) + " channels, configured " +
                                        std::to_string(stage_widths_[s]));
        }
        Tensor tokens = pool_flatten(stage_maps[s], cfg_.grid);
        const auto kept = drop_channels(c, cfg_.drop_ratios[s], drop_rng);
        parts.push_back(gather_rows(tokens, kept));
        for (int64_t k : kept) {
            seq.level_of_origin.push_back(static_cast<int>(s));
            seq.positions.push_back(offset + k);
        }
        offset += c;
    }
    seq.tokens = concat(parts, 0);
    return seq;
}

Aggregator::Block Aggregator::run_block(const TokenSequence& seq) const {
    const int64_t d = token_dim();
    const int64_t L = seq.tokens.dim(0);
    if (L > l_max_) {
        throw std::invalid_argument("token count " + std::to_string(L) +
                                    " exceeds the positional table capacity " +
                                    std::to_string(l_max_));
    }
    if (seq.positions.size() != static_cast<size_t>(L)) {
        throw std::invalid_argument("token/position count mismatch");
    }
    std::vector<int64_t> pos_rows{0};
    for (int64_t p : seq.positions) pos_rows.push_back(1 + p);

    Tensor x = concat({reshape(params_.at("agg.cls"), {1, d}), seq.tokens}, 0);
    x = x + gather_rows(params_.at("agg.pos"), pos_rows);

    const int64_t dh = d / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Block block;
    std::vector<Tensor> head_outs;
    for (int64_t h = 0; h < cfg_.heads; ++h) {
        const std::string p = "agg.h" + std::to_string(h) + ".";
        Tensor q = matmul(x, params_.at(p + "wq"));
        Tensor k = matmul(x, params_.at(p + "wk"));
        Tensor v = matmul(x, params_.at(p + "wv"));
        Tensor attn = softmax_rows(matmul(q, transpose(k)) * scale);
        block.attn.push_back(attn);
        head_outs.push_back(matmul(attn, v));
    }
    Tensor proj = matmul(concat(head_outs, 1), params_.at("agg.wo")) + params_.at("agg.bo");
    Tensor normed = layer_norm_rows(x + proj);
    Tensor ffn = matmul(relu(matmul(normed, params_.at("agg.ffn.w1")) + params_.at("agg.ffn.b1")),
                        params_.at("agg.ffn.w2")) +
                 params_.at("agg.ffn.b2");
    block.out = normed + ffn;
    return block;
}

Tensor Aggregator::attend(const TokenSequence& seq) const {
    Block block = run_block(seq);
    Tensor cls = gather_rows(block.out, {0});
    Tensor out = matmul(cls, params_.at("agg.out.w")) + params_.at("agg.out.b");
    return reshape(out, {cfg_.d_out});
}

Tensor Aggregator::forward(const std::vector<Tensor>& stage_maps, Rng& drop_rng) const {
    return attend(build_tokens(stage_maps, drop_rng));
}

std::vector<Tensor> Aggregator::attention_matrices(const TokenSequence& seq) const {
    return run_block(seq).attn;
}

}  // namespace hvla
