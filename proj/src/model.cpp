#include "hvla/model.hpp"

namespace hvla {

namespace {

Projector make_projector(const char* prefix, int64_t in_dim, const RunConfig& cfg, uint64_t seed,
                         std::map<std::string, Tensor>& params) {
    Rng rng(derive_seed(seed, prefix));
    return Projector(prefix, in_dim, cfg.objective.proj_hidden, cfg.objective.d_shared, rng,
                     params);
}

}  // namespace

Model::Model(const RunConfig& cfg)
    : config(cfg),
      vision(cfg.vision, derive_seed(cfg.train.seed, "vision")),
      aggregator(cfg.aggregator, cfg.vision.widths, derive_seed(cfg.train.seed, "aggregator")) {
    proj_v = make_projector("proj_v", cfg.vision.widths.back(), cfg,
                            derive_seed(cfg.train.seed, "proj_v"), params);
    proj_z = make_projector("proj_z", cfg.text.d_out, cfg, derive_seed(cfg.train.seed, "proj_z"),
                            params);
    for (const auto& [name, tensor] : vision.params()) params[name] = tensor;
    for (const auto& [name, tensor] : aggregator.params()) params[name] = tensor;
}

Model::ViewLatents Model::encode_view(const Image& view, Rng& drop_rng) const {
    FeaturePyramid pyr = vision.forward(view);
    ViewLatents out;
    out.z_vh = reshape(pyr.high_level, {1, pyr.high_level.numel()});
    Tensor zm = aggregator.forward(pyr.stage_maps, drop_rng);
    out.z_vm = reshape(zm, {1, zm.numel()});
    return out;
}

int64_t Model::param_count() const {
    int64_t n = 0;
    for (const auto& [name, tensor] : params) n += tensor.numel();
    return n;
}

}  // namespace hvla
