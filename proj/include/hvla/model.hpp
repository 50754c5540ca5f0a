#pragma once

#include <map>
#include <string>

#include "hvla/aggregator.hpp"
#include "hvla/config.hpp"
#include "hvla/encoders.hpp"
#include "hvla/objective.hpp"

namespace hvla {

// Trainable bundle: vision encoder, aggregation block, both projectors.
// The frozen text encoder lives outside; it has no trainable parameters.
struct Model {
    explicit Model(const RunConfig& cfg);

    struct ViewLatents {
        Tensor z_vm;  // (1, d)
        Tensor z_vh;  // (1, d)
    };
    // One augmented view through the encoder and the aggregation block.
    ViewLatents encode_view(const Image& view, Rng& drop_rng) const;

    int64_t param_count() const;

    RunConfig config;
    VisionEncoder vision;
    Aggregator aggregator;
    Projector proj_v, proj_z;
    std::map<std::string, Tensor> params;
};

}  // namespace hvla
