#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hvla/aggregator.hpp"
#include "hvla/corpus.hpp"
#include "hvla/encoders.hpp"
#include "hvla/toml.hpp"

namespace hvla {

struct ObjectiveConfig {
    double tau = 0.07;
    double lambda = 0.2;
    std::string kernel = "exponential";
    int64_t d_shared = 64;
    int64_t proj_hidden = 128;
    std::vector<std::string> terms{"vvh", "vvm", "vlh", "vlm"};
    std::string align = "hierarchical";
};

struct TrainConfig {
    int64_t batch = 32;
    int64_t epochs = 30;
    double lr = 1e-3;
    double weight_decay = 0.05;
    double warmup_frac = 0.1;
    int64_t patience = 10;      // evaluations without improvement before stopping
    int64_t eval_every = 1;     // epochs between validation passes
    int64_t log_every = 1;      // steps between metrics rows
    uint64_t seed = 42;
};

// Whole-run configuration, one TOML document. Unknown keys are rejected so a
// typo cannot silently fall back to a default.
struct RunConfig {
    GeneratorConfig data;
    VisionConfig vision;
    TextConfig text;
    AggregatorConfig aggregator;  // d_out of 0 resolves to the last stage width
    ObjectiveConfig objective;
    TrainConfig train;

    static RunConfig from_toml(const toml::Document& doc);
    static RunConfig from_file(const std::filesystem::path& path);

    void validate() const;
    std::string to_toml() const;   // canonical resolved form
    uint64_t content_hash() const;
};

}  // namespace hvla
