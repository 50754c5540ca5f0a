#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "hvla/corpus.hpp"
#include "hvla/model.hpp"

namespace hvla {

// Frozen text embeddings, one set per record id. Computed once per run; the
// encoder is frozen so these never change.
struct TextCache {
    std::unordered_map<int64_t, std::vector<double>> findings;
    std::unordered_map<int64_t, std::vector<double>> impressions;
    std::unordered_map<int64_t, std::vector<double>> full_report;

    static TextCache build(const std::vector<const std::vector<Record>*>& splits,
                           const TextEncoder& enc);
};

// One training/evaluation mini-batch lifted to latent matrices.
BatchLatents build_batch_latents(const Model& model, const std::vector<Record>& records,
                                 const std::vector<int64_t>& index, const TextCache& cache,
                                 uint64_t seed_base, uint64_t step_tag, bool concatenated);

struct PretrainResult {
    int64_t steps = 0;
    int64_t epochs = 0;
    double initial_loss = std::numeric_limits<double>::quiet_NaN();
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    double best_val_loss = std::numeric_limits<double>::quiet_NaN();
    bool early_stopped = false;
    bool diverged = false;
    std::string divergence_reason;
    uint64_t text_hash_before = 0;
    uint64_t text_hash_after = 0;
    int64_t param_count = 0;
    std::filesystem::path run_dir;
};

// Full pre-training run: per step two augmented views are encoded, projected
// and aligned through the six-term objective with AdamW and a warmup-cosine
// schedule; validation-loss early stopping; metrics/checkpoint/summary written
// into run_dir. On divergence the last good parameters are checkpointed and
// `diverged` is set (no exception).
PretrainResult pretrain(const Corpus& corpus, const RunConfig& cfg,
                        const std::filesystem::path& run_dir);

// Central-difference verification of the whole objective: every coordinate of
// every trainable tensor against d(total_loss)/d(theta) on one batch with
// fixed augmentation and drop masks.
GradCheckReport objective_grad_check(const Corpus& corpus, const RunConfig& cfg, int64_t batch,
                                     double step = 1e-5);

// Reduced-width configuration for exhaustive gradient checking.
RunConfig grad_check_config();

}  // namespace hvla
