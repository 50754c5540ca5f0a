#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hvla/config.hpp"
#include "hvla/corpus.hpp"

namespace hvla {

// One grid cell: named overrides applied on top of the base run config.
struct AblationCell {
    std::string name;
    std::optional<double> lambda;
    std::optional<std::string> kernel;
    std::optional<std::vector<std::string>> terms;
    std::optional<std::string> align;
    std::optional<std::vector<double>> drop_ratios;
    std::optional<int64_t> epochs;
};

struct AblationGrid {
    std::vector<uint64_t> seeds;
    std::vector<AblationCell> cells;  // declaration order
};

// Grid file: top-level `seeds = [...]` plus one `[cells.<name>]` table per
// cell carrying the overridden keys.
AblationGrid load_grid(const std::filesystem::path& path);

RunConfig apply_cell(const RunConfig& base, const AblationCell& cell, uint64_t seed);

struct CellResult {
    std::string cell;
    uint64_t seed = 0;
    std::string status;  // "ok" | "invalid: <reason>" | "diverged: <reason>"
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double zeroshot_auc = 0.0;
    double retrieval_p5 = 0.0;
    double chance_rate = 0.0;
};

// One pretrain+evaluate run per (cell, seed) with shared data and per-seed
// model initialization. Completed rows (files under <out>/rows/) are reused,
// so an interrupted grid resumes without recomputation; runs missing their
// row file are re-run from scratch. Returns rows in grid order and writes
// <out>/results.csv.
std::vector<CellResult> run_ablation(const Corpus& corpus, const RunConfig& base,
                                     const AblationGrid& grid,
                                     const std::filesystem::path& out_dir,
                                     bool quiet = false);

}  // namespace hvla
