#include "hvla/ablate.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hvla/checkpoint.hpp"
#include "hvla/eval.hpp"
#include "hvla/train.hpp"

namespace hvla {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string csv_safe(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return s;
}

std::string row_to_csv(const CellResult& r) {
    std::ostringstream os;
    os << r.cell << ',' << r.seed << ',' << csv_safe(r.status) << ',' << fmt(r.initial_loss)
       << ',' << fmt(r.final_loss) << ',' << fmt(r.zeroshot_auc) << ',' << fmt(r.retrieval_p5)
       << ',' << fmt(r.chance_rate);
    return os.str();
}

constexpr const char* kHeader =
    "cell,seed,status,initial_loss,final_loss,zeroshot_auc,retrieval_p5,chance_rate";

bool parse_row(const std::string& line, CellResult& out) {
    std::istringstream is(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(is, field, ',')) fields.push_back(field);
    if (fields.size() != 8) return false;
    out.cell = fields[0];
    out.seed = std::stoull(fields[1]);
    out.status = fields[2];
    out.initial_loss = std::stod(fields[3]);
    out.final_loss = std::stod(fields[4]);
    out.zeroshot_auc = std::stod(fields[5]);
    out.retrieval_p5 = std::stod(fields[6]);
    out.chance_rate = std::stod(fields[7]);
    return true;
}

}  // namespace

AblationGrid load_grid(const std::filesystem::path& path) {
    const toml::Document doc = toml::parse_file(path);
    AblationGrid grid;
    if (doc.contains("seeds")) {
        for (int64_t s : doc.at("seeds").as_int_array()) {
            grid.seeds.push_back(static_cast<uint64_t>(s));
        }
    }
    if (grid.seeds.empty()) grid.seeds = {1};

    for (const auto& table : doc.tables) {
        if (table.rfind("cells.", 0) != 0) {
            throw std::invalid_argument("grid: unexpected table '" + table + "'");
        }
        AblationCell cell;
        cell.name = table.substr(6);
        const std::string prefix = table + ".";
        if (doc.contains(prefix + "lambda")) cell.lambda = doc.at(prefix + "lambda").as_double();
        if (doc.contains(prefix + "kernel")) cell.kernel = doc.at(prefix + "kernel").as_string();
        if (doc.contains(prefix + "terms")) {
            cell.terms = doc.at(prefix + "terms").as_string_array();
        }
        if (doc.contains(prefix + "align")) cell.align = doc.at(prefix + "align").as_string();
        if (doc.contains(prefix + "drop_ratios")) {
            cell.drop_ratios = doc.at(prefix + "drop_ratios").as_double_array();
        }
        if (doc.contains(prefix + "epochs")) cell.epochs = doc.at(prefix + "epochs").as_int();
        grid.cells.push_back(std::move(cell));
    }
    // reject values outside any [cells.*] table other than `seeds`
    for (const auto& [key, value] : doc.values) {
        if (key == "seeds" || key.rfind("cells.", 0) == 0) continue;
        throw toml::ParseError("unknown grid key '" + key + "'", value.line, 1);
    }
    return grid;
}

RunConfig apply_cell(const RunConfig& base, const AblationCell& cell, uint64_t seed) {
    RunConfig cfg = base;
    cfg.train.seed = seed;
    if (cell.lambda) cfg.objective.lambda = *cell.lambda;
    if (cell.kernel) cfg.objective.kernel = *cell.kernel;
    if (cell.terms) cfg.objective.terms = *cell.terms;
    if (cell.align) cfg.objective.align = *cell.align;
    if (cell.drop_ratios) cfg.aggregator.drop_ratios = *cell.drop_ratios;
    if (cell.epochs) cfg.train.epochs = *cell.epochs;
    cfg.validate();
    return cfg;
}

std::vector<CellResult> run_ablation(const Corpus& corpus, const RunConfig& base,
                                     const AblationGrid& grid,
                                     const std::filesystem::path& out_dir, bool quiet) {
    const auto rows_dir = out_dir / "rows";
    std::filesystem::create_directories(rows_dir);

    std::vector<CellResult> results;
    for (const auto& cell : grid.cells) {
        for (uint64_t seed : grid.seeds) {
            const std::string id = cell.name + "__s" + std::to_string(seed);
            const auto row_path = rows_dir / (id + ".csv");
            CellResult row;
            if (std::filesystem::exists(row_path)) {
                std::ifstream in(row_path);
                std::string line;
                if (std::getline(in, line) && parse_row(line, row)) {
                    results.push_back(row);
                    if (!quiet) std::cout << "reusing " << id << "\n";
                    continue;
                }
                // unparsable completion marker: fall through and re-run
            }
            row.cell = cell.name;
            row.seed = seed;
            try {
                const RunConfig cfg = apply_cell(base, cell, seed);
                const auto run_dir = out_dir / "cells" / id;
                std::filesystem::remove_all(run_dir);  // partial output re-runs clean
                if (!quiet) std::cout << "running " << id << "..." << std::flush;
                PretrainResult pr = pretrain(corpus, cfg, run_dir);
                row.initial_loss = pr.initial_loss;
                row.final_loss = pr.final_loss;
                if (pr.diverged) {
                    row.status = "diverged: " + pr.divergence_reason;
                } else {
                    TextEncoder text_enc(static_cast<int64_t>(corpus.vocabulary.size()),
                                         cfg.text);
                    Model model(cfg);
                    load_checkpoint(run_dir, "checkpoint", model.params, cfg.content_hash());
                    const auto zs = zero_shot_classify(model, text_enc, corpus, corpus.test);
                    const auto ret = retrieve(model, text_enc, corpus.test, {5});
                    row.status = "ok";
                    row.zeroshot_auc = zs.macro_auc;
                    row.retrieval_p5 = ret.precision_at_k.at(5);
                    row.chance_rate = ret.chance_rate;
                }
                if (!quiet) std::cout << " " << row.status << "\n";
            } catch (const std::invalid_argument& e) {
                row.status = std::string("invalid: ") + e.what();
                if (!quiet) std::cout << "skipping " << id << " (" << e.what() << ")\n";
            }
            // the row file is the completion marker; write it atomically
            const auto tmp_path = rows_dir / (id + ".csv.tmp");
            {
                std::ofstream out(tmp_path);
                out << row_to_csv(row) << '\n';
            }
            std::filesystem::rename(tmp_path, row_path);
            results.push_back(row);
        }
    }

    std::ofstream out(out_dir / "results.csv");
    out << kHeader << '\n';
    for (const auto& row : results) out << row_to_csv(row) << '\n';
    return results;
}

}  // namespace hvla
