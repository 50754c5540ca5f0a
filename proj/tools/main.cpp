#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "hvla/ablate.hpp"
#include "hvla/checkpoint.hpp"
#include "hvla/config.hpp"
#include "hvla/corpus.hpp"
#include "hvla/eval.hpp"
#include "hvla/hash.hpp"
#include "hvla/model.hpp"
#include "hvla/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// exit codes: 0 success, 2 usage, 3 validation, 4 runtime divergence
constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kInvalid = 3;
constexpr int kDiverged = 4;

struct GenerateArgs {
    uint64_t seed = 7;
    std::string out;
    std::string counts = "2000,500,500";
    int64_t k = 5;
    double rate = 0.3;
    int image_size = 32;
    double noise = 0.1;
    bool force = false;
};

int cmd_generate(const GenerateArgs& args) {
    hvla::GeneratorConfig cfg;
    cfg.seed = args.seed;
    cfg.k = args.k;
    cfg.rate = args.rate;
    cfg.image_size = args.image_size;
    cfg.noise = args.noise;
    if (std::sscanf(args.counts.c_str(), "%ld,%ld,%ld", &cfg.train, &cfg.valid, &cfg.test) != 3) {
        std::cerr << "error: --counts expects train,valid,test\n";
        return kInvalid;
    }
    const fs::path out(args.out);
    if (fs::exists(out) && !fs::is_empty(out) && !args.force) {
        std::cerr << "error: output directory " << out
                  << " is not empty (use --force to overwrite)\n";
        return kInvalid;
    }
    hvla::Corpus corpus = hvla::generate_corpus(cfg);
    hvla::save_corpus(corpus, out);
    std::cout << "corpus written to " << out.string() << "\n"
              << "  records: train=" << cfg.train << " valid=" << cfg.valid
              << " test=" << cfg.test << "\n"
              << "  conditions: " << cfg.k << " at rate " << cfg.rate << "\n"
              << "  vocabulary: " << corpus.vocabulary.size() << " tokens\n"
              << "  image size: " << cfg.image_size << "x" << cfg.image_size << "\n";
    return kOk;
}

hvla::Corpus corpus_for(const std::string& corpus_dir, hvla::RunConfig& cfg) {
    if (!corpus_dir.empty()) {
        hvla::Corpus corpus = hvla::load_corpus(corpus_dir);
        cfg.data = corpus.config;  // the on-disk corpus wins; keep config resolved
        return corpus;
    }
    return hvla::generate_corpus(cfg.data);
}

int cmd_pretrain(const std::string& config_path, const std::string& corpus_dir,
                 const std::string& out_dir, bool dry_run) {
    hvla::RunConfig cfg = hvla::RunConfig::from_file(config_path);
    hvla::Corpus corpus = corpus_for(corpus_dir, cfg);
    cfg.validate();
    if (dry_run) {
        hvla::Model model(cfg);
        std::cout << "config ok; parameter count: " << model.param_count() << "\n";
        return kOk;
    }
    hvla::PretrainResult result = hvla::pretrain(corpus, cfg, out_dir);
    if (result.diverged) {
        std::cerr << "error: " << result.divergence_reason << "; last-good checkpoint at "
                  << (result.run_dir / "checkpoint.bin").string() << "\n";
        return kDiverged;
    }
    std::cout << "run complete: " << result.steps << " steps, " << result.epochs << " epochs"
              << (result.early_stopped ? " (early stop)" : "") << "\n"
              << "  initial loss " << result.initial_loss << ", final loss "
              << result.final_loss << "\n"
              << "  outputs in " << result.run_dir.string() << "\n";
    return kOk;
}

int cmd_evaluate(const std::string& run_dir, const std::string& corpus_dir,
                 const std::vector<std::string>& tasks, double fraction) {
    static const std::set<std::string> kValid{"zeroshot", "retrieval", "probe"};
    for (const auto& t : tasks) {
        if (!kValid.count(t)) {
            std::cerr << "error: unknown task '" << t
                      << "' (valid: zeroshot, retrieval, probe)\n";
            return kUsage;
        }
    }
    hvla::RunConfig cfg = hvla::RunConfig::from_file(fs::path(run_dir) / "config.toml");
    hvla::Corpus corpus = hvla::load_corpus(corpus_dir);
    hvla::TextEncoder text_enc(static_cast<int64_t>(corpus.vocabulary.size()), cfg.text);
    hvla::Model model(cfg);
    hvla::load_checkpoint(run_dir, "checkpoint", model.params, cfg.content_hash());

    json out;
    for (const auto& task : tasks) {
        if (task == "zeroshot") {
            const auto zs = hvla::zero_shot_classify(model, text_enc, corpus, corpus.test);
            json per;
            for (const auto& [name, m] : zs.per_condition) {
                if (m.defined) {
                    per[name] = {{"auc", m.auc}, {"f1", m.f1}, {"acc", m.acc}};
                } else {
                    per[name] = {{"undefined", true}};
                }
            }
            out["zeroshot"] = {{"macro_auc", zs.macro_auc},
                               {"macro_f1", zs.macro_f1},
                               {"macro_acc", zs.macro_acc},
                               {"defined_conditions", zs.defined_conditions},
                               {"per_condition", per}};
        } else if (task == "retrieval") {
            std::vector<int64_t> ks;
            for (int64_t k : {5, 10, 100}) {
                if (k <= static_cast<int64_t>(corpus.test.size())) ks.push_back(k);
            }
            const auto ret = hvla::retrieve(model, text_enc, corpus.test, ks);
            json pk;
            for (const auto& [k, v] : ret.precision_at_k) pk["p@" + std::to_string(k)] = v;
            out["retrieval"] = {{"precision", pk}, {"chance_rate", ret.chance_rate}};
        } else if (task == "probe") {
            const auto probe = hvla::linear_probe(model, corpus, fraction);
            out["probe"] = {{"fraction", fraction},
                            {"macro_auc", probe.macro_auc},
                            {"defined_conditions", probe.defined_conditions},
                            {"excluded", probe.excluded}};
        }
    }
    const std::string text = out.dump(2);
    std::ofstream file(fs::path(run_dir) / "eval.json");
    file << text << '\n';
    std::cout << text << "\n";
    return kOk;
}

int cmd_ablate(const std::string& grid_path, const std::string& base_config,
               const std::string& corpus_dir, const std::string& out_dir) {
    hvla::RunConfig base = hvla::RunConfig::from_file(base_config);
    hvla::Corpus corpus = corpus_for(corpus_dir, base);
    base.validate();
    const hvla::AblationGrid grid = hvla::load_grid(grid_path);
    const auto results = hvla::run_ablation(corpus, base, grid, out_dir);
    std::cout << "results for " << results.size() << " cell-seed runs in "
              << (fs::path(out_dir) / "results.csv").string() << "\n";
    return kOk;
}

int cmd_gradcheck(double step, double tolerance) {
    hvla::RunConfig cfg = hvla::grad_check_config();
    hvla::Corpus corpus = hvla::generate_corpus(cfg.data);
    const auto report = hvla::objective_grad_check(corpus, cfg, cfg.train.batch, step);
    int64_t coords = 0;
    for (const auto& entry : report.inputs) {
        std::printf("%-16s max rel err %.3e  (%ld coords)\n", entry.name.c_str(),
                    entry.max_rel_err, static_cast<long>(entry.coords_checked));
        coords += entry.coords_checked;
    }
    std::printf("checked %ld coordinates, max rel err %.3e (tolerance %.1e)\n",
                static_cast<long>(coords), report.max_rel_err, tolerance);
    if (report.max_rel_err >= tolerance) {
        std::cerr << "error: gradient check failed\n";
        return kInvalid;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical vision-language alignment workbench"};
    app.require_subcommand(1);

    GenerateArgs gen_args;
    auto* gen = app.add_subcommand("generate", "write a synthetic paired corpus");
    gen->add_option("--seed", gen_args.seed, "generator seed");
    gen->add_option("--out", gen_args.out, "output directory")->required();
    gen->add_option("--counts", gen_args.counts, "train,valid,test record counts");
    gen->add_option("--k", gen_args.k, "number of conditions");
    gen->add_option("--rate", gen_args.rate, "per-condition prevalence");
    gen->add_option("--image-size", gen_args.image_size, "square image extent");
    gen->add_option("--noise", gen_args.noise, "background noise amplitude");
    gen->add_flag("--force", gen_args.force, "overwrite a non-empty output directory");

    std::string config_path, corpus_dir, out_dir = "run";
    bool dry_run = false;
    auto* pre = app.add_subcommand("pretrain", "pre-train from a config file");
    pre->add_option("config", config_path, "run config (TOML)")->required();
    pre->add_option("--corpus", corpus_dir, "corpus directory (generated in memory if absent)");
    pre->add_option("--out", out_dir, "run output directory");
    pre->add_flag("--dry-run", dry_run, "validate config and report the parameter count");

    std::string eval_run, eval_corpus;
    std::vector<std::string> tasks{"zeroshot", "retrieval", "probe"};
    double fraction = 1.0;
    auto* ev = app.add_subcommand("evaluate", "evaluate a finished run");
    ev->add_option("--run", eval_run, "run directory with checkpoint")->required();
    ev->add_option("--corpus", eval_corpus, "corpus directory")->required();
    ev->add_option("--tasks", tasks, "subset of: zeroshot retrieval probe");
    ev->add_option("--fraction", fraction, "training fraction for the linear probe");

    std::string grid_path, base_config, ablate_corpus, ablate_out = "ablation";
    auto* ab = app.add_subcommand("ablate", "run a grid of config variants");
    ab->add_option("--grid", grid_path, "grid file (TOML)")->required();
    ab->add_option("--base", base_config, "base run config")->required();
    ab->add_option("--corpus", ablate_corpus, "corpus directory (generated if absent)");
    ab->add_option("--out", ablate_out, "output directory");

    double gc_step = 1e-5, gc_tol = 1e-4;
    auto* gc = app.add_subcommand("gradcheck",
                                  "finite-difference check of the full objective gradient");
    gc->add_option("--step", gc_step, "central-difference step");
    gc->add_option("--tolerance", gc_tol, "max relative error accepted");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_args);
        if (pre->parsed()) return cmd_pretrain(config_path, corpus_dir, out_dir, dry_run);
        if (ev->parsed()) return cmd_evaluate(eval_run, eval_corpus, tasks, fraction);
        if (ab->parsed()) return cmd_ablate(grid_path, base_config, ablate_corpus, ablate_out);
        if (gc->parsed()) return cmd_gradcheck(gc_step, gc_tol);
    } catch (const hvla::toml::ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    }
    return kUsage;
}
