#include "hvla/train.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "hvla/checkpoint.hpp"
#include "hvla/hash.hpp"
#include "hvla/optim.hpp"

namespace hvla {

namespace {

using json = nlohmann::ordered_json;

const std::vector<std::string> kTermColumns{"vl_high_1", "vl_mid_1", "vl_high_2",
                                            "vl_mid_2",  "vv_high",  "vv_mid"};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Tensor const_matrix_row(const std::vector<double>& v) {
    return Tensor::from_data({1, static_cast<int64_t>(v.size())}, v);
}

std::vector<int32_t> concat_tokens(const ReportPair& report) {
    std::vector<int32_t> all = report.findings;
    all.insert(all.end(), report.impressions.begin(), report.impressions.end());
    return all;
}

}  // namespace

TextCache TextCache::build(const std::vector<const std::vector<Record>*>& splits,
                           const TextEncoder& enc) {
    TextCache cache;
    for (const auto* split : splits) {
        for (const auto& rec : *split) {
            if (cache.findings.count(rec.id)) continue;
            cache.findings[rec.id] = enc.encode(rec.report.findings);
            cache.impressions[rec.id] = enc.encode(rec.report.impressions);
            cache.full_report[rec.id] = enc.encode(concat_tokens(rec.report));
        }
    }
    return cache;
}

BatchLatents build_batch_latents(const Model& model, const std::vector<Record>& records,
                                 const std::vector<int64_t>& index, const TextCache& cache,
                                 uint64_t seed_base, uint64_t step_tag, bool concatenated) {
    std::vector<Tensor> vm1, vh1, vm2, vh2, tf, ti, tc;
    for (int64_t i : index) {
        const Record& rec = records.at(static_cast<size_t>(i));
        const uint64_t rid = static_cast<uint64_t>(rec.id);
        auto [view1, view2] = augment(rec.image, derive_seed(seed_base, "augment", step_tag, rid));
        Rng drop_rng(derive_seed(seed_base, "drop", step_tag, rid));
        auto l1 = model.encode_view(view1, drop_rng);
        auto l2 = model.encode_view(view2, drop_rng);
        vm1.push_back(l1.z_vm);
        vh1.push_back(l1.z_vh);
        vm2.push_back(l2.z_vm);
        vh2.push_back(l2.z_vh);
        tf.push_back(const_matrix_row(cache.findings.at(rec.id)));
        ti.push_back(const_matrix_row(cache.impressions.at(rec.id)));
        if (concatenated) tc.push_back(const_matrix_row(cache.full_report.at(rec.id)));
    }
    BatchLatents batch;
    batch.z_vm1 = concat(vm1, 0);
    batch.z_vh1 = concat(vh1, 0);
    batch.z_vm2 = concat(vm2, 0);
    batch.z_vh2 = concat(vh2, 0);
    batch.z_tF = concat(tf, 0);
    batch.z_tI = concat(ti, 0);
    if (concatenated) batch.z_tC = concat(tc, 0);
    return batch;
}

namespace {

struct LossEval {
    double total = 0.0;
    std::map<std::string, double> terms;
};

// Forward-only objective over a whole split (full batches, fixed order).
double validation_loss(const Model& model, const std::vector<Record>& records,
                       const TextCache& cache, const RunConfig& cfg, uint64_t eval_seed,
                       const LossTerms& toggles, AlignVariant align, SmoothKernel kernel) {
    const int64_t b = cfg.train.batch;
    const auto n_batches = static_cast<int64_t>(records.size()) / b;
    double total = 0.0;
    int64_t counted = 0;
    for (int64_t bi = 0; bi < n_batches; ++bi) {
        std::vector<int64_t> index(static_cast<size_t>(b));
        std::iota(index.begin(), index.end(), bi * b);
        BatchLatents batch = build_batch_latents(
            model, records, index, cache, eval_seed, /*step_tag=*/0,
            align == AlignVariant::concatenated);
        auto loss = total_loss(batch, model.proj_v, model.proj_z, cfg.objective.tau,
                               cfg.objective.lambda, kernel, toggles, align);
        total += loss.total.item();
        ++counted;
    }
    return counted ? total / static_cast<double>(counted) : 0.0;
}

std::map<std::string, std::vector<double>> snapshot(const std::map<std::string, Tensor>& params) {
    std::map<std::string, std::vector<double>> copy;
    for (const auto& [name, p] : params) {
        auto d = p.data();
        copy[name].assign(d.begin(), d.end());
    }
    return copy;
}

void restore(std::map<std::string, Tensor>& params,
             const std::map<std::string, std::vector<double>>& copy) {
    for (auto& [name, p] : params) {
        auto dst = p.raw_data();
        const auto& src = copy.at(name);
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

}  // namespace

PretrainResult pretrain(const Corpus& corpus, const RunConfig& cfg,
                        const std::filesystem::path& run_dir) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    std::filesystem::create_directories(run_dir);
    {
        std::ofstream out(run_dir / "config.toml");
        out << cfg.to_toml();
    }
    const uint64_t config_hash = cfg.content_hash();

    TextEncoder text_enc(static_cast<int64_t>(corpus.vocabulary.size()), cfg.text);
    Model model(cfg);
    const LossTerms toggles = parse_terms(cfg.objective.terms);
    const AlignVariant align = parse_align(cfg.objective.align);
    const SmoothKernel kernel = parse_kernel(cfg.objective.kernel);
    const TextCache cache = TextCache::build({&corpus.train, &corpus.valid}, text_enc);

    PretrainResult result;
    result.run_dir = run_dir;
    result.text_hash_before = text_enc.params_hash();
    result.param_count = model.param_count();

    const int64_t b = cfg.train.batch;
    const int64_t steps_per_epoch = static_cast<int64_t>(corpus.train.size()) / b;
    const int64_t total_steps = cfg.train.epochs * steps_per_epoch;
    const uint64_t train_seed = cfg.train.seed;
    const uint64_t eval_seed = derive_seed(train_seed, "eval");

    std::ofstream metrics(run_dir / "metrics.csv");
    metrics << "step,epoch,lr,loss_total";
    for (const auto& c : kTermColumns) metrics << ',' << c;
    metrics << '\n';
    std::ofstream val_metrics(run_dir / "val_metrics.csv");
    val_metrics << "epoch,step,val_loss\n";

    AdamW opt(model.params, 0.9, 0.999, 1e-8, cfg.train.weight_decay);
    auto last_good = snapshot(model.params);

    double best_val = std::numeric_limits<double>::infinity();
    int64_t evals_since_best = 0;
    int64_t global_step = 0;
    bool stop = false;

    for (int64_t epoch = 0; epoch < cfg.train.epochs && !stop; ++epoch) {
        std::vector<int64_t> order(corpus.train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng order_rng(derive_seed(train_seed, "order", static_cast<uint64_t>(epoch)));
        order_rng.shuffle(order);

        for (int64_t bi = 0; bi < steps_per_epoch && !stop; ++bi) {
            const std::vector<int64_t> index(order.begin() + bi * b,
                                             order.begin() + (bi + 1) * b);
            const double lr = cfg.train.lr == 0.0
                                  ? 0.0
                                  : warmup_cosine_lr(global_step, total_steps, cfg.train.lr,
                                                     cfg.train.warmup_frac);
            LossEval eval;
            try {
                BatchLatents batch = build_batch_latents(
                    model, corpus.train, index, cache, train_seed,
                    static_cast<uint64_t>(global_step) + 1, align == AlignVariant::concatenated);
                auto loss = total_loss(batch, model.proj_v, model.proj_z, cfg.objective.tau,
                                       cfg.objective.lambda, kernel, toggles, align);
                eval.total = loss.total.item();
                eval.terms = loss.terms;
                for (const auto& [name, value] : eval.terms) {
                    if (!std::isfinite(value)) {
                        throw std::runtime_error("non-finite loss in term '" + name + "'");
                    }
                }
                if (!std::isfinite(eval.total)) {
                    throw std::runtime_error("non-finite loss in total");
                }
                opt.zero_grad();
                loss.total.backward();
                opt.step(lr);
            } catch (const std::runtime_error& e) {
                result.diverged = true;
                result.divergence_reason = e.what();
                restore(model.params, last_good);
                stop = true;
                break;
            }
            if (std::isnan(result.initial_loss)) result.initial_loss = eval.total;
            result.final_loss = eval.total;
            last_good = snapshot(model.params);
            if (global_step % cfg.train.log_every == 0) {
                metrics << global_step << ',' << epoch << ',' << fmt(lr) << ','
                        << fmt(eval.total);
                for (const auto& c : kTermColumns) {
                    const auto it = eval.terms.find(c);
                    metrics << ',' << fmt(it == eval.terms.end() ? 0.0 : it->second);
                }
                metrics << '\n';
            }
            ++global_step;
        }
        result.epochs = epoch + 1;

        if (!result.diverged && (epoch + 1) % cfg.train.eval_every == 0) {
            const double val = validation_loss(model, corpus.valid, cache, cfg, eval_seed,
                                               toggles, align, kernel);
            val_metrics << epoch << ',' << global_step << ',' << fmt(val) << '\n';
            if (val < best_val) {
                best_val = val;
                evals_since_best = 0;
            } else {
                ++evals_since_best;
                if (evals_since_best >= cfg.train.patience) {
                    result.early_stopped = true;
                    stop = true;
                }
            }
        }
    }
    result.steps = global_step;
    result.best_val_loss = best_val;
    result.text_hash_after = text_enc.params_hash();

    save_checkpoint(run_dir, "checkpoint", model.params, config_hash);

    const auto elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start);
    json summary;
    summary["steps"] = result.steps;
    summary["epochs"] = result.epochs;
    summary["param_count"] = result.param_count;
    summary["initial_loss"] = result.initial_loss;
    summary["final_loss"] = result.final_loss;
    summary["best_val_loss"] = std::isfinite(best_val) ? best_val : -1.0;
    summary["early_stopped"] = result.early_stopped;
    summary["diverged"] = result.diverged;
    summary["divergence_reason"] = result.divergence_reason;
    summary["config_hash"] = hash_hex(config_hash);
    summary["text_encoder_hash_before"] = hash_hex(result.text_hash_before);
    summary["text_encoder_hash_after"] = hash_hex(result.text_hash_after);
    summary["wall_clock_seconds"] = elapsed.count();
    std::ofstream out(run_dir / "summary.json");
    out << summary.dump(2) << '\n';

    return result;
}

GradCheckReport objective_grad_check(const Corpus& corpus, const RunConfig& cfg, int64_t batch,
                                     double step) {
    if (batch < 2 || batch > static_cast<int64_t>(corpus.train.size())) {
        throw std::invalid_argument("objective_grad_check: batch must be in [2, train size]");
    }
    TextEncoder text_enc(static_cast<int64_t>(corpus.vocabulary.size()), cfg.text);
    Model model(cfg);
    const TextCache cache = TextCache::build({&corpus.train}, text_enc);
    const LossTerms toggles = parse_terms(cfg.objective.terms);
    const AlignVariant align = parse_align(cfg.objective.align);
    const SmoothKernel kernel = parse_kernel(cfg.objective.kernel);

    std::vector<int64_t> index(static_cast<size_t>(batch));
    std::iota(index.begin(), index.end(), 0);

    std::vector<Tensor> inputs;
    std::vector<std::string> names;
    for (const auto& [name, p] : model.params) {
        inputs.push_back(p);
        names.push_back(name);
    }
    return grad_check(
        [&](const std::vector<Tensor>&) {
            BatchLatents b = build_batch_latents(model, corpus.train, index, cache,
                                                 cfg.train.seed, /*step_tag=*/1,
                                                 align == AlignVariant::concatenated);
            return total_loss(b, model.proj_v, model.proj_z, cfg.objective.tau,
                              cfg.objective.lambda, kernel, toggles, align)
                .total;
        },
        inputs, step, names);
}

RunConfig grad_check_config() {
    RunConfig cfg;
    cfg.data.k = 3;
    cfg.data.rate = 0.4;
    cfg.data.train = 8;
    cfg.data.valid = 2;
    cfg.data.test = 2;
    cfg.data.image_size = 16;
    cfg.vision.widths = {2, 3, 4, 5};
    cfg.text.d_embed = 16;
    cfg.text.d_hidden = 16;
    cfg.text.d_out = 16;
    cfg.aggregator.d_out = 5;
    cfg.aggregator.ffn_hidden = 8;
    cfg.aggregator.drop_ratios = {0.5, 0.5, 0.5, 0.5};
    cfg.objective.d_shared = 6;
    cfg.objective.proj_hidden = 8;
    cfg.train.batch = 4;
    cfg.validate();
    return cfg;
}

}  // namespace hvla
