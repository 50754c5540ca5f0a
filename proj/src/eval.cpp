#include "hvla/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hvla {

namespace {

// Frozen high-level image embedding (no augmentation, no gradients).
std::vector<double> high_level_features(const Model& model, const Image& img) {
    FeaturePyramid pyr = model.vision.forward(img);
    auto d = pyr.high_level.data();
    return {d.begin(), d.end()};
}

std::vector<double> project_rows(const Projector& p, const std::vector<double>& v) {
    Tensor row = Tensor::from_data({1, static_cast<int64_t>(v.size())}, v);
    Tensor out = l2_normalize_rows(p.apply(row));
    auto d = out.data();
    return {d.begin(), d.end()};
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

double rank_auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw std::invalid_argument("rank_auc: scores and labels must align and be non-empty");
    }
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based tie average
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    int64_t n_pos = 0;
    for (size_t k = 0; k < n; ++k) {
        if (labels[k]) {
            pos_rank_sum += rank[k];
            ++n_pos;
        }
    }
    const int64_t n_neg = static_cast<int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw std::invalid_argument("rank_auc: both classes must be present");
    }
    const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) *
                                        static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

BinaryMetrics binary_metrics(const std::vector<double>& scores,
                             const std::vector<uint8_t>& labels, double threshold) {
    BinaryMetrics m;
    int64_t n_pos = 0;
    for (uint8_t l : labels) n_pos += l ? 1 : 0;
    if (n_pos == 0 || n_pos == static_cast<int64_t>(labels.size())) return m;
    m.defined = true;
    m.auc = rank_auc(scores, labels);
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] > threshold;
        const bool truth = labels[i] != 0;
        tp += pred && truth;
        fp += pred && !truth;
        fn += !pred && truth;
        tn += !pred && !truth;
    }
    m.acc = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
    const double denom = static_cast<double>(2 * tp + fp + fn);
    m.f1 = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    return m;
}

ZeroShotResult zero_shot_classify(const Model& model, const TextEncoder& text_enc,
                                  const Corpus& corpus, const std::vector<Record>& records) {
    const auto k = static_cast<int64_t>(corpus.condition_names.size());
    // prompt embeddings per condition: "{name}" vs "no {name}"
    std::vector<std::vector<double>> pos_prompt, neg_prompt;
    const int32_t no_token = corpus.token_id("no");
    for (const auto& name : corpus.condition_names) {
        const int32_t name_token = corpus.token_id(name);
        pos_prompt.push_back(project_rows(model.proj_z, text_enc.encode({name_token})));
        neg_prompt.push_back(project_rows(model.proj_z, text_enc.encode({no_token, name_token})));
    }

    std::vector<std::vector<double>> image_emb;
    image_emb.reserve(records.size());
    for (const auto& rec : records) {
        image_emb.push_back(project_rows(model.proj_v, high_level_features(model, rec.image)));
    }

    ZeroShotResult result;
    for (int64_t c = 0; c < k; ++c) {
        std::vector<double> scores;
        std::vector<uint8_t> labels;
        scores.reserve(records.size());
        for (size_t i = 0; i < records.size(); ++i) {
            scores.push_back(dot(image_emb[i], pos_prompt[static_cast<size_t>(c)]) -
                             dot(image_emb[i], neg_prompt[static_cast<size_t>(c)]));
            labels.push_back(records[i].conditions[static_cast<size_t>(c)]);
        }
        const BinaryMetrics m = binary_metrics(scores, labels, 0.0);
        result.per_condition[corpus.condition_names[static_cast<size_t>(c)]] = m;
        if (m.defined) {
            result.macro_auc += m.auc;
            result.macro_f1 += m.f1;
            result.macro_acc += m.acc;
            ++result.defined_conditions;
        }
    }
    if (result.defined_conditions > 0) {
        const auto n = static_cast<double>(result.defined_conditions);
        result.macro_auc /= n;
        result.macro_f1 /= n;
        result.macro_acc /= n;
    }
    return result;
}

RetrievalResult retrieve(const Model& model, const TextEncoder& text_enc,
                         const std::vector<Record>& records, const std::vector<int64_t>& k_list) {
    const auto n = static_cast<int64_t>(records.size());
    for (int64_t k : k_list) {
        if (k < 1 || k > n) {
            throw std::invalid_argument("retrieve: K=" + std::to_string(k) +
                                        " outside [1," + std::to_string(n) + "]");
        }
    }
    // category = condition bit-vector
    std::vector<uint64_t> category;
    category.reserve(records.size());
    for (const auto& rec : records) {
        uint64_t mask = 0;
        for (size_t c = 0; c < rec.conditions.size(); ++c) {
            if (rec.conditions[c]) mask |= 1ULL << c;
        }
        category.push_back(mask);
    }

    std::vector<std::vector<double>> image_emb, report_emb;
    for (const auto& rec : records) {
        image_emb.push_back(project_rows(model.proj_v, high_level_features(model, rec.image)));
        std::vector<int32_t> tokens = rec.report.findings;
        tokens.insert(tokens.end(), rec.report.impressions.begin(),
                      rec.report.impressions.end());
        report_emb.push_back(project_rows(model.proj_z, text_enc.encode(tokens)));
    }

    RetrievalResult result;
    for (int64_t k : k_list) result.precision_at_k[k] = 0.0;
    double chance = 0.0;
    for (int64_t q = 0; q < n; ++q) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return dot(image_emb[static_cast<size_t>(q)], report_emb[static_cast<size_t>(a)]) >
                   dot(image_emb[static_cast<size_t>(q)], report_emb[static_cast<size_t>(b)]);
        });
        int64_t same = 0;
        for (int64_t c = 0; c < n; ++c) {
            same += category[static_cast<size_t>(c)] == category[static_cast<size_t>(q)] ? 1 : 0;
        }
        chance += static_cast<double>(same) / static_cast<double>(n);
        for (int64_t k : k_list) {
            int64_t hits = 0;
            for (int64_t r = 0; r < k; ++r) {
                hits += category[static_cast<size_t>(order[static_cast<size_t>(r)])] ==
                                category[static_cast<size_t>(q)]
                            ? 1
                            : 0;
            }
            result.precision_at_k[k] += static_cast<double>(hits) / static_cast<double>(k);
        }
    }
    for (auto& [k, v] : result.precision_at_k) v /= static_cast<double>(n);
    result.chance_rate = chance / static_cast<double>(n);
    return result;
}

LinearProbeResult linear_probe(const Model& model, const Corpus& corpus, double train_fraction) {
    if (train_fraction != 0.01 && train_fraction != 0.1 && train_fraction != 1.0) {
        throw std::invalid_argument("linear_probe: fraction must be one of 0.01, 0.1, 1.0");
    }
    // deterministic subsample of the training split
    std::vector<int64_t> order(corpus.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(corpus.config.seed, "probe_subsample"));
    rng.shuffle(order);
    const auto n_train = std::max<int64_t>(
        1, static_cast<int64_t>(std::llround(train_fraction *
                                             static_cast<double>(corpus.train.size()))));
    order.resize(static_cast<size_t>(n_train));

    auto features = [&](const std::vector<Record>& recs,
                        const std::vector<int64_t>* subset) {
        std::vector<std::vector<double>> x;
        if (subset) {
            for (int64_t i : *subset) {
                x.push_back(high_level_features(model, recs[static_cast<size_t>(i)].image));
            }
        } else {
            for (const auto& r : recs) x.push_back(high_level_features(model, r.image));
        }
        return x;
    };
    const auto x_train = features(corpus.train, &order);
    const auto x_test = features(corpus.test, nullptr);
    const size_t d = x_train.front().size();

    // standardize with training statistics
    std::vector<double> mean(d, 0.0), stddev(d, 0.0);
    for (const auto& row : x_train) {
        for (size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (auto& m : mean) m /= static_cast<double>(x_train.size());
    for (const auto& row : x_train) {
        for (size_t j = 0; j < d; ++j) stddev[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
    }
    for (auto& s : stddev) s = std::sqrt(s / static_cast<double>(x_train.size())) + 1e-12;
    auto standardize = [&](std::vector<std::vector<double>> x) {
        for (auto& row : x) {
            for (size_t j = 0; j < d; ++j) row[j] = (row[j] - mean[j]) / stddev[j];
        }
        return x;
    };
    const auto xs_train = standardize(x_train);
    const auto xs_test = standardize(x_test);

    LinearProbeResult result;
    const auto k = static_cast<int64_t>(corpus.condition_names.size());
    for (int64_t c = 0; c < k; ++c) {
        std::vector<uint8_t> y_train, y_test;
        for (int64_t i : order) {
            y_train.push_back(corpus.train[static_cast<size_t>(i)].conditions[static_cast<size_t>(c)]);
        }
        for (const auto& rec : corpus.test) {
            y_test.push_back(rec.conditions[static_cast<size_t>(c)]);
        }
        const int64_t pos = std::accumulate(y_train.begin(), y_train.end(), int64_t{0});
        if (pos == 0 || pos == static_cast<int64_t>(y_train.size())) {
            result.excluded.push_back(corpus.condition_names[static_cast<size_t>(c)]);
            continue;
        }
        const int64_t test_pos = std::accumulate(y_test.begin(), y_test.end(), int64_t{0});
        if (test_pos == 0 || test_pos == static_cast<int64_t>(y_test.size())) {
            result.excluded.push_back(corpus.condition_names[static_cast<size_t>(c)]);
            continue;
        }

        // full-batch gradient descent on mean logistic loss, bias folded in
        std::vector<double> w(d + 1, 0.0);
        const double lr = 4.0 / static_cast<double>(d + 1);
        const auto n = static_cast<double>(xs_train.size());
        for (int iter = 0; iter < 5000; ++iter) {
            std::vector<double> grad(d + 1, 0.0);
            for (size_t i = 0; i < xs_train.size(); ++i) {
                double z = w[d];
                for (size_t j = 0; j < d; ++j) z += w[j] * xs_train[i][j];
                const double p = 1.0 / (1.0 + std::exp(-z));
                const double err = p - static_cast<double>(y_train[i]);
                for (size_t j = 0; j < d; ++j) grad[j] += err * xs_train[i][j];
                grad[d] += err;
            }
            double norm = 0.0;
            for (auto& g : grad) {
                g /= n;
                norm += g * g;
            }
            if (std::sqrt(norm) < 1e-6) break;
            for (size_t j = 0; j <= d; ++j) w[j] -= lr * grad[j];
        }

        std::vector<double> scores;
        scores.reserve(xs_test.size());
        for (const auto& row : xs_test) {
            double z = w[d];
            for (size_t j = 0; j < d; ++j) z += w[j] * row[j];
            scores.push_back(z);
        }
        result.macro_auc += rank_auc(scores, y_test);
        ++result.defined_conditions;
    }
    if (result.defined_conditions > 0) {
        result.macro_auc /= static_cast<double>(result.defined_conditions);
    }
    return result;
}

}  // namespace hvla
