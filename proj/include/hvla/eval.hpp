#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hvla/corpus.hpp"
#include "hvla/model.hpp"

namespace hvla {

// Mann-Whitney AUC with tie-averaged ranks. Requires both classes present.
double rank_auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

struct BinaryMetrics {
    bool defined = false;  // false when a class is missing from the labels
    double auc = 0.0;
    double f1 = 0.0;
    double acc = 0.0;
};

BinaryMetrics binary_metrics(const std::vector<double>& scores,
                             const std::vector<uint8_t>& labels, double threshold = 0.0);

struct ZeroShotResult {
    std::map<std::string, BinaryMetrics> per_condition;
    double macro_auc = 0.0;
    double macro_f1 = 0.0;
    double macro_acc = 0.0;
    int64_t defined_conditions = 0;
};

// Prompt classification: score = cos(p_v(z_vh), p_z(E_t(name))) -
// cos(p_v(z_vh), p_z(E_t("no" name))); macro metrics over conditions with
// both classes present.
ZeroShotResult zero_shot_classify(const Model& model, const TextEncoder& text_enc,
                                  const Corpus& corpus, const std::vector<Record>& records);

struct RetrievalResult {
    std::map<int64_t, double> precision_at_k;
    double chance_rate = 0.0;  // expected precision for random ranking
};

// Image-query to report-candidate retrieval over one record set; candidates
// are the full reports (findings then impressions). Categories are the
// condition bit-vectors.
RetrievalResult retrieve(const Model& model, const TextEncoder& text_enc,
                         const std::vector<Record>& records, const std::vector<int64_t>& k_list);

struct LinearProbeResult {
    double macro_auc = 0.0;
    int64_t defined_conditions = 0;
    std::vector<std::string> excluded;  // single-class under the training fraction
};

// Per-condition logistic regression on frozen high-level features by
// full-batch gradient descent (grad norm < 1e-6 or 5000 iterations).
LinearProbeResult linear_probe(const Model& model, const Corpus& corpus, double train_fraction);

}  // namespace hvla
