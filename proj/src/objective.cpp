#include "hvla/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hvla {

Projector::Projector(const std::string& prefix, int64_t in_dim, int64_t hidden, int64_t out_dim,
                     Rng& rng, std::map<std::string, Tensor>& params) {
    auto normal = [&rng](Shape shape, double std) {
        std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
        for (auto& x : v) x = rng.normal(0.0, std);
        return Tensor::from_data(std::move(shape), std::move(v), true);
    };
    w1 = normal({in_dim, hidden}, std::sqrt(2.0 / static_cast<double>(in_dim)));
    // small random biases keep the projected vector away from the exact zero
    // vector even when every hidden relu is dead, so length normalization
    // stays well-conditioned
    b1 = normal({hidden}, 0.01);
    w2 = normal({hidden, out_dim}, std::sqrt(2.0 / static_cast<double>(hidden)));
    b2 = normal({out_dim}, 0.01);
    params[prefix + ".w1"] = w1;
    params[prefix + ".b1"] = b1;
    params[prefix + ".w2"] = w2;
    params[prefix + ".b2"] = b2;
}

Tensor Projector::apply(const Tensor& z) const {
    if (z.rank() != 2 || z.dim(1) != w1.dim(0)) {
        throw std::invalid_argument("projector: input " + shape_str(z.shape()) +
                                    " does not match weight " + shape_str(w1.shape()));
    }
    return matmul(relu(matmul(z, w1) + b1), w2) + b2;
}

Tensor l2_normalize_rows(const Tensor& z, double eps) {
    Tensor norms = sqrt(sum(z * z, -1, /*keepdim=*/true) + eps);
    return z / norms;
}

Tensor similarity_matrix(const Tensor& z1, const Tensor& z2, const Projector& p1,
                         const Projector& p2) {
    if (z1.rank() != 2 || z2.rank() != 2 || z1.dim(0) != z2.dim(0)) {
        throw std::invalid_argument("similarity: batch sizes differ, " + shape_str(z1.shape()) +
                                    " vs " + shape_str(z2.shape()));
    }
    Tensor n1 = l2_normalize_rows(p1.apply(z1));
    Tensor n2 = l2_normalize_rows(p2.apply(z2));
    return matmul(n1, transpose(n2));
}

Tensor cl_loss(const Tensor& s, double tau) {
    if (s.rank() != 2 || s.dim(0) != s.dim(1)) {
        throw std::invalid_argument("cl_loss: expected a square matrix, got " +
                                    shape_str(s.shape()));
    }
    if (tau <= 0.0) throw std::invalid_argument("cl_loss: tau must be positive");
    const int64_t b = s.dim(0);
    std::vector<double> eye(static_cast<size_t>(b * b), 0.0);
    for (int64_t i = 0; i < b; ++i) eye[static_cast<size_t>(i * b + i)] = 1.0;
    Tensor mask = Tensor::from_data({b, b}, std::move(eye));
    return neg(sum(mul(log_softmax_rows(s * (1.0 / tau)), mask)));
}

CorrelationResult report_correlation(const Tensor& zt) {
    if (zt.rank() != 2 || zt.dim(0) < 2) {
        throw std::invalid_argument("report_correlation: expected (B>=2, d), got " +
                                    shape_str(zt.shape()));
    }
    const int64_t b = zt.dim(0), d = zt.dim(1);
    auto v = zt.data();
    std::vector<double> mean(static_cast<size_t>(b), 0.0);
    std::vector<double> ss(static_cast<size_t>(b), 0.0);  // centered sum of squares
    for (int64_t i = 0; i < b; ++i) {
        const double* row = v.data() + i * d;
        double m = 0.0;
        for (int64_t k = 0; k < d; ++k) m += row[k];
        m /= static_cast<double>(d);
        double acc = 0.0;
        for (int64_t k = 0; k < d; ++k) acc += (row[k] - m) * (row[k] - m);
        mean[static_cast<size_t>(i)] = m;
        ss[static_cast<size_t>(i)] = acc;
    }
    CorrelationResult res;
    for (int64_t i = 0; i < b; ++i) {
        if (ss[static_cast<size_t>(i)] <= 1e-24) res.degenerate_rows.push_back(i);
    }
    std::vector<double> r(static_cast<size_t>(b * b), 0.0);
    for (int64_t i = 0; i < b; ++i) {
        r[static_cast<size_t>(i * b + i)] = 1.0;
        const double* ri = v.data() + i * d;
        for (int64_t j = i + 1; j < b; ++j) {
            double corr = 0.0;
            const double denom = std::sqrt(ss[static_cast<size_t>(i)] * ss[static_cast<size_t>(j)]);
            if (denom > 0.0 && ss[static_cast<size_t>(i)] > 1e-24 &&
                ss[static_cast<size_t>(j)] > 1e-24) {
                const double* rj = v.data() + j * d;
                double acc = 0.0;
                for (int64_t k = 0; k < d; ++k) {
                    acc += (ri[k] - mean[static_cast<size_t>(i)]) *
                           (rj[k] - mean[static_cast<size_t>(j)]);
                }
                corr = std::clamp(acc / denom, -1.0, 1.0);
            }
            r[static_cast<size_t>(i * b + j)] = corr;
            r[static_cast<size_t>(j * b + i)] = corr;
        }
    }
    res.r = Tensor::from_data({b, b}, std::move(r));
    return res;
}

SmoothKernel parse_kernel(const std::string& name) {
    if (name == "exponential") return SmoothKernel::exponential;
    if (name == "gaussian") return SmoothKernel::gaussian;
    if (name == "laplacian") return SmoothKernel::laplacian;
    if (name == "sigmoid") return SmoothKernel::sigmoid;
    throw std::invalid_argument("unknown smooth kernel '" + name + "'");
}

std::string kernel_name(SmoothKernel k) {
    switch (k) {
        case SmoothKernel::exponential: return "exponential";
        case SmoothKernel::gaussian: return "gaussian";
        case SmoothKernel::laplacian: return "laplacian";
        case SmoothKernel::sigmoid: return "sigmoid";
    }
    return "?";
}

Tensor smooth(const Tensor& r, double lambda, SmoothKernel kernel) {
    if (lambda <= 0.0) {
        throw std::invalid_argument("smooth: lambda must be positive, got " +
                                    std::to_string(lambda));
    }
    if (r.rank() != 2 || r.dim(0) != r.dim(1)) {
        throw std::invalid_argument("smooth: expected a square matrix, got " +
                                    shape_str(r.shape()));
    }
    const int64_t b = r.dim(0);
    auto v = r.data();
    std::vector<double> out(v.begin(), v.end());
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = 0; j < b; ++j) {
            double& x = out[static_cast<size_t>(i * b + j)];
            if (i == j) {
                x = 1.0;
                continue;
            }
            switch (kernel) {
                case SmoothKernel::exponential: x = 1.0 - std::exp(-lambda * x); break;
                case SmoothKernel::gaussian: x = std::exp(-x * x / (2.0 * lambda * lambda)); break;
                case SmoothKernel::laplacian: x = std::exp(-std::abs(x) / lambda); break;
                case SmoothKernel::sigmoid:
                    x = 2.0 / (1.0 + std::exp(-x / lambda)) - 1.0;
                    break;
            }
        }
    }
    return Tensor::from_data({b, b}, std::move(out));
}

namespace {

// clamp to [0,1] then normalize along `axis` (0: columns, 1: rows); returned
// transposed when normalizing columns so both cases read row-wise.
Tensor normalized_target(const Tensor& r, int axis) {
    const int64_t b = r.dim(0);
    auto v = r.data();
    std::vector<double> t(static_cast<size_t>(b * b), 0.0);
    for (int64_t i = 0; i < b; ++i) {
        double total = 0.0;
        for (int64_t j = 0; j < b; ++j) {
            const double raw = axis == 1 ? v[static_cast<size_t>(i * b + j)]
                                         : v[static_cast<size_t>(j * b + i)];
            const double c = std::clamp(raw, 0.0, 1.0);
            t[static_cast<size_t>(i * b + j)] = c;
            total += c;
        }
        if (total <= 0.0) {
            throw std::invalid_argument("cicl_loss: target row " + std::to_string(i) +
                                        " clamps to zero");
        }
        for (int64_t j = 0; j < b; ++j) t[static_cast<size_t>(i * b + j)] /= total;
    }
    return Tensor::from_data({b, b}, std::move(t));
}

}  // namespace

Tensor cicl_loss(const Tensor& s, const Tensor& r_smooth, double tau) {
    if (s.rank() != 2 || s.dim(0) != s.dim(1)) {
        throw std::invalid_argument("cicl_loss: similarity must be square, got " +
                                    shape_str(s.shape()));
    }
    if (r_smooth.rank() != 2 || r_smooth.shape() != s.shape()) {
        throw std::invalid_argument("cicl_loss: target shape " + shape_str(r_smooth.shape()) +
                                    " does not match similarity " + shape_str(s.shape()));
    }
    if (tau <= 0.0) throw std::invalid_argument("cicl_loss: tau must be positive");
    const int64_t b = s.dim(0);
    Tensor t_row = normalized_target(r_smooth, 1);
    Tensor t_col = normalized_target(r_smooth, 0);
    Tensor ce_rows = neg(sum(mul(t_row, log_softmax_rows(s * (1.0 / tau)))));
    Tensor ce_cols = neg(sum(mul(t_col, log_softmax_rows(transpose(s) * (1.0 / tau)))));
    return (ce_rows + ce_cols) * (1.0 / (2.0 * static_cast<double>(b)));
}

LossTerms parse_terms(const std::vector<std::string>& names) {
    LossTerms t{false, false, false, false};
    for (const auto& n : names) {
        if (n == "vvh") t.vv_high = true;
        else if (n == "vvm") t.vv_mid = true;
        else if (n == "vlh") t.vl_high = true;
        else if (n == "vlm") t.vl_mid = true;
        else throw std::invalid_argument("unknown loss term '" + n + "'");
    }
    return t;
}

AlignVariant parse_align(const std::string& name) {
    if (name == "hierarchical") return AlignVariant::hierarchical;
    if (name == "impressions_only") return AlignVariant::impressions_only;
    if (name == "concatenated") return AlignVariant::concatenated;
    if (name == "reversed") return AlignVariant::reversed;
    throw std::invalid_argument("unknown alignment variant '" + name + "'");
}

std::string align_name(AlignVariant v) {
    switch (v) {
        case AlignVariant::hierarchical: return "hierarchical";
        case AlignVariant::impressions_only: return "impressions_only";
        case AlignVariant::concatenated: return "concatenated";
        case AlignVariant::reversed: return "reversed";
    }
    return "?";
}

TotalLoss total_loss(const BatchLatents& batch, const Projector& pv, const Projector& pz,
                     double tau, double lambda, SmoothKernel kernel, const LossTerms& toggles,
                     AlignVariant align) {
    auto need = [](const Tensor& t, const char* role) {
        if (!t.defined()) {
            throw std::invalid_argument(std::string("total_loss: missing latent ") + role);
        }
    };
    need(batch.z_vm1, "z_vm1");
    need(batch.z_vh1, "z_vh1");
    need(batch.z_vm2, "z_vm2");
    need(batch.z_vh2, "z_vh2");
    need(batch.z_tF, "z_tF");
    need(batch.z_tI, "z_tI");

    Tensor high_text, mid_text;
    switch (align) {
        case AlignVariant::hierarchical:
            high_text = batch.z_tI;
            mid_text = batch.z_tF;
            break;
        case AlignVariant::impressions_only:
            high_text = batch.z_tI;
            mid_text = batch.z_tI;
            break;
        case AlignVariant::concatenated:
            need(batch.z_tC, "z_tC");
            high_text = batch.z_tC;
            mid_text = batch.z_tC;
            break;
        case AlignVariant::reversed:
            high_text = batch.z_tF;
            mid_text = batch.z_tI;
            break;
    }

    auto corr_high = report_correlation(high_text);
    auto corr_mid = report_correlation(mid_text);
    Tensor r_high = smooth(corr_high.r, lambda, kernel);
    Tensor r_mid = smooth(corr_mid.r, lambda, kernel);

    TotalLoss result;
    result.degenerate_correlation = corr_high.degenerate() || corr_mid.degenerate();
    Tensor total = Tensor::scalar(0.0);
    auto add_term = [&](const std::string& name, Tensor term) {
        result.terms[name] = term.item();
        total = total + term;
    };
    if (toggles.vl_high) {
        add_term("vl_high_1", cicl_loss(similarity_matrix(batch.z_vh1, high_text, pv, pz), r_high,
                                        tau));
        add_term("vl_high_2", cicl_loss(similarity_matrix(batch.z_vh2, high_text, pv, pz), r_high,
                                        tau));
    }
    if (toggles.vl_mid) {
        add_term("vl_mid_1",
                 cicl_loss(similarity_matrix(batch.z_vm1, mid_text, pv, pz), r_mid, tau));
        add_term("vl_mid_2",
                 cicl_loss(similarity_matrix(batch.z_vm2, mid_text, pv, pz), r_mid, tau));
    }
    if (toggles.vv_high) {
        add_term("vv_high",
                 cicl_loss(similarity_matrix(batch.z_vh1, batch.z_vh2, pv, pv), r_high, tau));
    }
    if (toggles.vv_mid) {
        add_term("vv_mid",
                 cicl_loss(similarity_matrix(batch.z_vm1, batch.z_vm2, pv, pv), r_mid, tau));
    }
    result.total = total;
    return result;
}

}  // namespace hvla
