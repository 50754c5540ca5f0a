#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hvla/rng.hpp"
#include "hvla/tensor.hpp"

namespace hvla {

// Two-layer non-linear map (linear -> relu -> linear) into the shared
// alignment space. One instance projects visual latents, one textual.
struct Projector {
    Tensor w1, b1, w2, b2;

    Projector() = default;
    Projector(const std::string& prefix, int64_t in_dim, int64_t hidden, int64_t out_dim,
              Rng& rng, std::map<std::string, Tensor>& params);

    Tensor apply(const Tensor& z) const;  // (B, in) -> (B, out)
    int64_t in_dim() const { return w1.dim(0); }
    int64_t out_dim() const { return w2.dim(1); }
};

Tensor l2_normalize_rows(const Tensor& z, double eps = 1e-12);

// S[i,j] = <p1(Z1[i]), p2(Z2[j])> with each projected vector length-normalized.
Tensor similarity_matrix(const Tensor& z1, const Tensor& z2, const Projector& p1,
                         const Projector& p2);

// Classic identity-target contrastive loss: sum_i -log softmax(S[i,:]/tau)[i].
Tensor cl_loss(const Tensor& s, double tau);

struct CorrelationResult {
    Tensor r;  // B x B, symmetric, unit diagonal
    std::vector<int64_t> degenerate_rows;
    bool degenerate() const { return !degenerate_rows.empty(); }
};

// Pearson correlation of latent-code pairs across the embedding dimension.
// Zero-variance rows get zero off-diagonal entries and raise the flag.
CorrelationResult report_correlation(const Tensor& zt);

enum class SmoothKernel { exponential, gaussian, laplacian, sigmoid };
SmoothKernel parse_kernel(const std::string& name);
std::string kernel_name(SmoothKernel k);

// Soft-target map with unit diagonal. Off-diagonal entries:
//   exponential: 1 - exp(-lambda * r)
//   gaussian:    exp(-r^2 / (2 lambda^2))
//   laplacian:   exp(-|r| / lambda)
//   sigmoid:     2*sigma(r / lambda) - 1
Tensor smooth(const Tensor& r, double lambda, SmoothKernel kernel);

// Cross-entropy between row/column softmax of S/tau and the clamp-then-
// normalized rows/columns of R_smooth, averaged over 2B rows. With identity
// targets, 2B * cicl_loss(S, I, tau) == cl_loss(S, tau) + cl_loss(S^T, tau).
Tensor cicl_loss(const Tensor& s, const Tensor& r_smooth, double tau);

// Projected latents for one mini-batch, one row per record.
struct BatchLatents {
    Tensor z_vm1, z_vh1;  // view 1: multi-level, high-level
    Tensor z_vm2, z_vh2;  // view 2
    Tensor z_tF, z_tI;    // findings / impressions embeddings
    Tensor z_tC;          // concatenated-report embeddings (only for that variant)
};

struct LossTerms {
    bool vv_high = true;
    bool vv_mid = true;
    bool vl_high = true;
    bool vl_mid = true;
};
LossTerms parse_terms(const std::vector<std::string>& names);

// Which text part informs each visual level (and its correlation target).
enum class AlignVariant { hierarchical, impressions_only, concatenated, reversed };
AlignVariant parse_align(const std::string& name);
std::string align_name(AlignVariant v);

struct TotalLoss {
    Tensor total;
    std::map<std::string, double> terms;  // keyed vl_high_1 .. vv_mid
    bool degenerate_correlation = false;
};

// Six-way objective: the high-level latents of both views align with the
// conclusive text, the multi-level latents with the descriptive text, and the
// two views align with each other; every pairing uses the smoothed correlation
// target of its text side (the view-view terms reuse the matching one).
TotalLoss total_loss(const BatchLatents& batch, const Projector& pv, const Projector& pz,
                     double tau, double lambda, SmoothKernel kernel,
                     const LossTerms& toggles = {},
                     AlignVariant align = AlignVariant::hierarchical);

}  // namespace hvla
