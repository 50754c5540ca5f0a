#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hvla {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
using NodePtr = std::shared_ptr<Node>;
}  // namespace detail

// Dense row-major double tensor participating in reverse-mode differentiation.
// Handle with shared ownership of the underlying graph node; the graph is
// built eagerly (define-by-run) and freed when the last handle to its output
// goes away. Leaf tensors (parameters, inputs) keep their gradients across
// backward() calls; non-leaf gradients are reset by each backward().
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(detail::NodePtr node);  // internal

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    size_t rank() const;
    int64_t dim(size_t axis) const;
    int64_t numel() const;
    bool requires_grad() const;

    std::span<const double> data() const;
    // In-place mutation surface for leaf parameters (optimizer updates,
    // finite-difference probes). Must not be used on graph interiors.
    std::span<double> raw_data();

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> raw_grad();
    void zero_grad();

    double item() const;
    double at(std::initializer_list<int64_t> idx) const;

    // Reverse-mode accumulation from a scalar output into every reachable
    // leaf with requires_grad. Repeated calls accumulate into leaf grads.
    void backward() const;

    // Constant copy detached from the graph.
    Tensor detach() const;

    const detail::NodePtr& node() const { return node_; }

private:
    detail::NodePtr node_;
};

// ---- arithmetic (numpy-style broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
Tensor operator+(const Tensor& a, double s);
Tensor operator-(const Tensor& a, double s);
Tensor operator*(const Tensor& a, double s);
Tensor operator/(const Tensor& a, double s);
inline Tensor operator+(double s, const Tensor& a) { return a + s; }
inline Tensor operator*(double s, const Tensor& a) { return a * s; }

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // (M,K) x (K,N)
Tensor transpose(const Tensor& a);                // 2-D

// ---- elementwise ----
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // rejects nonpositive operands
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

// ---- reductions / structure ----
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor gather_rows(const Tensor& a, std::vector<int64_t> rows);

// ---- last-axis composites (stable forms) ----
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);

// ---- spatial ----
// x: (C_in, H, W); w: (C_out, C_in, kh, kw); b: (C_out) or undefined.
// Padding replicates the nearest border value.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
// torch-style adaptive mean pooling; output extents may exceed the input's
// (cells then replicate), window = [floor(i*I/O), ceil((i+1)*I/O)).
Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w);

// ---- gradient verification ----
struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int64_t coords_checked = 0;
};
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<GradCheckEntry> inputs;
};

// Central-difference check of d(fn)/d(inputs) against backward(). Every
// coordinate of every input is probed; relative error uses
// |a - n| / max(|a|, |n|, 1e-6 * max(1, |f|)).
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                           std::vector<Tensor> inputs, double step = 1e-5,
                           std::vector<std::string> names = {});

}  // namespace hvla
