#include "hvla/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace hvla {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

namespace detail {

struct Node {
    std::string op;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily
    bool requires_grad = false;
    bool leaf = true;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

namespace {

void validate_shape(const Shape& shape, const char* op) {
    for (int64_t d : shape) {
        if (d <= 0) {
            throw std::invalid_argument(std::string(op) + ": nonpositive extent in shape " +
                                        shape_str(shape));
        }
    }
}

void check_finite(const Node& n) {
    for (double v : n.value) {
        if (!std::isfinite(v)) {
            throw std::runtime_error("non-finite value produced by op '" + n.op + "'");
        }
    }
}

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad, const char* op) {
    validate_shape(shape, op);
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw std::invalid_argument(std::string(op) + ": shape " + shape_str(shape) +
                                    " does not match value count " +
                                    std::to_string(values.size()));
    }
    auto n = std::make_shared<Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    n->leaf = true;
    return n;
}

NodePtr make_op(std::string op, Shape shape, std::vector<double> values,
                std::vector<NodePtr> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->op = std::move(op);
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->leaf = false;
    n->parents = std::move(parents);
    bool rg = false;
    for (const auto& p : n->parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) n->backprop = std::move(backprop);
    check_finite(*n);
    return n;
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
    return st;
}

// Result shape of numpy-style broadcasting, or throws naming both shapes.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                        shape_str(b) + " are not broadcastable");
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides for indexing an operand of shape `in` inside the broadcast grid
// `out` (0 where the operand is expanded).
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    const auto st = row_major_strides(in);
    std::vector<int64_t> bs(out.size(), 0);
    const size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i) {
        bs[off + i] = in[i] == 1 ? 0 : st[i];
    }
    return bs;
}

// Walks the broadcast grid calling f(out_linear, a_linear, b_linear).
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, F&& f) {
    const size_t r = out.size();
    const int64_t n = shape_numel(out);
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t o = 0; o < n; ++o) {
        f(o, ia, ib);
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

struct BinaryPlan {
    Shape out;
    std::vector<int64_t> sa, sb;
    bool same_shape;
};

BinaryPlan plan_binary(const NodePtr& a, const NodePtr& b, const char* op) {
    BinaryPlan p;
    p.out = broadcast_shape(a->shape, b->shape, op);
    p.sa = broadcast_strides(a->shape, p.out);
    p.sb = broadcast_strides(b->shape, p.out);
    p.same_shape = a->shape == b->shape;
    return p;
}

// Plain (M,K)x(K,N) product; C must be zeroed by the caller when not
// accumulating.
void mm_acc(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        double* c = C + i * N;
        const double* arow = A + i * K;
        for (int64_t k = 0; k < K; ++k) {
            const double a = arow[k];
            if (a == 0.0) continue;
            const double* brow = B + k * N;
            for (int64_t j = 0; j < N; ++j) c[j] += a * brow[j];
        }
    }
}

// dA += G * B^T where G is (M,N) and B is (K,N); dA is (M,K).
void mm_bt_acc(const double* G, const double* B, double* dA, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const double* grow = G + i * N;
        double* arow = dA + i * K;
        for (int64_t k = 0; k < K; ++k) {
            const double* brow = B + k * N;
            double acc = 0.0;
            for (int64_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
            arow[k] += acc;
        }
    }
}

// dB += A^T * G where A is (M,K) and G is (M,N); dB is (K,N).
void mm_at_acc(const double* A, const double* G, double* dB, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const double* arow = A + i * K;
        const double* grow = G + i * N;
        for (int64_t k = 0; k < K; ++k) {
            const double a = arow[k];
            if (a == 0.0) continue;
            double* brow = dB + k * N;
            for (int64_t j = 0; j < N; ++j) brow[j] += a * grow[j];
        }
    }
}

NodePtr require(const Tensor& t, const char* op) {
    if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
    return t.node();
}

}  // namespace
}  // namespace detail

using detail::Node;
using detail::NodePtr;

// ---------------------------------------------------------------------------
// Tensor handle
// ---------------------------------------------------------------------------

Tensor::Tensor(detail::NodePtr node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const int64_t n = shape_numel(shape);
    return Tensor(detail::make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad,
                                    "zeros"));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const int64_t n = shape_numel(shape);
    return Tensor(detail::make_leaf(std::move(shape), std::vector<double>(n, value),
                                    requires_grad, "full"));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(detail::make_leaf(std::move(shape), std::move(values), requires_grad, "tensor"));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
size_t Tensor::rank() const { return node_->shape.size(); }
int64_t Tensor::dim(size_t axis) const { return node_->shape.at(axis); }
int64_t Tensor::numel() const { return node_->numel(); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::data() const { return {node_->value}; }
std::span<double> Tensor::raw_data() { return {node_->value}; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw std::logic_error("grad(): no gradient present");
    return {node_->grad};
}

std::span<double> Tensor::raw_grad() {
    node_->ensure_grad();
    return {node_->grad};
}

void Tensor::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("item(): tensor of shape " + shape_str(shape()) +
                                    " is not a scalar");
    }
    return node_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    if (idx.size() != rank()) throw std::invalid_argument("at(): rank mismatch");
    const auto st = detail::row_major_strides(node_->shape);
    int64_t lin = 0;
    size_t d = 0;
    for (int64_t i : idx) lin += i * st[d++];
    return node_->value.at(static_cast<size_t>(lin));
}

Tensor Tensor::detach() const {
    return Tensor(detail::make_leaf(node_->shape, node_->value, false, "detach"));
}

void Tensor::backward() const {
    if (!node_) throw std::invalid_argument("backward(): undefined tensor");
    if (numel() != 1) {
        throw std::invalid_argument("backward(): output of shape " + shape_str(shape()) +
                                    " is not a scalar");
    }
    // Post-order over the requires_grad subgraph (iterative DFS); reversing it
    // yields consumers-before-producers, which backprop needs.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        size_t next = 0;
    };
    std::vector<Frame> stack;
    if (node_->requires_grad) {
        stack.push_back({node_.get()});
        seen.insert(node_.get());
    }
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    // Non-leaf grads are transient per call; leaf grads accumulate.
    for (Node* n : order) {
        if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Binary elementwise ops
// ---------------------------------------------------------------------------

namespace {

template <typename FwdF, typename BwdF>
Tensor binary_op(const char* name, const Tensor& ta, const Tensor& tb, FwdF fwd, BwdF bwd) {
    auto a = detail::require(ta, name);
    auto b = detail::require(tb, name);
    auto plan = detail::plan_binary(a, b, name);
    std::vector<double> out(static_cast<size_t>(shape_numel(plan.out)));
    if (plan.same_shape) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a->value[i], b->value[i]);
    } else {
        detail::for_each_broadcast(plan.out, plan.sa, plan.sb,
                                   [&](int64_t o, int64_t ia, int64_t ib) {
                                       out[static_cast<size_t>(o)] =
                                           fwd(a->value[static_cast<size_t>(ia)],
                                               b->value[static_cast<size_t>(ib)]);
                                   });
    }
    return Tensor(detail::make_op(
        name, plan.out, std::move(out), {a, b},
        [a, b, plan, bwd](Node& self) {
            const bool ga = a->requires_grad;
            const bool gb = b->requires_grad;
            if (ga) a->ensure_grad();
            if (gb) b->ensure_grad();
            if (plan.same_shape) {
                for (size_t i = 0; i < self.grad.size(); ++i) {
                    const auto [da, db] = bwd(a->value[i], b->value[i]);
                    if (ga) a->grad[i] += self.grad[i] * da;
                    if (gb) b->grad[i] += self.grad[i] * db;
                }
            } else {
                detail::for_each_broadcast(
                    plan.out, plan.sa, plan.sb, [&](int64_t o, int64_t ia, int64_t ib) {
                        const auto [da, db] = bwd(a->value[static_cast<size_t>(ia)],
                                                  b->value[static_cast<size_t>(ib)]);
                        const double g = self.grad[static_cast<size_t>(o)];
                        if (ga) a->grad[static_cast<size_t>(ia)] += g * da;
                        if (gb) b->grad[static_cast<size_t>(ib)] += g * db;
                    });
            }
        }));
}

struct Pair {
    double first, second;
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return Pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return Pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y) { return Pair{y, x}; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    for (double v : b.data()) {
        if (v == 0.0) throw std::domain_error("div: zero divisor operand");
    }
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double x, double y) { return Pair{1.0 / y, -x / (y * y)}; });
}

Tensor neg(const Tensor& a) { return a * -1.0; }

Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
Tensor operator-(const Tensor& a, double s) { return add(a, Tensor::scalar(-s)); }
Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
Tensor operator/(const Tensor& a, double s) { return divide(a, Tensor::scalar(s)); }

// ---------------------------------------------------------------------------
// Unary elementwise ops
// ---------------------------------------------------------------------------

namespace {

// bwd receives (x, y) and returns dy/dx.
template <typename FwdF, typename BwdF>
Tensor unary_op(const char* name, const Tensor& ta, FwdF fwd, BwdF bwd) {
    auto a = detail::require(ta, name);
    std::vector<double> out(a->value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a->value[i]);
    return Tensor(detail::make_op(name, a->shape, std::move(out), {a}, [a, bwd](Node& self) {
        a->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            a->grad[i] += self.grad[i] * bwd(a->value[i], self.value[i]);
        }
    }));
}

}  // namespace

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double v : a.data()) {
        if (v <= 0.0) {
            throw std::domain_error("log: nonpositive operand " + std::to_string(v));
        }
    }
    return unary_op(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    for (double v : a.data()) {
        if (v < 0.0) throw std::domain_error("sqrt: negative operand " + std::to_string(v));
    }
    return unary_op(
        "sqrt", a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a,
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                       : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// matmul / transpose
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& ta, const Tensor& tb) {
    auto a = detail::require(ta, "matmul");
    auto b = detail::require(tb, "matmul");
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a->shape) +
                                    " and " + shape_str(b->shape));
    }
    const int64_t M = a->shape[0], K = a->shape[1], N = b->shape[1];
    std::vector<double> out(static_cast<size_t>(M * N), 0.0);
    detail::mm_acc(a->value.data(), b->value.data(), out.data(), M, K, N);
    return Tensor(detail::make_op("matmul", {M, N}, std::move(out), {a, b},
                                  [a, b, M, K, N](Node& self) {
                                      if (a->requires_grad) {
                                          a->ensure_grad();
                                          detail::mm_bt_acc(self.grad.data(), b->value.data(),
                                                            a->grad.data(), M, K, N);
                                      }
                                      if (b->requires_grad) {
                                          b->ensure_grad();
                                          detail::mm_at_acc(a->value.data(), self.grad.data(),
                                                            b->grad.data(), M, K, N);
                                      }
                                  }));
}

Tensor transpose(const Tensor& ta) {
    auto a = detail::require(ta, "transpose");
    if (a->shape.size() != 2) {
        throw std::invalid_argument("transpose: expected rank-2 tensor, got " +
                                    shape_str(a->shape));
    }
    const int64_t R = a->shape[0], C = a->shape[1];
    std::vector<double> out(a->value.size());
    for (int64_t i = 0; i < R; ++i) {
        for (int64_t j = 0; j < C; ++j) out[static_cast<size_t>(j * R + i)] = a->value[i * C + j];
    }
    return Tensor(detail::make_op("transpose", {C, R}, std::move(out), {a}, [a, R, C](Node& self) {
        a->ensure_grad();
        for (int64_t i = 0; i < R; ++i) {
            for (int64_t j = 0; j < C; ++j) {
                a->grad[static_cast<size_t>(i * C + j)] += self.grad[static_cast<size_t>(j * R + i)];
            }
        }
    }));
}

// ---------------------------------------------------------------------------
// reductions / structure
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& ta) {
    auto a = detail::require(ta, "sum");
    double s = 0.0;
    for (double v : a->value) s += v;
    return Tensor(detail::make_op("sum", {1}, {s}, {a}, [a](Node& self) {
        a->ensure_grad();
        const double g = self.grad[0];
        for (double& d : a->grad) d += g;
    }));
}

namespace {

struct AxisPlan {
    int64_t outer, len, inner;
    Shape out_shape;
};

AxisPlan plan_axis(const NodePtr& a, int axis, bool keepdim, const char* op) {
    const int64_t r = static_cast<int64_t>(a->shape.size());
    if (axis < 0) axis += static_cast<int>(r);
    if (axis < 0 || axis >= r) {
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(a->shape));
    }
    AxisPlan p;
    p.outer = 1;
    p.inner = 1;
    p.len = a->shape[static_cast<size_t>(axis)];
    for (int64_t i = 0; i < axis; ++i) p.outer *= a->shape[static_cast<size_t>(i)];
    for (int64_t i = axis + 1; i < r; ++i) p.inner *= a->shape[static_cast<size_t>(i)];
    for (int64_t i = 0; i < r; ++i) {
        if (i == axis) {
            if (keepdim) p.out_shape.push_back(1);
        } else {
            p.out_shape.push_back(a->shape[static_cast<size_t>(i)]);
        }
    }
    if (p.out_shape.empty()) p.out_shape.push_back(1);
    return p;
}

}  // namespace

Tensor sum(const Tensor& ta, int axis, bool keepdim) {
    auto a = detail::require(ta, "sum");
    const auto p = plan_axis(a, axis, keepdim, "sum");
    std::vector<double> out(static_cast<size_t>(p.outer * p.inner), 0.0);
    for (int64_t o = 0; o < p.outer; ++o) {
        for (int64_t k = 0; k < p.len; ++k) {
            const double* src = a->value.data() + (o * p.len + k) * p.inner;
            double* dst = out.data() + o * p.inner;
            for (int64_t i = 0; i < p.inner; ++i) dst[i] += src[i];
        }
    }
    return Tensor(detail::make_op("sum_axis", p.out_shape, std::move(out), {a}, [a, p](Node& self) {
        a->ensure_grad();
        for (int64_t o = 0; o < p.outer; ++o) {
            const double* g = self.grad.data() + o * p.inner;
            for (int64_t k = 0; k < p.len; ++k) {
                double* dst = a->grad.data() + (o * p.len + k) * p.inner;
                for (int64_t i = 0; i < p.inner; ++i) dst[i] += g[i];
            }
        }
    }));
}

Tensor mean(const Tensor& a) { return sum(a) * (1.0 / static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, int axis, bool keepdim) {
    int ax = axis < 0 ? axis + static_cast<int>(a.rank()) : axis;
    const double n = static_cast<double>(a.dim(static_cast<size_t>(ax)));
    return sum(a, axis, keepdim) * (1.0 / n);
}

Tensor reshape(const Tensor& ta, Shape shape) {
    auto a = detail::require(ta, "reshape");
    detail::validate_shape(shape, "reshape");
    if (shape_numel(shape) != a->numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a->shape) + " as " +
                                    shape_str(shape));
    }
    return Tensor(
        detail::make_op("reshape", std::move(shape), a->value, {a}, [a](Node& self) {
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        }));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const auto& t : parts) nodes.push_back(detail::require(t, "concat"));
    const Shape& first = nodes.front()->shape;
    const int64_t r = static_cast<int64_t>(first.size());
    int64_t ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) {
        throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(first));
    }
    Shape out_shape = first;
    out_shape[static_cast<size_t>(ax)] = 0;
    for (const auto& n : nodes) {
        if (static_cast<int64_t>(n->shape.size()) != r) {
            throw std::invalid_argument("concat: rank mismatch between " + shape_str(first) +
                                        " and " + shape_str(n->shape));
        }
        for (int64_t d = 0; d < r; ++d) {
            if (d != ax && n->shape[static_cast<size_t>(d)] != first[static_cast<size_t>(d)]) {
                throw std::invalid_argument("concat: shapes " + shape_str(first) + " and " +
                                            shape_str(n->shape) + " differ off-axis");
            }
        }
        out_shape[static_cast<size_t>(ax)] += n->shape[static_cast<size_t>(ax)];
    }
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < ax; ++d) outer *= first[static_cast<size_t>(d)];
    for (int64_t d = ax + 1; d < r; ++d) inner *= first[static_cast<size_t>(d)];
    const int64_t out_ax = out_shape[static_cast<size_t>(ax)];

    std::vector<int64_t> axis_len;
    axis_len.reserve(nodes.size());
    for (const auto& n : nodes) axis_len.push_back(n->shape[static_cast<size_t>(ax)]);

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    int64_t off = 0;
    for (size_t pi = 0; pi < nodes.size(); ++pi) {
        const int64_t len = axis_len[pi];
        for (int64_t o = 0; o < outer; ++o) {
            std::copy_n(nodes[pi]->value.data() + o * len * inner, len * inner,
                        out.data() + (o * out_ax + off) * inner);
        }
        off += len;
    }
    return Tensor(detail::make_op(
        "concat", out_shape, std::move(out), nodes,
        [nodes, axis_len = std::move(axis_len), outer, inner, out_ax](Node& self) {
            int64_t off = 0;
            for (size_t pi = 0; pi < nodes.size(); ++pi) {
                const int64_t len = axis_len[pi];
                if (nodes[pi]->requires_grad) {
                    nodes[pi]->ensure_grad();
                    for (int64_t o = 0; o < outer; ++o) {
                        const double* g = self.grad.data() + (o * out_ax + off) * inner;
                        double* dst = nodes[pi]->grad.data() + o * len * inner;
                        for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                    }
                }
                off += len;
            }
        }));
}

Tensor gather_rows(const Tensor& ta, std::vector<int64_t> rows) {
    auto a = detail::require(ta, "gather_rows");
    if (a->shape.empty()) throw std::invalid_argument("gather_rows: rank-0 input");
    const int64_t R = a->shape[0];
    const int64_t inner = a->numel() / R;
    for (int64_t r : rows) {
        if (r < 0 || r >= R) {
            throw std::invalid_argument("gather_rows: index " + std::to_string(r) +
                                        " out of range [0," + std::to_string(R) + ")");
        }
    }
    Shape out_shape = a->shape;
    out_shape[0] = static_cast<int64_t>(rows.size());
    std::vector<double> out(static_cast<size_t>(out_shape[0] * inner));
    for (size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(a->value.data() + rows[i] * inner, inner,
                    out.data() + static_cast<int64_t>(i) * inner);
    }
    return Tensor(detail::make_op("gather_rows", out_shape, std::move(out), {a},
                                  [a, rows = std::move(rows), inner](Node& self) {
                                      a->ensure_grad();
                                      for (size_t i = 0; i < rows.size(); ++i) {
                                          const double* g =
                                              self.grad.data() + static_cast<int64_t>(i) * inner;
                                          double* dst = a->grad.data() + rows[i] * inner;
                                          for (int64_t k = 0; k < inner; ++k) dst[k] += g[k];
                                      }
                                  }));
}

// ---------------------------------------------------------------------------
// last-axis composites
// ---------------------------------------------------------------------------

namespace {

// Row maxima as a detached constant with a trailing axis of 1. Subtracting a
// constant shift leaves softmax/log-sum-exp values and gradients unchanged.
Tensor row_max_const(const Tensor& t) {
    const auto& shape = t.shape();
    const int64_t C = shape.back();
    const int64_t R = t.numel() / C;
    std::vector<double> m(static_cast<size_t>(R));
    auto v = t.data();
    for (int64_t r = 0; r < R; ++r) {
        double best = v[static_cast<size_t>(r * C)];
        for (int64_t c = 1; c < C; ++c) best = std::max(best, v[static_cast<size_t>(r * C + c)]);
        m[static_cast<size_t>(r)] = best;
    }
    Shape ms = shape;
    ms.back() = 1;
    return Tensor::from_data(std::move(ms), std::move(m));
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
    if (a.rank() < 1) throw std::invalid_argument("softmax: rank-0 input");
    Tensor shifted = a - row_max_const(a);
    Tensor e = exp(shifted);
    Tensor denom = sum(e, -1, /*keepdim=*/true);
    return e / denom;
}

Tensor log_softmax_rows(const Tensor& a) {
    if (a.rank() < 1) throw std::invalid_argument("log_softmax: rank-0 input");
    Tensor shifted = a - row_max_const(a);
    Tensor lse = log(sum(exp(shifted), -1, /*keepdim=*/true));
    return shifted - lse;
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
    if (a.rank() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
    Tensor mu = mean(a, -1, /*keepdim=*/true);
    Tensor centered = a - mu;
    Tensor var = mean(centered * centered, -1, /*keepdim=*/true);
    return centered / sqrt(var + eps);
}

// ---------------------------------------------------------------------------
// spatial ops
// ---------------------------------------------------------------------------

namespace {

struct ConvPlan {
    int64_t ci, h, w, co, kh, kw, ho, wo;
    int stride, pad;
};

int64_t clamp_coord(int64_t v, int64_t hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); }

// im2col layout: (ci*kh*kw, ho*wo) row-major. Padding replicates the border,
// so spatially constant inputs stay constant through the convolution.
void im2col(const double* x, const ConvPlan& p, double* cols) {
    const int64_t N = p.ho * p.wo;
    for (int64_t c = 0; c < p.ci; ++c) {
        for (int64_t ky = 0; ky < p.kh; ++ky) {
            for (int64_t kx = 0; kx < p.kw; ++kx) {
                double* row = cols + ((c * p.kh + ky) * p.kw + kx) * N;
                for (int64_t oy = 0; oy < p.ho; ++oy) {
                    const int64_t iy = clamp_coord(oy * p.stride + ky - p.pad, p.h);
                    for (int64_t ox = 0; ox < p.wo; ++ox) {
                        const int64_t ix = clamp_coord(ox * p.stride + kx - p.pad, p.w);
                        row[oy * p.wo + ox] = x[(c * p.h + iy) * p.w + ix];
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* cols, const ConvPlan& p, double* dx) {
    const int64_t N = p.ho * p.wo;
    for (int64_t c = 0; c < p.ci; ++c) {
        for (int64_t ky = 0; ky < p.kh; ++ky) {
            for (int64_t kx = 0; kx < p.kw; ++kx) {
                const double* row = cols + ((c * p.kh + ky) * p.kw + kx) * N;
                for (int64_t oy = 0; oy < p.ho; ++oy) {
                    const int64_t iy = clamp_coord(oy * p.stride + ky - p.pad, p.h);
                    for (int64_t ox = 0; ox < p.wo; ++ox) {
                        const int64_t ix = clamp_coord(ox * p.stride + kx - p.pad, p.w);
                        dx[(c * p.h + iy) * p.w + ix] += row[oy * p.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& tx, const Tensor& tw, const Tensor& tb, int stride, int pad) {
    auto x = detail::require(tx, "conv2d");
    auto w = detail::require(tw, "conv2d");
    if (x->shape.size() != 3 || w->shape.size() != 4 || x->shape[0] != w->shape[1]) {
        throw std::invalid_argument("conv2d: incompatible shapes " + shape_str(x->shape) +
                                    " and " + shape_str(w->shape));
    }
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    ConvPlan p;
    p.ci = x->shape[0];
    p.h = x->shape[1];
    p.w = x->shape[2];
    p.co = w->shape[0];
    p.kh = w->shape[2];
    p.kw = w->shape[3];
    p.stride = stride;
    p.pad = pad;
    p.ho = (p.h + 2 * pad - p.kh) / stride + 1;
    p.wo = (p.w + 2 * pad - p.kw) / stride + 1;
    if (p.ho <= 0 || p.wo <= 0) {
        throw std::invalid_argument("conv2d: kernel " + shape_str(w->shape) +
                                    " does not fit input " + shape_str(x->shape));
    }
    NodePtr b;
    if (tb.defined()) {
        b = tb.node();
        if (b->shape.size() != 1 || b->shape[0] != p.co) {
            throw std::invalid_argument("conv2d: bias shape " + shape_str(b->shape) +
                                        " does not match " + std::to_string(p.co) + " filters");
        }
    }
    const int64_t K = p.ci * p.kh * p.kw;
    const int64_t N = p.ho * p.wo;
    std::vector<double> cols(static_cast<size_t>(K * N));
    im2col(x->value.data(), p, cols.data());
    std::vector<double> out(static_cast<size_t>(p.co * N), 0.0);
    detail::mm_acc(w->value.data(), cols.data(), out.data(), p.co, K, N);
    if (b) {
        for (int64_t c = 0; c < p.co; ++c) {
            const double bv = b->value[static_cast<size_t>(c)];
            double* dst = out.data() + c * N;
            for (int64_t i = 0; i < N; ++i) dst[i] += bv;
        }
    }
    std::vector<NodePtr> parents{x, w};
    if (b) parents.push_back(b);
    return Tensor(detail::make_op(
        "conv2d", {p.co, p.ho, p.wo}, std::move(out), std::move(parents),
        [x, w, b, p, K, N](Node& self) {
            // cols are recomputed here instead of captured; the im2col pass is
            // cheap relative to the matmuls and the graph holds many convs.
            std::vector<double> cols(static_cast<size_t>(K * N));
            im2col(x->value.data(), p, cols.data());
            if (w->requires_grad) {
                w->ensure_grad();
                detail::mm_bt_acc(self.grad.data(), cols.data(), w->grad.data(), p.co, K, N);
            }
            if (x->requires_grad) {
                x->ensure_grad();
                std::vector<double> dcols(static_cast<size_t>(K * N), 0.0);
                detail::mm_at_acc(w->value.data(), self.grad.data(), dcols.data(), p.co, K, N);
                col2im_acc(dcols.data(), p, x->grad.data());
            }
            if (b && b->requires_grad) {
                b->ensure_grad();
                for (int64_t c = 0; c < p.co; ++c) {
                    const double* g = self.grad.data() + c * N;
                    double acc = 0.0;
                    for (int64_t i = 0; i < N; ++i) acc += g[i];
                    b->grad[static_cast<size_t>(c)] += acc;
                }
            }
        }));
}

Tensor adaptive_avg_pool2d(const Tensor& tx, int out_h, int out_w) {
    auto x = detail::require(tx, "adaptive_avg_pool2d");
    if (x->shape.size() != 3) {
        throw std::invalid_argument("adaptive_avg_pool2d: expected (C,H,W), got " +
                                    shape_str(x->shape));
    }
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("adaptive_avg_pool2d: output extents must be >= 1");
    }
    const int64_t C = x->shape[0], H = x->shape[1], W = x->shape[2];
    const int64_t OH = out_h, OW = out_w;
    auto lo = [](int64_t i, int64_t in, int64_t out) { return (i * in) / out; };
    auto hi = [](int64_t i, int64_t in, int64_t out) { return ((i + 1) * in + out - 1) / out; };
    std::vector<double> out(static_cast<size_t>(C * OH * OW));
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t oy = 0; oy < OH; ++oy) {
            const int64_t y0 = lo(oy, H, OH), y1 = hi(oy, H, OH);
            for (int64_t ox = 0; ox < OW; ++ox) {
                const int64_t x0 = lo(ox, W, OW), x1 = hi(ox, W, OW);
                double acc = 0.0;
                for (int64_t iy = y0; iy < y1; ++iy) {
                    for (int64_t ix = x0; ix < x1; ++ix) acc += x->value[(c * H + iy) * W + ix];
                }
                out[(c * OH + oy) * OW + ox] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
            }
        }
    }
    return Tensor(detail::make_op(
        "adaptive_avg_pool2d", {C, OH, OW}, std::move(out), {x},
        [x, C, H, W, OH, OW, lo, hi](Node& self) {
            x->ensure_grad();
            for (int64_t c = 0; c < C; ++c) {
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t y0 = lo(oy, H, OH), y1 = hi(oy, H, OH);
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const int64_t x0 = lo(ox, W, OW), x1 = hi(ox, W, OW);
                        const double g = self.grad[(c * OH + oy) * OW + ox] /
                                         static_cast<double>((y1 - y0) * (x1 - x0));
                        for (int64_t iy = y0; iy < y1; ++iy) {
                            for (int64_t ix = x0; ix < x1; ++ix) {
                                x->grad[(c * H + iy) * W + ix] += g;
                            }
                        }
                    }
                }
            }
        }));
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                           std::vector<Tensor> inputs, double step,
                           std::vector<std::string> names) {
    if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");
    auto eval = [&]() {
        Tensor y = fn(inputs);
        if (y.numel() != 1) {
            throw std::invalid_argument("grad_check: function output of shape " +
                                        shape_str(y.shape()) + " is not a scalar");
        }
        return y;
    };
    for (auto& t : inputs) t.zero_grad();
    Tensor y = eval();
    y.backward();
    // Cancellation noise in (f(x+h)-f(x-h)) scales with |f|, so coordinates
    // with gradients below ~1e-6*|f| are beneath what central differences can
    // resolve; the error floor absorbs them.
    const double floor = 1e-6 * std::max(1.0, std::abs(y.item()));

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs) {
        if (t.has_grad()) {
            auto g = t.grad();
            analytic.emplace_back(g.begin(), g.end());
        } else {
            analytic.emplace_back(t.numel(), 0.0);
        }
    }

    GradCheckReport report;
    for (size_t i = 0; i < inputs.size(); ++i) {
        GradCheckEntry entry;
        entry.name = i < names.size() ? names[i] : "input" + std::to_string(i);
        auto vals = inputs[i].raw_data();
        for (size_t k = 0; k < vals.size(); ++k) {
            const double orig = vals[k];
            vals[k] = orig + step;
            const double fp = eval().item();
            vals[k] = orig - step;
            const double fm = eval().item();
            vals[k] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[i][k];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            ++entry.coords_checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.inputs.push_back(std::move(entry));
    }
    return report;
}

}  // namespace hvla
