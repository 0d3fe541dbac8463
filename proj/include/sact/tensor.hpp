#pragma once

// Dense f64 tensor engine with define-by-run reverse-mode autodiff.
// A Tape records primitive ops in execution order (which is topological);
// backward() walks the record in reverse, visiting each node exactly once.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace sact {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

namespace detail {

struct TensorData {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // allocated lazily by the tape

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<TensorData>;

}  // namespace detail

class Tensor {
public:
    Tensor() : d_(std::make_shared<detail::TensorData>()) {}

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : d_(std::make_shared<detail::TensorData>()) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                        std::to_string(values.size()) + " values");
        d_->shape = std::move(shape);
        d_->values = std::move(values);
        d_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor ones(Shape shape) {
        return full(std::move(shape), 1.0);
    }
    static Tensor full(Shape shape, double v) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }
    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
    std::size_t numel() const { return d_->values.size(); }

    std::vector<double>& values() { return d_->values; }
    const std::vector<double>& values() const { return d_->values; }

    double operator()(std::size_t i) const { return d_->values[i]; }
    double& operator()(std::size_t i) { return d_->values[i]; }
    double at2(std::size_t r, std::size_t c) const {
        return d_->values[r * d_->shape[1] + c];
    }
    double& at2(std::size_t r, std::size_t c) {
        return d_->values[r * d_->shape[1] + c];
    }

    double item() const {
        if (numel() != 1)
            throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
        return d_->values[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        d_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return d_->grad.size() == d_->values.size(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw std::runtime_error("grad: not populated; run backward() first");
        return d_->grad;
    }
    std::vector<double>& grad_mutable() {
        d_->ensure_grad();
        return d_->grad;
    }

    // Shares no tape state: a plain value copy with requires_grad off.
    Tensor detach() const { return Tensor(d_->shape, d_->values, false); }

    detail::NodePtr node() const { return d_; }

private:
    detail::NodePtr d_;
};

class Tape {
public:
    Tape() { stack().push_back(this); }
    ~Tape() { stack().pop_back(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return stack().empty() ? nullptr : stack().back(); }

    void record(std::vector<detail::NodePtr> nodes, std::function<void()> backward_fn) {
        ops_.push_back({std::move(nodes), std::move(backward_fn)});
    }

    std::size_t size() const { return ops_.size(); }

    // Populates grad = d(loss)/d(tensor) on every tensor touched by this
    // tape; grads are reset at entry, not accumulated across calls.
    void backward(const Tensor& loss) {
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(loss.shape()));
        std::unordered_set<detail::TensorData*> seen;
        for (auto& op : ops_) {
            for (auto& n : op.nodes) {
                if (seen.insert(n.get()).second) {
                    n->grad.assign(n->values.size(), 0.0);
                }
            }
        }
        loss.node()->ensure_grad();
        if (!seen.count(loss.node().get())) loss.node()->grad.assign(1, 0.0);
        loss.node()->grad[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->fn();
    }

private:
    struct OpRecord {
        std::vector<detail::NodePtr> nodes;  // inputs then output
        std::function<void()> fn;
    };
    std::vector<OpRecord> ops_;

    static std::vector<Tape*>& stack() {
        thread_local std::vector<Tape*> s;
        return s;
    }
};

inline void backward(const Tensor& loss) {
    if (!Tape::active()) throw std::runtime_error("backward: no active tape");
    Tape::active()->backward(loss);
}

namespace detail {

inline bool taping2(const Tensor& a, const Tensor& b) {
    return Tape::active() && (a.requires_grad() || b.requires_grad());
}
inline bool taping1(const Tensor& a) { return Tape::active() && a.requires_grad(); }

// Broadcast of b onto a: identical shapes, b scalar, or b's shape equal to a
// trailing suffix of a's shape. Anything else is a shape error.
struct BroadcastPlan {
    std::size_t outer;  // leading repetitions of b
    std::size_t inner;  // numel of b
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
    std::size_t an = shape_numel(a), bn = shape_numel(b);
    if (a == b) return {1, an};
    if (bn == 1) return {an, 1};
    if (b.size() <= a.size() &&
        std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
        return {an / bn, bn};
    }
    throw std::invalid_argument(std::string(op) + ": shapes not compatible: " + shape_str(a) +
                                " vs " + shape_str(b));
}

// Lane decomposition for axis-wise ops: index = (o*len + t)*inner + i.
struct AxisPlan {
    std::size_t outer, len, inner;
};

inline AxisPlan axis_plan(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size())
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(s));
    AxisPlan p{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) p.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) p.inner *= s[i];
    return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (with scalar / trailing-axis broadcast of b onto a)
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, BwdA bwd_a,
                 BwdB bwd_b) {
    auto plan = broadcast_plan(a.shape(), b.shape(), name);
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t o = 0; o < plan.outer; ++o)
        for (std::size_t i = 0; i < plan.inner; ++i) {
            std::size_t ia = o * plan.inner + i;
            out[ia] = fwd(av[ia], bv[i]);
        }
    Tensor res(a.shape(), std::move(out));
    if (taping2(a, b)) {
        res.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = res.node();
        Tape::active()->record({an, bn, on}, [an, bn, on, plan, bwd_a, bwd_b] {
            for (std::size_t o = 0; o < plan.outer; ++o)
                for (std::size_t i = 0; i < plan.inner; ++i) {
                    std::size_t ia = o * plan.inner + i;
                    double g = on->grad[ia];
                    if (an->requires_grad) an->grad[ia] += g * bwd_a(an->values[ia], bn->values[i]);
                    if (bn->requires_grad) bn->grad[i] += g * bwd_b(an->values[ia], bn->values[i]);
                }
        });
    }
    return res;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    for (double y : b.values())
        if (y == 0.0) throw std::invalid_argument("div: divisor contains zero");
    return detail::binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    Tensor res(a.shape(), std::move(out));
    if (taping1(a)) {
        res.set_requires_grad(true);
        auto an = a.node(), on = res.node();
        Tape::active()->record({an, on}, [an, on, bwd] {
            for (std::size_t i = 0; i < an->values.size(); ++i)
                an->grad[i] += on->grad[i] * bwd(an->values[i], on->values[i]);
        });
    }
    return res;
}

}  // namespace detail

inline Tensor scale(const Tensor& a, double c) {
    return detail::unary_op(
        a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    return detail::unary_op(
        a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& a) {
    for (double x : a.values())
        if (x > 700.0) throw std::invalid_argument("exp: input too large, would overflow");
    return detail::unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    for (double x : a.values())
        if (x <= 0.0) throw std::invalid_argument("log: non-positive input");
    return detail::unary_op(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt(const Tensor& a) {
    for (double x : a.values())
        if (x < 0.0) throw std::invalid_argument("sqrt: negative input");
    return detail::unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / (y == 0.0 ? 1e-300 : y); });
}

inline Tensor clamp(const Tensor& a, double lo, double hi) {
    return detail::unary_op(
        a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// Smooth-L1 kernel: 0.5 x^2 inside |x| <= 1, |x| - 0.5 outside.
inline Tensor huber(const Tensor& a) {
    return detail::unary_op(
        a,
        [](double x) { return std::abs(x) <= 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; },
        [](double x, double) { return std::abs(x) <= 1.0 ? x : (x > 0 ? 1.0 : -1.0); });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: expected 2-d tensors, got " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data() + p * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    Tensor res(Shape{m, n}, std::move(out));
    if (detail::taping2(a, b)) {
        res.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = res.node();
        Tape::active()->record({an, bn, on}, [an, bn, on, m, k, n] {
            const auto& g = on->grad;
            if (an->requires_grad) {
                // dA = dC . B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* grow = g.data() + i * n;
                        const double* brow = bn->values.data() + p * n;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        an->grad[i * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                // dB = A^T . dC
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = an->values[i * k + p];
                        if (aip == 0.0) continue;
                        const double* grow = g.data() + i * n;
                        double* brow = bn->grad.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
                    }
            }
        });
    }
    return res;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2)
        throw std::invalid_argument("transpose: expected 2-d tensor, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    const auto& av = a.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    Tensor res(Shape{n, m}, std::move(out));
    if (detail::taping1(a)) {
        res.set_requires_grad(true);
        auto an = a.node(), on = res.node();
        Tape::active()->record({an, on}, [an, on, m, n] {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[j * m + i];
        });
    }
    return res;
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(new_shape));
    Tensor res(std::move(new_shape), a.values());
    if (detail::taping1(a)) {
        res.set_requires_grad(true);
        auto an = a.node(), on = res.node();
        Tape::active()->record({an, on}, [an, on] {
            for (std::size_t i = 0; i < an->values.size(); ++i) an->grad[i] += on->grad[i];
        });
    }
    return res;
}

// ---------------------------------------------------------------------------
// Softmax family (axis-wise, numerically stable via max subtraction)
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& a, std::size_t axis) {
    auto p = detail::axis_plan(a.shape(), axis, "softmax");
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t o = 0; o < p.outer; ++o)
        for (std::size_t i = 0; i < p.inner; ++i) {
            double mx = -HUGE_VAL;
            for (std::size_t t = 0; t < p.len; ++t)
                mx = std::max(mx, av[(o * p.len + t) * p.inner + i]);
            double sum = 0.0;
            for (std::size_t t = 0; t < p.len; ++t) {
                std::size_t ix = (o * p.len + t) * p.inner + i;
                out[ix] = std::exp(av[ix] - mx);
                sum += out[ix];
            }
            for (std::size_t t = 0; t < p.len; ++t) out[(o * p.len + t) * p.inner + i] /= sum;
        }
    Tensor res(a.shape(), std::move(out));
    if (detail::taping1(a)) {
        res.set_requires_grad(true);
        auto an = a.node(), on = res.node();
        Tape::active()->record({an, on}, [an, on, p] {
            for (std::size_t o = 0; o < p.outer; ++o)
                for (std::size_t i = 0; i < p.inner; ++i) {
                    double dot = 0.0;
                    for (std::size_t t = 0; t < p.len; ++t) {
                        std::size_t ix = (o * p.len + t) * p.inner + i;
                        dot += on->grad[ix] * on->values[ix];
                    }
                    for (std::size_t t = 0; t < p.len; ++t) {
                        std::size_t ix = (o * p.len + t) * p.inner + i;
                        an->grad[ix] += on->values[ix] * (on->grad[ix] - dot);
                    }
                }
        });
    }
    return res;
}

inline Tensor log_softmax(const Tensor& a, std::size_t axis) {
    auto p = detail::axis_plan(a.shape(), axis, "log_softmax");
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t o = 0; o < p.outer; ++o)
        for (std::size_t i = 0; i < p.inner; ++i) {
            double mx = -HUGE_VAL;
            for (std::size_t t = 0; t < p.len; ++t)
                mx = std::max(mx, av[(o * p.len + t) * p.inner + i]);
            double sum = 0.0;
            for (std::size_t t = 0; t < p.len; ++t)
                sum += std::exp(av[(o * p.len + t) * p.inner + i] - mx);
            double lse = mx + std::log(sum);
            for (std::size_t t = 0; t < p.len; ++t) {
                std::size_t ix = (o * p.len + t) * p.inner + i;
                out[ix] = av[ix] - lse;
            }
        }
    Tensor res(a.shape(), std::move(out));
    if (detail::taping1(a)) {
        res.set_requires_grad(true);
        auto an = a.node(), on = res.node();
        Tape::active()->record({an, on}, [an, on, p] {
            for (std::size_t o = 0; o < p.outer; ++o)
                for (std::size_t i = 0; i < p.inner; ++i) {
                    double gsum = 0.0;
                    for (std::size_t t = 0; t < p.len; ++t)
                        gsum += on->grad[(o * p.len + t) * p.inner + i];
                    for (std::size_t t = 0; t < p.len; ++t) {
                        std::size_t ix = (o * p.len + t) * p.inner + i;
                        an->grad[ix] += on->grad[ix] - std::exp(on->values[ix]) * gsum;
                    }
                }
        });
    }
    return res;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    Tensor res(Shape{}, {s});
    if (detail::taping1(a)) {
        res.set_requires_grad(true);
        auto an = a.node(), on = res.node();
        Tape::active()->record({an, on}, [an, on] {
            for (std::size_t i = 0; i < an->values.size(); ++i) an->grad[i] += on->grad[0];
        });
    }
    return res;
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

namespace detail {
inline Shape drop_axis(const Shape& s, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out.push_back(s[i]);
    return out;
}
}  // namespace detail

inline Tensor mean_over_axis(const Tensor& a, std::size_t axis) {
    auto p = detail::axis_plan(a.shape(), axis, "mean_over_axis");
    std::vector<double> out(p.outer * p.inner, 0.0);
    const auto& av = a.values();
    for (std::size_t o = 0; o < p.outer; ++o)
        for (std::size_t t = 0; t < p.len; ++t)
            for (std::size_t i = 0; i < p.inner; ++i)
                out[o * p.inner + i] += av[(o * p.len + t) * p.inner + i];
    const double inv = 1.0 / static_cast<double>(p.len);
    for (auto& v : out) v *= inv;
    Tensor res(detail::drop_axis(a.shape(), axis), std::move(out));
    if (detail::taping1(a)) {
        res.set_requires_grad(true);
        auto an = a.node(), on = res.node();
        Tape::active()->record({an, on}, [an, on, p, inv] {
            for (std::size_t o = 0; o < p.outer; ++o)
                for (std::size_t t = 0; t < p.len; ++t)
                    for (std::size_t i = 0; i < p.inner; ++i)
                        an->grad[(o * p.len + t) * p.inner + i] += on->grad[o * p.inner + i] * inv;
        });
    }
    return res;
}

// Max along an axis; the subgradient is routed to the first max position.
inline Tensor max_over_axis(const Tensor& a, std::size_t axis) {
    auto p = detail::axis_plan(a.shape(), axis, "max_over_axis");
    std::vector<double> out(p.outer * p.inner);
    std::vector<std::size_t> arg(p.outer * p.inner);
    const auto& av = a.values();
    for (std::size_t o = 0; o < p.outer; ++o)
        for (std::size_t i = 0; i < p.inner; ++i) {
            double best = av[(o * p.len) * p.inner + i];
            std::size_t bt = 0;
            for (std::size_t t = 1; t < p.len; ++t) {
                double v = av[(o * p.len + t) * p.inner + i];
                if (v > best) {
                    best = v;
                    bt = t;
                }
            }
            out[o * p.inner + i] = best;
            arg[o * p.inner + i] = bt;
        }
    Tensor res(detail::drop_axis(a.shape(), axis), std::move(out));
    if (detail::taping1(a)) {
        res.set_requires_grad(true);
        auto an = a.node(), on = res.node();
        Tape::active()->record({an, on}, [an, on, p, arg = std::move(arg)] {
            for (std::size_t o = 0; o < p.outer; ++o)
                for (std::size_t i = 0; i < p.inner; ++i) {
                    std::size_t t = arg[o * p.inner + i];
                    an->grad[(o * p.len + t) * p.inner + i] += on->grad[o * p.inner + i];
                }
        });
    }
    return res;
}

// ---------------------------------------------------------------------------
// Concat / slice
// ---------------------------------------------------------------------------

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size())
        throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(s0));
    std::size_t axis_total = 0;
    for (const auto& t : parts) {
        const Shape& s = t.shape();
        if (s.size() != s0.size())
            throw std::invalid_argument("concat: rank mismatch: " + shape_str(s0) + " vs " +
                                        shape_str(s));
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                throw std::invalid_argument("concat: shapes disagree off the join axis: " +
                                            shape_str(s0) + " vs " + shape_str(s));
        axis_total += s[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = axis_total;
    auto p = detail::axis_plan(out_shape, axis, "concat");
    std::vector<double> out(shape_numel(out_shape));
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const auto& t : parts) {
        offsets.push_back(offset);
        std::size_t len = t.shape()[axis];
        const auto& v = t.values();
        for (std::size_t o = 0; o < p.outer; ++o)
            for (std::size_t tt = 0; tt < len; ++tt)
                for (std::size_t i = 0; i < p.inner; ++i)
                    out[(o * p.len + offset + tt) * p.inner + i] =
                        v[(o * len + tt) * p.inner + i];
        offset += len;
    }
    Tensor res(out_shape, std::move(out));
    bool any_rg = false;
    for (const auto& t : parts) any_rg |= t.requires_grad();
    if (Tape::active() && any_rg) {
        res.set_requires_grad(true);
        std::vector<detail::NodePtr> nodes;
        std::vector<std::size_t> lens;
        for (const auto& t : parts) {
            nodes.push_back(t.node());
            lens.push_back(t.shape()[axis]);
        }
        auto on = res.node();
        auto all = nodes;
        all.push_back(on);
        Tape::active()->record(all, [nodes, on, p, lens, offsets] {
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                if (!nodes[k]->requires_grad) continue;
                std::size_t len = lens[k], off = offsets[k];
                for (std::size_t o = 0; o < p.outer; ++o)
                    for (std::size_t tt = 0; tt < len; ++tt)
                        for (std::size_t i = 0; i < p.inner; ++i)
                            nodes[k]->grad[(o * len + tt) * p.inner + i] +=
                                on->grad[(o * p.len + off + tt) * p.inner + i];
            }
        });
    }
    return res;
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
    auto p = detail::axis_plan(a.shape(), axis, "slice");
    if (start + len > p.len)
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") exceeds axis extent " +
                                    std::to_string(p.len));
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    std::vector<double> out(shape_numel(out_shape));
    const auto& av = a.values();
    for (std::size_t o = 0; o < p.outer; ++o)
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t i = 0; i < p.inner; ++i)
                out[(o * len + t) * p.inner + i] = av[(o * p.len + start + t) * p.inner + i];
    Tensor res(out_shape, std::move(out));
    if (detail::taping1(a)) {
        res.set_requires_grad(true);
        auto an = a.node(), on = res.node();
        Tape::active()->record({an, on}, [an, on, p, start, len] {
            for (std::size_t o = 0; o < p.outer; ++o)
                for (std::size_t t = 0; t < len; ++t)
                    for (std::size_t i = 0; i < p.inner; ++i)
                        an->grad[(o * p.len + start + t) * p.inner + i] +=
                            on->grad[(o * len + t) * p.inner + i];
        });
    }
    return res;
}

// ---------------------------------------------------------------------------
// Structured ops used by the model
// ---------------------------------------------------------------------------

// Row-wise normalization over the last axis: (x - mean) / sqrt(var + eps).
// Affine gain/bias, when wanted, are composed outside with mul/add.
inline Tensor row_norm(const Tensor& a, double eps = 1e-5) {
    if (a.rank() < 1) throw std::invalid_argument("row_norm: rank-0 input");
    std::size_t axis = a.rank() - 1;
    auto p = detail::axis_plan(a.shape(), axis, "row_norm");
    std::vector<double> out(a.numel());
    std::vector<double> inv_std(p.outer);
    const auto& av = a.values();
    const double n = static_cast<double>(p.len);
    for (std::size_t o = 0; o < p.outer; ++o) {
        const double* row = av.data() + o * p.len;
        double m = 0.0;
        for (std::size_t t = 0; t < p.len; ++t) m += row[t];
        m /= n;
        double var = 0.0;
        for (std::size_t t = 0; t < p.len; ++t) var += (row[t] - m) * (row[t] - m);
        var /= n;
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[o] = is;
        for (std::size_t t = 0; t < p.len; ++t) out[o * p.len + t] = (row[t] - m) * is;
    }
    Tensor res(a.shape(), std::move(out));
    if (detail::taping1(a)) {
        res.set_requires_grad(true);
        auto an = a.node(), on = res.node();
        Tape::active()->record({an, on}, [an, on, p, n, inv_std = std::move(inv_std)] {
            for (std::size_t o = 0; o < p.outer; ++o) {
                const double* y = on->values.data() + o * p.len;
                const double* g = on->grad.data() + o * p.len;
                double gm = 0.0, gym = 0.0;
                for (std::size_t t = 0; t < p.len; ++t) {
                    gm += g[t];
                    gym += g[t] * y[t];
                }
                gm /= n;
                gym /= n;
                double* dx = an->grad.data() + o * p.len;
                for (std::size_t t = 0; t < p.len; ++t)
                    dx[t] += inv_std[o] * (g[t] - gm - y[t] * gym);
            }
        });
    }
    return res;
}

// Scales each row of x (T x D) by the matching entry of r (length T).
inline Tensor row_scale(const Tensor& x, const Tensor& r) {
    if (x.rank() != 2 || r.rank() != 1 || r.dim(0) != x.dim(0))
        throw std::invalid_argument("row_scale: want [T,D] and [T], got " + shape_str(x.shape()) +
                                    " and " + shape_str(r.shape()));
    const std::size_t t_len = x.dim(0), d = x.dim(1);
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    const auto& rv = r.values();
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t f = 0; f < d; ++f) out[t * d + f] = xv[t * d + f] * rv[t];
    Tensor res(x.shape(), std::move(out));
    if (detail::taping2(x, r)) {
        res.set_requires_grad(true);
        auto xn = x.node(), rn = r.node(), on = res.node();
        Tape::active()->record({xn, rn, on}, [xn, rn, on, t_len, d] {
            for (std::size_t t = 0; t < t_len; ++t) {
                for (std::size_t f = 0; f < d; ++f) {
                    double g = on->grad[t * d + f];
                    if (xn->requires_grad) xn->grad[t * d + f] += g * rn->values[t];
                    if (rn->requires_grad) rn->grad[t] += g * xn->values[t * d + f];
                }
            }
        });
    }
    return res;
}

// 1-D temporal convolution with zero padding; x is [T,D], kernel [K,D],
// bias scalar; output [T].
inline Tensor conv1d_same(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    if (x.rank() != 2 || kernel.rank() != 2 || x.dim(1) != kernel.dim(1))
        throw std::invalid_argument("conv1d_same: want [T,D] and [K,D], got " +
                                    shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
    if (bias.numel() != 1) throw std::invalid_argument("conv1d_same: bias must be scalar");
    const std::size_t t_len = x.dim(0), d = x.dim(1), k_len = kernel.dim(0);
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k_len / 2);
    std::vector<double> out(t_len, bias.values()[0]);
    const auto& xv = x.values();
    const auto& kv = kernel.values();
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t j = 0; j < k_len; ++j) {
            std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - off;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
            const double* xrow = xv.data() + static_cast<std::size_t>(src) * d;
            const double* krow = kv.data() + j * d;
            double acc = 0.0;
            for (std::size_t f = 0; f < d; ++f) acc += xrow[f] * krow[f];
            out[t] += acc;
        }
    Tensor res(Shape{t_len}, std::move(out));
    if (Tape::active() &&
        (x.requires_grad() || kernel.requires_grad() || bias.requires_grad())) {
        res.set_requires_grad(true);
        auto xn = x.node(), kn = kernel.node(), bn = bias.node(), on = res.node();
        Tape::active()->record({xn, kn, bn, on}, [xn, kn, bn, on, t_len, d, k_len, off] {
            for (std::size_t t = 0; t < t_len; ++t) {
                const double g = on->grad[t];
                if (g == 0.0) continue;
                if (bn->requires_grad) bn->grad[0] += g;
                for (std::size_t j = 0; j < k_len; ++j) {
                    std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - off;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
                    std::size_t s = static_cast<std::size_t>(src);
                    for (std::size_t f = 0; f < d; ++f) {
                        if (kn->requires_grad) kn->grad[j * d + f] += g * xn->values[s * d + f];
                        if (xn->requires_grad) xn->grad[s * d + f] += g * kn->values[j * d + f];
                    }
                }
            }
        });
    }
    return res;
}

// Row gather (embedding lookup): table [V,D], ids length n -> [n,D].
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2)
        throw std::invalid_argument("gather_rows: table must be 2-d, got " +
                                    shape_str(table.shape()));
    const std::size_t v = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
            throw std::invalid_argument("gather_rows: id " + std::to_string(ids[i]) +
                                        " out of range for table with " + std::to_string(v) +
                                        " rows");
        std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * d, d,
                    out.data() + i * d);
    }
    Tensor res(Shape{ids.size(), d}, std::move(out));
    if (detail::taping1(table)) {
        res.set_requires_grad(true);
        auto tn = table.node(), on = res.node();
        Tape::active()->record({tn, on}, [tn, on, ids, d] {
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t f = 0; f < d; ++f)
                    tn->grad[static_cast<std::size_t>(ids[i]) * d + f] += on->grad[i * d + f];
        });
    }
    return res;
}

// Picks one column per row: x [n,m], cols length n -> [n].
inline Tensor pick(const Tensor& x, const std::vector<int>& cols) {
    if (x.rank() != 2 || cols.size() != x.dim(0))
        throw std::invalid_argument("pick: want [n,m] and n indices");
    const std::size_t m = x.dim(1);
    std::vector<double> out(cols.size());
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= m)
            throw std::invalid_argument("pick: column " + std::to_string(cols[i]) +
                                        " out of range");
        out[i] = x.values()[i * m + static_cast<std::size_t>(cols[i])];
    }
    Tensor res(Shape{cols.size()}, std::move(out));
    if (detail::taping1(x)) {
        res.set_requires_grad(true);
        auto xn = x.node(), on = res.node();
        Tape::active()->record({xn, on}, [xn, on, cols, m] {
            for (std::size_t i = 0; i < cols.size(); ++i)
                xn->grad[i * m + static_cast<std::size_t>(cols[i])] += on->grad[i];
        });
    }
    return res;
}

// ---------------------------------------------------------------------------
// Random init helpers (callers own the engine; all determinism flows from it)
// ---------------------------------------------------------------------------

inline Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

inline Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

// Xavier-style uniform init for a [fan_in x fan_out]-shaped parameter.
inline Tensor glorot(Shape shape, std::mt19937_64& rng) {
    if (shape.size() != 2) throw std::invalid_argument("glorot: expected 2-d shape");
    double r = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    return rand_uniform(std::move(shape), rng, -r, r);
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.values())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace sact
