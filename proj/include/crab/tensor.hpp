#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crab/errors.hpp"
#include "crab/rng.hpp"

namespace crab {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    if (s.empty()) return "()";
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += 'x';
        out += std::to_string(s[i]);
    }
    return out;
}

struct TensorData {
    Shape shape;
    std::vector<double> value;  // row-major
    std::vector<double> grad;   // empty until backward needs it
    bool requires_grad = false;
    bool op_output = false;  // produced by a taped operation
};

// Dense rank-1..3 tensor of doubles. Value-semantics handle: copying a Tensor
// copies the handle, clone() copies the storage. Once an operation has
// produced a tensor its values are treated as immutable; only optimizer
// updates between batches write into leaf tensors.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : d_(std::make_shared<TensorData>()) {
        validate_shape(shape);
        d_->shape = std::move(shape);
        d_->value.assign(count(d_->shape), fill);
        d_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : d_(std::make_shared<TensorData>()) {
        validate_shape(shape);
        if (values.size() != count(shape))
            throw DimensionError("tensor: " + std::to_string(values.size()) +
                                 " values do not fill shape " + shape_str(shape));
        d_->shape = std::move(shape);
        d_->value = std::move(values);
        d_->requires_grad = requires_grad;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor row(std::initializer_list<double> xs) {
        return Tensor({xs.size()}, std::vector<double>(xs));
    }

    static Tensor column(std::initializer_list<double> xs) {
        return Tensor({xs.size(), 1}, std::vector<double>(xs));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::size_t r = rows.size();
        if (r == 0) throw DimensionError("tensor: matrix needs at least one row");
        std::size_t c = rows.begin()->size();
        std::vector<double> v;
        v.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("tensor: ragged matrix rows");
            v.insert(v.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(v));
    }

    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                          bool requires_grad = false) {
        Tensor t(std::move(shape), 0.0, requires_grad);
        for (double& x : t.d_->value) x = rng.uniform(lo, hi);
        return t;
    }

    // Uniform in +-sqrt(6 / (rows + cols)), marked trainable.
    static Tensor xavier(std::size_t rows, std::size_t cols, Rng& rng) {
        double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
        return uniform({rows, cols}, -limit, limit, rng, true);
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d().shape; }
    std::size_t rank() const { return d().shape.size(); }
    std::size_t numel() const { return d().value.size(); }
    std::size_t rows() const { return d().shape.at(0); }
    std::size_t cols() const { return rank() >= 2 ? d().shape[1] : 1; }

    double at(std::size_t i) const { return d().value.at(i); }
    double& at(std::size_t i) { return d().value.at(i); }
    double operator()(std::size_t r, std::size_t c) const {
        return d().value.at(r * cols() + c);
    }
    double& operator()(std::size_t r, std::size_t c) {
        return d().value.at(r * cols() + c);
    }
    double item() const {
        if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
        return d().value[0];
    }

    std::vector<double>& values() { return d().value; }
    const std::vector<double>& values() const { return d().value; }

    bool requires_grad() const { return d().requires_grad; }
    bool has_grad() const { return !d().grad.empty(); }
    const std::vector<double>& grad() const {
        if (d().grad.empty()) throw ContractError("grad: no gradient has been computed");
        return d().grad;
    }
    double grad_at(std::size_t i) const { return grad().at(i); }

    void zero_grad() { d().grad.assign(d().value.size(), 0.0); }
    void clear_grad() { d().grad.clear(); }

    Tensor clone() const {
        Tensor t;
        t.d_ = std::make_shared<TensorData>();
        t.d_->shape = d().shape;
        t.d_->value = d().value;
        t.d_->requires_grad = d().requires_grad;
        return t;
    }

    std::shared_ptr<TensorData> node() const { return d_; }

private:
    TensorData& d() const {
        if (!d_) throw ContractError("tensor: use of an undefined tensor");
        return *d_;
    }

    static std::size_t count(const Shape& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return n;
    }

    static void validate_shape(const Shape& s) {
        if (s.empty() || s.size() > 3)
            throw DimensionError("tensor: rank must be 1..3, got shape " + shape_str(s));
        for (std::size_t e : s)
            if (e == 0) throw DimensionError("tensor: zero extent in shape " + shape_str(s));
    }

    std::shared_ptr<TensorData> d_;
};

namespace detail {

// Gradient sink for an operation input. Constants that are not on any
// gradient path get none.
inline std::vector<double>* grad_dst(TensorData& t) {
    if (!t.op_output && !t.requires_grad) return nullptr;
    if (t.grad.empty()) t.grad.assign(t.value.size(), 0.0);
    return &t.grad;
}

}  // namespace detail

// Ordered record of executed operations. Operations append themselves in
// execution order, which is a valid topological order, so the backward pass
// is a single reverse sweep visiting each record exactly once. A tape and the
// tensors it references are a single-threaded unit of work.
class Tape {
public:
    std::size_t size() const { return nodes_.size(); }

    void record(std::vector<std::shared_ptr<TensorData>> inputs,
                std::shared_ptr<TensorData> output, std::function<void()> back) {
        output->op_output = true;
        outputs_.insert(output.get());
        nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(back)});
    }

    // Accumulates d(loss)/d(t) into the grad of every requires_grad tensor
    // reachable on this tape. Intermediate grads are reset on every call, so
    // repeated calls without zeroing leaf grads accumulate.
    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.numel() != 1)
            throw ContractError("backward: loss must be a scalar tensor");
        TensorData* target = loss.node().get();
        if (outputs_.find(target) == outputs_.end())
            throw ContractError("backward: loss was not produced on this tape");
        for (Node& n : nodes_) n.output->grad.assign(n.output->value.size(), 0.0);
        for (Node& n : nodes_)
            for (auto& in : n.inputs)
                if (in->requires_grad && !in->op_output && in->grad.empty())
                    in->grad.assign(in->value.size(), 0.0);
        target->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
    }

private:
    struct Node {
        std::vector<std::shared_ptr<TensorData>> inputs;
        std::shared_ptr<TensorData> output;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
    std::unordered_set<const TensorData*> outputs_;
};

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                             shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

}  // namespace detail

// c[i][j] = sum_k a[i][k] * b[k][j]
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
    Tensor out({p, r});
    {
        const auto& av = a.values();
        const auto& bv = b.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t k = 0; k < q; ++k) {
                const double aik = av[i * q + k];
                for (std::size_t j = 0; j < r; ++j) ov[i * r + j] += aik * bv[k * r + j];
            }
    }
    auto ad = a.node(), bd = b.node(), od = out.node();
    tape.record({ad, bd}, od, [ad, bd, od, p, q, r] {
        const auto& go = od->grad;
        if (auto* ga = detail::grad_dst(*ad)) {  // dA += dC * B^T
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < r; ++j) {
                    const double g = go[i * r + j];
                    for (std::size_t k = 0; k < q; ++k) (*ga)[i * q + k] += g * bd->value[k * r + j];
                }
        }
        if (auto* gb = detail::grad_dst(*bd)) {  // dB += A^T * dC
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t k = 0; k < q; ++k) {
                    const double aik = ad->value[i * q + k];
                    for (std::size_t j = 0; j < r; ++j) (*gb)[k * r + j] += aik * go[i * r + j];
                }
        }
    });
    return out;
}

inline Tensor transpose(Tape& tape, const Tensor& x) {
    detail::require_rank2(x, "transpose");
    const std::size_t p = x.rows(), q = x.cols();
    Tensor out({q, p});
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) ov[j * p + i] = xv[i * q + j];
    }
    auto xd = x.node(), od = out.node();
    tape.record({xd}, od, [xd, od, p, q] {
        if (auto* gx = detail::grad_dst(*xd)) {
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j) (*gx)[i * q + j] += od->grad[j * p + i];
        }
    });
    return out;
}

// Column-axis concatenation; part i occupies columns at offset sum_{j<i} q_j.
inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat: empty part list");
    detail::require_rank2(parts[0], "concat");
    const std::size_t p = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& t : parts) {
        detail::require_rank2(t, "concat");
        if (t.rows() != p)
            throw DimensionError("concat: row extents differ: " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(t.shape()));
        total += t.cols();
    }
    Tensor out({p, total});
    std::vector<std::shared_ptr<TensorData>> ins;
    std::vector<std::size_t> offsets;
    {
        auto& ov = out.values();
        std::size_t off = 0;
        for (const Tensor& t : parts) {
            const std::size_t q = t.cols();
            const auto& tv = t.values();
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j) ov[i * total + off + j] = tv[i * q + j];
            ins.push_back(t.node());
            offsets.push_back(off);
            off += q;
        }
    }
    auto od = out.node();
    tape.record(ins, od, [ins, offsets, od, p, total] {
        for (std::size_t pi = 0; pi < ins.size(); ++pi) {
            auto* g = detail::grad_dst(*ins[pi]);
            if (!g) continue;
            const std::size_t q = ins[pi]->shape[1];
            const std::size_t off = offsets[pi];
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j) (*g)[i * q + j] += od->grad[i * total + off + j];
        }
    });
    return out;
}

// Columns [c0, c1) of x.
inline Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t c0, std::size_t c1) {
    detail::require_rank2(x, "slice_cols");
    if (c0 >= c1 || c1 > x.cols())
        throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") invalid for shape " + shape_str(x.shape()));
    const std::size_t p = x.rows(), q = x.cols(), w = c1 - c0;
    Tensor out({p, w});
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < w; ++j) ov[i * w + j] = xv[i * q + c0 + j];
    }
    auto xd = x.node(), od = out.node();
    tape.record({xd}, od, [xd, od, p, q, w, c0] {
        if (auto* gx = detail::grad_dst(*xd)) {
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < w; ++j) (*gx)[i * q + c0 + j] += od->grad[i * w + j];
        }
    });
    return out;
}

inline std::vector<Tensor> split_cols(Tape& tape, const Tensor& x,
                                      const std::vector<std::size_t>& widths) {
    std::size_t total = 0;
    for (std::size_t w : widths) total += w;
    if (total != x.cols())
        throw DimensionError("split_cols: widths sum to " + std::to_string(total) +
                             " but input has shape " + shape_str(x.shape()));
    std::vector<Tensor> parts;
    std::size_t off = 0;
    for (std::size_t w : widths) {
        parts.push_back(slice_cols(tape, x, off, off + w));
        off += w;
    }
    return parts;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out(a.shape());
    {
        const auto& av = a.values();
        const auto& bv = b.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    }
    auto ad = a.node(), bd = b.node(), od = out.node();
    tape.record({ad, bd}, od, [ad, bd, od] {
        if (auto* ga = detail::grad_dst(*ad))
            for (std::size_t i = 0; i < od->grad.size(); ++i) (*ga)[i] += od->grad[i];
        if (auto* gb = detail::grad_dst(*bd))
            for (std::size_t i = 0; i < od->grad.size(); ++i) (*gb)[i] += od->grad[i];
    });
    return out;
}

// y[i][j] = x[i][j] + bias[j]; the only broadcast in the library.
inline Tensor add_bias_row(Tape& tape, const Tensor& x, const Tensor& bias) {
    detail::require_rank2(x, "add_bias_row");
    if (bias.rank() != 1 || bias.numel() != x.cols())
        throw DimensionError("add_bias_row: bias shape " + shape_str(bias.shape()) +
                             " does not match columns of " + shape_str(x.shape()));
    const std::size_t p = x.rows(), q = x.cols();
    Tensor out({p, q});
    {
        const auto& xv = x.values();
        const auto& bv = bias.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) ov[i * q + j] = xv[i * q + j] + bv[j];
    }
    auto xd = x.node(), bd = bias.node(), od = out.node();
    tape.record({xd, bd}, od, [xd, bd, od, p, q] {
        if (auto* gx = detail::grad_dst(*xd))
            for (std::size_t i = 0; i < p * q; ++i) (*gx)[i] += od->grad[i];
        if (auto* gb = detail::grad_dst(*bd)) {
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j) (*gb)[j] += od->grad[i * q + j];
        }
    });
    return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    {
        const auto& av = a.values();
        const auto& bv = b.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    }
    auto ad = a.node(), bd = b.node(), od = out.node();
    tape.record({ad, bd}, od, [ad, bd, od] {
        if (auto* ga = detail::grad_dst(*ad))
            for (std::size_t i = 0; i < od->grad.size(); ++i) (*ga)[i] += od->grad[i] * bd->value[i];
        if (auto* gb = detail::grad_dst(*bd))
            for (std::size_t i = 0; i < od->grad.size(); ++i) (*gb)[i] += od->grad[i] * ad->value[i];
    });
    return out;
}

inline Tensor scale(Tape& tape, const Tensor& x, double c) {
    Tensor out(x.shape());
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = c * xv[i];
    }
    auto xd = x.node(), od = out.node();
    tape.record({xd}, od, [xd, od, c] {
        if (auto* gx = detail::grad_dst(*xd))
            for (std::size_t i = 0; i < od->grad.size(); ++i) (*gx)[i] += c * od->grad[i];
    });
    return out;
}

// y = x if x > 0 else alpha*x; subgradient alpha at x = 0.
inline Tensor leaky_relu(Tape& tape, const Tensor& x, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ContractError("leaky_relu: slope must lie in (0,1), got " + std::to_string(alpha));
    Tensor out(x.shape());
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : alpha * xv[i];
    }
    auto xd = x.node(), od = out.node();
    tape.record({xd}, od, [xd, od, alpha] {
        if (auto* gx = detail::grad_dst(*xd))
            for (std::size_t i = 0; i < od->grad.size(); ++i)
                (*gx)[i] += od->grad[i] * (xd->value[i] > 0.0 ? 1.0 : alpha);
    });
    return out;
}

// Branch-split logistic, stable for large |x|.
inline Tensor sigmoid(Tape& tape, const Tensor& x) {
    Tensor out(x.shape());
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < ov.size(); ++i) {
            const double v = xv[i];
            if (v >= 0.0) {
                ov[i] = 1.0 / (1.0 + std::exp(-v));
            } else {
                const double e = std::exp(v);
                ov[i] = e / (1.0 + e);
            }
        }
    }
    auto xd = x.node(), od = out.node();
    tape.record({xd}, od, [xd, od] {
        if (auto* gx = detail::grad_dst(*xd))
            for (std::size_t i = 0; i < od->grad.size(); ++i) {
                const double y = od->value[i];
                (*gx)[i] += od->grad[i] * y * (1.0 - y);
            }
    });
    return out;
}

// Euclidean norm over all elements; scalar output. The gradient x/|x| is
// taken as zero at the zero vector.
inline Tensor l2_norm(Tape& tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v * v;
    Tensor out = Tensor::scalar(std::sqrt(s));
    auto xd = x.node(), od = out.node();
    tape.record({xd}, od, [xd, od] {
        if (auto* gx = detail::grad_dst(*xd)) {
            const double n = od->value[0];
            if (n > 0.0) {
                const double g = od->grad[0] / n;
                for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g * xd->value[i];
            }
        }
    });
    return out;
}

// y_i = x_i - max(x) - log sum_j exp(x_j - max(x)), over all elements.
inline Tensor log_softmax(Tape& tape, const Tensor& x) {
    const auto& xv = x.values();
    double mx = xv[0];
    for (double v : xv) mx = std::max(mx, v);
    double lse = 0.0;
    for (double v : xv) lse += std::exp(v - mx);
    lse = std::log(lse);
    Tensor out(x.shape());
    {
        auto& ov = out.values();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] - mx - lse;
    }
    auto xd = x.node(), od = out.node();
    tape.record({xd}, od, [xd, od] {
        if (auto* gx = detail::grad_dst(*xd)) {
            double gsum = 0.0;
            for (double g : od->grad) gsum += g;
            for (std::size_t i = 0; i < gx->size(); ++i)
                (*gx)[i] += od->grad[i] - std::exp(od->value[i]) * gsum;
        }
    });
    return out;
}

// y = x / (s + eps) for a scalar tensor s; gradient flows into both x and s.
inline Tensor div_by_scalar(Tape& tape, const Tensor& x, const Tensor& s, double eps) {
    if (s.numel() != 1) throw DimensionError("div_by_scalar: divisor has shape " + shape_str(s.shape()));
    const double denom = s.item() + eps;
    Tensor out(x.shape());
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] / denom;
    }
    auto xd = x.node(), sd = s.node(), od = out.node();
    tape.record({xd, sd}, od, [xd, sd, od, denom] {
        if (auto* gx = detail::grad_dst(*xd))
            for (std::size_t i = 0; i < od->grad.size(); ++i) (*gx)[i] += od->grad[i] / denom;
        if (auto* gs = detail::grad_dst(*sd)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < od->grad.size(); ++i)
                acc -= od->grad[i] * xd->value[i] / (denom * denom);
            (*gs)[0] += acc;
        }
    });
    return out;
}

inline Tensor sum(Tape& tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = Tensor::scalar(s);
    auto xd = x.node(), od = out.node();
    tape.record({xd}, od, [xd, od] {
        if (auto* gx = detail::grad_dst(*xd))
            for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += od->grad[0];
    });
    return out;
}

// Gathers rows of table by id; backward scatter-adds into the table rows.
inline Tensor embed_rows(Tape& tape, const Tensor& table, const std::vector<std::size_t>& ids) {
    detail::require_rank2(table, "embed_rows");
    const std::size_t v = table.rows(), k = table.cols();
    for (std::size_t id : ids)
        if (id >= v)
            throw DataError("embed_rows: token id " + std::to_string(id) +
                            " out of range for vocabulary of " + std::to_string(v));
    if (ids.empty()) throw DimensionError("embed_rows: empty id list");
    Tensor out({ids.size(), k});
    {
        const auto& tv = table.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < k; ++j) ov[i * k + j] = tv[ids[i] * k + j];
    }
    auto td = table.node(), od = out.node();
    tape.record({td}, od, [td, od, ids, k] {
        if (auto* gt = detail::grad_dst(*td)) {
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < k; ++j) (*gt)[ids[i] * k + j] += od->grad[i * k + j];
        }
    });
    return out;
}

// Row-wise softmax over the columns where col_valid is nonzero; invalid
// columns behave as -inf logits and get probability zero.
inline Tensor masked_row_softmax(Tape& tape, const Tensor& x, const std::vector<int>& col_valid) {
    detail::require_rank2(x, "masked_row_softmax");
    const std::size_t n = x.rows(), m = x.cols();
    if (col_valid.size() != m)
        throw DimensionError("masked_row_softmax: mask of length " + std::to_string(col_valid.size()) +
                             " does not match shape " + shape_str(x.shape()));
    bool any = false;
    for (int f : col_valid) any = any || (f != 0);
    if (!any) throw ContractError("masked_row_softmax: no valid column");
    Tensor out({n, m});
    {
        const auto& xv = x.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -1e300;
            for (std::size_t j = 0; j < m; ++j)
                if (col_valid[j]) mx = std::max(mx, xv[i * m + j]);
            double z = 0.0;
            for (std::size_t j = 0; j < m; ++j)
                if (col_valid[j]) z += std::exp(xv[i * m + j] - mx);
            for (std::size_t j = 0; j < m; ++j)
                ov[i * m + j] = col_valid[j] ? std::exp(xv[i * m + j] - mx) / z : 0.0;
        }
    }
    auto xd = x.node(), od = out.node();
    tape.record({xd}, od, [xd, od, col_valid, n, m] {
        if (auto* gx = detail::grad_dst(*xd)) {
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < m; ++j) dot += od->grad[i * m + j] * od->value[i * m + j];
                for (std::size_t j = 0; j < m; ++j)
                    if (col_valid[j])
                        (*gx)[i * m + j] += od->value[i * m + j] * (od->grad[i * m + j] - dot);
            }
        }
    });
    return out;
}

// Per-row normalization to zero mean / unit variance, then y = gain*xh + bias.
inline Tensor layer_norm_rows(Tape& tape, const Tensor& x, const Tensor& gain,
                              const Tensor& bias, double eps) {
    detail::require_rank2(x, "layer_norm_rows");
    const std::size_t n = x.rows(), k = x.cols();
    if (gain.rank() != 1 || gain.numel() != k || bias.rank() != 1 || bias.numel() != k)
        throw DimensionError("layer_norm_rows: gain/bias shapes " + shape_str(gain.shape()) + "/" +
                             shape_str(bias.shape()) + " do not match columns of " +
                             shape_str(x.shape()));
    Tensor out({n, k});
    auto xhat = std::make_shared<std::vector<double>>(n * k);
    auto inv_sd = std::make_shared<std::vector<double>>(n);
    {
        const auto& xv = x.values();
        const auto& gv = gain.values();
        const auto& bv = bias.values();
        auto& ov = out.values();
        for (std::size_t i = 0; i < n; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < k; ++j) mean += xv[i * k + j];
            mean /= static_cast<double>(k);
            double var = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double d = xv[i * k + j] - mean;
                var += d * d;
            }
            var /= static_cast<double>(k);
            const double inv = 1.0 / std::sqrt(var + eps);
            (*inv_sd)[i] = inv;
            for (std::size_t j = 0; j < k; ++j) {
                const double xh = (xv[i * k + j] - mean) * inv;
                (*xhat)[i * k + j] = xh;
                ov[i * k + j] = gv[j] * xh + bv[j];
            }
        }
    }
    auto xd = x.node(), gd = gain.node(), bd = bias.node(), od = out.node();
    tape.record({xd, gd, bd}, od, [xd, gd, bd, od, xhat, inv_sd, n, k] {
        const auto& go = od->grad;
        if (auto* gb = detail::grad_dst(*bd)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) (*gb)[j] += go[i * k + j];
        }
        if (auto* gg = detail::grad_dst(*gd)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) (*gg)[j] += go[i * k + j] * (*xhat)[i * k + j];
        }
        if (auto* gx = detail::grad_dst(*xd)) {
            for (std::size_t i = 0; i < n; ++i) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    const double dxh = gd->value[j] * go[i * k + j];
                    m1 += dxh;
                    m2 += dxh * (*xhat)[i * k + j];
                }
                m1 /= static_cast<double>(k);
                m2 /= static_cast<double>(k);
                for (std::size_t j = 0; j < k; ++j) {
                    const double dxh = gd->value[j] * go[i * k + j];
                    (*gx)[i * k + j] += (*inv_sd)[i] * (dxh - m1 - (*xhat)[i * k + j] * m2);
                }
            }
        }
    });
    return out;
}

}  // namespace crab
