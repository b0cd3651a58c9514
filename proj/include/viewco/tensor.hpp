#pragma once

// Dense 2-D tensors with a recorded computation graph for reverse-mode
// differentiation. Everything is double precision and single threaded;
// tensors are immutable values whose copies share storage.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "viewco/errors.hpp"
#include "viewco/rng.hpp"

namespace viewco {

struct Tensor;

struct TapeNode {
    std::vector<Tensor> parents;
    std::function<void(const Tensor& out)> backward;
};

struct Tensor {
    int rows = 0;
    int cols = 0;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad; // lazily allocated
    bool requires_grad = false;
    std::shared_ptr<TapeNode> node; // null for leaves

    Tensor() = default;

    static Tensor zeros(int r, int c, bool rg = false) {
        Tensor t;
        t.rows = r;
        t.cols = c;
        t.data = std::make_shared<std::vector<double>>(static_cast<size_t>(r) * c, 0.0);
        t.requires_grad = rg;
        if (rg) t.ensure_grad();
        return t;
    }

    static Tensor full(int r, int c, double v, bool rg = false) {
        Tensor t = zeros(r, c, rg);
        std::fill(t.data->begin(), t.data->end(), v);
        return t;
    }

    static Tensor from(int r, int c, std::vector<double> values, bool rg = false) {
        if (static_cast<size_t>(r) * c != values.size())
            throw ShapeError("Tensor::from: value count does not match shape");
        Tensor t;
        t.rows = r;
        t.cols = c;
        t.data = std::make_shared<std::vector<double>>(std::move(values));
        t.requires_grad = rg;
        if (rg) t.ensure_grad();
        return t;
    }

    static Tensor row(std::vector<double> values, bool rg = false) {
        int n = static_cast<int>(values.size());
        return from(1, n, std::move(values), rg);
    }

    static Tensor scalar(double v, bool rg = false) { return from(1, 1, {v}, rg); }

    static Tensor randn(int r, int c, Rng& rng, double stddev = 1.0, bool rg = false) {
        Tensor t = zeros(r, c, rg);
        for (auto& x : *t.data) x = rng.normal(0.0, stddev);
        return t;
    }

    size_t numel() const { return static_cast<size_t>(rows) * cols; }

    std::vector<int> shape() const { return {rows, cols}; }

    double& at(int i, int j) { return (*data)[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return (*data)[static_cast<size_t>(i) * cols + j]; }

    double value() const {
        if (numel() != 1) throw ShapeError("value(): tensor is not scalar");
        return (*data)[0];
    }

    void ensure_grad() {
        if (!grad) grad = std::make_shared<std::vector<double>>(numel(), 0.0);
    }

    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    }

    // Leaf view of the same storage; drops the tape so no gradient flows past it.
    Tensor detach() const {
        Tensor t;
        t.rows = rows;
        t.cols = cols;
        t.data = data;
        t.requires_grad = false;
        return t;
    }
};

// ---------------------------------------------------------------------------
// grad mode

namespace detail {
inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_enabled()) { detail::grad_enabled() = false; }
    ~NoGradGuard() { detail::grad_enabled() = prev; }
};

namespace detail {

inline bool track(const Tensor& a) { return grad_enabled() && a.requires_grad; }
inline bool track(const Tensor& a, const Tensor& b) {
    return grad_enabled() && (a.requires_grad || b.requires_grad);
}

inline std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << "[" << t.rows << "x" << t.cols << "]";
    return os.str();
}

inline void check_finite(const Tensor& t, const char* op) {
    for (double v : *t.data)
        if (!std::isfinite(v))
            throw NonFiniteObjective(std::string(op) + " produced a non-finite value");
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Grad buffers are allocated before any copy of the output escapes, so every
// copy of a tracked tensor shares one accumulation buffer.
inline void attach(Tensor& out, std::vector<Tensor> parents,
                   std::function<void(const Tensor&)> backward) {
    out.requires_grad = true;
    out.ensure_grad();
    out.node = std::make_shared<TapeNode>();
    out.node->parents = std::move(parents);
    out.node->backward = std::move(backward);
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.rows, a.cols);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    detail::check_finite(out, "add");
    if (detail::track(a, b)) {
        detail::attach(out, {a, b}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            Tensor& pb = o.node->parents[1];
            const size_t m = o.numel();
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t i = 0; i < m; ++i) (*pa.grad)[i] += (*o.grad)[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t i = 0; i < m; ++i) (*pb.grad)[i] += (*o.grad)[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.rows, a.cols);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    detail::check_finite(out, "sub");
    if (detail::track(a, b)) {
        detail::attach(out, {a, b}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            Tensor& pb = o.node->parents[1];
            const size_t m = o.numel();
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t i = 0; i < m; ++i) (*pa.grad)[i] += (*o.grad)[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t i = 0; i < m; ++i) (*pb.grad)[i] -= (*o.grad)[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.rows, a.cols);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    detail::check_finite(out, "mul");
    if (detail::track(a, b)) {
        detail::attach(out, {a, b}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            Tensor& pb = o.node->parents[1];
            const size_t m = o.numel();
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t i = 0; i < m; ++i) (*pa.grad)[i] += (*o.grad)[i] * (*pb.data)[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t i = 0; i < m; ++i) (*pb.grad)[i] += (*o.grad)[i] * (*pa.data)[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.rows, a.cols);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * c;
    detail::check_finite(out, "scale");
    if (detail::track(a)) {
        detail::attach(out, {a}, [c](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            const size_t m = o.numel();
            for (size_t i = 0; i < m; ++i) (*pa.grad)[i] += (*o.grad)[i] * c;
        });
    }
    return out;
}

inline Tensor add_const(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.rows, a.cols);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + c;
    detail::check_finite(out, "add_const");
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            const size_t m = o.numel();
            for (size_t i = 0; i < m; ++i) (*pa.grad)[i] += (*o.grad)[i];
        });
    }
    return out;
}

inline Tensor vexp(const Tensor& a) {
    Tensor out = Tensor::zeros(a.rows, a.cols);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = std::exp((*a.data)[i]);
    detail::check_finite(out, "exp");
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            const size_t m = o.numel();
            for (size_t i = 0; i < m; ++i) (*pa.grad)[i] += (*o.grad)[i] * (*o.data)[i];
        });
    }
    return out;
}

inline Tensor vlog(const Tensor& a) {
    Tensor out = Tensor::zeros(a.rows, a.cols);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = std::log((*a.data)[i]);
    detail::check_finite(out, "log");
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            const size_t m = o.numel();
            for (size_t i = 0; i < m; ++i) (*pa.grad)[i] += (*o.grad)[i] / (*pa.data)[i];
        });
    }
    return out;
}

inline Tensor gelu(const Tensor& a) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
    Tensor out = Tensor::zeros(a.rows, a.cols);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) {
        double x = (*a.data)[i];
        (*out.data)[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    detail::check_finite(out, "gelu");
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            const size_t m = o.numel();
            for (size_t i = 0; i < m; ++i) {
                double x = (*pa.data)[i];
                double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                (*pa.grad)[i] += (*o.grad)[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// movement

inline Tensor transpose(const Tensor& a) {
    Tensor out = Tensor::zeros(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            for (int i = 0; i < o.rows; ++i)
                for (int j = 0; j < o.cols; ++j)
                    (*pa.grad)[static_cast<size_t>(j) * pa.cols + i] +=
                        (*o.grad)[static_cast<size_t>(i) * o.cols + j];
        });
    }
    return out;
}

inline Tensor take_row(const Tensor& a, int r) {
    if (r < 0 || r >= a.rows) throw ShapeError("take_row: row index out of range");
    Tensor out = Tensor::zeros(1, a.cols);
    for (int j = 0; j < a.cols; ++j) out.at(0, j) = a.at(r, j);
    if (detail::track(a)) {
        detail::attach(out, {a}, [r](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            for (int j = 0; j < o.cols; ++j)
                (*pa.grad)[static_cast<size_t>(r) * pa.cols + j] += (*o.grad)[j];
        });
    }
    return out;
}

inline Tensor stack_rows(const std::vector<Tensor>& items) {
    if (items.empty()) throw ShapeError("stack_rows: no rows");
    const int d = items[0].cols;
    for (const auto& t : items) {
        if (t.rows != 1 || t.cols != d) throw ShapeError("stack_rows: rows must all be 1x" + std::to_string(d));
    }
    const int n = static_cast<int>(items.size());
    Tensor out = Tensor::zeros(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = items[i].at(0, j);
    bool any = false;
    for (const auto& t : items) any = any || t.requires_grad;
    if (detail::grad_enabled() && any) {
        detail::attach(out, items, [](const Tensor& o) {
            for (int i = 0; i < o.rows; ++i) {
                Tensor& p = o.node->parents[i];
                if (!p.requires_grad) continue;
                p.ensure_grad();
                for (int j = 0; j < o.cols; ++j)
                    (*p.grad)[j] += (*o.grad)[static_cast<size_t>(i) * o.cols + j];
            }
        });
    }
    return out;
}

inline Tensor slice_cols(const Tensor& a, int start, int len) {
    if (start < 0 || len <= 0 || start + len > a.cols) throw ShapeError("slice_cols: invalid slice");
    Tensor out = Tensor::zeros(a.rows, len);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = a.at(i, start + j);
    if (detail::track(a)) {
        detail::attach(out, {a}, [start, len](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            for (int i = 0; i < o.rows; ++i)
                for (int j = 0; j < len; ++j)
                    (*pa.grad)[static_cast<size_t>(i) * pa.cols + start + j] +=
                        (*o.grad)[static_cast<size_t>(i) * o.cols + j];
        });
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& items) {
    if (items.empty()) throw ShapeError("concat_cols: no items");
    const int n = items[0].rows;
    int total = 0;
    for (const auto& t : items) {
        if (t.rows != n) throw ShapeError("concat_cols: row count mismatch");
        total += t.cols;
    }
    Tensor out = Tensor::zeros(n, total);
    int off = 0;
    for (const auto& t : items) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < t.cols; ++j) out.at(i, off + j) = t.at(i, j);
        off += t.cols;
    }
    bool any = false;
    for (const auto& t : items) any = any || t.requires_grad;
    if (detail::grad_enabled() && any) {
        detail::attach(out, items, [](const Tensor& o) {
            int off2 = 0;
            for (auto& p : o.node->parents) {
                if (p.requires_grad) {
                    p.ensure_grad();
                    for (int i = 0; i < o.rows; ++i)
                        for (int j = 0; j < p.cols; ++j)
                            (*p.grad)[static_cast<size_t>(i) * p.cols + j] +=
                                (*o.grad)[static_cast<size_t>(i) * o.cols + off2 + j];
                }
                off2 += p.cols;
            }
        });
    }
    return out;
}

inline Tensor select_cols(const Tensor& a, const std::vector<int>& idx) {
    for (int j : idx)
        if (j < 0 || j >= a.cols) throw ShapeError("select_cols: index out of range");
    Tensor out = Tensor::zeros(a.rows, static_cast<int>(idx.size()));
    for (int i = 0; i < a.rows; ++i)
        for (size_t j = 0; j < idx.size(); ++j) out.at(i, static_cast<int>(j)) = a.at(i, idx[j]);
    if (detail::track(a)) {
        detail::attach(out, {a}, [idx](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            for (int i = 0; i < o.rows; ++i)
                for (size_t j = 0; j < idx.size(); ++j)
                    (*pa.grad)[static_cast<size_t>(i) * pa.cols + idx[j]] +=
                        (*o.grad)[static_cast<size_t>(i) * o.cols + j];
        });
    }
    return out;
}

inline Tensor pick(const Tensor& a, int i, int j) {
    if (i < 0 || i >= a.rows || j < 0 || j >= a.cols) throw ShapeError("pick: index out of range");
    Tensor out = Tensor::scalar(a.at(i, j));
    if (detail::track(a)) {
        detail::attach(out, {a}, [i, j](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            (*pa.grad)[static_cast<size_t>(i) * pa.cols + j] += (*o.grad)[0];
        });
    }
    return out;
}

inline Tensor diag(const Tensor& a) {
    if (a.rows != a.cols) throw ShapeError("diag: tensor not square");
    Tensor out = Tensor::zeros(a.rows, 1);
    for (int k = 0; k < a.rows; ++k) out.at(k, 0) = a.at(k, k);
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            for (int k = 0; k < o.rows; ++k)
                (*pa.grad)[static_cast<size_t>(k) * pa.cols + k] += (*o.grad)[k];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : *a.data) s += v;
    Tensor out = Tensor::scalar(s);
    detail::check_finite(out, "sum");
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            const size_t m = pa.numel();
            for (size_t i = 0; i < m; ++i) (*pa.grad)[i] += (*o.grad)[0];
        });
    }
    return out;
}

inline Tensor mean_rows(const Tensor& a) {
    Tensor out = Tensor::zeros(1, a.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(0, j) += a.at(i, j);
    for (int j = 0; j < a.cols; ++j) out.at(0, j) /= a.rows;
    detail::check_finite(out, "mean_rows");
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            const double inv = 1.0 / pa.rows;
            for (int i = 0; i < pa.rows; ++i)
                for (int j = 0; j < pa.cols; ++j)
                    (*pa.grad)[static_cast<size_t>(i) * pa.cols + j] += (*o.grad)[j] * inv;
        });
    }
    return out;
}

inline Tensor colsum(const Tensor& a) {
    Tensor out = Tensor::zeros(1, a.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(0, j) += a.at(i, j);
    detail::check_finite(out, "colsum");
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            for (int i = 0; i < pa.rows; ++i)
                for (int j = 0; j < pa.cols; ++j)
                    (*pa.grad)[static_cast<size_t>(i) * pa.cols + j] += (*o.grad)[j];
        });
    }
    return out;
}

inline Tensor logsumexp_rows(const Tensor& a) {
    Tensor out = Tensor::zeros(a.rows, 1);
    for (int i = 0; i < a.rows; ++i) {
        double mx = a.at(i, 0);
        for (int j = 1; j < a.cols; ++j) mx = std::max(mx, a.at(i, j));
        double s = 0.0;
        for (int j = 0; j < a.cols; ++j) s += std::exp(a.at(i, j) - mx);
        out.at(i, 0) = mx + std::log(s);
    }
    detail::check_finite(out, "logsumexp_rows");
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            for (int i = 0; i < pa.rows; ++i) {
                double lse = (*o.data)[i];
                for (int j = 0; j < pa.cols; ++j)
                    (*pa.grad)[static_cast<size_t>(i) * pa.cols + j] +=
                        (*o.grad)[i] * std::exp(pa.at(i, j) - lse);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimension mismatch " + detail::shape_str(a) + " vs " +
                         detail::shape_str(b));
    Tensor out = Tensor::zeros(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int p = 0; p < a.cols; ++p) {
            const double av = a.at(i, p);
            if (av == 0.0) continue;
            for (int j = 0; j < b.cols; ++j) out.at(i, j) += av * b.at(p, j);
        }
    detail::check_finite(out, "matmul");
    if (detail::track(a, b)) {
        detail::attach(out, {a, b}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            Tensor& pb = o.node->parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (int i = 0; i < pa.rows; ++i)
                    for (int j = 0; j < o.cols; ++j) {
                        const double g = (*o.grad)[static_cast<size_t>(i) * o.cols + j];
                        if (g == 0.0) continue;
                        for (int p = 0; p < pa.cols; ++p)
                            (*pa.grad)[static_cast<size_t>(i) * pa.cols + p] += g * pb.at(p, j);
                    }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int i = 0; i < pa.rows; ++i)
                    for (int p = 0; p < pb.rows; ++p) {
                        const double av = pa.at(i, p);
                        if (av == 0.0) continue;
                        for (int j = 0; j < o.cols; ++j)
                            (*pb.grad)[static_cast<size_t>(p) * pb.cols + j] +=
                                av * (*o.grad)[static_cast<size_t>(i) * o.cols + j];
                    }
            }
        });
    }
    return out;
}

// a (m x d) times b^T (b is n x d) -> m x n
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols != b.cols)
        throw ShapeError("matmul_nt: feature dimension mismatch " + detail::shape_str(a) + " vs " +
                         detail::shape_str(b));
    Tensor out = Tensor::zeros(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.rows; ++j) {
            double s = 0.0;
            for (int t = 0; t < a.cols; ++t) s += a.at(i, t) * b.at(j, t);
            out.at(i, j) = s;
        }
    detail::check_finite(out, "matmul_nt");
    if (detail::track(a, b)) {
        detail::attach(out, {a, b}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            Tensor& pb = o.node->parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (int i = 0; i < pa.rows; ++i)
                    for (int j = 0; j < pb.rows; ++j) {
                        const double g = (*o.grad)[static_cast<size_t>(i) * o.cols + j];
                        if (g == 0.0) continue;
                        for (int t = 0; t < pa.cols; ++t)
                            (*pa.grad)[static_cast<size_t>(i) * pa.cols + t] += g * pb.at(j, t);
                    }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int i = 0; i < pa.rows; ++i)
                    for (int j = 0; j < pb.rows; ++j) {
                        const double g = (*o.grad)[static_cast<size_t>(i) * o.cols + j];
                        if (g == 0.0) continue;
                        for (int t = 0; t < pb.cols; ++t)
                            (*pb.grad)[static_cast<size_t>(j) * pb.cols + t] += g * pa.at(i, t);
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// broadcasts

inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (v.rows != 1 || v.cols != m.cols)
        throw ShapeError("add_rowvec: vector shape " + detail::shape_str(v) + " does not match " +
                         detail::shape_str(m));
    Tensor out = Tensor::zeros(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) out.at(i, j) = m.at(i, j) + v.at(0, j);
    detail::check_finite(out, "add_rowvec");
    if (detail::track(m, v)) {
        detail::attach(out, {m, v}, [](const Tensor& o) {
            Tensor& pm = o.node->parents[0];
            Tensor& pv = o.node->parents[1];
            if (pm.requires_grad) {
                pm.ensure_grad();
                const size_t n = o.numel();
                for (size_t i = 0; i < n; ++i) (*pm.grad)[i] += (*o.grad)[i];
            }
            if (pv.requires_grad) {
                pv.ensure_grad();
                for (int i = 0; i < o.rows; ++i)
                    for (int j = 0; j < o.cols; ++j)
                        (*pv.grad)[j] += (*o.grad)[static_cast<size_t>(i) * o.cols + j];
            }
        });
    }
    return out;
}

// divide row i of m by w(i, 0)
inline Tensor div_rows_by_vec(const Tensor& m, const Tensor& w) {
    if (w.cols != 1 || w.rows != m.rows)
        throw ShapeError("div_rows_by_vec: weight shape " + detail::shape_str(w) +
                         " does not match " + detail::shape_str(m));
    Tensor out = Tensor::zeros(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) out.at(i, j) = m.at(i, j) / w.at(i, 0);
    detail::check_finite(out, "div_rows_by_vec");
    if (detail::track(m, w)) {
        detail::attach(out, {m, w}, [](const Tensor& o) {
            Tensor& pm = o.node->parents[0];
            Tensor& pw = o.node->parents[1];
            if (pm.requires_grad) {
                pm.ensure_grad();
                for (int i = 0; i < o.rows; ++i)
                    for (int j = 0; j < o.cols; ++j)
                        (*pm.grad)[static_cast<size_t>(i) * o.cols + j] +=
                            (*o.grad)[static_cast<size_t>(i) * o.cols + j] / pw.at(i, 0);
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                for (int i = 0; i < o.rows; ++i) {
                    double s = 0.0;
                    for (int j = 0; j < o.cols; ++j)
                        s += (*o.grad)[static_cast<size_t>(i) * o.cols + j] * o.at(i, j);
                    (*pw.grad)[i] -= s / pw.at(i, 0);
                }
            }
        });
    }
    return out;
}

inline Tensor div_by_scalar(const Tensor& m, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("div_by_scalar: divisor must be scalar");
    const double sv = (*s.data)[0];
    Tensor out = Tensor::zeros(m.rows, m.cols);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*m.data)[i] / sv;
    detail::check_finite(out, "div_by_scalar");
    if (detail::track(m, s)) {
        detail::attach(out, {m, s}, [](const Tensor& o) {
            Tensor& pm = o.node->parents[0];
            Tensor& ps = o.node->parents[1];
            const double d = (*ps.data)[0];
            const size_t n2 = o.numel();
            if (pm.requires_grad) {
                pm.ensure_grad();
                for (size_t i = 0; i < n2; ++i) (*pm.grad)[i] += (*o.grad)[i] / d;
            }
            if (ps.requires_grad) {
                ps.ensure_grad();
                double acc = 0.0;
                for (size_t i = 0; i < n2; ++i) acc += (*o.grad)[i] * (*o.data)[i];
                (*ps.grad)[0] -= acc / d;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// fused row kernels

// Row-wise softmax, stabilized by max subtraction.
inline Tensor softmax_rows(const Tensor& a) {
    Tensor out = Tensor::zeros(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        double mx = a.at(i, 0);
        for (int j = 1; j < a.cols; ++j) mx = std::max(mx, a.at(i, j));
        double s = 0.0;
        for (int j = 0; j < a.cols; ++j) {
            double e = std::exp(a.at(i, j) - mx);
            out.at(i, j) = e;
            s += e;
        }
        for (int j = 0; j < a.cols; ++j) out.at(i, j) /= s;
    }
    detail::check_finite(out, "softmax");
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            for (int i = 0; i < o.rows; ++i) {
                double dot = 0.0;
                for (int j = 0; j < o.cols; ++j)
                    dot += (*o.grad)[static_cast<size_t>(i) * o.cols + j] * o.at(i, j);
                for (int j = 0; j < o.cols; ++j)
                    (*pa.grad)[static_cast<size_t>(i) * o.cols + j] +=
                        o.at(i, j) * ((*o.grad)[static_cast<size_t>(i) * o.cols + j] - dot);
            }
        });
    }
    return out;
}

// softmax(x / temperature) per row
inline Tensor softmax(const Tensor& a, double temperature) {
    if (!(temperature > 0.0)) throw InvalidTemperature("temperature must be positive");
    return softmax_rows(scale(a, 1.0 / temperature));
}

inline Tensor l2_normalize(const Tensor& a, double eps = 1e-12) {
    Tensor out = Tensor::zeros(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < a.cols; ++j) s += a.at(i, j) * a.at(i, j);
        double n = std::sqrt(s);
        if (n <= eps) throw DegenerateVector("row " + std::to_string(i) + " has norm <= eps");
        for (int j = 0; j < a.cols; ++j) out.at(i, j) = a.at(i, j) / n;
    }
    detail::check_finite(out, "l2_normalize");
    if (detail::track(a)) {
        detail::attach(out, {a}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            for (int i = 0; i < o.rows; ++i) {
                double s = 0.0;
                for (int j = 0; j < o.cols; ++j) s += pa.at(i, j) * pa.at(i, j);
                double n = std::sqrt(s);
                double dot = 0.0;
                for (int j = 0; j < o.cols; ++j)
                    dot += (*o.grad)[static_cast<size_t>(i) * o.cols + j] * o.at(i, j);
                for (int j = 0; j < o.cols; ++j)
                    (*pa.grad)[static_cast<size_t>(i) * o.cols + j] +=
                        ((*o.grad)[static_cast<size_t>(i) * o.cols + j] - dot * o.at(i, j)) / n;
            }
        });
    }
    return out;
}

// Cosine similarity matrix for row-wise l2-normalized inputs.
inline Tensor similarity_matrix(const Tensor& a, const Tensor& b) {
    return matmul_nt(a, b);
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (gain.rows != 1 || gain.cols != x.cols || bias.rows != 1 || bias.cols != x.cols)
        throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(x.cols));
    Tensor out = Tensor::zeros(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double mu = 0.0;
        for (int j = 0; j < x.cols; ++j) mu += x.at(i, j);
        mu /= x.cols;
        double var = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            double d = x.at(i, j) - mu;
            var += d * d;
        }
        var /= x.cols;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < x.cols; ++j)
            out.at(i, j) = (x.at(i, j) - mu) * inv * gain.at(0, j) + bias.at(0, j);
    }
    detail::check_finite(out, "layer_norm");
    if (detail::grad_enabled() && (x.requires_grad || gain.requires_grad || bias.requires_grad)) {
        detail::attach(out, {x, gain, bias}, [eps](const Tensor& o) {
            Tensor& px = o.node->parents[0];
            Tensor& pg = o.node->parents[1];
            Tensor& pb = o.node->parents[2];
            const int d = px.cols;
            std::vector<double> xhat(d), dxhat(d);
            for (int i = 0; i < px.rows; ++i) {
                double mu = 0.0;
                for (int j = 0; j < d; ++j) mu += px.at(i, j);
                mu /= d;
                double var = 0.0;
                for (int j = 0; j < d; ++j) {
                    double dv = px.at(i, j) - mu;
                    var += dv * dv;
                }
                var /= d;
                double inv = 1.0 / std::sqrt(var + eps);
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < d; ++j) {
                    xhat[j] = (px.at(i, j) - mu) * inv;
                    double g = (*o.grad)[static_cast<size_t>(i) * d + j];
                    dxhat[j] = g * pg.at(0, j);
                    m1 += dxhat[j];
                    m2 += dxhat[j] * xhat[j];
                }
                m1 /= d;
                m2 /= d;
                if (px.requires_grad) {
                    px.ensure_grad();
                    for (int j = 0; j < d; ++j)
                        (*px.grad)[static_cast<size_t>(i) * d + j] +=
                            (dxhat[j] - m1 - xhat[j] * m2) * inv;
                }
                if (pg.requires_grad) {
                    pg.ensure_grad();
                    for (int j = 0; j < d; ++j)
                        (*pg.grad)[j] += (*o.grad)[static_cast<size_t>(i) * d + j] * xhat[j];
                }
                if (pb.requires_grad) {
                    pb.ensure_grad();
                    for (int j = 0; j < d; ++j)
                        (*pb.grad)[j] += (*o.grad)[static_cast<size_t>(i) * d + j];
                }
            }
        });
    }
    return out;
}

// Forward pass snaps each row to the one-hot argmax (ties break to the lowest
// index); gradients pass through to the soft distribution unchanged.
inline Tensor straight_through_hard(const Tensor& soft) {
    Tensor out = Tensor::zeros(soft.rows, soft.cols);
    for (int i = 0; i < soft.rows; ++i) {
        int best = 0;
        for (int j = 1; j < soft.cols; ++j)
            if (soft.at(i, j) > soft.at(i, best)) best = j;
        out.at(i, best) = 1.0;
    }
    if (detail::track(soft)) {
        detail::attach(out, {soft}, [](const Tensor& o) {
            Tensor& pa = o.node->parents[0];
            pa.ensure_grad();
            const size_t n = o.numel();
            for (size_t i = 0; i < n; ++i) (*pa.grad)[i] += (*o.grad)[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// backward driver

inline void backward(Tensor& root) {
    if (root.numel() != 1) throw ShapeError("backward: root must be a scalar");
    root.ensure_grad();
    (*root.grad)[0] = 1.0;
    if (!root.node) return;

    // iterative post-order DFS over tape nodes
    std::vector<Tensor> order;
    std::unordered_set<TapeNode*> seen;
    struct Frame {
        Tensor t;
        size_t next = 0;
    };
    std::vector<Frame> stack;
    seen.insert(root.node.get());
    stack.push_back({root, 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        auto& parents = f.t.node->parents;
        if (f.next < parents.size()) {
            Tensor& p = parents[f.next++];
            if (p.node && !seen.count(p.node.get())) {
                seen.insert(p.node.get());
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.t);
            stack.pop_back();
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        it->ensure_grad();
        if (it->node->backward) it->node->backward(*it);
    }
}

} // namespace viewco
