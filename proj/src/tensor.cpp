#include "geomeld/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace geomeld {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

void require_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2) {
        throw ShapeError(std::string(op) + ": expected 2-d tensor, got " +
                         shape_to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " differ");
    }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

std::string shape_to_string(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << " x ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

// ----------------------------------------------------------------------------
// Tensor
// ----------------------------------------------------------------------------

Tensor Tensor::make(Shape shape, bool requires_grad) {
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("dimensions must be positive, got " + shape_to_string(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data.assign(static_cast<size_t>(shape_numel(node->shape)), 0.0);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return make(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = make(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    Tensor t = make(std::move(shape), requires_grad);
    if (data.size() != t.node_->data.size()) {
        throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " +
                         shape_to_string(t.shape()));
    }
    t.node_->data = std::move(data);
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = make(std::move(shape), requires_grad);
    for (double& v : t.node_->data) v = rng.normal() * stddev;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

int64_t Tensor::rows() const {
    require_2d(*this, "rows");
    return shape()[0];
}

int64_t Tensor::cols() const {
    require_2d(*this, "cols");
    return shape()[1];
}

double Tensor::value() const {
    if (numel() != 1) throw ShapeError("value(): tensor is not scalar, " + shape_to_string(shape()));
    return node_->data[0];
}

double Tensor::at(int64_t r, int64_t c) const {
    require_2d(*this, "at");
    return node_->data[static_cast<size_t>(r * shape()[1] + c)];
}

std::vector<double>& Tensor::grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool all_finite(const Tensor& t) {
    for (double v : t.data_vec()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ----------------------------------------------------------------------------
// Graph
// ----------------------------------------------------------------------------

void Graph::backward(Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_to_string(loss.shape()));
    }
    // A loss whose every path was stop-gradiented carries no tape; backward
    // then leaves all parameter gradients absent or zero.
    if (!loss.requires_grad()) return;
    loss.grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

// ----------------------------------------------------------------------------
// op helpers
// ----------------------------------------------------------------------------

namespace {

// Outputs of recorded ops get their grad buffer up front so backward closures
// can read it unconditionally (an unused intermediate then contributes zeros).
Tensor result_like(Shape shape, bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    if (requires_grad) t.grad();
    return t;
}

bool grads_needed(std::initializer_list<const Tensor*> inputs) {
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

}  // namespace

// ----------------------------------------------------------------------------
// ops
// ----------------------------------------------------------------------------

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int64_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
    }
    const bool rg = grads_needed({&a, &b});
    Tensor out = result_like({m, n}, rg);

    ECMap A(a.data(), m, k), B(b.data(), k, n);
    EMap C(out.data(), m, n);
    C.noalias() = A * B;

    if (rg) {
        Tensor av = a, bv = b, ov = out;
        g.record([av, bv, ov, m, k, n]() mutable {
            ECMap dC(ov.grad_view().data(), m, n);
            if (av.requires_grad()) {
                ECMap B(bv.data(), k, n);
                EMap dA(av.grad().data(), m, k);
                dA.noalias() += dC * B.transpose();
            }
            if (bv.requires_grad()) {
                ECMap A(av.data(), m, k);
                EMap dB(bv.grad().data(), k, n);
                dB.noalias() += A.transpose() * dC;
            }
        });
    }
    return out;
}

Tensor transpose(Graph& g, const Tensor& a) {
    require_2d(a, "transpose");
    const int64_t r = a.shape()[0], c = a.shape()[1];
    const bool rg = a.requires_grad();
    Tensor out = result_like({c, r}, rg);
    ECMap A(a.data(), r, c);
    EMap O(out.data(), c, r);
    O.noalias() = A.transpose();
    if (rg) {
        Tensor av = a, ov = out;
        g.record([av, ov, r, c]() mutable {
            ECMap dO(ov.grad_view().data(), c, r);
            EMap dA(av.grad().data(), r, c);
            dA.noalias() += dO.transpose();
        });
    }
    return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const bool rg = grads_needed({&a, &b});
    Tensor out = result_like(a.shape(), rg);
    const int64_t n = a.numel();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (rg) {
        Tensor av = a, bv = b, ov = out;
        g.record([av, bv, ov, n]() mutable {
            const auto& dout = ov.grad_view();
            if (av.requires_grad()) {
                auto& da = av.grad();
                for (int64_t i = 0; i < n; ++i) da[i] += dout[i];
            }
            if (bv.requires_grad()) {
                auto& db = bv.grad();
                for (int64_t i = 0; i < n; ++i) db[i] += dout[i];
            }
        });
    }
    return out;
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const bool rg = grads_needed({&a, &b});
    Tensor out = result_like(a.shape(), rg);
    const int64_t n = a.numel();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (rg) {
        Tensor av = a, bv = b, ov = out;
        g.record([av, bv, ov, n]() mutable {
            const auto& dout = ov.grad_view();
            if (av.requires_grad()) {
                auto& da = av.grad();
                for (int64_t i = 0; i < n; ++i) da[i] += dout[i];
            }
            if (bv.requires_grad()) {
                auto& db = bv.grad();
                for (int64_t i = 0; i < n; ++i) db[i] -= dout[i];
            }
        });
    }
    return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const bool rg = grads_needed({&a, &b});
    Tensor out = result_like(a.shape(), rg);
    const int64_t n = a.numel();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (rg) {
        Tensor av = a, bv = b, ov = out;
        g.record([av, bv, ov, n]() mutable {
            const auto& dout = ov.grad_view();
            // aliased inputs (x*x) accumulate twice, which is the correct 2x
            if (av.requires_grad()) {
                auto& da = av.grad();
                const double* pb2 = bv.data();
                for (int64_t i = 0; i < n; ++i) da[i] += pb2[i] * dout[i];
            }
            if (bv.requires_grad()) {
                auto& db = bv.grad();
                const double* pa2 = av.data();
                for (int64_t i = 0; i < n; ++i) db[i] += pa2[i] * dout[i];
            }
        });
    }
    return out;
}

Tensor scale(Graph& g, const Tensor& a, double c) {
    const bool rg = a.requires_grad();
    Tensor out = result_like(a.shape(), rg);
    const int64_t n = a.numel();
    const double* pa = a.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = c * pa[i];
    if (rg) {
        Tensor av = a, ov = out;
        g.record([av, ov, n, c]() mutable {
            const auto& dout = ov.grad_view();
            auto& da = av.grad();
            for (int64_t i = 0; i < n; ++i) da[i] += c * dout[i];
        });
    }
    return out;
}

Tensor add_row(Graph& g, const Tensor& a, const Tensor& b) {
    require_2d(a, "add_row");
    require_2d(b, "add_row");
    const int64_t r = a.shape()[0], c = a.shape()[1];
    if (b.shape()[0] != 1 || b.shape()[1] != c) {
        throw ShapeError("add_row: " + shape_to_string(a.shape()) + " + " +
                         shape_to_string(b.shape()) + " (want [1 x " + std::to_string(c) + "])");
    }
    const bool rg = grads_needed({&a, &b});
    Tensor out = result_like(a.shape(), rg);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j < c; ++j) po[i * c + j] = pa[i * c + j] + pb[j];
    }
    if (rg) {
        Tensor av = a, bv = b, ov = out;
        g.record([av, bv, ov, r, c]() mutable {
            const auto& dout = ov.grad_view();
            if (av.requires_grad()) {
                auto& da = av.grad();
                for (int64_t i = 0; i < r * c; ++i) da[i] += dout[i];
            }
            if (bv.requires_grad()) {
                auto& db = bv.grad();
                for (int64_t i = 0; i < r; ++i) {
                    for (int64_t j = 0; j < c; ++j) db[j] += dout[i * c + j];
                }
            }
        });
    }
    return out;
}

Tensor gelu(Graph& g, const Tensor& a) {
    const bool rg = a.requires_grad();
    Tensor out = result_like(a.shape(), rg);
    const int64_t n = a.numel();
    const double* pa = a.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        po[i] = 0.5 * pa[i] * (1.0 + std::erf(pa[i] * kInvSqrt2));
    }
    if (rg) {
        Tensor av = a, ov = out;
        g.record([av, ov, n]() mutable {
            const auto& dout = ov.grad_view();
            auto& da = av.grad();
            const double* pa2 = av.data();
            for (int64_t i = 0; i < n; ++i) {
                const double x = pa2[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                da[i] += (cdf + x * pdf) * dout[i];
            }
        });
    }
    return out;
}

Tensor layer_norm_rows(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps) {
    require_2d(x, "layer_norm_rows");
    const int64_t r = x.shape()[0], c = x.shape()[1];
    if (gamma.numel() != c || beta.numel() != c) {
        throw ShapeError("layer_norm_rows: gamma/beta must have " + std::to_string(c) +
                         " elements, got " + shape_to_string(gamma.shape()) + " and " +
                         shape_to_string(beta.shape()));
    }
    const bool rg = grads_needed({&x, &gamma, &beta});
    Tensor out = result_like(x.shape(), rg);
    // cache normalized values and inverse stddev per row for backward
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(r * c));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    double* po = out.data();
    for (int64_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (int64_t j = 0; j < c; ++j) mean += px[i * c + j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double d = px[i * c + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(i)] = is;
        for (int64_t j = 0; j < c; ++j) {
            const double h = (px[i * c + j] - mean) * is;
            (*xhat)[static_cast<size_t>(i * c + j)] = h;
            po[i * c + j] = h * pg[j] + pb[j];
        }
    }
    if (rg) {
        Tensor xv = x, gv = gamma, bv = beta, ov = out;
        g.record([xv, gv, bv, ov, xhat, inv_std, r, c]() mutable {
            const auto& dout = ov.grad_view();
            const double* pg2 = gv.data();
            if (xv.requires_grad()) {
                auto& dx = xv.grad();
                for (int64_t i = 0; i < r; ++i) {
                    const double is = (*inv_std)[static_cast<size_t>(i)];
                    double mean_gdy = 0.0, mean_gdy_xhat = 0.0;
                    for (int64_t j = 0; j < c; ++j) {
                        const double gdy = pg2[j] * dout[i * c + j];
                        mean_gdy += gdy;
                        mean_gdy_xhat += gdy * (*xhat)[static_cast<size_t>(i * c + j)];
                    }
                    mean_gdy /= static_cast<double>(c);
                    mean_gdy_xhat /= static_cast<double>(c);
                    for (int64_t j = 0; j < c; ++j) {
                        const double gdy = pg2[j] * dout[i * c + j];
                        const double h = (*xhat)[static_cast<size_t>(i * c + j)];
                        dx[i * c + j] += is * (gdy - mean_gdy - h * mean_gdy_xhat);
                    }
                }
            }
            if (gv.requires_grad()) {
                auto& dg = gv.grad();
                for (int64_t i = 0; i < r; ++i) {
                    for (int64_t j = 0; j < c; ++j) {
                        dg[j] += dout[i * c + j] * (*xhat)[static_cast<size_t>(i * c + j)];
                    }
                }
            }
            if (bv.requires_grad()) {
                auto& db = bv.grad();
                for (int64_t i = 0; i < r; ++i) {
                    for (int64_t j = 0; j < c; ++j) db[j] += dout[i * c + j];
                }
            }
        });
    }
    return out;
}

Tensor softmax_rows(Graph& g, const Tensor& x) {
    require_2d(x, "softmax_rows");
    const int64_t r = x.shape()[0], c = x.shape()[1];
    const bool rg = x.requires_grad();
    Tensor out = result_like(x.shape(), rg);
    const double* px = x.data();
    double* po = out.data();
    for (int64_t i = 0; i < r; ++i) {
        double mx = px[i * c];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, px[i * c + j]);
        double sum = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double e = std::exp(px[i * c + j] - mx);
            po[i * c + j] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < c; ++j) po[i * c + j] *= inv;
    }
    if (rg) {
        Tensor xv = x, ov = out;
        g.record([xv, ov, r, c]() mutable {
            const auto& dout = ov.grad_view();
            const double* py = ov.data();
            auto& dx = xv.grad();
            for (int64_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j < c; ++j) dot += dout[i * c + j] * py[i * c + j];
                for (int64_t j = 0; j < c; ++j) {
                    dx[i * c + j] += py[i * c + j] * (dout[i * c + j] - dot);
                }
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, const std::vector<int64_t>& targets) {
    require_2d(logits, "softmax_cross_entropy");
    const int64_t b = logits.shape()[0], c = logits.shape()[1];
    if (static_cast<int64_t>(targets.size()) != b) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(b) + " rows");
    }
    for (int64_t t : targets) {
        if (t < 0 || t >= c) {
            throw IndexError("softmax_cross_entropy: target " + std::to_string(t) +
                             " out of [0, " + std::to_string(c) + ")");
        }
    }
    const bool rg = logits.requires_grad();
    // cache softmax probabilities for backward
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(b * c));
    const double* px = logits.data();
    double loss = 0.0;
    for (int64_t i = 0; i < b; ++i) {
        double mx = px[i * c];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, px[i * c + j]);
        double sum = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double e = std::exp(px[i * c + j] - mx);
            (*probs)[static_cast<size_t>(i * c + j)] = e;
            sum += e;
        }
        const double log_sum = std::log(sum) + mx;
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < c; ++j) (*probs)[static_cast<size_t>(i * c + j)] *= inv;
        loss += log_sum - px[i * c + targets[i]];
    }
    Tensor out = Tensor::scalar(loss / static_cast<double>(b), rg);
    if (rg) out.grad();
    if (rg) {
        Tensor lv = logits, ov = out;
        auto tgt = std::make_shared<std::vector<int64_t>>(targets);
        g.record([lv, ov, probs, tgt, b, c]() mutable {
            const double dy = ov.grad_view()[0];
            auto& dx = lv.grad();
            const double invb = 1.0 / static_cast<double>(b);
            for (int64_t i = 0; i < b; ++i) {
                for (int64_t j = 0; j < c; ++j) {
                    double p = (*probs)[static_cast<size_t>(i * c + j)];
                    if (j == (*tgt)[static_cast<size_t>(i)]) p -= 1.0;
                    dx[i * c + j] += dy * p * invb;
                }
            }
        });
    }
    return out;
}

Tensor l1_loss(Graph& g, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l1_loss");
    const int64_t n = a.numel();
    const bool rg = grads_needed({&a, &b});
    const double* pa = a.data();
    const double* pb = b.data();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) loss += std::abs(pa[i] - pb[i]);
    Tensor out = Tensor::scalar(loss / static_cast<double>(n), rg);
    if (rg) out.grad();
    if (rg) {
        Tensor av = a, bv = b, ov = out;
        g.record([av, bv, ov, n]() mutable {
            const double dy = ov.grad_view()[0] / static_cast<double>(n);
            const double* pa2 = av.data();
            const double* pb2 = bv.data();
            for (int64_t i = 0; i < n; ++i) {
                const double d = pa2[i] - pb2[i];
                const double s = (d > 0.0) ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                if (av.requires_grad()) av.grad()[i] += dy * s;
                if (bv.requires_grad()) bv.grad()[i] -= dy * s;
            }
        });
    }
    return out;
}

Tensor sum_all(Graph& g, const Tensor& a) {
    const int64_t n = a.numel();
    const double* pa = a.data();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += pa[i];
    const bool rg = a.requires_grad();
    Tensor out = Tensor::scalar(s, rg);
    if (rg) out.grad();
    if (rg) {
        Tensor av = a, ov = out;
        g.record([av, ov, n]() mutable {
            const double dy = ov.grad_view()[0];
            auto& da = av.grad();
            for (int64_t i = 0; i < n; ++i) da[i] += dy;
        });
    }
    return out;
}

Tensor mean_all(Graph& g, const Tensor& a) {
    return scale(g, sum_all(g, a), 1.0 / static_cast<double>(a.numel()));
}

Tensor gather_rows(Graph& g, const Tensor& x, const std::vector<int64_t>& indices) {
    require_2d(x, "gather_rows");
    const int64_t r = x.shape()[0], c = x.shape()[1];
    const int64_t k = static_cast<int64_t>(indices.size());
    if (k == 0) throw ShapeError("gather_rows: empty index set");
    for (int64_t idx : indices) {
        if (idx < 0 || idx >= r) {
            throw IndexError("gather_rows: row " + std::to_string(idx) + " out of [0, " +
                             std::to_string(r) + ")");
        }
    }
    const bool rg = x.requires_grad();
    Tensor out = result_like({k, c}, rg);
    const double* px = x.data();
    double* po = out.data();
    for (int64_t i = 0; i < k; ++i) {
        const double* src = px + indices[static_cast<size_t>(i)] * c;
        std::copy(src, src + c, po + i * c);
    }
    if (rg) {
        Tensor xv = x, ov = out;
        auto idxs = std::make_shared<std::vector<int64_t>>(indices);
        g.record([xv, ov, idxs, k, c]() mutable {
            const auto& dout = ov.grad_view();
            auto& dx = xv.grad();
            for (int64_t i = 0; i < k; ++i) {
                double* dst = dx.data() + (*idxs)[static_cast<size_t>(i)] * c;
                const double* src = dout.data() + i * c;
                for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor scatter_rows(Graph& g, const Tensor& src, const std::vector<int64_t>& indices,
                    int64_t n_rows, const Tensor& fill) {
    require_2d(src, "scatter_rows");
    const int64_t k = src.shape()[0], c = src.shape()[1];
    if (static_cast<int64_t>(indices.size()) != k) {
        throw ShapeError("scatter_rows: " + std::to_string(indices.size()) + " indices for " +
                         std::to_string(k) + " rows");
    }
    if (fill.numel() != c) {
        throw ShapeError("scatter_rows: fill row has " + std::to_string(fill.numel()) +
                         " values, want " + std::to_string(c));
    }
    std::vector<char> taken(static_cast<size_t>(n_rows), 0);
    for (int64_t idx : indices) {
        if (idx < 0 || idx >= n_rows) {
            throw IndexError("scatter_rows: row " + std::to_string(idx) + " out of [0, " +
                             std::to_string(n_rows) + ")");
        }
        if (taken[static_cast<size_t>(idx)]) {
            throw ContractError("scatter_rows: duplicate index " + std::to_string(idx));
        }
        taken[static_cast<size_t>(idx)] = 1;
    }
    const bool rg = grads_needed({&src, &fill});
    Tensor out = result_like({n_rows, c}, rg);
    const double* pf = fill.data();
    double* po = out.data();
    for (int64_t i = 0; i < n_rows; ++i) std::copy(pf, pf + c, po + i * c);
    const double* ps = src.data();
    for (int64_t i = 0; i < k; ++i) {
        std::copy(ps + i * c, ps + (i + 1) * c, po + indices[static_cast<size_t>(i)] * c);
    }
    if (rg) {
        Tensor sv = src, fv = fill, ov = out;
        auto idxs = std::make_shared<std::vector<int64_t>>(indices);
        auto taken_s = std::make_shared<std::vector<char>>(std::move(taken));
        g.record([sv, fv, ov, idxs, taken_s, n_rows, k, c]() mutable {
            const auto& dout = ov.grad_view();
            if (sv.requires_grad()) {
                auto& ds = sv.grad();
                for (int64_t i = 0; i < k; ++i) {
                    const double* srcg = dout.data() + (*idxs)[static_cast<size_t>(i)] * c;
                    for (int64_t j = 0; j < c; ++j) ds[i * c + j] += srcg[j];
                }
            }
            if (fv.requires_grad()) {
                auto& df = fv.grad();
                for (int64_t i = 0; i < n_rows; ++i) {
                    if ((*taken_s)[static_cast<size_t>(i)]) continue;
                    for (int64_t j = 0; j < c; ++j) df[j] += dout[i * c + j];
                }
            }
        });
    }
    return out;
}

Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    require_2d(parts[0], "concat_rows");
    const int64_t c = parts[0].shape()[1];
    int64_t total = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_rows");
        if (p.shape()[1] != c) {
            throw ShapeError("concat_rows: column mismatch, " + shape_to_string(p.shape()) +
                             " vs " + std::to_string(c) + " columns");
        }
        total += p.shape()[0];
        rg = rg || p.requires_grad();
    }
    Tensor out = result_like({total, c}, rg);
    double* po = out.data();
    int64_t row = 0;
    for (const Tensor& p : parts) {
        std::copy(p.data(), p.data() + p.numel(), po + row * c);
        row += p.shape()[0];
    }
    if (rg) {
        auto parts_s = std::make_shared<std::vector<Tensor>>(parts);
        Tensor ov = out;
        g.record([parts_s, ov, c]() mutable {
            const auto& dout = ov.grad_view();
            int64_t row2 = 0;
            for (Tensor& p : *parts_s) {
                const int64_t pr = p.shape()[0];
                if (p.requires_grad()) {
                    auto& dp = p.grad();
                    const double* src = dout.data() + row2 * c;
                    for (int64_t i = 0; i < pr * c; ++i) dp[i] += src[i];
                }
                row2 += pr;
            }
        });
    }
    return out;
}

Tensor mean_rows(Graph& g, const Tensor& x) {
    require_2d(x, "mean_rows");
    std::vector<bool> keep(static_cast<size_t>(x.shape()[0]), true);
    return mean_rows_masked(g, x, keep);
}

Tensor mean_rows_masked(Graph& g, const Tensor& x, const std::vector<bool>& keep) {
    require_2d(x, "mean_rows_masked");
    const int64_t r = x.shape()[0], c = x.shape()[1];
    if (static_cast<int64_t>(keep.size()) != r) {
        throw ShapeError("mean_rows_masked: mask length " + std::to_string(keep.size()) +
                         " for " + std::to_string(r) + " rows");
    }
    int64_t count = 0;
    for (bool b : keep) count += b ? 1 : 0;
    if (count == 0) throw ShapeError("mean_rows_masked: no rows selected");
    const bool rg = x.requires_grad();
    Tensor out = result_like({1, c}, rg);
    const double* px = x.data();
    double* po = out.data();
    for (int64_t i = 0; i < r; ++i) {
        if (!keep[static_cast<size_t>(i)]) continue;
        for (int64_t j = 0; j < c; ++j) po[j] += px[i * c + j];
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (int64_t j = 0; j < c; ++j) po[j] *= inv;
    if (rg) {
        Tensor xv = x, ov = out;
        auto keep_s = std::make_shared<std::vector<bool>>(keep);
        g.record([xv, ov, keep_s, r, c, inv]() mutable {
            const auto& dout = ov.grad_view();
            auto& dx = xv.grad();
            for (int64_t i = 0; i < r; ++i) {
                if (!(*keep_s)[static_cast<size_t>(i)]) continue;
                for (int64_t j = 0; j < c; ++j) dx[i * c + j] += dout[j] * inv;
            }
        });
    }
    return out;
}

Tensor l2_normalize_rows(Graph& g, const Tensor& x) {
    require_2d(x, "l2_normalize_rows");
    const int64_t r = x.shape()[0], c = x.shape()[1];
    const bool rg = x.requires_grad();
    Tensor out = result_like(x.shape(), rg);
    auto inv_norm = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
    const double* px = x.data();
    double* po = out.data();
    for (int64_t i = 0; i < r; ++i) {
        double ss = 0.0;
        for (int64_t j = 0; j < c; ++j) ss += px[i * c + j] * px[i * c + j];
        const double inv = 1.0 / std::max(std::sqrt(ss), 1e-12);
        (*inv_norm)[static_cast<size_t>(i)] = inv;
        for (int64_t j = 0; j < c; ++j) po[i * c + j] = px[i * c + j] * inv;
    }
    if (rg) {
        Tensor xv = x, ov = out;
        g.record([xv, ov, inv_norm, r, c]() mutable {
            const auto& dout = ov.grad_view();
            const double* py = ov.data();
            auto& dx = xv.grad();
            for (int64_t i = 0; i < r; ++i) {
                const double inv = (*inv_norm)[static_cast<size_t>(i)];
                double dot = 0.0;
                for (int64_t j = 0; j < c; ++j) dot += dout[i * c + j] * py[i * c + j];
                for (int64_t j = 0; j < c; ++j) {
                    dx[i * c + j] += inv * (dout[i * c + j] - py[i * c + j] * dot);
                }
            }
        });
    }
    return out;
}

Tensor stop_gradient(Graph&, const Tensor& x) {
    return Tensor::from_data(x.shape(), x.data_vec(), false);
}

// ----------------------------------------------------------------------------
// finite-difference oracle
// ----------------------------------------------------------------------------

double finite_diff_check(const std::function<Tensor(Graph&, const Tensor&)>& f, Tensor x,
                         double eps) {
    if (eps <= 0.0) throw ConfigError("finite_diff_check: eps must be > 0");
    x.set_requires_grad(true);
    x.drop_grad();

    Graph g1;
    Tensor loss1 = f(g1, x);
    if (loss1.numel() != 1) {
        throw ShapeError("finite_diff_check: f must return a scalar, got " +
                         shape_to_string(loss1.shape()));
    }
    const double v1 = loss1.value();
    {
        Graph g2;
        const double v2 = f(g2, x).value();
        if (v2 != v1) {
            throw OracleError("finite_diff_check: f is non-deterministic (" + std::to_string(v1) +
                              " vs " + std::to_string(v2) + ")");
        }
    }
    g1.backward(loss1);
    std::vector<double> analytic = x.grad();
    x.drop_grad();

    // numeric passes don't need the tape
    x.set_requires_grad(false);
    double max_err = 0.0;
    auto& data = x.data_vec();
    for (size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        data[i] = orig + eps;
        Graph gp;
        const double fp = f(gp, x).value();
        data[i] = orig - eps;
        Graph gm;
        const double fm = f(gm, x).value();
        data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[i];
        const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_err = std::max(max_err, err);
    }
    x.set_requires_grad(true);
    return max_err;
}

}  // namespace geomeld
