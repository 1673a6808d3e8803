#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "geomeld/errors.hpp"
#include "geomeld/rng.hpp"

namespace geomeld {

using Shape = std::vector<int64_t>;

std::string shape_to_string(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense row-major tensor of doubles. Value-semantic handle: copies share the
// underlying buffer, so parameters can live in a model registry while ops
// hold cheap references. Storage and accumulation are both double precision.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
    int64_t rows() const;
    int64_t cols() const;

    double* data() { return node_->data.data(); }
    const double* data() const { return node_->data.data(); }
    std::vector<double>& data_vec() { return node_->data; }
    const std::vector<double>& data_vec() const { return node_->data; }

    double value() const;            // scalar tensors only
    double at(int64_t i) const { return node_->data[static_cast<size_t>(i)]; }
    double at(int64_t r, int64_t c) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<double>& grad();             // allocates zero-filled on first use
    const std::vector<double>& grad_view() const { return node_->grad; }
    void zero_grad();                        // zeroes without deallocating
    void drop_grad() { node_->grad.clear(); }

    // Identity of the underlying buffer; used to detect aliased parameters.
    const void* id() const { return node_.get(); }

private:
    struct Node {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Node> node_;

    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    static Tensor make(Shape shape, bool requires_grad);
};

bool all_finite(const Tensor& t);

// Define-by-run tape. Ops append one backward step per recorded node, in
// insertion order; backward() replays them exactly once in reverse. The tape
// is rebuilt every training step.
class Graph {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
    size_t size() const { return steps_.size(); }

    // Seeds d(loss)/d(loss) = 1 and walks the tape backwards. The loss must
    // be a scalar living on this graph.
    void backward(Tensor& loss);

    void clear() { steps_.clear(); }

private:
    std::vector<std::function<void()>> steps_;
};

// ----------------------------------------------------------------------------
// primitive ops (forward + recorded backward)
// ----------------------------------------------------------------------------

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
Tensor transpose(Graph& g, const Tensor& a);
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double c);
// a[R x C] + broadcast row b[1 x C]
Tensor add_row(Graph& g, const Tensor& a, const Tensor& b);
Tensor gelu(Graph& g, const Tensor& a);
Tensor layer_norm_rows(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
Tensor softmax_rows(Graph& g, const Tensor& x);
// mean over batch of -log softmax(logits)[target]; grad (softmax - onehot)/B
Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, const std::vector<int64_t>& targets);
// mean |a - b| over all elements; subgradient at zero is 0
Tensor l1_loss(Graph& g, const Tensor& a, const Tensor& b);
Tensor sum_all(Graph& g, const Tensor& a);
Tensor mean_all(Graph& g, const Tensor& a);
Tensor gather_rows(Graph& g, const Tensor& x, const std::vector<int64_t>& indices);
// out[n_rows x C]: fill row everywhere, src rows scattered at (unique) indices
Tensor scatter_rows(Graph& g, const Tensor& src, const std::vector<int64_t>& indices,
                    int64_t n_rows, const Tensor& fill);
Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts);
Tensor mean_rows(Graph& g, const Tensor& x);  // [R x C] -> [1 x C]
// mean over the rows selected by `keep`; used for pad-masked pooling
Tensor mean_rows_masked(Graph& g, const Tensor& x, const std::vector<bool>& keep);
Tensor l2_normalize_rows(Graph& g, const Tensor& x);
// forward identity (fresh buffer); contributes exactly zero upstream
Tensor stop_gradient(Graph& g, const Tensor& x);

// ----------------------------------------------------------------------------
// gradient oracle
// ----------------------------------------------------------------------------

// Central-difference check of the analytic gradient of f with respect to x.
// f is evaluated twice at x first; any mismatch means f is non-deterministic
// and an OracleError is thrown. Returns max over coordinates of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<Tensor(Graph&, const Tensor&)>& f, Tensor x,
                         double eps = 1e-4);

}  // namespace geomeld
