#include "geomeld/objectives.hpp"

#include <cmath>

namespace geomeld {

double LossReport::recomputed_total() const {
    double t = alpha * jepa + beta * itc;
    for (const auto& [name, value] : rec) {
        auto it = lambda.find(name);
        const double w = it == lambda.end() ? 1.0 : it->second;
        t += w * value;
    }
    return t;
}

bool LossReport::identity_holds(double tol) const {
    return std::abs(recomputed_total() - total) <= tol;
}

Tensor loss_rec_l1(Graph& g, const Tensor& pred_rows, const Tensor& target_rows,
                   const std::vector<int64_t>& masked) {
    if (masked.empty()) throw ConfigError("loss_rec_l1: empty masked set");
    if (pred_rows.shape() != target_rows.shape()) {
        throw ShapeError("loss_rec_l1: prediction " + shape_to_string(pred_rows.shape()) +
                         " vs target " + shape_to_string(target_rows.shape()));
    }
    Tensor p = gather_rows(g, pred_rows, masked);
    Tensor t = gather_rows(g, target_rows, masked);
    return l1_loss(g, p, t);
}

Tensor loss_rec_ce(Graph& g, const Tensor& logit_rows, const std::vector<int64_t>& labels,
                   const std::vector<int64_t>& masked) {
    if (masked.empty()) throw ConfigError("loss_rec_ce: empty masked set");
    if (static_cast<int64_t>(labels.size()) != logit_rows.rows()) {
        throw ShapeError("loss_rec_ce: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logit_rows.rows()) + " rows");
    }
    Tensor l = gather_rows(g, logit_rows, masked);
    std::vector<int64_t> masked_labels;
    masked_labels.reserve(masked.size());
    for (int64_t i : masked) masked_labels.push_back(labels[static_cast<size_t>(i)]);
    return softmax_cross_entropy(g, l, masked_labels);
}

Tensor loss_mpmae(Graph& g, const std::vector<std::pair<std::string, Tensor>>& per_modality,
                  const std::map<std::string, double>& lambda) {
    if (per_modality.empty()) throw ConfigError("loss_mpmae: no modality losses supplied");
    for (const auto& [name, weight] : lambda) {
        bool found = false;
        for (const auto& [mod, t] : per_modality) found = found || mod == name;
        if (!found) throw ConfigError("loss_mpmae: modality " + name + " has no loss value");
    }
    Tensor total;
    for (const auto& [name, value] : per_modality) {
        auto it = lambda.find(name);
        const double w = it == lambda.end() ? 1.0 : it->second;
        Tensor term = scale(g, value, w);
        total = total.defined() ? add(g, total, term) : term;
    }
    return total;
}

Tensor loss_jepa(Graph& g, const Tensor& predicted, const Tensor& target) {
    if (predicted.shape() != target.shape()) {
        throw ContractError("loss_jepa: prediction " + shape_to_string(predicted.shape()) +
                            " vs target " + shape_to_string(target.shape()));
    }
    Tensor diff = sub(g, predicted, stop_gradient(g, target));
    Tensor sq = mul(g, diff, diff);
    return scale(g, sum_all(g, sq), 1.0 / static_cast<double>(predicted.rows()));
}

Tensor loss_itc(Graph& g, const Tensor& v_prime, const Tensor& t_prime, double tau_c) {
    if (tau_c <= 0.0) throw ConfigError("loss_itc: temperature must be > 0");
    if (v_prime.shape() != t_prime.shape()) {
        throw ShapeError("loss_itc: " + shape_to_string(v_prime.shape()) + " vs " +
                         shape_to_string(t_prime.shape()));
    }
    const int64_t b = v_prime.rows();
    for (const Tensor* t : {&v_prime, &t_prime}) {
        for (int64_t i = 0; i < b; ++i) {
            double ss = 0.0;
            for (int64_t j = 0; j < t->cols(); ++j) ss += t->at(i, j) * t->at(i, j);
            if (std::abs(ss - 1.0) > 1e-6) {
                throw ContractError("loss_itc: row " + std::to_string(i) +
                                    " is not unit-norm (|x|^2 = " + std::to_string(ss) + ")");
            }
        }
    }
    Tensor sims = scale(g, matmul(g, v_prime, transpose(g, t_prime)), 1.0 / tau_c);
    std::vector<int64_t> diag(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) diag[static_cast<size_t>(i)] = i;
    Tensor ce_rows = softmax_cross_entropy(g, sims, diag);
    Tensor ce_cols = softmax_cross_entropy(g, transpose(g, sims), diag);
    return scale(g, add(g, ce_rows, ce_cols), 0.5);
}

TotalLoss loss_total(Graph& g, const std::vector<std::pair<std::string, Tensor>>& per_modality,
                     const Tensor& jepa, const Tensor& itc, double alpha, double beta,
                     const std::map<std::string, double>& lambda, double tau_c) {
    Tensor mpmae = loss_mpmae(g, per_modality, lambda);
    Tensor value = add(g, mpmae, add(g, scale(g, jepa, alpha), scale(g, itc, beta)));

    TotalLoss out;
    out.value = value;
    out.report.alpha = alpha;
    out.report.beta = beta;
    out.report.tau_c = tau_c;
    out.report.lambda = lambda;
    for (const auto& [name, t] : per_modality) out.report.rec.emplace_back(name, t.value());
    out.report.jepa = jepa.value();
    out.report.itc = itc.value();
    out.report.total = value.value();
    return out;
}

}  // namespace geomeld
