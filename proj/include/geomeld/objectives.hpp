#pragma once

#include <map>
#include <string>
#include <vector>

#include "geomeld/tensor.hpp"

namespace geomeld {

// Per-component loss values for one step plus the weights that combined them.
// total must equal sum(lambda_m * rec[m]) + alpha*jepa + beta*itc to 1e-10.
struct LossReport {
    std::vector<std::pair<std::string, double>> rec;
    double jepa = 0.0;
    double itc = 0.0;
    double total = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double tau_c = 0.0;
    std::map<std::string, double> lambda;

    double recomputed_total() const;
    bool identity_holds(double tol = 1e-10) const;
};

// mean absolute error over the masked patch rows of a full-grid prediction
Tensor loss_rec_l1(Graph& g, const Tensor& pred_rows, const Tensor& target_rows,
                   const std::vector<int64_t>& masked);

// mean cross-entropy over masked patch positions only
Tensor loss_rec_ce(Graph& g, const Tensor& logit_rows, const std::vector<int64_t>& labels,
                   const std::vector<int64_t>& masked);

// sum of lambda_m * loss_m over every registered modality
Tensor loss_mpmae(Graph& g, const std::vector<std::pair<std::string, Tensor>>& per_modality,
                  const std::map<std::string, double>& lambda);

// (1/|target|) * sum_j ||pred_j - sg(tgt_j)||^2; gradients reach phi and
// theta only, never the target branch
Tensor loss_jepa(Graph& g, const Tensor& predicted, const Tensor& target);

// symmetric InfoNCE over matched rows; inputs must be row-unit-norm
Tensor loss_itc(Graph& g, const Tensor& v_prime, const Tensor& t_prime, double tau_c);

struct TotalLoss {
    Tensor value;
    LossReport report;
};

TotalLoss loss_total(Graph& g, const std::vector<std::pair<std::string, Tensor>>& per_modality,
                     const Tensor& jepa, const Tensor& itc, double alpha, double beta,
                     const std::map<std::string, double>& lambda, double tau_c);

}  // namespace geomeld
