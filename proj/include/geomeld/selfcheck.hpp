#pragma once

#include <string>
#include <vector>

#include "geomeld/model.hpp"
#include "geomeld/trainer.hpp"

namespace geomeld {

// Small-model instance used by the gradient oracles: two tiles, fixed masks,
// every branch of the objective wired up.
struct OracleInstance {
    ModelState model;
    std::vector<PreparedTile> tiles;
    std::vector<MaskPair> masks;
    std::map<std::string, double> lambda;
    double alpha = 0.5;
    double beta = 0.4;
    double tau_c = 0.5;
};

OracleInstance make_oracle_instance(uint64_t seed);

// Scalar objectives over the oracle instance, rebuilt per evaluation.
Tensor oracle_mpmae(Graph& g, OracleInstance& inst);
Tensor oracle_jepa(Graph& g, OracleInstance& inst);
Tensor oracle_itc(Graph& g, OracleInstance& inst);
Tensor oracle_total(Graph& g, OracleInstance& inst);

struct GradientOracleReport {
    double max_err_mpmae = 0.0;
    double max_err_jepa = 0.0;
    double max_err_itc = 0.0;
    double max_err_total = 0.0;
    double worst() const;
};

// finite_diff_check of each objective against every parameter it touches
GradientOracleReport run_gradient_oracles(uint64_t seed, double eps = 1e-4);

struct SuiteResult {
    std::string name;
    int passed = 0;
    int failed = 0;
    std::vector<std::string> failures;
};

struct SelfCheckResult {
    std::vector<SuiteResult> suites;
    bool ok() const;
    int total_passed() const;
    int total_failed() const;
};

// Gradient oracles, masking invariants, loss closed forms, caption verifier
// injection, geomorphon oracles, temporal anchors. inject_fault corrupts one
// loss computation to prove the harness detects failures.
SelfCheckResult run_selfcheck(bool inject_fault = false);

}  // namespace geomeld
