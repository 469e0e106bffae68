// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "refa/losskit.hpp"
#include "refa/prefdata.hpp"
#include "refa/scorekit.hpp"

namespace refa {

using ScalarFn = std::function<double(const std::vector<double>&)>;

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps.
std::vector<double> fd_gradient(const ScalarFn& loss_fn,
                                const std::vector<double>& point, double eps);

struct GradCheckReport {
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    std::vector<std::pair<double, double>> per_coordinate;  // (analytic, numeric)
    double step = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// A coordinate whose |analytic - numeric| <= abs_floor counts as exact.
GradCheckReport compare_gradients(const std::vector<double>& analytic,
                                  const std::vector<double>& numeric,
                                  double rel_tol, double abs_floor,
                                  double step = 0.0);

GradCheckReport grad_check(const ScalarFn& loss_fn,
                           const std::vector<double>& analytic,
                           const std::vector<double>& point, double eps,
                           double rel_tol, double abs_floor);

std::vector<double> infonca_grad(const std::vector<double>& p_model,
                                 const std::vector<double>& p_target);

// Gradient of -p_target_i * log(pi_i / sum pi) with respect to pi.
std::vector<double> single_term_grads(const std::vector<double>& pi,
                                      std::size_t i, double p_target_i);
double single_term_loss(const std::vector<double>& pi, std::size_t i,
                        double p_target_i);

std::vector<double> refa_dynamic_grad(const ScoreVector& scores,
                                      const Partition& partition, double gamma);

struct StationaryReport {
    std::vector<double> final_distribution;
    std::vector<double> target;
    std::optional<std::vector<double>> reference;
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;
    std::vector<double> residual_trace;
};

// Gradient descent on free logits z under InfoNCA. p_model = softmax(z) or
// softmax(z - log mu); final_distribution is softmax(z). Residual is
// max |p_model - p_target|.
StationaryReport stationary_solve(const std::vector<double>& rewards,
                                  double alpha_target,
                                  const std::optional<std::vector<double>>& reference,
                                  double step, int max_iters, double tol);

// Randomized analytic-vs-FD suite over every loss kind.
struct GradSuiteConfig {
    int instances = 100;  // per loss kind
    std::uint64_t seed = 1234;
    double eps = 1e-5;
    double rel_tol = 1e-6;
    double abs_floor = 1e-8;
    int min_k = 2;
    int max_k = 8;
    bool inject_sign_error = false;
};

struct GradSuiteRow {
    std::string loss_kind;
    int k = 0;
    double gamma = 0.0;
    double max_rel_err = 0.0;
    bool passed = false;
};

const std::vector<std::string>& grad_suite_loss_kinds();

std::vector<GradSuiteRow> run_grad_suite(const GradSuiteConfig& config);

}  // namespace refa
