#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "pitn/diagnostics.hpp"

namespace pitn {

struct MetricsReport {
    double rmse = 0.0;
    std::optional<double> pearson_r;  // empty when either side has zero variance
    double me = 0.0;
    double sde = 0.0;
    bool aami_pass = false;
    std::size_t n_test = 0;
};

struct TTestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double dof = 0.0;
    bool significant_at_05 = false;
};

double rmse(std::span<const double> pred, std::span<const double> truth);
std::optional<double> pearson(std::span<const double> pred, std::span<const double> truth);
/// Mean error and population standard deviation of pred - truth.
std::pair<double, double> me_sde(std::span<const double> pred, std::span<const double> truth);
bool aami_check(double me, double sde);

/// All metrics at once. Throws std::logic_error if rmse^2 != me^2 + sde^2
/// beyond rounding.
MetricsReport evaluate_metrics(std::span<const double> pred, std::span<const double> truth);

/// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);
/// CDF of Student's t distribution with `dof` degrees of freedom.
double student_t_cdf(double t, double dof);

/// Two-sided paired t-test on a - b. Zero variance of the differences gives
/// p = 1 when they are all zero and p = 0 otherwise, with a diagnostic.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b, Diagnostics* diag = nullptr);

}  // namespace pitn
