#include "pitn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pitn {

namespace {

void require_paired(std::span<const double> a, std::span<const double> b, std::size_t min_n, const char* what)
{
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(what) + ": inputs differ in length (" + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + ")");
    if (a.size() < min_n)
        throw std::invalid_argument(std::string(what) + " needs at least " + std::to_string(min_n) + " samples");
}

double mean_of(std::span<const double> v)
{
    double s = 0.0;
    for (double x : v)
        s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

double rmse(std::span<const double> pred, std::span<const double> truth)
{
    require_paired(pred, truth, 1, "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return std::sqrt(s / static_cast<double>(pred.size()));
}

std::optional<double> pearson(std::span<const double> pred, std::span<const double> truth)
{
    require_paired(pred, truth, 2, "pearson");
    const double mp = mean_of(pred);
    const double mt = mean_of(truth);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double dp = pred[i] - mp;
        const double dt = truth[i] - mt;
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if (sxx == 0.0 || syy == 0.0)
        return std::nullopt;
    const double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

std::pair<double, double> me_sde(std::span<const double> pred, std::span<const double> truth)
{
    require_paired(pred, truth, 1, "me_sde");
    const auto n = static_cast<double>(pred.size());
    double me = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        me += pred[i] - truth[i];
    me /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        var += std::pow(pred[i] - truth[i] - me, 2);
    return {me, std::sqrt(var / n)};
}

bool aami_check(double me, double sde)
{
    return std::abs(me) < 5.0 && sde < 8.0;
}

MetricsReport evaluate_metrics(std::span<const double> pred, std::span<const double> truth)
{
    MetricsReport r;
    r.n_test = pred.size();
    r.rmse = rmse(pred, truth);
    r.pearson_r = pred.size() >= 2 ? pearson(pred, truth) : std::nullopt;
    std::tie(r.me, r.sde) = me_sde(pred, truth);
    r.aami_pass = aami_check(r.me, r.sde);

    const double lhs = r.rmse * r.rmse;
    const double rhs = r.me * r.me + r.sde * r.sde;
    if (std::abs(lhs - rhs) > 1e-9 * std::max(1.0, lhs))
        throw std::logic_error("metric identity rmse^2 = me^2 + sde^2 violated: " + std::to_string(lhs) + " vs " +
                               std::to_string(rhs));
    return r;
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz evaluation.
double beta_continued_fraction(double a, double b, double x)
{
    constexpr int max_iter = 500;
    constexpr double eps = 1e-15;
    constexpr double tiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny)
        d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny)
            d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny)
            c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny)
            d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny)
            c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps)
            return h;
    }
    throw std::runtime_error("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x)
{
    if (!(a > 0.0) || !(b > 0.0))
        throw std::invalid_argument("incomplete_beta requires a, b > 0");
    if (x < 0.0 || x > 1.0)
        throw std::invalid_argument("incomplete_beta requires x in [0, 1]");
    if (x == 0.0 || x == 1.0)
        return x;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof)
{
    if (!(dof > 0.0))
        throw std::invalid_argument("student_t_cdf requires dof > 0");
    if (std::isinf(t))
        return t > 0 ? 1.0 : 0.0;
    const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
    return t >= 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b, Diagnostics* diag)
{
    require_paired(a, b, 3, "paired_ttest");
    const std::size_t n = a.size();
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i)
        diff[i] = a[i] - b[i];
    const double md = mean_of(diff);
    double ss = 0.0;
    for (double d : diff)
        ss += (d - md) * (d - md);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    TTestResult r;
    r.dof = static_cast<double>(n - 1);
    if (sd == 0.0) {
        if (md == 0.0) {
            r.statistic = 0.0;
            r.p_value = 1.0;
            warn(diag, "paired t-test: all differences are zero; reporting p = 1");
        } else {
            r.statistic = md > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            r.p_value = 0.0;
            warn(diag, "paired t-test: differences are constant and non-zero; reporting p = 0");
        }
    } else {
        r.statistic = md / (sd / std::sqrt(static_cast<double>(n)));
        r.p_value = std::clamp(2.0 * (1.0 - student_t_cdf(std::abs(r.statistic), r.dof)), 0.0, 1.0);
    }
    r.significant_at_05 = r.p_value < 0.05;
    return r;
}

}  // namespace pitn
