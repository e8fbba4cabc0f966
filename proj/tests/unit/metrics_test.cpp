#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pitn/metrics.hpp"

using namespace pitn;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = 80.0, double hi = 160.0)
{
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (double& x : v)
        x = d(rng);
    return v;
}

// Two-pass loops written independently of the library.
struct Naive {
    double rmse, r, me, sde;
};

Naive naive_metrics(const std::vector<double>& p, const std::vector<double>& t)
{
    const double n = static_cast<double>(p.size());
    double se = 0, sp = 0, st = 0, e = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        se += (p[i] - t[i]) * (p[i] - t[i]);
        sp += p[i];
        st += t[i];
        e += p[i] - t[i];
    }
    const double mp = sp / n, mt = st / n, me = e / n;
    double cov = 0, vp = 0, vt = 0, ve = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        cov += (p[i] - mp) * (t[i] - mt);
        vp += (p[i] - mp) * (p[i] - mp);
        vt += (t[i] - mt) * (t[i] - mt);
        ve += (p[i] - t[i] - me) * (p[i] - t[i] - me);
    }
    return {std::sqrt(se / n), cov / std::sqrt(vp * vt), me, std::sqrt(ve / n)};
}

// Composite Simpson integration of the t density from 0 to |t|.
double t_cdf_by_integration(double t, double dof)
{
    const double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) / std::sqrt(dof * std::numbers::pi);
    const auto pdf = [&](double x) { return c * std::pow(1.0 + x * x / dof, -(dof + 1) / 2); };
    const int n = 20000;
    const double h = std::abs(t) / n;
    double s = pdf(0) + pdf(std::abs(t));
    for (int i = 1; i < n; ++i)
        s += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
    const double half = s * h / 3.0;
    return t >= 0 ? 0.5 + half : 0.5 - half;
}

}  // namespace

TEST(Metrics, PerfectPredictions)
{
    const std::vector<double> t{110, 120, 125, 131};
    const MetricsReport r = evaluate_metrics(t, t);
    EXPECT_EQ(r.rmse, 0.0);
    ASSERT_TRUE(r.pearson_r.has_value());
    EXPECT_DOUBLE_EQ(*r.pearson_r, 1.0);
    EXPECT_EQ(r.me, 0.0);
    EXPECT_EQ(r.sde, 0.0);
    EXPECT_TRUE(r.aami_pass);
    EXPECT_EQ(r.n_test, 4u);
}

TEST(Metrics, MeanErrorAboveFiveFailsAami)
{
    const std::vector<double> t{110, 120, 125, 131};
    std::vector<double> p = t;
    for (double& v : p)
        v += 5.1;
    const MetricsReport r = evaluate_metrics(p, t);
    EXPECT_NEAR(r.me, 5.1, 1e-12);
    EXPECT_FALSE(r.aami_pass);
    EXPECT_TRUE(aami_check(4.99, 7.99));
    EXPECT_FALSE(aami_check(-5.0, 1.0));
    EXPECT_FALSE(aami_check(0.0, 8.0));
}

TEST(Metrics, NegatedTruthIsPerfectlyAnticorrelated)
{
    const std::vector<double> t{1, 4, 2, 8, 5};
    std::vector<double> p;
    for (double v : t)
        p.push_back(-v);
    EXPECT_NEAR(*pearson(p, t), -1.0, 1e-15);
}

TEST(Metrics, ZeroVarianceGivesNullPearson)
{
    const std::vector<double> flat{3, 3, 3};
    const std::vector<double> t{1, 2, 3};
    EXPECT_FALSE(pearson(flat, t).has_value());
    EXPECT_FALSE(pearson(t, flat).has_value());
    EXPECT_FALSE(evaluate_metrics(flat, t).pearson_r.has_value());
}

TEST(Metrics, MatchNaiveLoopsAndSatisfyIdentity)
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto t = random_vector(100, rng);
        auto p = random_vector(100, rng, -10.0, 10.0);
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] += t[i];
        const Naive n = naive_metrics(p, t);
        const MetricsReport r = evaluate_metrics(p, t);
        EXPECT_NEAR(r.rmse, n.rmse, 1e-10);
        EXPECT_NEAR(*r.pearson_r, n.r, 1e-10);
        EXPECT_NEAR(r.me, n.me, 1e-10);
        EXPECT_NEAR(r.sde, n.sde, 1e-10);
        EXPECT_NEAR(r.rmse * r.rmse, r.me * r.me + r.sde * r.sde, 1e-10 * r.rmse * r.rmse);
    }
}

TEST(Metrics, PearsonIsInvariantUnderPositiveAffineMaps)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> scale(0.01, 100.0), shift(-50.0, 50.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto t = random_vector(30, rng);
        const auto p = random_vector(30, rng);
        const double a = scale(rng), b = shift(rng);
        std::vector<double> q;
        for (double v : p)
            q.push_back(a * v + b);
        EXPECT_NEAR(*pearson(q, t), *pearson(p, t), 1e-10);
    }
}

TEST(Metrics, RejectMismatchedOrShortInputs)
{
    const std::vector<double> a{1, 2, 3}, b{1, 2};
    EXPECT_THROW(rmse(a, b), std::invalid_argument);
    EXPECT_THROW(pearson(std::vector<double>{1.0}, std::vector<double>{1.0}), std::invalid_argument);
    EXPECT_THROW(paired_ttest(b, b), std::invalid_argument);
}

TEST(IncompleteBeta, ClosedForms)
{
    for (double x : {0.0, 0.1, 0.37, 0.5, 0.9, 1.0}) {
        EXPECT_NEAR(incomplete_beta(1.0, 1.0, x), x, 1e-14);
        EXPECT_NEAR(incomplete_beta(3.0, 1.0, x), x * x * x, 1e-14);
        EXPECT_NEAR(incomplete_beta(1.0, 2.0, x), 1.0 - (1.0 - x) * (1.0 - x), 1e-14);
    }
}

TEST(StudentT, MatchesNumericalIntegration)
{
    for (double dof : {1.0, 3.0, 9.0, 30.0})
        for (double t : {-3.0, -1.2, 0.0, 0.5, 2.262, 4.0})
            EXPECT_NEAR(student_t_cdf(t, dof), t_cdf_by_integration(t, dof), 1e-9) << t << " " << dof;
}

TEST(StudentT, TableValueAtNineDegreesOfFreedom)
{
    // Two-sided 5% critical value for 9 degrees of freedom is 2.262.
    EXPECT_NEAR(student_t_cdf(2.262, 9.0), 0.975, 1e-3);
}

TEST(PairedTTest, IdenticalErrorsGiveUnitPValue)
{
    const std::vector<double> a{1, 2, 3, 4};
    Diagnostics d;
    const TTestResult r = paired_ttest(a, a, &d);
    EXPECT_EQ(r.statistic, 0.0);
    EXPECT_EQ(r.p_value, 1.0);
    EXPECT_FALSE(r.significant_at_05);
    EXPECT_FALSE(d.empty());
}

TEST(PairedTTest, ConstantDifferenceGivesZeroPValue)
{
    const std::vector<double> a{1, 2, 3, 4}, b{0, 1, 2, 3};
    const TTestResult r = paired_ttest(a, b);
    EXPECT_TRUE(std::isinf(r.statistic));
    EXPECT_GT(r.statistic, 0.0);
    EXPECT_EQ(r.p_value, 0.0);
    EXPECT_TRUE(r.significant_at_05);
}

TEST(PairedTTest, TenSampleFixture)
{
    const std::vector<double> a{5.1, 4.8, 6.0, 5.5, 4.9, 6.3, 5.7, 5.2, 4.6, 5.9};
    const std::vector<double> b{4.9, 4.9, 5.1, 5.0, 4.2, 5.8, 5.9, 4.6, 4.4, 5.1};
    double md = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        md += a[i] - b[i];
    md /= 10.0;
    double ss = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        ss += std::pow(a[i] - b[i] - md, 2);
    const double t = md / (std::sqrt(ss / 9.0) / std::sqrt(10.0));

    const TTestResult r = paired_ttest(a, b);
    EXPECT_NEAR(r.statistic, t, 1e-12);
    EXPECT_EQ(r.dof, 9.0);
    EXPECT_NEAR(r.p_value, 2.0 * (1.0 - t_cdf_by_integration(std::abs(t), 9.0)), 1e-3);
    EXPECT_GE(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
}
