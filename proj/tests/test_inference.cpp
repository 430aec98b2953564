#include <gtest/gtest.h>

#include <cmath>

#include <reltrans/inference.hpp>

using namespace reltrans;

namespace {

TargetEstimates points(double alpha, double beta)
{
    return combine(alpha, beta, Method::If, Scenario::One);
}

IfVectors ifs_of(const std::vector<double>& a, const std::vector<double>& b)
{
    IfVectors v;
    v.alpha = a;
    v.beta = b;
    v.psi.resize(a.size());
    std::vector<double> phi(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v.psi[i] = a[i] - b[i];
    v.phi = phi;
    return v;
}

} // namespace

TEST(NormalQuantile, KnownValues)
{
    EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-14);
    EXPECT_NEAR(normal_quantile(0.5), 0.0, 1e-15);
    EXPECT_NEAR(normal_quantile(0.95), 1.6448536269514722, 1e-14);
    EXPECT_NEAR(normal_quantile(0.005), -2.5758293035489004, 1e-13);
    EXPECT_NEAR(normal_quantile(1e-10), -6.361340902404056, 1e-10);
    for (double p : {1e-6, 0.01, 0.2, 0.7, 0.99})
        EXPECT_NEAR(normal_quantile(p), -normal_quantile(1 - p), 1e-11);
    EXPECT_THROW(normal_quantile(0.0), Error);
    EXPECT_THROW(normal_quantile(1.0), Error);
}

TEST(Wald, ZeroInfluenceGivesDegenerateInterval)
{
    const std::vector<double> zero(10, 0.0);
    const auto r = wald_inference(points(1.5, 0.5), ifs_of(zero, zero), 0.95);
    EXPECT_EQ(*r.se_alpha, 0.0);
    EXPECT_EQ(r.ci_alpha->lower, 1.5);
    EXPECT_EQ(r.ci_alpha->upper, 1.5);
    EXPECT_EQ(*r.se_phi, 0.0);
    EXPECT_EQ(r.n, 10u);
}

TEST(Wald, AlternatingInfluence)
{
    for (std::size_t n : {2u, 100u, 10000u}) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = i % 2 ? -1.0 : 1.0;
        const auto r = wald_inference(points(2.0, 1.0), ifs_of(v, std::vector<double>(n, 0.0)), 0.95);
        const double se = 1.0 / std::sqrt(double(n));
        EXPECT_NEAR(*r.se_alpha, se, 1e-15);
        EXPECT_NEAR(r.ci_alpha->upper - 2.0, 1.959964 * se, 1e-6 * se);
        EXPECT_NEAR(2.0 - r.ci_alpha->lower, 1.959964 * se, 1e-6 * se);
        EXPECT_NEAR(*r.se_psi, se, 1e-15);
    }
}

TEST(Wald, NonCenteredInfluenceRejected)
{
    std::vector<double> v{1.0, 1.0, -1.0};
    try {
        wald_inference(points(1, 1), ifs_of(v, v), 0.95);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InconsistentInput);
    }
    EXPECT_THROW(wald_inference(points(1, 1), ifs_of({0, 0}, {0, 0}), 1.0), Error);
}

TEST(Wald, LevelWidensInterval)
{
    std::vector<double> v{0.5, -0.5, 2.0, -2.0};
    const auto narrow = wald_inference(points(1, 1), ifs_of(v, v), 0.8);
    const auto wide = wald_inference(points(1, 1), ifs_of(v, v), 0.99);
    EXPECT_LT(narrow.ci_alpha->upper, wide.ci_alpha->upper);
    EXPECT_TRUE(narrow.ci_alpha->contains(1.0));
    EXPECT_FALSE(narrow.ci_alpha->contains(5.0));
}

TEST(Wald, PointsOnlyHasNoIntervals)
{
    const auto r = points_only(points(3, 1), 0.9, 7);
    EXPECT_FALSE(r.se_alpha.has_value());
    EXPECT_FALSE(r.ci_beta.has_value());
    EXPECT_EQ(*r.points.phi, 3.0);
    EXPECT_EQ(r.n, 7u);
}
