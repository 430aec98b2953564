#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "reltrans/estimators.hpp"

namespace reltrans {

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley step against erfc, good to ~1e-15 relative.
inline double normal_quantile(double p)
{
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::ParameterError, "inference", "quantile probability must lie in (0,1)");
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
          / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p <= 1 - plow) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
          / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        const double q = std::sqrt(-2 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
          / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
    return x - u / (1 + x * u / 2);
}

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    bool contains(double v) const { return lower <= v && v <= upper; }
};

struct EstimateRecord {
    TargetEstimates points;
    std::optional<double> se_alpha, se_beta, se_phi, se_psi;
    std::optional<Interval> ci_alpha, ci_beta, ci_phi, ci_psi;
    double level = 0.95;
    std::size_t n = 0;
};

inline constexpr double kIfMeanTolerance = 1e-8;

namespace detail {

inline double if_standard_error(const std::vector<double>& v, const char* name)
{
    if (v.empty()) throw Error(ErrorCode::InconsistentInput, "inference", std::string(name) + ": empty IF vector");
    double sum = 0.0, sq = 0.0;
    for (double x : v) {
        sum += x;
        sq += x * x;
    }
    const double n = static_cast<double>(v.size());
    if (std::abs(sum / n) > kIfMeanTolerance)
        throw Error(ErrorCode::InconsistentInput, "inference",
                    std::string(name) + ": IF mean " + std::to_string(sum / n) + " is not zero");
    return std::sqrt(sq / n) / std::sqrt(n);
}

} // namespace detail

/// Wald intervals point +/- z se with se = sqrt(P_n[IF^2] / n).
inline EstimateRecord wald_inference(const TargetEstimates& points, const IfVectors& ifs, double level)
{
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::ParameterError, "inference", "level must lie in (0,1)");
    const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    EstimateRecord r;
    r.points = points;
    r.level = level;
    r.n = ifs.alpha.size();
    auto fill = [z](double point, double se, std::optional<double>& se_out, std::optional<Interval>& ci) {
        se_out = se;
        ci = Interval{point - z * se, point + z * se};
    };
    fill(points.alpha, detail::if_standard_error(ifs.alpha, "alpha"), r.se_alpha, r.ci_alpha);
    fill(points.beta, detail::if_standard_error(ifs.beta, "beta"), r.se_beta, r.ci_beta);
    fill(points.psi, detail::if_standard_error(ifs.psi, "psi"), r.se_psi, r.ci_psi);
    if (points.phi && ifs.phi) fill(*points.phi, detail::if_standard_error(*ifs.phi, "phi"), r.se_phi, r.ci_phi);
    return r;
}

/// Record for methods without an influence function: points only.
inline EstimateRecord points_only(const TargetEstimates& points, double level, std::size_t n)
{
    EstimateRecord r;
    r.points = points;
    r.level = level;
    r.n = n;
    return r;
}

} // namespace reltrans
