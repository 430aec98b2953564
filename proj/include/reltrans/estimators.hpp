#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "reltrans/crossfit.hpp"

namespace reltrans {

enum class Method { If, Or, Ipw, IpwAlt, A4Star, TrialTarget, Plugin };

inline std::string_view to_string(Method m)
{
    switch (m) {
    case Method::If:          return "if";
    case Method::Or:          return "or";
    case Method::Ipw:         return "ipw";
    case Method::IpwAlt:      return "ipw_alt";
    case Method::A4Star:      return "a4star";
    case Method::TrialTarget: return "trial_target";
    case Method::Plugin:      return "plugin";
    }
    return "?";
}

inline std::optional<Method> method_from_string(std::string_view s)
{
    for (auto m : {Method::If, Method::Or, Method::Ipw, Method::IpwAlt, Method::A4Star, Method::TrialTarget,
                   Method::Plugin})
        if (to_string(m) == s) return m;
    return std::nullopt;
}

inline constexpr double kBetaFloor = 1e-12;

struct TargetEstimates {
    double alpha = 0.0;
    double beta = 0.0;
    std::optional<double> phi;   // empty when |beta| < 1e-12
    double psi = 0.0;
    Method method = Method::If;
    Scenario scenario = Scenario::One;
};

struct IfVectors {
    std::vector<double> alpha, beta, psi;
    std::optional<std::vector<double>> phi;
};

struct EstimationResult {
    TargetEstimates points;
    std::optional<IfVectors> ifs;
};

/// Nuisances a (scenario, method) pair reads.
inline std::vector<NuisanceId> required_nuisances(Scenario sc, Method m)
{
    using N = NuisanceId;
    if (m == Method::TrialTarget) return {N::Mu01, N::Mu00, N::Pi};
    switch (sc) {
    case Scenario::One:
        switch (m) {
        case Method::If:     return {N::Mu11, N::Mu10, N::Mu00, N::Q, N::Tau};
        case Method::Or:     return {N::Mu11, N::Mu10};
        case Method::Ipw:    return {N::Mu10, N::Mu00, N::Q, N::Tau};
        case Method::IpwAlt: return {N::Mu11, N::Mu10, N::Mu00, N::Q, N::Tau};
        case Method::A4Star: return {N::Mu11, N::Q, N::Tau};
        case Method::Plugin: return {N::Mu11, N::Mu10, N::Mu00};
        default: break;
        }
        break;
    case Scenario::Two:
        if (m == Method::If) return {N::Mu11, N::Mu10, N::Mu00, N::Q, N::Tau, N::Pi};
        break;
    case Scenario::Three:
        if (m == Method::If) return {N::Mu11, N::Mu10, N::Q, N::Tau, N::Mu00W, N::M, N::PiW};
        break;
    }
    throw Error(ErrorCode::ConfigError, "estimators",
                "method '" + std::string(to_string(m)) + "' is not available in scenario " + std::to_string(to_int(sc)));
}

inline bool returns_ifs(Scenario sc, Method m)
{
    if (sc != Scenario::One) return true;
    return m == Method::If || m == Method::A4Star || m == Method::TrialTarget;
}

/// Per-unit pieces of a pair of estimating equations that are affine in the
/// target parameter: IF_i = kappa_i * (h_i - (1 - S_i) * theta), so theta is
/// sum(kappa h) / sum(kappa (1 - S)).
struct EquationTerms {
    std::vector<double> h_alpha, h_beta;
    std::vector<double> kappa_alpha, kappa_beta;
};

namespace detail {

inline double l2(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s / static_cast<double>(v.size()));
}

inline void require(const NuisancePredictions& p, Scenario sc, Method m)
{
    for (auto id : required_nuisances(sc, m))
        if (!p.has(id))
            throw Error(ErrorCode::SpecError, "estimators",
                        "method '" + std::string(to_string(m)) + "' needs prediction '" + std::string(to_string(id)) + "'");
}

inline double solve_affine(const std::vector<double>& h, const std::vector<double>& kappa, const Dataset& d)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        num += kappa[i] * h[i];
        den += kappa[i] * (1 - d.s(i));
    }
    return num / den;
}

inline std::vector<double> centered(const std::vector<double>& h, const std::vector<double>& kappa, const Dataset& d,
                                    double theta)
{
    std::vector<double> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = kappa[i] * (h[i] - (1 - d.s(i)) * theta);
    return out;
}

inline std::vector<double> full_sample_kappa(const Dataset& d)
{
    return std::vector<double>(d.size(), static_cast<double>(d.size()) / static_cast<double>(d.n0()));
}

/// Trial augmentation S tau (mu00 / mu10) [ (A/q)(Y - mu11) - ((1-A)/(1-q)) (mu11/mu10)(Y - mu10) ]
/// with `num` standing in for mu00 (M in scenario 3).
inline double trial_augmentation(const UnitRef& u, double mu11, double mu10, double num, double q, double tau)
{
    if (u.s == 0) return 0.0;
    const double treated = u.a == 1 ? (u.y - mu11) / q : 0.0;
    const double control = u.a == 0 ? (mu11 / mu10) * (u.y - mu10) / (1.0 - q) : 0.0;
    return tau * (num / mu10) * (treated - control);
}

/// Target-sample beta term for scenarios 2/3 and the trial-target method.
inline double target_control_term(const UnitRef& u, double mu00, double pi)
{
    if (u.s == 1) return 0.0;
    const double resid = u.a == 0 ? (u.y - mu00) / pi : 0.0;
    return mu00 + resid;
}

} // namespace detail

/// Builds the per-unit numerators for every supported estimator.
inline EquationTerms equation_terms(Scenario sc, Method m, const Dataset& d, const NuisancePredictions& p)
{
    detail::require(p, sc, m);
    const std::size_t n = d.size();
    EquationTerms t;
    t.h_alpha.assign(n, 0.0);
    t.h_beta.assign(n, 0.0);
    t.kappa_alpha = p.kappa;
    t.kappa_beta = p.kappa;
    auto get = [&](NuisanceId id) -> const std::vector<double>* { return p.has(id) ? &p.at(id) : nullptr; };
    const auto* mu11 = get(NuisanceId::Mu11);
    const auto* mu10 = get(NuisanceId::Mu10);
    const auto* mu00 = get(NuisanceId::Mu00);
    const auto* mu01 = get(NuisanceId::Mu01);
    const auto* q = get(NuisanceId::Q);
    const auto* tau = get(NuisanceId::Tau);
    const auto* pi = get(NuisanceId::Pi);
    const auto* mu00w = get(NuisanceId::Mu00W);
    const auto* mm = get(NuisanceId::M);
    const auto* piw = get(NuisanceId::PiW);

    if (m == Method::TrialTarget) {
        std::size_t clamped = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto u = d.unit(i);
            if (u.s == 1) continue;
            double treated_prob = 1.0 - (*pi)[i];
            if (treated_prob < kTrimEpsilon) {
                treated_prob = kTrimEpsilon;
                ++clamped;
            }
            t.h_alpha[i] = (*mu01)[i] + (u.a == 1 ? (u.y - (*mu01)[i]) / treated_prob : 0.0);
            t.h_beta[i] = detail::target_control_term(u, (*mu00)[i], (*pi)[i]);
        }
        if (static_cast<double>(clamped) > kMaxTrimmedFraction * static_cast<double>(n))
            throw Error(ErrorCode::PositivityViolation, "estimators", "1 - pi: too many predictions needed trimming");
        return t;
    }

    if (sc == Scenario::One) {
        t.kappa_beta = detail::full_sample_kappa(d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto u = d.unit(i);
            if (u.s == 0) t.h_beta[i] = u.y;
            switch (m) {
            case Method::If: {
                const double r = (*mu11)[i] / (*mu10)[i];
                t.h_alpha[i] = detail::trial_augmentation(u, (*mu11)[i], (*mu10)[i], (*mu00)[i], (*q)[i], (*tau)[i])
                             + (u.s == 0 ? r * u.y : 0.0);
                break;
            }
            case Method::Or:
                t.h_alpha[i] = u.s == 0 ? ((*mu11)[i] / (*mu10)[i]) * u.y : 0.0;
                break;
            case Method::Ipw:
                t.h_alpha[i] = u.s == 1 && u.a == 1 ? (*tau)[i] / (*q)[i] * ((*mu00)[i] / (*mu10)[i]) * u.y : 0.0;
                break;
            case Method::IpwAlt:
                t.h_alpha[i] = u.s == 1 && u.a == 0
                                 ? (*tau)[i] / (1.0 - (*q)[i]) * ((*mu11)[i] / (*mu10)[i]) * ((*mu00)[i] / (*mu10)[i]) * u.y
                                 : 0.0;
                break;
            case Method::A4Star:
                t.h_alpha[i] = u.s == 0 ? (*mu11)[i] : (u.a == 1 ? (*tau)[i] / (*q)[i] * (u.y - (*mu11)[i]) : 0.0);
                break;
            case Method::Plugin:
                t.h_alpha[i] = u.s == 0 ? (*mu11)[i] / (*mu10)[i] * (*mu00)[i] : 0.0;
                break;
            default:
                break;
            }
        }
        return t;
    }

    const bool three = sc == Scenario::Three;
    const auto& target_mean = three ? *mu00w : *mu00;
    const auto& target_pi = three ? *piw : *pi;
    const auto& trial_num = three ? *mm : *mu00;
    for (std::size_t i = 0; i < n; ++i) {
        const auto u = d.unit(i);
        if (u.s == 1) {
            t.h_alpha[i] = detail::trial_augmentation(u, (*mu11)[i], (*mu10)[i], trial_num[i], (*q)[i], (*tau)[i]);
            continue;
        }
        const double r = (*mu11)[i] / (*mu10)[i];
        t.h_beta[i] = detail::target_control_term(u, target_mean[i], target_pi[i]);
        t.h_alpha[i] = r * t.h_beta[i];
    }
    return t;
}

/// IF vectors centred at the supplied points.
inline IfVectors influence_contributions(const EquationTerms& t, const Dataset& d, const TargetEstimates& points)
{
    IfVectors v;
    v.alpha = detail::centered(t.h_alpha, t.kappa_alpha, d, points.alpha);
    v.beta = detail::centered(t.h_beta, t.kappa_beta, d, points.beta);
    v.psi.resize(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) v.psi[i] = v.alpha[i] - v.beta[i];
    if (points.phi) {
        std::vector<double> phi(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) phi[i] = (v.alpha[i] - *points.phi * v.beta[i]) / points.beta;
        v.phi = std::move(phi);
    }
    return v;
}

inline IfVectors influence_contributions(Scenario sc, Method m, const Dataset& d, const NuisancePredictions& p,
                                         const TargetEstimates& points)
{
    return influence_contributions(equation_terms(sc, m, d, p), d, points);
}

inline TargetEstimates combine(double alpha, double beta, Method m, Scenario sc)
{
    TargetEstimates e;
    e.alpha = alpha;
    e.beta = beta;
    e.psi = alpha - beta;
    if (std::abs(beta) >= kBetaFloor) e.phi = alpha / beta;
    e.method = m;
    e.scenario = sc;
    return e;
}

/// Solves the (affine) estimating equations and, where defined, returns IFs.
inline EstimationResult estimate(const Dataset& d, const NuisancePredictions& p, Scenario sc, Method m)
{
    if (!d.supports(sc))
        throw Error(ErrorCode::ScenarioMismatch, "estimators",
                    "dataset does not support scenario " + std::to_string(to_int(sc)));
    if (p.kappa.size() != d.size())
        throw Error(ErrorCode::DimensionError, "estimators", "predictions do not match the dataset");
    if (m == Method::TrialTarget) {
        std::size_t treated = 0, control = 0;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (d.s(i) == 0) (d.a(i) == 1 ? treated : control) += 1;
        if (treated == 0 || control == 0)
            throw Error(ErrorCode::StratumEmpty, "estimators", "trial-target method needs both arms in the target sample");
    }
    const auto t = equation_terms(sc, m, d, p);
    const double alpha = detail::solve_affine(t.h_alpha, t.kappa_alpha, d);
    const double beta = detail::solve_affine(t.h_beta, t.kappa_beta, d);
    EstimationResult r;
    r.points = combine(alpha, beta, m, sc);
    if (returns_ifs(sc, m)) r.ifs = influence_contributions(t, d, r.points);
    return r;
}

inline EstimationResult estimate_scenario1(const Dataset& d, const NuisancePredictions& p, Method m)
{
    if (m == Method::TrialTarget)
        throw Error(ErrorCode::ConfigError, "estimators", "use estimate_trial_target for the trial-target method");
    return estimate(d, p, Scenario::One, m);
}

inline EstimationResult estimate_scenario2(const Dataset& d, const NuisancePredictions& p)
{
    return estimate(d, p, Scenario::Two, Method::If);
}

inline EstimationResult estimate_scenario3(const Dataset& d, const NuisancePredictions& p)
{
    return estimate(d, p, Scenario::Three, Method::If);
}

inline EstimationResult estimate_trial_target(const Dataset& d, const NuisancePredictions& p)
{
    return estimate(d, p, Scenario::Two, Method::TrialTarget);
}

// --- bias-term diagnostics (need true nuisance values) ----------------------

struct NuisanceValues {
    std::vector<double> mu11, mu10, mu00, tau, pi, mu00w, m, piw;
};

namespace detail {

inline double diff_norm(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size() || a.empty())
        throw Error(ErrorCode::DimensionError, "estimators", "diagnostic vectors differ in length");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

inline std::vector<double> ratio(const std::vector<double>& a, const std::vector<double>& b)
{
    std::vector<double> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] / b[i];
    return r;
}

} // namespace detail

/// ||mu11^/mu10^ - mu11/mu10|| (||mu00^ - mu00|| + ||mu10^ - mu10|| + ||tau^ - tau||)
inline double r1n(const NuisanceValues& est, const NuisanceValues& truth)
{
    using detail::diff_norm;
    const double lead = diff_norm(detail::ratio(est.mu11, est.mu10), detail::ratio(truth.mu11, truth.mu10));
    return lead * (diff_norm(est.mu00, truth.mu00) + diff_norm(est.mu10, truth.mu10) + diff_norm(est.tau, truth.tau));
}

inline double r2n_beta(const NuisanceValues& est, const NuisanceValues& truth)
{
    return detail::diff_norm(est.mu00, truth.mu00) * detail::diff_norm(est.pi, truth.pi);
}

inline double r2n_alpha(const NuisanceValues& est, const NuisanceValues& truth)
{
    return r1n(est, truth) + r2n_beta(est, truth);
}

inline double r3n_beta(const NuisanceValues& est, const NuisanceValues& truth)
{
    return detail::diff_norm(est.mu00w, truth.mu00w) * detail::diff_norm(est.piw, truth.piw);
}

inline double r3n_alpha(const NuisanceValues& est, const NuisanceValues& truth)
{
    using detail::diff_norm;
    const double lead = diff_norm(detail::ratio(est.mu11, est.mu10), detail::ratio(truth.mu11, truth.mu10));
    return lead * (diff_norm(est.m, truth.m) + diff_norm(est.mu10, truth.mu10) + diff_norm(est.tau, truth.tau))
         + r3n_beta(est, truth);
}

} // namespace reltrans
