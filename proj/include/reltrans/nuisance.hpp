#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "reltrans/data.hpp"
#include "reltrans/glm.hpp"

namespace reltrans {

/// Every nuisance function the estimators can consume.
enum class NuisanceId : std::size_t {
    Mu11,    // E[Y | X, S=1, A=1]
    Mu10,    // E[Y | X, S=1, A=0]
    Mu00,    // E[Y | X, S=0] (scenario 1) or E[Y | X, S=0, A=0]
    Mu01,    // E[Y | X, S=0, A=1], trial-target method only
    Q,       // Pr[A=1 | X, S=1]
    Tau,     // Pr[S=0 | X] / Pr[S=1 | X]
    Pi,      // Pr[A=0 | X, S=0]
    Mu00W,   // E[Y | X, W, S=0, A=0]
    M,       // E[ Mu00W(X, W) | X, S=0 ]
    PiW,     // Pr[A=0 | X, W, S=0]
};

inline constexpr std::size_t kNuisanceCount = 10;

inline constexpr std::array<NuisanceId, kNuisanceCount> kAllNuisances = {
    NuisanceId::Mu11, NuisanceId::Mu10, NuisanceId::Mu00, NuisanceId::Mu01, NuisanceId::Q,
    NuisanceId::Tau,  NuisanceId::Pi,   NuisanceId::Mu00W, NuisanceId::M,   NuisanceId::PiW,
};

inline std::string_view to_string(NuisanceId id)
{
    constexpr std::array<std::string_view, kNuisanceCount> names = {
        "mu11", "mu10", "mu00", "mu01", "q", "tau", "pi", "mu00w", "m", "piw"};
    return names[static_cast<std::size_t>(id)];
}

inline std::optional<NuisanceId> nuisance_from_string(std::string_view name)
{
    for (auto id : kAllNuisances)
        if (to_string(id) == name) return id;
    return std::nullopt;
}

/// W-models take the concatenated vector (x, w) as covariates.
inline bool uses_w(NuisanceId id) { return id == NuisanceId::Mu00W || id == NuisanceId::PiW; }

inline bool is_outcome_model(NuisanceId id)
{
    return id == NuisanceId::Mu11 || id == NuisanceId::Mu10 || id == NuisanceId::Mu00 || id == NuisanceId::Mu01
        || id == NuisanceId::Mu00W;
}

/// A nuisance evaluated at one unit. The row index lets per-unit perturbations
/// address their noise draw; ordinary functions ignore it.
using UnitFunction = std::function<double(const UnitRef&)>;

struct FeatureSpec {
    std::vector<std::size_t> covariate_indices;   // into x, or into (x, w) for W-models
    bool include_intercept = true;
    std::optional<Family> family;                 // default chosen per nuisance

    static FeatureSpec all_of(std::size_t count, bool intercept = true)
    {
        FeatureSpec f;
        for (std::size_t j = 0; j < count; ++j) f.covariate_indices.push_back(j);
        f.include_intercept = intercept;
        return f;
    }
};

struct FittedModel { FeatureSpec features; };
struct KnownConstant { double value; };
struct OracleFunction { UnitFunction function; };
struct PerturbedFunction { UnitFunction function; };

using NuisanceModel = std::variant<FittedModel, KnownConstant, OracleFunction, PerturbedFunction>;

enum class Provenance { Fitted, Oracle, Known, Perturbed };

inline std::string_view to_string(Provenance p)
{
    switch (p) {
    case Provenance::Fitted:    return "fitted";
    case Provenance::Oracle:    return "oracle";
    case Provenance::Known:     return "known";
    case Provenance::Perturbed: return "perturbed";
    }
    return "?";
}

class NuisanceSpec {
public:
    NuisanceSpec& set(NuisanceId id, NuisanceModel model)
    {
        models_[static_cast<std::size_t>(id)] = std::move(model);
        return *this;
    }
    bool has(NuisanceId id) const { return models_[static_cast<std::size_t>(id)].has_value(); }
    const NuisanceModel& get(NuisanceId id) const
    {
        const auto& m = models_[static_cast<std::size_t>(id)];
        if (!m) throw Error(ErrorCode::SpecError, "nuisance", "nuisance '" + std::string(to_string(id)) + "' is not specified");
        return *m;
    }

private:
    std::array<std::optional<NuisanceModel>, kNuisanceCount> models_;
};

struct NuisanceBundle {
    double kappa = 1.0;
    double target_fraction = 1.0;   // fraction of s = 0 in the training subset
    std::array<std::optional<UnitFunction>, kNuisanceCount> functions;
    std::array<Provenance, kNuisanceCount> provenance{};
    std::array<std::optional<GlmFit>, kNuisanceCount> fits;

    bool has(NuisanceId id) const { return functions[static_cast<std::size_t>(id)].has_value(); }
    double operator()(NuisanceId id, const UnitRef& u) const
    {
        const auto& f = functions[static_cast<std::size_t>(id)];
        if (!f) throw Error(ErrorCode::SpecError, "nuisance", "bundle lacks '" + std::string(to_string(id)) + "'");
        return (*f)(u);
    }
};

/// kappa = 1 / (fraction of the subset with s = 0).
inline double estimate_kappa(const Dataset& data, std::span<const std::size_t> subset)
{
    if (subset.empty()) throw Error(ErrorCode::StructuralError, "nuisance", "estimate_kappa: empty subset");
    std::size_t zeros = 0;
    for (auto i : subset) zeros += data.s(i) == 0 ? 1 : 0;
    if (zeros == 0)
        throw Error(ErrorCode::DegenerateKappa, "nuisance", "estimate_kappa: subset has no target (s = 0) unit");
    return static_cast<double>(subset.size()) / static_cast<double>(zeros);
}

namespace detail {

inline double covariate(const UnitRef& u, std::size_t index)
{
    if (index < u.x.size()) return u.x[index];
    const auto k = index - u.x.size();
    if (k >= u.w.size())
        throw Error(ErrorCode::DimensionError, "nuisance", "covariate index " + std::to_string(index) + " out of range");
    return u.w[k];
}

inline void check_features(const FeatureSpec& f, std::size_t available, NuisanceId id)
{
    if (f.covariate_indices.empty() && !f.include_intercept)
        throw Error(ErrorCode::SpecError, "nuisance", std::string(to_string(id)) + ": model has no regressor");
    for (auto j : f.covariate_indices)
        if (j >= available)
            throw Error(ErrorCode::SpecError, "nuisance",
                        std::string(to_string(id)) + ": covariate index " + std::to_string(j) + " out of range");
}

/// Design matrix of the selected regressors over `rows`.
inline Eigen::MatrixXd design_matrix(const Dataset& d, std::span<const std::size_t> rows, const FeatureSpec& f)
{
    const auto off = f.include_intercept ? 1 : 0;
    Eigen::MatrixXd z(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(f.covariate_indices.size()) + off);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto u = d.unit(rows[r]);
        const auto ri = static_cast<Eigen::Index>(r);
        if (off) z(ri, 0) = 1.0;
        for (std::size_t j = 0; j < f.covariate_indices.size(); ++j)
            z(ri, static_cast<Eigen::Index>(j) + off) = covariate(u, f.covariate_indices[j]);
    }
    return z;
}

inline UnitFunction glm_function(GlmFit fit, std::vector<std::size_t> cols)
{
    return [fit = std::move(fit), cols = std::move(cols)](const UnitRef& u) {
        double buf[64];
        std::vector<double> heap;
        double* xs = buf;
        if (cols.size() > 64) {
            heap.resize(cols.size());
            xs = heap.data();
        }
        for (std::size_t j = 0; j < cols.size(); ++j) xs[j] = covariate(u, cols[j]);
        return predict(fit, std::span<const double>(xs, cols.size()));
    };
}

inline bool binary_outcome(const Dataset& d)
{
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d.y(i) != 0.0 && d.y(i) != 1.0) return false;
    return true;
}

} // namespace detail

/// Fits (or binds) every nuisance present in `spec` on `train` only.
inline NuisanceBundle fit_bundle(const Dataset& data, const NuisanceSpec& spec, std::span<const std::size_t> train,
                                 Scenario scenario)
{
    NuisanceBundle b;
    b.kappa = estimate_kappa(data, train);
    b.target_fraction = 1.0 / b.kappa;
    const bool binary_y = detail::binary_outcome(data);

    struct Stratum {
        std::function<bool(std::size_t)> member;
        std::function<double(std::size_t)> response;
        const char* label;
    };
    auto y_of = [&](std::size_t i) { return data.y(i); };
    auto stratum_for = [&](NuisanceId id) -> Stratum {
        switch (id) {
        case NuisanceId::Mu11: return {[&](std::size_t i) { return data.s(i) == 1 && data.a(i) == 1; }, y_of, "s=1,a=1"};
        case NuisanceId::Mu10: return {[&](std::size_t i) { return data.s(i) == 1 && data.a(i) == 0; }, y_of, "s=1,a=0"};
        case NuisanceId::Mu00:
            if (scenario == Scenario::One) return {[&](std::size_t i) { return data.s(i) == 0; }, y_of, "s=0"};
            return {[&](std::size_t i) { return data.s(i) == 0 && data.a(i) == 0; }, y_of, "s=0,a=0"};
        case NuisanceId::Mu01: return {[&](std::size_t i) { return data.s(i) == 0 && data.a(i) == 1; }, y_of, "s=0,a=1"};
        case NuisanceId::Q:
            return {[&](std::size_t i) { return data.s(i) == 1; }, [&](std::size_t i) { return double(data.a(i)); }, "s=1"};
        case NuisanceId::Tau:
            return {[](std::size_t) { return true; }, [&](std::size_t i) { return data.s(i) == 0 ? 1.0 : 0.0; }, "all"};
        case NuisanceId::Pi:
        case NuisanceId::PiW:
            return {[&](std::size_t i) { return data.s(i) == 0; }, [&](std::size_t i) { return data.a(i) == 0 ? 1.0 : 0.0; }, "s=0"};
        case NuisanceId::Mu00W:
            return {[&](std::size_t i) { return data.s(i) == 0 && data.a(i) == 0; }, y_of, "s=0,a=0"};
        case NuisanceId::M: return {[&](std::size_t i) { return data.s(i) == 0; }, y_of, "s=0"};
        }
        throw Error(ErrorCode::SpecError, "nuisance", "unknown nuisance");
    };

    auto fit_one = [&](NuisanceId id, const FeatureSpec& f) {
        const auto available = data.p() + (uses_w(id) ? data.q() : 0);
        detail::check_features(f, available, id);
        const auto st = stratum_for(id);
        std::vector<std::size_t> rows;
        for (auto i : train)
            if (st.member(i)) rows.push_back(i);
        if (rows.empty())
            throw Error(ErrorCode::StratumEmpty, "nuisance",
                        std::string(to_string(id)) + ": fitting stratum {" + st.label + "} is empty");
        if (uses_w(id))
            for (auto i : rows)
                if (!data.has_w(i))
                    throw Error(ErrorCode::ScenarioMismatch, "nuisance",
                                std::string(to_string(id)) + ": w missing on a target row");

        Family family = Family::Logistic;
        if (f.family) family = *f.family;
        else if (id == NuisanceId::M) family = Family::Linear;
        else if (is_outcome_model(id)) family = binary_y ? Family::Logistic : Family::Linear;

        Eigen::VectorXd response(static_cast<Eigen::Index>(rows.size()));
        if (id == NuisanceId::M) {
            const auto idx = static_cast<std::size_t>(NuisanceId::Mu00W);
            if (!b.functions[idx])
                throw Error(ErrorCode::SpecError, "nuisance", "m: requires mu00w in the same bundle");
            for (std::size_t r = 0; r < rows.size(); ++r)
                response[static_cast<Eigen::Index>(r)] = (*b.functions[idx])(data.unit(rows[r]));
        } else {
            for (std::size_t r = 0; r < rows.size(); ++r) response[static_cast<Eigen::Index>(r)] = st.response(rows[r]);
        }
        auto fit = fit_glm(detail::design_matrix(data, rows, f), response, family);
        fit.has_intercept = f.include_intercept;
        b.fits[static_cast<std::size_t>(id)] = fit;
        if (id == NuisanceId::Tau) {
            // model Pr[S=0 | X] and transform to odds
            auto p0 = detail::glm_function(std::move(fit), f.covariate_indices);
            return UnitFunction([p0 = std::move(p0)](const UnitRef& u) {
                const double v = p0(u);
                return v / (1.0 - v);
            });
        }
        return detail::glm_function(std::move(fit), f.covariate_indices);
    };

    // mu00w precedes m so the nested regression can see it
    constexpr std::array<NuisanceId, kNuisanceCount> order = {
        NuisanceId::Mu11, NuisanceId::Mu10, NuisanceId::Mu00, NuisanceId::Mu01, NuisanceId::Q,
        NuisanceId::Tau,  NuisanceId::Pi,   NuisanceId::Mu00W, NuisanceId::PiW, NuisanceId::M,
    };
    for (auto id : order) {
        if (!spec.has(id)) continue;
        const auto k = static_cast<std::size_t>(id);
        std::visit(
            [&](const auto& model) {
                using T = std::decay_t<decltype(model)>;
                if constexpr (std::is_same_v<T, FittedModel>) {
                    b.functions[k] = fit_one(id, model.features);
                    b.provenance[k] = Provenance::Fitted;
                } else if constexpr (std::is_same_v<T, KnownConstant>) {
                    const double v = model.value;
                    b.functions[k] = UnitFunction([v](const UnitRef&) { return v; });
                    b.provenance[k] = Provenance::Known;
                } else if constexpr (std::is_same_v<T, OracleFunction>) {
                    b.functions[k] = model.function;
                    b.provenance[k] = Provenance::Oracle;
                } else {
                    b.functions[k] = model.function;
                    b.provenance[k] = Provenance::Perturbed;
                }
            },
            spec.get(id));
    }
    return b;
}

// --- perturbed oracles -------------------------------------------------------

enum class PerturbKind {
    Probability,   // expit(logit(truth) + h eps)
    Mean,          // truth + h eps
    Odds,          // truth is Pr[S=1|x]; returns (1 - t^) / t^ with t^ probability-perturbed
};

/// Where the noise lives: one draw per function, or one draw per unit row.
enum class PerturbMode { Function, PerUnit };

namespace detail {

inline double apply_perturbation(PerturbKind kind, double truth, double shift)
{
    switch (kind) {
    case PerturbKind::Probability: return expit(logit(truth) + shift);
    case PerturbKind::Mean: return truth + shift;
    case PerturbKind::Odds: {
        const double t = expit(logit(truth) + shift);
        return (1.0 - t) / t;
    }
    }
    return truth;
}

} // namespace detail

/// Perturbed copy of `truth` using explicit noise draws. `eps` holds one
/// value (function-level) or one value per unit row.
inline UnitFunction perturb_with_noise(UnitFunction truth, PerturbKind kind, double h, std::vector<double> eps)
{
    if (h < 0.0) throw Error(ErrorCode::ParameterError, "nuisance", "perturbation scale h must be >= 0");
    if (eps.empty()) throw Error(ErrorCode::ParameterError, "nuisance", "perturbation needs at least one draw");
    if (h == 0.0) {
        if (kind != PerturbKind::Odds) return truth;
        return [truth = std::move(truth)](const UnitRef& u) {
            const double t = truth(u);
            return (1.0 - t) / t;
        };
    }
    return [truth = std::move(truth), kind, h, eps = std::move(eps)](const UnitRef& u) {
        const double e = eps.size() == 1 ? eps.front() : eps.at(u.row);
        return detail::apply_perturbation(kind, truth(u), h * e);
    };
}

/// Noise eps ~ Normal(mean n^-r, variance n^-2r), so the perturbed function
/// has L2 error of order n^-r.
template <class Rng>
UnitFunction make_perturbed_oracle(UnitFunction truth, PerturbKind kind, double h, double r, std::size_t n, Rng& rng,
                                   PerturbMode mode = PerturbMode::PerUnit)
{
    if (!(r > 0.0 && r <= 0.5)) throw Error(ErrorCode::ParameterError, "nuisance", "rate r must lie in (0, 0.5]");
    if (h < 0.0) throw Error(ErrorCode::ParameterError, "nuisance", "perturbation scale h must be >= 0");
    if (n < 1) throw Error(ErrorCode::ParameterError, "nuisance", "n must be >= 1");
    const double scale = std::pow(static_cast<double>(n), -r);
    std::normal_distribution<double> normal(scale, scale);
    std::vector<double> eps(mode == PerturbMode::Function ? 1 : n);
    for (auto& e : eps) e = normal(rng);
    return perturb_with_noise(std::move(truth), kind, h, std::move(eps));
}

} // namespace reltrans
