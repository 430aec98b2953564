#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "reltrans/nuisance.hpp"
#include "reltrans/rng.hpp"

namespace reltrans {

struct FoldScheme {
    std::size_t k = 2;
    std::vector<std::size_t> assignment;   // fold label in 1..k per unit
    std::uint64_t seed = 0;

    std::vector<std::size_t> members(std::size_t fold) const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == fold) out.push_back(i);
        return out;
    }
    std::vector<std::size_t> complement(std::size_t fold) const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] != fold) out.push_back(i);
        return out;
    }
};

/// Shuffle each (s,a) stratum, then deal its units round-robin to folds 1..k.
inline FoldScheme make_folds(const Dataset& data, std::size_t k, std::uint64_t seed)
{
    if (k < 2) throw Error(ErrorCode::ConfigError, "crossfit", "fold count must be >= 2");
    FoldScheme f;
    f.k = k;
    f.seed = seed;
    f.assignment.assign(data.size(), 0);
    Rng rng(seed);
    for (int s : {0, 1})
        for (int a : {0, 1}) {
            std::vector<std::size_t> cell;
            for (std::size_t i = 0; i < data.size(); ++i)
                if (data.s(i) == s && data.a(i) == a) cell.push_back(i);
            if (cell.empty()) continue;
            if (cell.size() < k)
                throw Error(ErrorCode::FoldInfeasible, "crossfit",
                            "stratum (s=" + std::to_string(s) + ", a=" + std::to_string(a) + ") has "
                                + std::to_string(cell.size()) + " units, fewer than k = " + std::to_string(k));
            for (std::size_t i = cell.size(); i > 1; --i) std::swap(cell[i - 1], cell[uniform_index(rng, i)]);
            for (std::size_t j = 0; j < cell.size(); ++j) f.assignment[cell[j]] = j % k + 1;
        }
    return f;
}

inline constexpr double kTrimEpsilon = 1e-3;
inline constexpr double kMaxTrimmedFraction = 0.05;

/// Out-of-fold nuisance values for every unit, after trimming.
struct NuisancePredictions {
    std::array<std::optional<std::vector<double>>, kNuisanceCount> values;
    std::vector<double> kappa;          // per unit, from that unit's training complement
    std::vector<double> fold_kappa;     // indexed by fold - 1
    std::optional<FoldScheme> folds;    // absent for single-bundle evaluation
    std::array<std::size_t, kNuisanceCount> clamped{};
    std::array<Provenance, kNuisanceCount> provenance{};

    bool has(NuisanceId id) const { return values[static_cast<std::size_t>(id)].has_value(); }
    const std::vector<double>& at(NuisanceId id) const
    {
        const auto& v = values[static_cast<std::size_t>(id)];
        if (!v) throw Error(ErrorCode::SpecError, "estimators", "missing prediction for '" + std::string(to_string(id)) + "'");
        return *v;
    }
    std::vector<double>& slot(NuisanceId id)
    {
        auto& v = values[static_cast<std::size_t>(id)];
        if (!v) v.emplace();
        return *v;
    }
    std::size_t total_clamped() const
    {
        std::size_t t = 0;
        for (auto c : clamped) t += c;
        return t;
    }
};

/// Clamp denominator nuisances away from zero; too many clamps means
/// positivity fails in practice.
inline void apply_trimming(NuisancePredictions& p, double eps = kTrimEpsilon, double max_fraction = kMaxTrimmedFraction)
{
    auto clamp_each = [&](NuisanceId id, auto&& rule) {
        if (!p.has(id)) return;
        auto& v = p.slot(id);
        std::size_t count = 0, defined = 0;
        for (auto& x : v) {
            if (std::isnan(x)) continue;
            ++defined;
            const double c = rule(x);
            if (c != x) {
                x = c;
                ++count;
            }
        }
        p.clamped[static_cast<std::size_t>(id)] = count;
        if (defined != 0 && static_cast<double>(count) > max_fraction * static_cast<double>(defined))
            throw Error(ErrorCode::PositivityViolation, "crossfit",
                        std::string(to_string(id)) + ": " + std::to_string(count) + " of " + std::to_string(defined)
                            + " predictions needed trimming");
    };
    clamp_each(NuisanceId::Mu10, [eps](double x) {
        if (std::abs(x) >= eps) return x;
        return x < 0 ? -eps : eps;
    });
    clamp_each(NuisanceId::Q, [eps](double x) { return std::clamp(x, eps, 1.0 - eps); });
    clamp_each(NuisanceId::Pi, [eps](double x) { return std::max(x, eps); });
    clamp_each(NuisanceId::PiW, [eps](double x) { return std::max(x, eps); });
    // t = 1 / (1 + tau) >= eps
    clamp_each(NuisanceId::Tau, [eps](double x) { return std::min(x, 1.0 / eps - 1.0); });
}

namespace detail {

inline void evaluate_into(NuisancePredictions& p, const NuisanceBundle& b, const Dataset& data,
                          std::span<const std::size_t> units)
{
    for (auto id : kAllNuisances) {
        const auto k = static_cast<std::size_t>(id);
        if (!b.functions[k]) continue;
        auto& out = p.slot(id);
        if (out.size() != data.size()) out.assign(data.size(), 0.0);
        p.provenance[k] = b.provenance[k];
        for (auto i : units) {
            // W-models exist only where w is observed (target rows)
            if (uses_w(id) && !data.has_w(i)) {
                out[i] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            out[i] = (*b.functions[k])(data.unit(i));
        }
    }
    for (auto i : units) p.kappa[i] = b.kappa;
}

} // namespace detail

/// Fit on the complement of each fold and predict on the fold.
inline NuisancePredictions crossfit_predictions(const Dataset& data, const NuisanceSpec& spec, const FoldScheme& folds,
                                                Scenario scenario)
{
    if (folds.assignment.size() != data.size())
        throw Error(ErrorCode::DimensionError, "crossfit", "fold assignment does not match the dataset");
    NuisancePredictions p;
    p.kappa.assign(data.size(), 0.0);
    p.fold_kappa.assign(folds.k, 0.0);
    p.folds = folds;
    for (std::size_t f = 1; f <= folds.k; ++f) {
        const auto train = folds.complement(f);
        const auto eval = folds.members(f);
        try {
            const auto bundle = fit_bundle(data, spec, train, scenario);
            p.fold_kappa[f - 1] = bundle.kappa;
            detail::evaluate_into(p, bundle, data, eval);
        } catch (const Error& e) {
            throw Error(e.code(), e.module(), "fold " + std::to_string(f) + ": " + e.what());
        }
    }
    apply_trimming(p);
    return p;
}

/// One bundle fit on, and evaluated at, every unit (kappa from the full sample).
inline NuisancePredictions fit_predictions(const Dataset& data, const NuisanceSpec& spec, Scenario scenario)
{
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    NuisancePredictions p;
    p.kappa.assign(data.size(), 0.0);
    const auto bundle = fit_bundle(data, spec, all, scenario);
    p.fold_kappa = {bundle.kappa};
    detail::evaluate_into(p, bundle, data, all);
    apply_trimming(p);
    return p;
}

} // namespace reltrans
