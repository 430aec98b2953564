#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include "json.hpp"

#include "reltrans/inference.hpp"
#include "reltrans/rng.hpp"

namespace reltrans {

// --- quadrature helpers ------------------------------------------------------

/// Gauss-Legendre rule of order N mapped to [0, 1].
template <unsigned N>
std::vector<std::pair<double, double>> gauss_legendre_unit()
{
    using G = boost::math::quadrature::gauss<double, N>;
    const auto& x = G::abscissa();
    const auto& w = G::weights();
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out.emplace_back(0.5 + 0.5 * x[i], 0.5 * w[i]);
        if (x[i] != 0.0) out.emplace_back(0.5 - 0.5 * x[i], 0.5 * w[i]);
    }
    return out;
}

/// E[expit(lambda0 + sum_j c_j X_j)] for X_j iid Uniform(0,1), integrated
/// over the density of the linear index (composite Simpson, 2048 panels).
inline double mean_trial_probability(double lambda0, const std::vector<double>& slopes)
{
    double shift = 0.0;
    std::vector<double> b;
    for (double c : slopes) {
        if (c == 0.0) continue;
        if (c < 0.0) shift += c;   // c x = c + |c| (1 - x)
        b.push_back(std::abs(c));
    }
    const auto k = b.size();
    if (k == 0) return expit(lambda0 + shift);
    const double width = std::accumulate(b.begin(), b.end(), 0.0);

    double norm = 1.0;
    for (double v : b) norm *= v;
    for (std::size_t j = 2; j < k; ++j) norm *= static_cast<double>(j);
    // corner sums with inclusion-exclusion signs
    std::vector<std::pair<double, double>> corners;
    for (std::size_t mask = 0; mask < (std::size_t{1} << k); ++mask) {
        double s = 0.0;
        int bits = 0;
        for (std::size_t j = 0; j < k; ++j)
            if (mask & (std::size_t{1} << j)) {
                s += b[j];
                ++bits;
            }
        corners.emplace_back(s, bits % 2 ? -1.0 : 1.0);
    }
    auto density = [&](double t) {
        if (k == 1) return 1.0 / b[0];
        double f = 0.0;
        for (auto [s, sign] : corners)
            if (t > s) f += sign * std::pow(t - s, static_cast<double>(k - 1));
        return std::max(f / norm, 0.0);
    };

    constexpr int panels = 2048;
    const double h = width / panels;
    double sum = 0.0;
    for (int i = 0; i <= panels; ++i) {
        const double t = i * h;
        const double wgt = (i == 0 || i == panels) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        sum += wgt * density(t) * expit(lambda0 + shift + t);
    }
    return sum * h / 3.0;
}

/// Intercept giving the requested average trial probability.
inline double solve_lambda0(const std::vector<double>& slopes, double target_fraction, double tol = 1e-12)
{
    if (!(target_fraction > 0.0 && target_fraction < 1.0))
        throw Error(ErrorCode::ParameterError, "simulate", "target fraction must lie in (0,1)");
    auto f = [&](double l) { return mean_trial_probability(l, slopes) - target_fraction; };
    double lo = -1.0, hi = 1.0;
    while (f(lo) > 0.0 && lo > -50.0) lo = std::max(lo * 2.0, -50.0);
    while (f(hi) < 0.0 && hi < 50.0) hi = std::min(hi * 2.0, 50.0);
    if (f(lo) > 0.0 || f(hi) < 0.0)
        throw Error(ErrorCode::RootNotFound, "simulate", "lambda0 not bracketed within [-50, 50]");
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// --- main data-generating mechanism -----------------------------------------

struct DgmConfig {
    int dgm_case = 2;
    // coefficients over (1, X1..X5)
    std::vector<double> m_coef{-0.5, -0.4, -0.4, -0.4, -0.4, -0.4};
    std::vector<double> g_coef{0.0, 0.4, 0.5, -0.5, -0.6, 0.6};
    std::vector<double> r_coef{0.0, 0.5, -0.1, 0.3, 0.2, -0.3};
    // cases 1 and 3: f(U) g1(X) with f(U) = U
    std::vector<double> gamma1{0.0, 0.2, 0.25, -0.25, -0.3, 0.3};
    double u_slope = 1.0;   // U in the selection model
    std::vector<double> lambda_slopes = std::vector<double>(5, std::log(1.05));
    std::size_t n1 = 1000;
    std::size_t n0 = 5000;
    double q = 0.5;

    std::size_t p() const { return m_coef.size() - 1; }
    double trial_fraction() const { return static_cast<double>(n1) / static_cast<double>(n1 + n0); }
};

struct GeneratedData {
    Dataset data;
    std::vector<double> y1, y0;   // counterfactuals, kept out of `data`
    std::size_t clip_count = 0;
};

/// DgmConfig with its selection intercept solved.
class Dgm {
public:
    explicit Dgm(DgmConfig cfg) : cfg_(std::move(cfg))
    {
        if (cfg_.dgm_case < 1 || cfg_.dgm_case > 3)
            throw Error(ErrorCode::ConfigError, "simulate", "dgm case must be 1, 2 or 3");
        const auto len = cfg_.m_coef.size();
        if (len < 1 || cfg_.g_coef.size() != len || cfg_.r_coef.size() != len || cfg_.gamma1.size() != len
            || cfg_.lambda_slopes.size() != len - 1)
            throw Error(ErrorCode::ConfigError, "simulate", "coefficient vectors have inconsistent lengths");
        if (!(cfg_.q > 0.0 && cfg_.q < 1.0)) throw Error(ErrorCode::ConfigError, "simulate", "q must lie in (0,1)");
        if (cfg_.n1 == 0 || cfg_.n0 == 0) throw Error(ErrorCode::ConfigError, "simulate", "n1 and n0 must be positive");
        auto slopes = cfg_.lambda_slopes;
        if (uses_u()) slopes.push_back(cfg_.u_slope);
        lambda0_ = solve_lambda0(slopes, cfg_.trial_fraction());
    }

    const DgmConfig& config() const { return cfg_; }
    double lambda0() const { return lambda0_; }
    bool uses_u() const { return cfg_.dgm_case != 2; }

    static double linear(const std::vector<double>& coef, std::span<const double> x)
    {
        double v = coef[0];
        for (std::size_t j = 0; j < x.size(); ++j) v += coef[j + 1] * x[j];
        return v;
    }

    double prob_trial(std::span<const double> x, double u = 0.0) const
    {
        double eta = lambda0_;
        for (std::size_t j = 0; j < x.size(); ++j) eta += cfg_.lambda_slopes[j] * x[j];
        if (uses_u()) eta += cfg_.u_slope * u;
        return expit(eta);
    }

    /// log E[Y^a | X, U, S] before clipping.
    double log_mean(std::span<const double> x, double u, int s, int a) const
    {
        double v = linear(cfg_.m_coef, x);
        if (a == 1) v += linear(cfg_.r_coef, x);
        switch (cfg_.dgm_case) {
        case 1: v += u * linear(cfg_.gamma1, x); break;
        case 2: v += s * linear(cfg_.g_coef, x); break;
        case 3: v += u * linear(cfg_.gamma1, x) + s * linear(cfg_.g_coef, x); break;
        }
        return v;
    }

    /// Clipped success probability; `clipped` set when the bound was hit.
    double prob(std::span<const double> x, double u, int s, int a, bool* clipped = nullptr) const
    {
        const double v = std::exp(log_mean(x, u, s, a));
        if (clipped) *clipped = v > 1.0;
        return std::min(v, 1.0);
    }

    GeneratedData generate(Rng& rng) const
    {
        const std::size_t n = cfg_.n1 + cfg_.n0;
        const std::size_t p = cfg_.p();
        std::vector<Observation> rows(n);
        GeneratedData g;
        g.y1.resize(n);
        g.y0.resize(n);
        std::vector<double> x(p);
        for (std::size_t i = 0; i < n; ++i) {
            for (auto& v : x) v = uniform01(rng);
            const double u = uses_u() ? uniform01(rng) : 0.0;
            const int s = bernoulli(rng, prob_trial(x, u));
            const int a = s == 1 ? bernoulli(rng, cfg_.q) : 0;
            bool c0 = false, c1 = false;
            const double p0 = prob(x, u, s, 0, &c0);
            const double p1 = prob(x, u, s, 1, &c1);
            g.clip_count += c0 + c1;
            const int y0 = bernoulli(rng, p0);
            const int y1 = bernoulli(rng, p1);
            g.y0[i] = y0;
            g.y1[i] = y1;
            rows[i] = Observation{static_cast<double>(a ? y1 : y0), s, a, x, {}};
        }
        g.data = Dataset::from_observations(rows);
        return g;
    }

    /// E[Y^1 | S=0] (a = 1) or E[Y^0 | S=0] (a = 0) by tensor Gauss-Legendre.
    double exact_truth(int a = 1) const
    {
        const auto rule = gauss_legendre_unit<10>();
        const std::size_t dims = cfg_.p() + (uses_u() ? 1 : 0);
        std::vector<std::size_t> idx(dims, 0);
        std::vector<double> pt(dims);
        double num = 0.0, den = 0.0;
        for (;;) {
            double w = 1.0;
            for (std::size_t d = 0; d < dims; ++d) {
                pt[d] = rule[idx[d]].first;
                w *= rule[idx[d]].second;
            }
            std::span<const double> x(pt.data(), cfg_.p());
            const double u = uses_u() ? pt[dims - 1] : 0.0;
            const double target = 1.0 - prob_trial(x, u);
            num += w * target * prob(x, u, 0, a);
            den += w * target;
            std::size_t d = 0;
            while (d < dims && ++idx[d] == rule.size()) idx[d++] = 0;
            if (d == dims) break;
        }
        return num / den;
    }

    /// Monte-Carlo truth: average over `reps` datasets of mean Y^1 among s = 0.
    double mc_truth(std::size_t reps, std::uint64_t seed) const
    {
        if (reps < 1) throw Error(ErrorCode::ParameterError, "simulate", "truth replications must be >= 1");
        double total = 0.0;
        for (std::size_t r = 0; r < reps; ++r) {
            auto rng = make_stream(seed, {0x7472757468ULL, r});
            const auto g = generate(rng);
            double s = 0.0;
            for (std::size_t i = 0; i < g.data.size(); ++i)
                if (g.data.s(i) == 0) s += g.y1[i];
            total += s / static_cast<double>(g.data.n0());
        }
        return total / static_cast<double>(reps);
    }

    /// True scenario-1 nuisances (case 2 only; other cases integrate over U).
    NuisanceValues true_nuisances(const Dataset& d) const
    {
        if (uses_u()) throw Error(ErrorCode::ConfigError, "simulate", "oracle nuisances exist only for case 2");
        NuisanceValues v;
        const auto n = d.size();
        v.mu11.resize(n);
        v.mu10.resize(n);
        v.mu00.resize(n);
        v.tau.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = d.x(i);
            v.mu11[i] = prob(x, 0.0, 1, 1);
            v.mu10[i] = prob(x, 0.0, 1, 0);
            v.mu00[i] = prob(x, 0.0, 0, 0);
            const double t = prob_trial(x);
            v.tau[i] = (1.0 - t) / t;
        }
        return v;
    }

private:
    DgmConfig cfg_;
    double lambda0_ = 0.0;
};

inline GeneratedData generate_dataset(const DgmConfig& cfg, Rng& rng) { return Dgm(cfg).generate(rng); }

inline double compute_truth(const DgmConfig& cfg, std::size_t reps, std::uint64_t seed)
{
    return Dgm(cfg).mc_truth(reps, seed);
}

inline double exact_truth(const DgmConfig& cfg) { return Dgm(cfg).exact_truth(); }

// --- metrics -----------------------------------------------------------------

struct MetricsRow {
    std::string estimator;
    std::string config;
    std::size_t n1 = 0, n0 = 0, reps = 0;
    double truth = 0.0;
    double mean_bias = 0.0;
    double abs_bias = 0.0;
    double sd = 0.0;
    double rmse = 0.0;
    double sqrt_n_rmse = 0.0;
    double coverage = std::nan("");   // NaN when the estimator has no CI
    double r1n_diag = std::nan("");
    std::size_t clip_count = 0;
    bool warning = false;
    std::string failure;   // non-empty when the cell was aborted
};

struct MetricsTable {
    std::vector<MetricsRow> rows;
    std::vector<std::string> warnings;

    const MetricsRow* find(std::string_view estimator, std::string_view config, std::size_t n1 = 0) const
    {
        for (const auto& r : rows)
            if (r.estimator == estimator && r.config == config && (n1 == 0 || r.n1 == n1)) return &r;
        return nullptr;
    }

    void write_csv(std::ostream& out) const
    {
        auto num = [](double v) { return std::isnan(v) ? std::string("NA") : detail::format_double(v); };
        out << "estimator,config,n1,n0,reps,abs_bias,sd,sqrt_n_rmse,coverage,r1n_diag,clip_count\n";
        for (const auto& r : rows)
            out << r.estimator << ',' << r.config << ',' << r.n1 << ',' << r.n0 << ',' << r.reps << ','
                << num(r.abs_bias) << ',' << num(r.sd) << ',' << num(r.sqrt_n_rmse) << ',' << num(r.coverage) << ','
                << num(r.r1n_diag) << ',' << r.clip_count << '\n';
    }

    nlohmann::json to_json() const
    {
        auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
        nlohmann::json rows_json = nlohmann::json::array();
        for (const auto& r : rows)
            rows_json.push_back({{"estimator", r.estimator},
                                 {"config", r.config},
                                 {"n1", r.n1},
                                 {"n0", r.n0},
                                 {"reps", r.reps},
                                 {"abs_bias", num(r.abs_bias)},
                                 {"sd", num(r.sd)},
                                 {"sqrt_n_rmse", num(r.sqrt_n_rmse)},
                                 {"coverage", num(r.coverage)},
                                 {"r1n_diag", num(r.r1n_diag)},
                                 {"clip_count", r.clip_count}});
        return {{"rows", rows_json}, {"warnings", warnings}};
    }
};

/// One replication's output for one (config, estimator) pair.
struct ReplicateValue {
    double estimate = std::nan("");
    int covered = -1;   // -1: no interval
    double r1n = std::nan("");
};

namespace detail {

/// Runs f(i) for i in [0, count) on `threads` workers. The exception from the
/// lowest failing index is rethrown, so failures do not depend on scheduling.
template <class F>
void parallel_for(std::size_t count, std::size_t threads, F&& f)
{
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, std::max<std::size_t>(count, 1));
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_at = count;
    std::exception_ptr failure;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                f(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    if (threads <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);
}

inline MetricsRow summarize(const std::vector<ReplicateValue>& values, double truth, std::size_t n_total)
{
    MetricsRow row;
    row.reps = values.size();
    row.truth = truth;
    const double reps = static_cast<double>(values.size());
    double mean = 0.0;
    for (const auto& v : values) mean += v.estimate;
    mean /= reps;
    double var = 0.0, mse = 0.0, r1 = 0.0;
    std::size_t covered = 0, with_ci = 0, with_r1 = 0;
    for (const auto& v : values) {
        var += (v.estimate - mean) * (v.estimate - mean);
        mse += (v.estimate - truth) * (v.estimate - truth);
        if (v.covered >= 0) {
            ++with_ci;
            covered += static_cast<std::size_t>(v.covered);
        }
        if (!std::isnan(v.r1n)) {
            ++with_r1;
            r1 += v.r1n;
        }
    }
    row.mean_bias = mean - truth;
    row.abs_bias = std::abs(row.mean_bias);
    row.sd = std::sqrt(var / reps);
    row.rmse = std::sqrt(mse / reps);
    row.sqrt_n_rmse = std::sqrt(static_cast<double>(n_total)) * row.rmse;
    if (with_ci == values.size()) row.coverage = static_cast<double>(covered) / reps;
    if (with_r1 == values.size()) row.r1n_diag = r1 / reps;
    return row;
}

inline NuisanceValues values_from(const NuisancePredictions& p)
{
    NuisanceValues v;
    auto take = [&](NuisanceId id, std::vector<double>& out) {
        if (p.has(id)) out = p.at(id);
    };
    take(NuisanceId::Mu11, v.mu11);
    take(NuisanceId::Mu10, v.mu10);
    take(NuisanceId::Mu00, v.mu00);
    take(NuisanceId::Tau, v.tau);
    take(NuisanceId::Pi, v.pi);
    return v;
}

} // namespace detail

// --- Monte-Carlo experiment over correctness configurations ------------------

struct CorrectnessConfig {
    std::string name;
    std::vector<NuisanceId> misspecified;
};

inline std::vector<CorrectnessConfig> default_correctness()
{
    using N = NuisanceId;
    return {{"all_correct", {}},
            {"mu11_correct", {N::Mu00, N::Tau}},
            {"mu00_tau_correct", {N::Mu11}},
            {"all_misspecified", {N::Mu11, N::Mu00, N::Tau}}};
}

enum class TruthSource { Quadrature, MonteCarlo };

struct McGrid {
    DgmConfig dgm;   // n1/n0 replaced by each design
    std::vector<std::pair<std::size_t, std::size_t>> designs{{1000, 5000}};
    std::vector<Method> estimators{Method::If, Method::Or, Method::Ipw};
    std::vector<CorrectnessConfig> configs = default_correctness();
    std::size_t reps = 500;
    std::uint64_t seed = 20240501;
    std::size_t folds = 2;
    double level = 0.95;
    TruthSource truth = TruthSource::Quadrature;
    std::size_t truth_reps = 20;
};

/// Correct model: logistic on all of X with intercept. Misspecified: X2 only,
/// no intercept.
inline NuisanceSpec simulation_spec(std::size_t p, const CorrectnessConfig& c)
{
    NuisanceSpec spec;
    auto correct = FeatureSpec::all_of(p);
    correct.family = Family::Logistic;
    FeatureSpec wrong;
    wrong.covariate_indices = {1};
    wrong.include_intercept = false;
    wrong.family = Family::Logistic;
    for (auto id : {NuisanceId::Mu11, NuisanceId::Mu10, NuisanceId::Mu00, NuisanceId::Q, NuisanceId::Tau}) {
        const bool bad = std::find(c.misspecified.begin(), c.misspecified.end(), id) != c.misspecified.end();
        spec.set(id, FittedModel{bad ? wrong : correct});
    }
    return spec;
}

inline MetricsTable run_mc_experiment(const McGrid& grid, std::size_t threads = 0)
{
    if (grid.reps < 1) throw Error(ErrorCode::ConfigError, "simulate", "reps must be >= 1");
    if (grid.designs.empty() || grid.estimators.empty() || grid.configs.empty())
        throw Error(ErrorCode::ConfigError, "simulate", "empty simulation grid");
    for (auto m : grid.estimators) required_nuisances(Scenario::One, m);

    std::vector<Dgm> dgms;
    std::vector<double> truths;
    for (std::size_t d = 0; d < grid.designs.size(); ++d) {
        auto cfg = grid.dgm;
        cfg.n1 = grid.designs[d].first;
        cfg.n0 = grid.designs[d].second;
        dgms.emplace_back(cfg);
        truths.push_back(grid.truth == TruthSource::Quadrature ? dgms.back().exact_truth()
                                                               : dgms.back().mc_truth(grid.truth_reps, grid.seed + d));
    }
    const std::size_t C = grid.configs.size(), E = grid.estimators.size(), R = grid.reps;
    // results[d][rep][c * E + e]
    std::vector<std::vector<std::vector<ReplicateValue>>> results(
        grid.designs.size(), std::vector<std::vector<ReplicateValue>>(R, std::vector<ReplicateValue>(C * E)));
    std::vector<std::vector<std::size_t>> clips(grid.designs.size(), std::vector<std::size_t>(R, 0));
    // first error per (design, rep, config); a failing fit aborts only its cell
    std::vector<std::vector<std::vector<std::string>>> errors(
        grid.designs.size(), std::vector<std::vector<std::string>>(R, std::vector<std::string>(C)));

    detail::parallel_for(grid.designs.size() * R, threads, [&](std::size_t task) {
        const std::size_t d = task / R, rep = task % R;
        const auto& dgm = dgms[d];
        try {
            auto rng = make_stream(grid.seed, {d, rep, 0});
            const auto gen = dgm.generate(rng);
            clips[d][rep] = gen.clip_count;
            const auto folds = make_folds(gen.data, grid.folds, derive_seed(grid.seed, {d, rep, 1}));
            std::optional<NuisanceValues> truth_values;
            if (!dgm.uses_u()) truth_values = dgm.true_nuisances(gen.data);
            for (std::size_t c = 0; c < C; ++c) {
                try {
                    const auto preds = crossfit_predictions(
                        gen.data, simulation_spec(dgm.config().p(), grid.configs[c]), folds, Scenario::One);
                    double r1 = std::nan("");
                    if (truth_values) r1 = r1n(detail::values_from(preds), *truth_values);
                    for (std::size_t e = 0; e < E; ++e) {
                        const auto res = estimate(gen.data, preds, Scenario::One, grid.estimators[e]);
                        auto& out = results[d][rep][c * E + e];
                        out.estimate = res.points.alpha;
                        out.r1n = r1;
                        if (res.ifs) {
                            const auto rec = wald_inference(res.points, *res.ifs, grid.level);
                            out.covered = rec.ci_alpha->contains(truths[d]) ? 1 : 0;
                        }
                    }
                } catch (const Error& e) {
                    errors[d][rep][c] = std::string(to_string(e.code())) + " in replication " + std::to_string(rep)
                                      + ": " + e.what();
                }
            }
        } catch (const Error& e) {
            throw Error(e.code(), e.module(),
                        "design " + std::to_string(d) + " replication " + std::to_string(rep) + ": " + e.what());
        }
    });

    MetricsTable table;
    if (R == 1) table.warnings.push_back("reps = 1: SD is identically 0");
    for (std::size_t d = 0; d < grid.designs.size(); ++d) {
        std::size_t clip_total = 0;
        for (auto c : clips[d]) clip_total += c;
        for (std::size_t c = 0; c < C; ++c) {
            std::string failure;
            for (std::size_t rep = 0; rep < R && failure.empty(); ++rep) failure = errors[d][rep][c];
            if (!failure.empty())
                table.warnings.push_back("cell " + grid.configs[c].name + " n1=" + std::to_string(grid.designs[d].first)
                                         + " aborted: " + failure);
            for (std::size_t e = 0; e < E; ++e) {
                std::vector<ReplicateValue> vals(R);
                for (std::size_t rep = 0; rep < R; ++rep) vals[rep] = results[d][rep][c * E + e];
                auto row = detail::summarize(vals, truths[d], grid.designs[d].first + grid.designs[d].second);
                row.estimator = std::string(to_string(grid.estimators[e]));
                row.config = grid.configs[c].name;
                row.n1 = grid.designs[d].first;
                row.n0 = grid.designs[d].second;
                row.clip_count = clip_total;
                row.warning = R == 1;
                if (!failure.empty()) {
                    const double na = std::nan("");
                    row.mean_bias = row.abs_bias = row.sd = row.rmse = row.sqrt_n_rmse = na;
                    row.coverage = row.r1n_diag = na;
                    row.failure = failure;
                }
                table.rows.push_back(std::move(row));
            }
        }
    }
    return table;
}

// --- rate-robustness experiment ----------------------------------------------

/// Two-covariate Gaussian-outcome mechanism with closed-form nuisances.
struct RateDgm {
    static double t(std::span<const double> x) { return expit(-0.2 + 0.5 * x[0] + 1.2 * x[1]); }
    static double q(std::span<const double> x) { return expit(0.3 + 0.9 * x[0] - 0.8 * x[1]); }
    static double m(std::span<const double> x, int s, int a)
    {
        return (0.75 * (1 - s) + s) * (5.2 + x[0] - 1.2 * x[1] + a * (1.2 - 0.6 * x[0]));
    }

    static Dataset generate(std::size_t n, Rng& rng)
    {
        std::normal_distribution<double> noise(0.0, 1.0);
        std::vector<Observation> rows(n);
        for (auto& o : rows) {
            o.x = {static_cast<double>(bernoulli(rng, 0.5)), uniform01(rng)};
            o.s = bernoulli(rng, t(o.x));
            o.a = o.s == 1 ? bernoulli(rng, q(o.x)) : 0;
            o.y = m(o.x, o.s, o.a) + noise(rng);
        }
        return Dataset::from_observations(rows);
    }

    /// E[Y^1 | S = 0] = E[(1 - t) m(X,0,1)] / E[1 - t].
    static double truth()
    {
        const auto rule = gauss_legendre_unit<20>();
        double num = 0.0, den = 0.0;
        for (double x1 : {0.0, 1.0})
            for (auto [x2, w] : rule) {
                const double x[2] = {x1, x2};
                const double target = 1.0 - t(x);
                num += 0.5 * w * target * m(x, 0, 1);
                den += 0.5 * w * target;
            }
        return num / den;
    }
};

struct RateGrid {
    std::vector<std::size_t> ns{1000, 2000, 5000};
    std::vector<double> rs{0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50};
    double h = 2.2;
    std::size_t reps = 1000;
    std::uint64_t seed = 20240502;
    PerturbMode mode = PerturbMode::PerUnit;
    double level = 0.95;
};

inline std::string rate_label(double r)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "r=%.2f", r);
    return buf;
}

inline MetricsTable run_rate_experiment(const RateGrid& grid, std::size_t threads = 0)
{
    if (grid.reps < 1) throw Error(ErrorCode::ConfigError, "simulate", "reps must be >= 1");
    if (grid.ns.empty() || grid.rs.empty()) throw Error(ErrorCode::ConfigError, "simulate", "empty rate grid");
    if (grid.h < 0.0) throw Error(ErrorCode::ParameterError, "simulate", "h must be >= 0");
    for (double r : grid.rs)
        if (!(r > 0.0 && r <= 0.5)) throw Error(ErrorCode::ParameterError, "simulate", "rate r must lie in (0, 0.5]");
    const double truth = RateDgm::truth();
    const std::size_t N = grid.ns.size(), Rg = grid.rs.size(), R = grid.reps;
    // per (n, r, rep): if and plugin
    std::vector<std::array<ReplicateValue, 2>> results(N * Rg * R);
    std::vector<std::size_t> n1s(N * R), n0s(N * R);

    detail::parallel_for(N * Rg * R, threads, [&](std::size_t task) {
        const std::size_t rep = task % R;
        const std::size_t ri = (task / R) % Rg;
        const std::size_t ni = task / (R * Rg);
        const std::size_t n = grid.ns[ni];
        try {
            // data depend on (n, rep) only; noise also on r
            auto data_rng = make_stream(grid.seed, {ni, rep, 0});
            const auto data = RateDgm::generate(n, data_rng);
            if (ri == 0) {
                n1s[ni * R + rep] = data.n1();
                n0s[ni * R + rep] = data.n0();
            }
            auto noise_rng = make_stream(grid.seed, {ni, rep, 1, ri});
            const double r = grid.rs[ri];
            auto mean_of = [](int s, int a) { return UnitFunction([s, a](const UnitRef& u) { return RateDgm::m(u.x, s, a); }); };
            const auto mu11 = make_perturbed_oracle(mean_of(1, 1), PerturbKind::Mean, grid.h, r, n, noise_rng, grid.mode);
            const auto mu10 = make_perturbed_oracle(mean_of(1, 0), PerturbKind::Mean, grid.h, r, n, noise_rng, grid.mode);
            const auto mu00 = make_perturbed_oracle(mean_of(0, 0), PerturbKind::Mean, grid.h, r, n, noise_rng, grid.mode);
            const auto qf = make_perturbed_oracle([](const UnitRef& u) { return RateDgm::q(u.x); }, PerturbKind::Probability,
                                                  grid.h, r, n, noise_rng, grid.mode);
            const auto tau = make_perturbed_oracle([](const UnitRef& u) { return RateDgm::t(u.x); }, PerturbKind::Odds,
                                                   grid.h, r, n, noise_rng, grid.mode);
            NuisanceSpec spec;
            spec.set(NuisanceId::Mu11, PerturbedFunction{mu11})
                .set(NuisanceId::Mu10, PerturbedFunction{mu10})
                .set(NuisanceId::Mu00, PerturbedFunction{mu00})
                .set(NuisanceId::Q, PerturbedFunction{qf})
                .set(NuisanceId::Tau, PerturbedFunction{tau});
            const auto preds = fit_predictions(data, spec, Scenario::One);

            NuisanceValues tv;
            for (std::size_t i = 0; i < n; ++i) {
                const auto x = data.x(i);
                tv.mu11.push_back(RateDgm::m(x, 1, 1));
                tv.mu10.push_back(RateDgm::m(x, 1, 0));
                tv.mu00.push_back(RateDgm::m(x, 0, 0));
                tv.tau.push_back((1.0 - RateDgm::t(x)) / RateDgm::t(x));
            }
            const double r1 = r1n(detail::values_from(preds), tv);

            const auto dr = estimate(data, preds, Scenario::One, Method::If);
            const auto plug = estimate(data, preds, Scenario::One, Method::Plugin);
            auto& out = results[task];
            out[0].estimate = dr.points.alpha;
            out[0].r1n = r1;
            out[0].covered = wald_inference(dr.points, *dr.ifs, grid.level).ci_alpha->contains(truth) ? 1 : 0;
            out[1].estimate = plug.points.alpha;
            out[1].r1n = r1;
        } catch (const Error& e) {
            throw Error(e.code(), e.module(),
                        "n = " + std::to_string(n) + ", " + rate_label(grid.rs[ri]) + ", replication "
                            + std::to_string(rep) + ": " + e.what());
        }
    });

    MetricsTable table;
    if (R == 1) table.warnings.push_back("reps = 1: SD is identically 0");
    for (std::size_t ni = 0; ni < N; ++ni) {
        double n1 = 0.0, n0 = 0.0;
        for (std::size_t rep = 0; rep < R; ++rep) {
            n1 += static_cast<double>(n1s[ni * R + rep]);
            n0 += static_cast<double>(n0s[ni * R + rep]);
        }
        for (std::size_t ri = 0; ri < Rg; ++ri)
            for (std::size_t e = 0; e < 2; ++e) {
                std::vector<ReplicateValue> vals(R);
                for (std::size_t rep = 0; rep < R; ++rep) vals[rep] = results[(ni * Rg + ri) * R + rep][e];
                auto row = detail::summarize(vals, truth, grid.ns[ni]);
                row.estimator = e == 0 ? "if" : "plugin";
                row.config = rate_label(grid.rs[ri]);
                row.n1 = static_cast<std::size_t>(std::llround(n1 / static_cast<double>(R)));
                row.n0 = static_cast<std::size_t>(std::llround(n0 / static_cast<double>(R)));
                row.warning = R == 1;
                table.rows.push_back(std::move(row));
            }
    }
    return table;
}

} // namespace reltrans
