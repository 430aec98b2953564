// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>

#include <reltrans/cli.hpp>

#include "laws.hpp"

using namespace reltrans;
using N = NuisanceId;
namespace fs = std::filesystem;

namespace {

const std::string kData = RELTRANS_DATA_DIR;
const std::string kCli = RELTRANS_CLI;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            detail << " [fail: " << what << "]";
        }
    }
};

std::string fmt(double v, int prec = 4)
{
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(prec);
    s << v;
    return s.str();
}

double bias_bound(const MetricsRow& r, double mult) { return mult * r.sd / std::sqrt(static_cast<double>(r.reps)); }

const MetricsRow& row(const MetricsTable& t, const std::string& est, const std::string& cfg)
{
    const auto* r = t.find(est, cfg);
    if (!r) throw std::runtime_error("missing row " + est + "/" + cfg);
    return *r;
}

// shared by criteria 1, 3 and 4
MetricsTable figure_grid()
{
    McGrid g;
    g.designs = {{1000, 5000}};
    g.estimators = {Method::If, Method::Or, Method::Ipw, Method::A4Star};
    g.reps = 500;
    return run_mc_experiment(g, 0);
}

Outcome criterion1(const MetricsTable& t)
{
    Outcome o;
    for (const char* cfg : {"all_correct", "mu11_correct", "mu00_tau_correct"}) {
        const auto& r = row(t, "if", cfg);
        o.detail << " if/" << cfg << " |bias| " << fmt(r.abs_bias) << " vs " << fmt(bias_bound(r, 3));
        o.check(r.abs_bias <= bias_bound(r, 3), std::string("if biased in ") + cfg);
    }
    const auto& orr = row(t, "or", "mu00_tau_correct");
    o.detail << "; or/mu00_tau_correct " << fmt(orr.abs_bias) << " vs " << fmt(bias_bound(orr, 5));
    o.check(orr.abs_bias > bias_bound(orr, 5), "or not biased with misspecified outcome model");
    const auto& ipw = row(t, "ipw", "mu11_correct");
    o.detail << "; ipw/mu11_correct " << fmt(ipw.abs_bias) << " vs " << fmt(bias_bound(ipw, 5));
    o.check(ipw.abs_bias > bias_bound(ipw, 5), "ipw not biased with misspecified weights");
    return o;
}

Outcome criterion2()
{
    McGrid g;
    g.designs = {{1000, 5000}};
    g.estimators = {Method::If};
    g.configs = {default_correctness()[0]};
    g.reps = 1000;
    const auto t = run_mc_experiment(g, 0);
    const double cov = row(t, "if", "all_correct").coverage;
    Outcome o;
    o.detail << " coverage " << fmt(cov, 3) << " (reps 1000)";
    o.check(cov >= 0.92 && cov <= 0.97, "coverage outside [0.92, 0.97]");
    return o;
}

Outcome criterion3(const MetricsTable& t)
{
    Outcome o;
    const double best = row(t, "if", "all_correct").sqrt_n_rmse;
    o.detail << " all_correct " << fmt(best, 3);
    for (const char* cfg : {"mu11_correct", "mu00_tau_correct", "all_misspecified"}) {
        const double v = row(t, "if", cfg).sqrt_n_rmse;
        o.detail << ", " << cfg << " " << fmt(v, 3);
        o.check(best < v, std::string("not below ") + cfg);
    }
    return o;
}

Outcome criterion4(const MetricsTable& t)
{
    Outcome o;
    const auto& a4 = row(t, "a4star", "all_correct");
    const auto& ifr = row(t, "if", "all_correct");
    o.detail << " a4star |bias| " << fmt(a4.abs_bias) << " vs " << fmt(bias_bound(a4, 5)) << "; if |bias| "
             << fmt(ifr.abs_bias) << " vs " << fmt(bias_bound(ifr, 3));
    o.check(a4.abs_bias > bias_bound(a4, 5), "a4star not biased");
    o.check(ifr.abs_bias <= bias_bound(ifr, 3), "if biased on the same replications");
    return o;
}

Outcome criterion5()
{
    RateGrid g;
    g.ns = {2000};
    g.reps = 1000;
    g.h = 2.2;
    const auto t = run_rate_experiment(g, 0);
    Outcome o;
    for (double r : g.rs) {
        if (r > 0.25 + 1e-12) continue;
        const auto label = rate_label(r);
        const double a = row(t, "if", label).rmse, b = row(t, "plugin", label).rmse;
        o.detail << " " << label << " " << fmt(a) << "<" << fmt(b);
        o.check(a < b, "if not better at " + label);
    }
    const double q = row(t, "if", rate_label(0.25)).rmse, h = row(t, "if", rate_label(0.5)).rmse;
    o.detail << "; if rmse r=0.25/r=0.50 = " << fmt(q / h, 3);
    o.check(std::abs(q - h) <= 0.25 * h, "r=0.25 not within 25% of r=0.50");
    return o;
}

Outcome criterion6()
{
    Outcome o;
    auto within = [&](double est, double se, double truth, const std::string& name) {
        const double z = std::abs(est - truth) / se;
        o.detail << " " << name << " z=" << fmt(z, 2);
        o.check(z <= 3.0, name);
    };
    for (int sc : {1, 2, 3}) {
        laws::DiscreteLaw law{sc};
        auto rng = make_stream(31337, {std::uint64_t(sc)});
        const auto d = law.draw(200000, rng);
        const auto s = scenario_from_int(sc);
        const auto p = crossfit_predictions(d, law.oracle_spec(), make_folds(d, 2, 1), s);
        const auto r = estimate(d, p, s, Method::If);
        const auto rec = wald_inference(r.points, *r.ifs, 0.95);
        const auto k = std::to_string(sc);
        within(r.points.alpha, *rec.se_alpha, law.truth(1), "alpha" + k);
        within(r.points.beta, *rec.se_beta, law.truth(0), "beta" + k);
        if (s == Scenario::Two) {
            const auto tt = estimate_trial_target(d, p);
            const auto trec = wald_inference(tt.points, *tt.ifs, 0.95);
            within(tt.points.alpha, *trec.se_alpha, law.truth(1), "tt_alpha");
            within(tt.points.beta, *trec.se_beta, law.truth(0), "tt_beta");
        }
    }
    return o;
}

// --- fixtures shared by criteria 7 and 8 ---------------------------------------

struct Fixture {
    std::string name;
    Dataset data;
    Scenario scenario;
    std::vector<Method> methods;
    NuisanceSpec spec;
};

std::vector<Fixture> fixtures()
{
    std::vector<Fixture> out;
    auto from_csv = [&](const std::string& file, const std::string& schema_file, Scenario sc, std::vector<Method> ms) {
        const auto schema = cli::load_schema(schema_file.empty() ? "" : kData + "/" + schema_file);
        auto d = load_csv(kData + "/" + file, schema.columns);
        for (auto m : ms) {
            Fixture f{file + "/s" + std::to_string(to_int(sc)) + "/" + std::string(to_string(m)), d, sc, {m},
                      cli::build_estimate_spec(schema.raw, d, sc, m)};
            out.push_back(std::move(f));
        }
    };
    from_csv("fixture_s1.csv", "", Scenario::One, {Method::If, Method::A4Star});
    from_csv("fixture_s3.csv", "", Scenario::Two, {Method::If});
    from_csv("fixture_s3.csv", "", Scenario::Three, {Method::If});
    from_csv("fixture_trial_target.csv", "trial_target.cfg", Scenario::Two, {Method::TrialTarget});

    for (int sc : {1, 2, 3}) {
        laws::DiscreteLaw law{sc};
        auto rng = make_stream(77, {std::uint64_t(sc)});
        auto d = law.draw(4000, rng);
        const auto s = scenario_from_int(sc);
        auto spec = law.oracle_spec();
        std::vector<N> fitted{N::Mu11, N::Mu10, N::Tau};
        if (sc == 1) fitted.push_back(N::Mu00);
        if (sc == 2) fitted.insert(fitted.end(), {N::Mu00, N::Pi, N::Mu01});
        if (sc == 3) fitted.insert(fitted.end(), {N::Mu00W, N::PiW, N::M});
        for (auto id : fitted) spec.set(id, FittedModel{FeatureSpec::all_of(uses_w(id) ? 2 : 1)});
        std::vector<Method> ms{Method::If};
        if (sc == 1) ms.push_back(Method::A4Star);
        if (sc == 2) ms.push_back(Method::TrialTarget);
        out.push_back({"law" + std::to_string(sc), std::move(d), s, ms, spec});
    }
    return out;
}

Outcome criterion7(const std::vector<Fixture>& fx)
{
    Outcome o;
    double worst_mean = 0.0, worst_identity = 0.0, worst_kappa = 0.0;
    std::size_t vectors = 0;
    for (const auto& f : fx) {
        const auto folds = make_folds(f.data, 2, 3);
        const auto p = crossfit_predictions(f.data, f.spec, folds, f.scenario);

        // kappa times the target fraction of its training subset
        for (std::size_t k = 1; k <= folds.k; ++k) {
            const auto train = folds.complement(k);
            std::size_t zeros = 0;
            for (auto i : train) zeros += f.data.s(i) == 0;
            const double v = p.fold_kappa[k - 1] * static_cast<double>(zeros) / static_cast<double>(train.size());
            worst_kappa = std::max(worst_kappa, std::abs(v - 1.0));
        }
        std::vector<std::size_t> all(f.data.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        const double full = estimate_kappa(f.data, all) * static_cast<double>(f.data.n0()) / static_cast<double>(f.data.size());
        worst_kappa = std::max(worst_kappa, std::abs(full - 1.0));

        for (auto m : f.methods) {
            const auto r = m == Method::TrialTarget ? estimate_trial_target(f.data, p) : estimate(f.data, p, f.scenario, m);
            if (!r.ifs) continue;
            const auto& v = *r.ifs;
            const double n = static_cast<double>(v.alpha.size());
            double ma = 0, mb = 0, mp = 0, mf = 0;
            for (std::size_t i = 0; i < v.alpha.size(); ++i) {
                ma += v.alpha[i] / n;
                mb += v.beta[i] / n;
                mp += v.psi[i] / n;
                worst_identity = std::max(worst_identity, std::abs(v.psi[i] - (v.alpha[i] - v.beta[i])));
                if (v.phi) {
                    mf += (*v.phi)[i] / n;
                    const double expect = (v.alpha[i] - *r.points.phi * v.beta[i]) / r.points.beta;
                    worst_identity = std::max(worst_identity, std::abs((*v.phi)[i] - expect));
                }
            }
            for (double mean : {ma, mb, mp, mf}) worst_mean = std::max(worst_mean, std::abs(mean));
            vectors += v.phi ? 4 : 3;
        }

        // zero-residual collapse: trial outcomes replaced by the fitted means
        if (f.scenario == Scenario::One && std::find(f.methods.begin(), f.methods.end(), Method::If) != f.methods.end()) {
            std::vector<Observation> rows;
            const auto& m11 = p.at(N::Mu11);
            const auto& m10 = p.at(N::Mu10);
            for (std::size_t i = 0; i < f.data.size(); ++i) {
                auto ob = f.data.observation(i);
                if (ob.s == 1) ob.y = ob.a ? m11[i] : m10[i];
                rows.push_back(ob);
            }
            const auto z = Dataset::from_observations(rows);
            const double a = estimate(z, p, Scenario::One, Method::If).points.alpha;
            const double b = estimate(z, p, Scenario::One, Method::Or).points.alpha;
            o.check(a == b, "if != or on zero residuals in " + f.name);
        }
    }
    o.detail << " " << fx.size() << " fixtures, " << vectors << " IF vectors; max |P_n IF| " << worst_mean
             << ", max identity error " << worst_identity << ", max |kappa P_n(1-S) - 1| " << worst_kappa;
    o.check(worst_mean <= 1e-10, "IF not centred");
    o.check(worst_identity <= 1e-12, "psi/phi identity");
    o.check(worst_kappa <= 4 * std::numeric_limits<double>::epsilon(), "kappa identity");
    return o;
}

double score_residual(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const GlmFit& fit)
{
    Eigen::VectorXd r(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double eta = z.row(i).dot(fit.coefficients);
        r[i] = y[i] - (fit.family == Family::Logistic ? expit(eta) : eta);
    }
    return (z.transpose() * r).cwiseAbs().maxCoeff();
}

Outcome criterion8(const std::vector<Fixture>& fx)
{
    Outcome o;
    double worst_score = 0.0;
    std::size_t fits = 0;
    auto record = [&](const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const GlmFit& fit) {
        if (!fit.converged) return;
        ++fits;
        worst_score = std::max(worst_score, score_residual(z, y, fit));
    };

    // every (s,a) stratum and the selection model on each fixture
    for (const auto& f : fx) {
        const auto& d = f.data;
        const bool binary = detail::binary_outcome(d);
        const auto feat = FeatureSpec::all_of(d.p());
        std::vector<std::size_t> all(d.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        for (int s : {0, 1})
            for (int a : {0, 1}) {
                std::vector<std::size_t> rows;
                for (auto i : all)
                    if (d.s(i) == s && d.a(i) == a) rows.push_back(i);
                if (rows.size() < feat.covariate_indices.size() + 1) continue;
                const auto z = detail::design_matrix(d, rows, feat);
                Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
                double sum = 0.0;
                for (std::size_t j = 0; j < rows.size(); ++j) {
                    y[static_cast<Eigen::Index>(j)] = d.y(rows[j]);
                    sum += d.y(rows[j]);
                }
                const auto fam = binary ? Family::Logistic : Family::Linear;
                record(z, y, fit_glm(z, y, fam));

                // intercept-only: prediction equals the stratum mean
                FeatureSpec icpt;
                icpt.family = fam;
                auto c = fit_glm(detail::design_matrix(d, rows, icpt), y, fam);
                c.has_intercept = true;
                const double mean = sum / static_cast<double>(rows.size());
                if (mean > 0.0 && mean < 1.0) o.check(predict(c, {}) == mean, "intercept-only mean in " + f.name);
            }
        const auto z = detail::design_matrix(d, all, feat);
        Eigen::VectorXd sel(static_cast<Eigen::Index>(d.size()));
        for (std::size_t i = 0; i < d.size(); ++i) sel[static_cast<Eigen::Index>(i)] = d.s(i) == 0 ? 1.0 : 0.0;
        record(z, sel, fit_glm(z, sel, Family::Logistic));
    }

    // random designs
    std::mt19937_64 rng(2718);
    std::normal_distribution<double> norm;
    std::uniform_real_distribution<double> unif;
    for (int rep = 0; rep < 30; ++rep) {
        const int n = 80 + 37 * rep, k = 1 + rep % 6;
        Eigen::MatrixXd z(n, k + 1);
        Eigen::VectorXd yl(n), yb(n);
        for (int i = 0; i < n; ++i) {
            z(i, 0) = 1.0;
            double eta = -0.3;
            for (int j = 1; j <= k; ++j) {
                z(i, j) = norm(rng);
                eta += 0.4 * z(i, j) / j;
            }
            yl[i] = eta + norm(rng);
            yb[i] = unif(rng) < expit(eta) ? 1.0 : 0.0;
        }
        record(z, yl, fit_glm(z, yl, Family::Linear));
        record(z, yb, fit_glm(z, yb, Family::Logistic));
    }

    // 50-row fixture against a 1e-4 grid-search maximiser
    Eigen::MatrixXd z(50, 2);
    Eigen::VectorXd y(50);
    for (int i = 0; i < 50; ++i) {
        const double x = -2.0 + 4.0 * i / 49.0;
        z(i, 0) = 1.0;
        z(i, 1) = x;
        y[i] = ((i * 17) % 10) < (3 + 4 * (x > 0)) ? 1.0 : 0.0;
    }
    const auto fit = fit_glm(z, y, Family::Logistic);
    record(z, y, fit);
    const double e0 = std::abs(fit.coefficients[0] - 0.0897), e1 = std::abs(fit.coefficients[1] - 0.5961);
    o.check(fit.converged && e0 <= 1e-4 && e1 <= 1e-4, "grid-search oracle");

    o.detail << " " << fits << " converged fits, max score residual " << worst_score << "; grid oracle error "
             << std::max(e0, e1);
    o.check(worst_score <= 1e-6, "score residual");
    return o;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome criterion9()
{
    Outcome o;
    const auto dir = fs::temp_directory_path() / "reltrans_acceptance";
    fs::create_directories(dir);
    const std::vector<std::pair<std::string, std::string>> runs{{"simulate", "figure2-desk.cfg"},
                                                                {"simulate", "figure4-desk.cfg"},
                                                                {"simulate", "mu10-misspecified-desk.cfg"},
                                                                {"rate-sim", "rate-desk.cfg"}};
    for (const auto& [cmd, cfg] : runs) {
        std::string outputs[2];
        int i = 0;
        for (const char* threads : {"1", "8"}) {
            const auto out = dir / (cfg + "." + threads + ".csv");
            const std::string line = "\"" + kCli + "\" " + cmd + " --config \"" + kData + "/" + cfg + "\" --threads "
                                   + threads + " --out \"" + out.string() + "\" > /dev/null 2>&1";
            const int status = std::system(line.c_str());
            o.check(status == 0, cfg + " exited nonzero");
            outputs[i++] = slurp(out);
        }
        const bool same = !outputs[0].empty() && outputs[0] == outputs[1];
        o.detail << " " << cfg << (same ? " identical" : " DIFFERS") << " (" << outputs[0].size() << " bytes)";
        o.check(same, cfg);
    }
    fs::remove_all(dir);
    return o;
}

} // namespace

int main()
{
    int failures = 0;
    auto report = [&](int id, const std::function<Outcome()>& run) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [error: " << e.what() << "]";
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !o.pass;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " |" << o.detail.str() << " ("
                  << fmt(secs, 1) << " s)" << std::endl;
    };

    // computed on first use so its runtime is charged to criterion 1
    std::optional<MetricsTable> grid;
    auto needs_grid = [&](auto f) {
        return [&, f]() -> Outcome {
            if (!grid) grid = figure_grid();
            return f(*grid);
        };
    };
    const auto fx = fixtures();

    report(1, needs_grid(criterion1));
    report(2, criterion2);
    report(3, needs_grid(criterion3));
    report(4, needs_grid(criterion4));
    report(5, criterion5);
    report(6, criterion6);
    report(7, [&] { return criterion7(fx); });
    report(8, [&] { return criterion8(fx); });
    report(9, criterion9);

    std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed")) << std::endl;
    return failures ? 1 : 0;
}
