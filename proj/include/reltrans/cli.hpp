#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "reltrans/config.hpp"
#include "reltrans/simulate.hpp"

namespace reltrans::cli {

enum class Format { Csv, Json };

inline Format format_from(const std::string& s)
{
    if (s == "csv") return Format::Csv;
    if (s == "json") return Format::Json;
    throw Error(ErrorCode::ConfigError, "cli", "format must be csv or json, got '" + s + "'");
}

/// Writes next to `path` and renames, so readers never see a partial file.
inline void write_atomic(const std::string& path, const std::string& content)
{
    namespace fs = std::filesystem;
    const fs::path target(path);
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cli", "cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw Error(ErrorCode::IoError, "cli", "write failed for '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::IoError, "cli", "cannot rename onto '" + path + "'");
    }
}

// --- estimate -----------------------------------------------------------------

struct EstimateOptions {
    std::string data;
    std::string schema;   // optional config file
    int scenario = 1;
    std::string method = "if";
    std::size_t folds = 2;
    std::uint64_t seed = 1;
    double level = 0.95;
};

/// Column mapping and nuisance models read from a schema config.
///
///   columns.y / columns.s / columns.a = <name>
///   columns.x / columns.w = [names]
///   nuisance.<id> = fitted | known:<value>
///   nuisance.<id>.covariates = [names]
///   nuisance.<id>.intercept = true | false
///   nuisance.<id>.family = logistic | linear
struct SchemaConfig {
    Schema columns;
    Config raw;
};

inline SchemaConfig load_schema(const std::string& path)
{
    SchemaConfig s;
    if (path.empty()) return s;
    s.raw = Config::load(path);
    s.raw.check_keys({"columns.y", "columns.s", "columns.a", "columns.x", "columns.w", "nuisance.*"});
    s.columns.y = s.raw.get_string("columns.y", "y");
    s.columns.s = s.raw.get_string("columns.s", "s");
    s.columns.a = s.raw.get_string("columns.a", "a");
    if (s.raw.has("columns.x")) s.columns.x = s.raw.get_list("columns.x");
    if (s.raw.has("columns.w")) s.columns.w = s.raw.get_list("columns.w");
    return s;
}

/// Default: every required nuisance fitted on all covariates with intercept.
inline NuisanceSpec build_estimate_spec(const Config& cfg, const Dataset& data, Scenario sc, Method m)
{
    NuisanceSpec spec;
    const auto required = required_nuisances(sc, m);
    for (const auto& child : cfg.children("nuisance")) {
        const auto name = child.substr(0, child.find('.'));
        if (!nuisance_from_string(name)) throw Error(ErrorCode::ConfigError, "cli", "unknown nuisance '" + name + "'");
        const auto field = child.find('.') == std::string::npos ? std::string() : child.substr(child.find('.') + 1);
        if (!field.empty() && field != "covariates" && field != "intercept" && field != "family")
            throw Error(ErrorCode::ConfigError, "cli", "unknown nuisance field 'nuisance." + child + "'");
    }
    for (auto id : required) {
        const auto base = "nuisance." + std::string(to_string(id));
        const auto kind = cfg.get_string(base, "fitted");
        if (kind.rfind("known:", 0) == 0) {
            const auto v = detail::parse_number(kind.substr(6));
            if (!v) throw Error(ErrorCode::ConfigError, "cli", base + ": bad known value '" + kind + "'");
            spec.set(id, KnownConstant{*v});
            continue;
        }
        if (kind == "oracle")
            throw Error(ErrorCode::ConfigError, "cli", base + ": oracle nuisances exist only in simulation mode");
        if (kind != "fitted") throw Error(ErrorCode::ConfigError, "cli", base + ": expected fitted or known:<value>");

        std::vector<std::string> names = data.x_names();
        if (uses_w(id)) names.insert(names.end(), data.w_names().begin(), data.w_names().end());
        FeatureSpec f;
        if (cfg.has(base + ".covariates")) {
            for (const auto& n : cfg.get_list(base + ".covariates")) {
                auto it = std::find(names.begin(), names.end(), n);
                if (it == names.end())
                    throw Error(ErrorCode::ConfigError, "cli", base + ".covariates: unknown covariate '" + n + "'");
                f.covariate_indices.push_back(static_cast<std::size_t>(it - names.begin()));
            }
        } else {
            f = FeatureSpec::all_of(names.size());
        }
        f.include_intercept = cfg.get_bool(base + ".intercept", true);
        if (cfg.has(base + ".family")) {
            const auto fam = cfg.get_string(base + ".family");
            if (fam == "logistic") f.family = Family::Logistic;
            else if (fam == "linear") f.family = Family::Linear;
            else throw Error(ErrorCode::ConfigError, "cli", base + ".family must be logistic or linear");
        }
        spec.set(id, FittedModel{f});
    }
    return spec;
}

inline EstimateRecord run_estimate(const EstimateOptions& opt)
{
    if (opt.scenario < 1 || opt.scenario > 3) throw Error(ErrorCode::ConfigError, "cli", "scenario must be 1, 2 or 3");
    if (opt.folds < 2) throw Error(ErrorCode::ConfigError, "cli", "folds must be >= 2");
    if (!(opt.level > 0.0 && opt.level < 1.0)) throw Error(ErrorCode::ConfigError, "cli", "level must lie in (0,1)");
    const auto method = method_from_string(opt.method);
    if (!method || *method == Method::Plugin)
        throw Error(ErrorCode::ConfigError, "cli", "unknown method '" + opt.method + "'");
    const auto sc = scenario_from_int(opt.scenario);

    const auto schema = load_schema(opt.schema);
    const auto data = load_csv(opt.data, schema.columns);
    const auto report = validate(data, sc);
    if (!report.ok()) {
        std::string msg = "dataset fails validation:";
        for (const auto& v : report.violations) msg += " " + v + ";";
        throw Error(ErrorCode::StructuralError, "data", msg);
    }
    const auto spec = build_estimate_spec(schema.raw, data, sc, *method);
    const auto folds = make_folds(data, opt.folds, opt.seed);
    const auto preds = crossfit_predictions(data, spec, folds, sc);
    const auto res = estimate(data, preds, sc, *method);
    if (res.ifs) return wald_inference(res.points, *res.ifs, opt.level);
    return points_only(res.points, opt.level, data.size());
}

inline std::string serialize(const EstimateRecord& r, Format f)
{
    auto opt_num = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    auto opt_ci = [](const std::optional<Interval>& v) {
        return v ? nlohmann::json::array({v->lower, v->upper}) : nlohmann::json(nullptr);
    };
    if (f == Format::Json) {
        nlohmann::json j = {
            {"scenario", to_int(r.points.scenario)},
            {"method", std::string(to_string(r.points.method))},
            {"n", r.n},
            {"level", r.level},
            {"alpha", r.points.alpha},
            {"beta", r.points.beta},
            {"phi", opt_num(r.points.phi)},
            {"psi", r.points.psi},
            {"se_alpha", opt_num(r.se_alpha)},
            {"se_beta", opt_num(r.se_beta)},
            {"se_phi", opt_num(r.se_phi)},
            {"se_psi", opt_num(r.se_psi)},
            {"ci_alpha", opt_ci(r.ci_alpha)},
            {"ci_beta", opt_ci(r.ci_beta)},
            {"ci_phi", opt_ci(r.ci_phi)},
            {"ci_psi", opt_ci(r.ci_psi)},
        };
        return j.dump(2) + "\n";
    }
    auto num = [](const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string("NA"); };
    std::ostringstream out;
    out << "parameter,estimate,se,ci_lower,ci_upper\n";
    auto row = [&](const char* name, std::optional<double> point, const std::optional<double>& se,
                   const std::optional<Interval>& ci) {
        out << name << ',' << num(point) << ',' << num(se) << ',' << num(ci ? std::optional(ci->lower) : std::nullopt)
            << ',' << num(ci ? std::optional(ci->upper) : std::nullopt) << '\n';
    };
    row("alpha", r.points.alpha, r.se_alpha, r.ci_alpha);
    row("beta", r.points.beta, r.se_beta, r.ci_beta);
    row("phi", r.points.phi, r.se_phi, r.ci_phi);
    row("psi", r.points.psi, r.se_psi, r.ci_psi);
    return out.str();
}

// --- simulate / rate-sim --------------------------------------------------------

inline std::vector<NuisanceId> nuisance_list(const Config& cfg, const std::string& key)
{
    std::vector<NuisanceId> out;
    for (const auto& n : cfg.get_list(key)) {
        if (n == "none") continue;
        auto id = nuisance_from_string(n);
        if (!id) throw Error(ErrorCode::ConfigError, "cli", key + ": unknown nuisance '" + n + "'");
        out.push_back(*id);
    }
    return out;
}

inline std::size_t positive_count(const Config& cfg, const std::string& key, long long fallback)
{
    const auto v = cfg.get_int(key, fallback);
    if (v < 1) throw Error(ErrorCode::ConfigError, "cli", "'" + key + "' must be >= 1");
    return static_cast<std::size_t>(v);
}

inline McGrid mc_grid_from(const Config& cfg)
{
    cfg.check_keys({"experiment", "reps", "seed", "folds", "level", "n1", "n0", "estimators", "configs",
                    "correctness.*", "truth", "truth_reps", "format", "dgm.case", "dgm.m", "dgm.g", "dgm.r",
                    "dgm.gamma1", "dgm.lambda", "dgm.u_slope", "dgm.q"});
    McGrid g;
    g.reps = positive_count(cfg, "reps", 500);
    g.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(g.seed)));
    g.folds = positive_count(cfg, "folds", 2);
    if (g.folds < 2) throw Error(ErrorCode::ConfigError, "cli", "folds must be >= 2");
    g.level = cfg.get_double("level", 0.95);
    if (!(g.level > 0.0 && g.level < 1.0)) throw Error(ErrorCode::ConfigError, "cli", "level must lie in (0,1)");

    if (cfg.has("n1")) {
        const auto n1 = cfg.get_ints("n1");
        auto n0 = cfg.has("n0") ? cfg.get_ints("n0") : std::vector<long long>{5000};
        if (n0.size() == 1) n0.assign(n1.size(), n0.front());
        if (n0.size() != n1.size()) throw Error(ErrorCode::ConfigError, "cli", "n0 must be one value or match n1");
        g.designs.clear();
        for (std::size_t i = 0; i < n1.size(); ++i) {
            if (n1[i] < 1 || n0[i] < 1) throw Error(ErrorCode::ConfigError, "cli", "sample sizes must be positive");
            g.designs.emplace_back(static_cast<std::size_t>(n1[i]), static_cast<std::size_t>(n0[i]));
        }
    }
    if (cfg.has("estimators")) {
        g.estimators.clear();
        for (const auto& e : cfg.get_list("estimators")) {
            auto m = method_from_string(e);
            if (!m || *m == Method::TrialTarget)
                throw Error(ErrorCode::ConfigError, "cli", "estimators: unsupported estimator '" + e + "'");
            g.estimators.push_back(*m);
        }
    }
    std::map<std::string, CorrectnessConfig> known;
    for (const auto& c : default_correctness()) known[c.name] = c;
    for (const auto& name : cfg.children("correctness"))
        known[name] = CorrectnessConfig{name, nuisance_list(cfg, "correctness." + name)};
    if (cfg.has("configs")) {
        g.configs.clear();
        for (const auto& name : cfg.get_list("configs")) {
            auto it = known.find(name);
            if (it == known.end()) throw Error(ErrorCode::ConfigError, "cli", "configs: unknown configuration '" + name + "'");
            g.configs.push_back(it->second);
        }
    }
    const auto truth = cfg.get_string("truth", "quadrature");
    if (truth == "quadrature") g.truth = TruthSource::Quadrature;
    else if (truth == "montecarlo") g.truth = TruthSource::MonteCarlo;
    else throw Error(ErrorCode::ConfigError, "cli", "truth must be quadrature or montecarlo");
    g.truth_reps = positive_count(cfg, "truth_reps", 20);

    auto& d = g.dgm;
    d.dgm_case = static_cast<int>(cfg.get_int("dgm.case", 2));
    if (cfg.has("dgm.m")) d.m_coef = cfg.get_doubles("dgm.m");
    if (cfg.has("dgm.g")) d.g_coef = cfg.get_doubles("dgm.g");
    if (cfg.has("dgm.r")) d.r_coef = cfg.get_doubles("dgm.r");
    if (cfg.has("dgm.gamma1")) d.gamma1 = cfg.get_doubles("dgm.gamma1");
    if (cfg.has("dgm.lambda")) d.lambda_slopes = cfg.get_doubles("dgm.lambda");
    d.u_slope = cfg.get_double("dgm.u_slope", d.u_slope);
    d.q = cfg.get_double("dgm.q", d.q);
    return g;
}

inline RateGrid rate_grid_from(const Config& cfg)
{
    cfg.check_keys({"experiment", "reps", "seed", "n", "r", "h", "noise", "level", "format"});
    RateGrid g;
    g.reps = positive_count(cfg, "reps", 1000);
    g.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(g.seed)));
    if (cfg.has("n")) {
        g.ns.clear();
        for (auto v : cfg.get_ints("n")) {
            if (v < 2) throw Error(ErrorCode::ConfigError, "cli", "n must be >= 2");
            g.ns.push_back(static_cast<std::size_t>(v));
        }
    }
    if (cfg.has("r")) g.rs = cfg.get_doubles("r");
    g.h = cfg.get_double("h", g.h);
    const auto noise = cfg.get_string("noise", "per_unit");
    if (noise == "per_unit") g.mode = PerturbMode::PerUnit;
    else if (noise == "function") g.mode = PerturbMode::Function;
    else throw Error(ErrorCode::ConfigError, "cli", "noise must be per_unit or function");
    g.level = cfg.get_double("level", 0.95);
    if (!(g.level > 0.0 && g.level < 1.0)) throw Error(ErrorCode::ConfigError, "cli", "level must lie in (0,1)");
    return g;
}

enum class SimulationKind { Mc, Rate };

inline MetricsTable run_simulation(const Config& cfg, SimulationKind kind, std::size_t threads)
{
    const auto experiment = cfg.get_string("experiment", kind == SimulationKind::Mc ? "mc" : "rate");
    if ((kind == SimulationKind::Mc) != (experiment == "mc") || (experiment != "mc" && experiment != "rate"))
        throw Error(ErrorCode::ConfigError, "cli",
                    "config declares experiment = " + experiment + ", which does not match the command");
    if (kind == SimulationKind::Mc) return run_mc_experiment(mc_grid_from(cfg), threads);
    return run_rate_experiment(rate_grid_from(cfg), threads);
}

inline std::string serialize(const MetricsTable& t, Format f)
{
    if (f == Format::Json) return t.to_json().dump(2) + "\n";
    std::ostringstream out;
    t.write_csv(out);
    return out.str();
}

inline std::string summary_line(const MetricsRow& r)
{
    auto num = [](double v) {
        if (std::isnan(v)) return std::string("NA");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4g", v);
        return std::string(buf);
    };
    return r.estimator + " " + r.config + " n1=" + std::to_string(r.n1) + " n0=" + std::to_string(r.n0)
         + " reps=" + std::to_string(r.reps) + " abs_bias=" + num(r.abs_bias) + " sd=" + num(r.sd)
         + " sqrt_n_rmse=" + num(r.sqrt_n_rmse) + " coverage=" + num(r.coverage) + (r.warning ? " [warning]" : "")
         + (r.failure.empty() ? "" : " [aborted]");
}

// --- entry point -----------------------------------------------------------------

inline void report_error(std::ostream& err, std::string_view code, const std::string& module, const std::string& message)
{
    err << nlohmann::json{{"code", code}, {"module", module}, {"message", message}}.dump() << "\n";
}

inline Format infer_format(const std::string& flag, const std::string& out, const std::string& fallback)
{
    if (!flag.empty()) return format_from(flag);
    if (out.size() >= 5 && out.compare(out.size() - 5, 5, ".json") == 0) return Format::Json;
    return format_from(fallback);
}

inline void emit(const std::string& out_path, const std::string& content, std::ostream& out)
{
    if (out_path.empty() || out_path == "-") out << content;
    else write_atomic(out_path, content);
}

/// Full command-line behaviour; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Transport relative treatment effects from a trial to a target population"};
    app.require_subcommand(1);

    EstimateOptions est;
    std::string est_out, est_format;
    auto* estimate_cmd = app.add_subcommand("estimate", "Estimate target counterfactual means from a CSV");
    estimate_cmd->add_option("--data", est.data, "Input CSV")->required();
    estimate_cmd->add_option("--schema", est.schema, "Schema/nuisance config");
    estimate_cmd->add_option("--scenario", est.scenario, "1, 2 or 3");
    estimate_cmd->add_option("--method", est.method, "if|or|ipw|ipw_alt|a4star|trial_target");
    estimate_cmd->add_option("--folds", est.folds, "Cross-fitting folds");
    estimate_cmd->add_option("--seed", est.seed, "Fold seed");
    estimate_cmd->add_option("--level", est.level, "Confidence level");
    estimate_cmd->add_option("--out", est_out, "Output path (stdout if omitted)");
    estimate_cmd->add_option("--format", est_format, "csv or json");

    std::string sim_config, sim_out, sim_format;
    std::size_t threads = 0;
    auto* simulate_cmd = app.add_subcommand("simulate", "Run a Monte-Carlo grid");
    auto* rate_cmd = app.add_subcommand("rate-sim", "Run the rate-robustness grid");
    for (auto* cmd : {simulate_cmd, rate_cmd}) {
        cmd->add_option("--config", sim_config, "Grid config")->required();
        cmd->add_option("--out", sim_out, "Output path (stdout if omitted)");
        cmd->add_option("--threads", threads, "Worker threads (default: all cores)");
        cmd->add_option("--format", sim_format, "csv or json");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        report_error(err, to_string(ErrorCode::ConfigError), "cli", e.what());
        return 2;
    }

    try {
        if (estimate_cmd->parsed()) {
            const auto rec = run_estimate(est);
            emit(est_out, serialize(rec, infer_format(est_format, est_out, "json")), out);
            return 0;
        }
        const bool rate = rate_cmd->parsed();
        const auto cfg = Config::load(sim_config);
        const auto fmt = infer_format(sim_format, sim_out, cfg.get_string("format", "csv"));
        const auto table = run_simulation(cfg, rate ? SimulationKind::Rate : SimulationKind::Mc, threads);
        const auto content = serialize(table, fmt);
        emit(sim_out, content, out);
        auto& log = (sim_out.empty() || sim_out == "-") ? err : out;
        for (const auto& w : table.warnings) log << "warning: " << w << "\n";
        for (const auto& r : table.rows) log << summary_line(r) << "\n";
        return 0;
    } catch (const Error& e) {
        report_error(err, to_string(e.code()), e.module(), e.what());
        return exit_code(e.code());
    } catch (const std::exception& e) {
        report_error(err, "INTERNAL_ERROR", "cli", e.what());
        return 3;
    }
}

} // namespace reltrans::cli
