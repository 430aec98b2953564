#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "reltrans/error.hpp"

namespace reltrans {

enum class Family { Logistic, Linear };

inline std::string_view to_string(Family f) { return f == Family::Logistic ? "logistic" : "linear"; }

inline double expit(double eta)
{
    if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

struct GlmFit {
    Eigen::VectorXd coefficients;
    Family family = Family::Logistic;
    bool has_intercept = false;   // coefficients[0] is the intercept
    bool converged = false;
    int iterations = 0;
    double final_gradient_norm = 0.0;
    double tolerance = 1e-8;
    // Intercept-only fits predict the response mean verbatim.
    std::optional<double> constant_mean;
};

struct GlmOptions {
    double gradient_tolerance = 1e-8;
    int max_iterations = 100;
    double jitter = 1e-10;
    double jitter_condition = 1e12;
    double singular_condition = 1e14;
    int max_halvings = 30;
};

namespace detail {

/// Solves gram * delta = rhs, adding the ridge jitter when the spectral
/// condition number exceeds the threshold.
inline Eigen::VectorXd solve_gram(Eigen::MatrixXd gram, const Eigen::VectorXd& rhs, const GlmOptions& opt)
{
    auto condition = [](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        if (!(lo > 0.0) || !std::isfinite(hi)) return std::numeric_limits<double>::infinity();
        return hi / lo;
    };
    double cond = condition(gram);
    if (cond > opt.jitter_condition) {
        gram.diagonal().array() += opt.jitter;
        cond = condition(gram);
        if (cond > opt.singular_condition)
            throw Error(ErrorCode::NumericalSingularity, "nuisance",
                        "weighted Gram matrix is singular (condition " + std::to_string(cond) + ")");
    }
    return gram.ldlt().solve(rhs);
}

inline double bernoulli_loglik(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& beta)
{
    const Eigen::VectorXd eta = z * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double e = eta[i];
        // log(1 + exp(e)) without overflow
        const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
        ll += y[i] * e - softplus;
    }
    return ll;
}

inline bool is_intercept_only(const Eigen::MatrixXd& z)
{
    return z.cols() == 1 && (z.col(0).array() == 1.0).all();
}

} // namespace detail

/// Maximum-likelihood GLM fit. Logistic uses Newton/IRLS with step halving;
/// linear is ordinary least squares on the same normal equations.
inline GlmFit fit_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, Family family,
                      const GlmOptions& opt = {})
{
    const auto n = design.rows();
    const auto k = design.cols();
    if (n != response.size())
        throw Error(ErrorCode::DimensionError, "nuisance", "design rows differ from response length");
    if (k == 0)
        throw Error(ErrorCode::DimensionError, "nuisance", "design has no regressors");
    if (n < k)
        throw Error(ErrorCode::DimensionError, "nuisance",
                    "fewer observations (" + std::to_string(n) + ") than regressors (" + std::to_string(k) + ")");
    if (family == Family::Logistic)
        for (Eigen::Index i = 0; i < n; ++i)
            if (response[i] != 0.0 && response[i] != 1.0)
                throw Error(ErrorCode::ParseError, "nuisance", "logistic response must be 0/1");

    GlmFit fit;
    fit.family = family;
    fit.tolerance = opt.gradient_tolerance;

    if (detail::is_intercept_only(design)) {
        double sum = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) sum += response[i];
        const double mean = sum / static_cast<double>(n);
        fit.constant_mean = mean;
        fit.iterations = 0;
        if (family == Family::Linear) {
            fit.coefficients = Eigen::VectorXd::Constant(1, mean);
            fit.converged = true;
        } else if (mean > 0.0 && mean < 1.0) {
            fit.coefficients = Eigen::VectorXd::Constant(1, logit(mean));
            fit.converged = true;
        } else {
            // MLE at infinity
            fit.coefficients = Eigen::VectorXd::Constant(1, mean > 0.5 ? 40.0 : -40.0);
            fit.converged = false;
        }
        fit.final_gradient_norm = 0.0;
        return fit;
    }

    if (family == Family::Linear) {
        const Eigen::MatrixXd gram = design.transpose() * design;
        Eigen::VectorXd beta = detail::solve_gram(gram, design.transpose() * response, opt);
        // one step of iterative refinement
        Eigen::VectorXd grad = design.transpose() * (response - design * beta);
        beta += detail::solve_gram(gram, grad, opt);
        grad = design.transpose() * (response - design * beta);
        const double scale = std::max(1.0, (design.transpose() * response).cwiseAbs().maxCoeff());
        fit.tolerance = opt.gradient_tolerance * scale;
        fit.coefficients = beta;
        fit.iterations = 2;
        fit.final_gradient_norm = grad.cwiseAbs().maxCoeff();
        fit.converged = fit.final_gradient_norm <= fit.tolerance;
        return fit;
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
    double ll = detail::bernoulli_loglik(design, response, beta);
    Eigen::VectorXd grad(k);
    int it = 0;
    for (;; ++it) {
        const Eigen::VectorXd eta = design * beta;
        Eigen::VectorXd p(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            p[i] = expit(eta[i]);
            w[i] = p[i] * (1.0 - p[i]);
        }
        grad = design.transpose() * (response - p);
        if (grad.cwiseAbs().maxCoeff() <= opt.gradient_tolerance || it >= opt.max_iterations) break;

        const Eigen::MatrixXd gram = design.transpose() * w.asDiagonal() * design;
        Eigen::VectorXd step = detail::solve_gram(gram, grad, opt);
        double scale = 1.0;
        Eigen::VectorXd trial = beta + step;
        double trial_ll = detail::bernoulli_loglik(design, response, trial);
        for (int h = 0; h < opt.max_halvings && !(trial_ll >= ll - 1e-12 * std::abs(ll)); ++h) {
            scale *= 0.5;
            trial = beta + scale * step;
            trial_ll = detail::bernoulli_loglik(design, response, trial);
        }
        beta = trial;
        ll = trial_ll;
    }
    fit.coefficients = beta;
    fit.iterations = it;
    fit.final_gradient_norm = grad.cwiseAbs().maxCoeff();
    fit.converged = fit.final_gradient_norm <= opt.gradient_tolerance;
    return fit;
}

/// Linear predictor for raw covariates (intercept handled by the fit).
inline double linear_predictor(const GlmFit& fit, std::span<const double> covariates)
{
    const auto offset = fit.has_intercept ? 1 : 0;
    if (static_cast<Eigen::Index>(covariates.size()) + offset != fit.coefficients.size())
        throw Error(ErrorCode::DimensionError, "nuisance",
                    "predict: expected " + std::to_string(fit.coefficients.size() - offset) + " covariates, got "
                        + std::to_string(covariates.size()));
    double eta = fit.has_intercept ? fit.coefficients[0] : 0.0;
    for (std::size_t j = 0; j < covariates.size(); ++j)
        eta += fit.coefficients[static_cast<Eigen::Index>(j) + offset] * covariates[j];
    return eta;
}

inline double predict(const GlmFit& fit, std::span<const double> covariates)
{
    if (fit.constant_mean && covariates.empty() && fit.has_intercept) return *fit.constant_mean;
    const double eta = linear_predictor(fit, covariates);
    return fit.family == Family::Logistic ? expit(eta) : eta;
}

} // namespace reltrans
