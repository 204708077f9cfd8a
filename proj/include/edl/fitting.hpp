#pragma once

// Weighted nonlinear least squares (Levenberg-Marquardt) and the named
// result type used by every analysis fit.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace edl {

struct FitResult {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<double> errors;
    double chi2_reduced = 0.0;
    bool converged = false;
    std::vector<std::string> warnings;
    // Free-form numeric metadata (e.g. the field a fit belongs to).
    std::vector<std::pair<std::string, double>> meta;

    void set(std::string_view name, double value, double error);
    bool has(std::string_view name) const noexcept;
    // Throw std::out_of_range for unknown names.
    double value(std::string_view name) const;
    double error(std::string_view name) const;

    void set_meta(std::string_view key, double value);
    std::optional<double> get_meta(std::string_view key) const noexcept;
};

using ModelFunction = std::function<double(double x, const Eigen::VectorXd& p)>;

struct LmOptions {
    int max_iterations = 400;
    double xtol = 1e-12;   // relative step size
    double ftol = 1e-14;   // relative chi2 decrease
    // Multiply the covariance by chi2_reduced. Use when the supplied sigmas
    // are only relative weights.
    bool scale_covariance = false;
};

struct LmResult {
    Eigen::VectorXd params;
    Eigen::MatrixXd covariance; // zero rows/columns for fixed parameters
    double chi2 = 0.0;
    int dof = 0;
    int iterations = 0;
    bool converged = false;
    std::string message;

    double chi2_reduced() const noexcept;
    double error(Eigen::Index i) const;
};

// Minimizes sum(((y - f(x, p)) / sigma)^2). Sigmas must be positive; an
// empty `fixed` mask means all parameters are free. Derivatives are central
// differences scaled to each parameter's magnitude.
LmResult levenberg_marquardt(const ModelFunction& model, std::span<const double> x,
                             std::span<const double> y, std::span<const double> sigma,
                             Eigen::VectorXd p0, const std::vector<bool>& fixed = {},
                             const LmOptions& options = {});

struct LineFit {
    double slope = 0.0;
    double slope_err = 0.0;
    double intercept = 0.0;
    double intercept_err = 0.0;
    double chi2 = 0.0;
    int dof = 0;
};

// Closed-form weighted linear regression y = slope x + intercept. With no
// sigmas (empty span) the fit is unweighted and errors are scaled by the
// residual variance.
LineFit fit_line(std::span<const double> x, std::span<const double> y,
                 std::span<const double> sigma = {});

} // namespace edl
