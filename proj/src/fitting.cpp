#include "edl/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/LU>

#include "edl/errors.hpp"

namespace edl {

void FitResult::set(std::string_view name, double value, double error) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) {
            values[i] = value;
            errors[i] = error;
            return;
        }
    }
    names.emplace_back(name);
    values.push_back(value);
    errors.push_back(error);
}

bool FitResult::has(std::string_view name) const noexcept {
    return std::find(names.begin(), names.end(), name) != names.end();
}

double FitResult::value(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) {
            return values[i];
        }
    }
    throw std::out_of_range("no fit parameter named " + std::string(name));
}

double FitResult::error(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) {
            return errors[i];
        }
    }
    throw std::out_of_range("no fit parameter named " + std::string(name));
}

void FitResult::set_meta(std::string_view key, double value) {
    for (auto& [k, v] : meta) {
        if (k == key) {
            v = value;
            return;
        }
    }
    meta.emplace_back(std::string(key), value);
}

std::optional<double> FitResult::get_meta(std::string_view key) const noexcept {
    for (const auto& [k, v] : meta) {
        if (k == key) {
            return v;
        }
    }
    return std::nullopt;
}

double LmResult::chi2_reduced() const noexcept {
    return dof > 0 ? chi2 / dof : std::numeric_limits<double>::quiet_NaN();
}

double LmResult::error(Eigen::Index i) const {
    const double v = covariance(i, i);
    return v >= 0.0 ? std::sqrt(v) : std::numeric_limits<double>::infinity();
}

namespace {

struct Problem {
    const ModelFunction& model;
    std::span<const double> x;
    std::span<const double> y;
    std::span<const double> sigma;
    std::vector<Eigen::Index> free;

    double residuals(const Eigen::VectorXd& p, Eigen::VectorXd& r) const {
        r.resize(static_cast<Eigen::Index>(x.size()));
        for (std::size_t i = 0; i < x.size(); ++i) {
            r[static_cast<Eigen::Index>(i)] = (y[i] - model(x[i], p)) / sigma[i];
        }
        return r.squaredNorm();
    }

    // Jacobian of the model (not the residual) divided by sigma.
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& p) const {
        const auto n = static_cast<Eigen::Index>(x.size());
        Eigen::MatrixXd j(n, static_cast<Eigen::Index>(free.size()));
        for (std::size_t c = 0; c < free.size(); ++c) {
            const Eigen::Index k = free[c];
            const double step = p[k] != 0.0 ? 1e-6 * std::abs(p[k]) : 1e-8;
            Eigen::VectorXd hi = p;
            Eigen::VectorXd lo = p;
            hi[k] += step;
            lo[k] -= step;
            const double width = hi[k] - lo[k];
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto u = static_cast<std::size_t>(i);
                j(i, static_cast<Eigen::Index>(c)) =
                    (model(x[u], hi) - model(x[u], lo)) / width / sigma[u];
            }
        }
        return j;
    }
};

} // namespace

LmResult levenberg_marquardt(const ModelFunction& model, std::span<const double> x,
                             std::span<const double> y, std::span<const double> sigma,
                             Eigen::VectorXd p, const std::vector<bool>& fixed,
                             const LmOptions& options) {
    if (x.size() != y.size() || x.size() != sigma.size()) {
        throw ValidationError("fit data arrays differ in length");
    }
    if (!fixed.empty() && fixed.size() != static_cast<std::size_t>(p.size())) {
        throw ValidationError("fixed-parameter mask has the wrong length");
    }
    for (double s : sigma) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw ValidationError("fit sigmas must be positive and finite");
        }
    }
    Problem prob{model, x, y, sigma, {}};
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        if (fixed.empty() || !fixed[static_cast<std::size_t>(k)]) {
            prob.free.push_back(k);
        }
    }
    const auto n_free = static_cast<Eigen::Index>(prob.free.size());
    LmResult res;
    res.dof = static_cast<int>(x.size()) - static_cast<int>(n_free);
    if (n_free == 0) {
        throw ValidationError("no free parameters");
    }
    if (res.dof < 0) {
        throw ValidationError("fewer data points than free parameters");
    }

    Eigen::VectorXd r;
    double chi2 = prob.residuals(p, r);
    if (!std::isfinite(chi2)) {
        throw FitError("model is not finite at the initial guess");
    }
    double lambda = 1e-3;
    bool done = false;
    int it = 0;
    for (; it < options.max_iterations && !done; ++it) {
        const Eigen::MatrixXd j = prob.jacobian(p);
        const Eigen::MatrixXd jtj = j.transpose() * j;
        const Eigen::VectorXd g = j.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() == 0.0 || chi2 == 0.0) {
            done = true;
            res.message = "zero gradient";
            break;
        }
        bool stepped = false;
        while (!stepped) {
            Eigen::MatrixXd a = jtj;
            for (Eigen::Index d = 0; d < n_free; ++d) {
                a(d, d) += lambda * std::max(jtj(d, d), 1e-300);
            }
            const Eigen::VectorXd delta = a.fullPivLu().solve(g);
            Eigen::VectorXd trial = p;
            for (Eigen::Index c = 0; c < n_free; ++c) {
                trial[prob.free[static_cast<std::size_t>(c)]] += delta[c];
            }
            Eigen::VectorXd r_trial;
            const double chi2_trial = prob.residuals(trial, r_trial);
            if (std::isfinite(chi2_trial) && chi2_trial <= chi2) {
                const double decrease = chi2 - chi2_trial;
                double step_ratio = 0.0;
                for (Eigen::Index c = 0; c < n_free; ++c) {
                    const Eigen::Index k = prob.free[static_cast<std::size_t>(c)];
                    step_ratio =
                        std::max(step_ratio, std::abs(delta[c]) / (std::abs(p[k]) + options.xtol));
                }
                p = trial;
                r = r_trial;
                chi2 = chi2_trial;
                lambda = std::max(lambda / 10.0, 1e-12);
                stepped = true;
                if (step_ratio < options.xtol) {
                    done = true;
                    res.message = "step below xtol";
                } else if (decrease <= options.ftol * chi2 && decrease > 0.0) {
                    done = true;
                    res.message = "chi2 change below ftol";
                } else if (chi2 < 1e-28) {
                    done = true;
                    res.message = "exact fit";
                }
            } else {
                lambda *= 10.0;
                if (lambda > 1e16) {
                    // No downhill step at machine precision: at the minimum.
                    done = true;
                    res.message = "no further decrease";
                    break;
                }
            }
        }
    }
    res.iterations = it;
    res.converged = done;
    if (!done) {
        res.message = "iteration limit reached";
    }
    res.params = p;
    res.chi2 = chi2;

    const Eigen::MatrixXd j = prob.jacobian(p);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
    res.covariance = Eigen::MatrixXd::Zero(p.size(), p.size());
    if (lu.isInvertible()) {
        Eigen::MatrixXd cov = lu.inverse();
        if (options.scale_covariance && res.dof > 0) {
            cov *= chi2 / res.dof;
        }
        for (Eigen::Index a = 0; a < n_free; ++a) {
            for (Eigen::Index b = 0; b < n_free; ++b) {
                res.covariance(prob.free[static_cast<std::size_t>(a)],
                               prob.free[static_cast<std::size_t>(b)]) = cov(a, b);
            }
        }
    } else {
        for (Eigen::Index a = 0; a < n_free; ++a) {
            const Eigen::Index k = prob.free[static_cast<std::size_t>(a)];
            res.covariance(k, k) = std::numeric_limits<double>::infinity();
        }
        res.message += "; singular normal matrix";
    }
    return res;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y, std::span<const double> sigma) {
    if (x.size() != y.size() || (!sigma.empty() && sigma.size() != x.size())) {
        throw ValidationError("line fit arrays differ in length");
    }
    if (x.size() < 2) {
        throw ValidationError("line fit needs at least 2 points");
    }
    const bool weighted = !sigma.empty();
    double s = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double w = 1.0;
        if (weighted) {
            if (!(sigma[i] > 0.0) || !std::isfinite(sigma[i])) {
                throw ValidationError("line fit sigmas must be positive and finite");
            }
            w = 1.0 / (sigma[i] * sigma[i]);
        }
        s += w;
        sx += w * x[i];
        sy += w * y[i];
        sxx += w * x[i] * x[i];
        sxy += w * x[i] * y[i];
    }
    const double det = s * sxx - sx * sx;
    if (!(det > 1e-12 * s * sxx)) {
        throw ValidationError("line fit needs at least 2 distinct x values");
    }
    LineFit f;
    f.slope = (s * sxy - sx * sy) / det;
    f.intercept = (sxx * sy - sx * sxy) / det;
    double var_slope = s / det;
    double var_intercept = sxx / det;
    f.dof = static_cast<int>(x.size()) - 2;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double w = weighted ? 1.0 / (sigma[i] * sigma[i]) : 1.0;
        const double d = y[i] - (f.slope * x[i] + f.intercept);
        f.chi2 += w * d * d;
    }
    if (!weighted) {
        const double scale = f.dof > 0 ? f.chi2 / f.dof : 0.0;
        var_slope *= scale;
        var_intercept *= scale;
    }
    f.slope_err = std::sqrt(var_slope);
    f.intercept_err = std::sqrt(var_intercept);
    return f;
}

} // namespace edl
