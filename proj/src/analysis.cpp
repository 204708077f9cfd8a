#include "edl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>

#include <Eigen/QR>
#include <fftw3.h>
#include <fmt/format.h>

#include "edl/dynamics.hpp"
#include "edl/errors.hpp"

namespace edl {

namespace {

constexpr double kTwoPi = 2.0 * constants::pi;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double wrap_phase(double phi) {
    phi = std::remainder(phi, kTwoPi); // [-pi, pi]
    if (phi <= -constants::pi) {
        phi += kTwoPi;
    }
    return phi;
}

double median(std::vector<double> v) {
    if (v.empty()) {
        return kNaN;
    }
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) {
        return *mid;
    }
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

// Weighted linear least squares on a small design matrix.
Eigen::VectorXd linear_solve(const Eigen::MatrixXd& design, std::span<const double> y,
                             std::span<const double> sigma) {
    const auto n = design.rows();
    Eigen::MatrixXd a(n, design.cols());
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double w = 1.0 / sigma[static_cast<std::size_t>(i)];
        a.row(i) = design.row(i) * w;
        b[i] = y[static_cast<std::size_t>(i)] * w;
    }
    return a.colPivHouseholderQr().solve(b);
}

double median_step(std::span<const double> t) {
    std::vector<double> dt;
    for (std::size_t i = 1; i < t.size(); ++i) {
        dt.push_back(std::abs(t[i] - t[i - 1]));
    }
    return std::max(median(dt), 1e-9);
}

// Frequency (cycles/ps) of the strongest weighted sinusoid in the data,
// searched over [f_lo, f_hi] on a grid of 1/(8 span).
double periodogram_peak(std::span<const double> t, std::span<const double> y,
                        std::span<const double> sigma, double span, double f_lo, double f_hi) {
    double sw = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double w = 1.0 / (sigma[i] * sigma[i]);
        sw += w;
        swy += w * y[i];
    }
    const double ybar = swy / sw;
    const int n_freq = std::max(200, static_cast<int>(8.0 * span * (f_hi - f_lo)));
    double best_f = f_lo;
    double best_p = -1.0;
    for (int k = 0; k <= n_freq; ++k) {
        const double f = f_lo + (f_hi - f_lo) * k / n_freq;
        double c = 0.0, s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double w = (y[i] - ybar) / (sigma[i] * sigma[i]);
            c += w * std::cos(kTwoPi * f * t[i]);
            s += w * std::sin(kTwoPi * f * t[i]);
        }
        const double p = c * c + s * s;
        if (p > best_p) {
            best_p = p;
            best_f = f;
        }
    }
    return best_f;
}

std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

// Unnormalized complex DFT, sign -1 forward, +1 backward.
std::vector<std::complex<double>> dft(const std::vector<std::complex<double>>& in, int sign) {
    const int n = static_cast<int>(in.size());
    std::vector<std::complex<double>> out(in.size());
    auto* src = reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in.data()));
    auto* dst = reinterpret_cast<fftw_complex*>(out.data());
    fftw_plan plan;
    {
        std::lock_guard lock(fftw_planner_mutex());
        plan = fftw_plan_dft_1d(n, src, dst, sign, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    return out;
}

// Index in FFT order of the m-th frequency, m in [-floor(N/2), ceil(N/2) - 1].
std::size_t fft_index(long m, std::size_t n) {
    const long nn = static_cast<long>(n);
    return static_cast<std::size_t>(((m % nn) + nn) % nn);
}

} // namespace

DopTrace dop_trace(const Histogram& co, const Histogram& cross) {
    if (!co.same_binning(cross)) {
        throw ValidationError("histogram binning mismatch");
    }
    DopTrace t;
    for (std::size_t i = 0; i < co.size(); ++i) {
        const double a = co.counts[i];
        const double b = cross.counts[i];
        const double n = a + b;
        if (!(n > 0.0)) {
            continue;
        }
        t.time_ps.push_back(co.bin_center(i));
        t.dop.push_back((a - b) / n);
        t.dop_err.push_back(2.0 * std::sqrt(a * b / (n * n * n)));
        t.counts.push_back(n);
    }
    return t;
}

FitResult fit_exponential_lifetime(const Histogram& hist, std::pair<double, double> window) {
    if (!(window.second > window.first)) {
        throw ValidationError("empty fit window");
    }
    if (window.first < hist.start_ps || window.second > hist.end_ps() + 1e-9) {
        throw ValidationError("fit window outside histogram range");
    }
    std::vector<double> t, y, s;
    for (std::size_t i = 0; i < hist.size(); ++i) {
        const double c = hist.bin_center(i);
        if (c >= window.first && c < window.second) {
            t.push_back(c);
            y.push_back(hist.counts[i]);
            s.push_back(std::sqrt(std::max(hist.counts[i], 1.0)));
        }
    }
    if (t.size() < 4) {
        throw ValidationError("lifetime fit needs at least 4 bins in the window");
    }
    const double t0 = t.front();
    const std::size_t tail = std::max<std::size_t>(1, t.size() / 10);
    const double bg0 = std::accumulate(y.end() - static_cast<std::ptrdiff_t>(tail), y.end(), 0.0) /
                       static_cast<double>(tail);
    const double a0 = std::max(y.front() - bg0, 1.0);
    // Rate guess from where the signal falls to 1/e of its start.
    double k0 = 1.0 / (t.back() - t0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (y[i] - bg0 < a0 / std::exp(1.0)) {
            k0 = 1.0 / std::max(t[i] - t0, hist.bin_width_ps);
            break;
        }
    }
    const ModelFunction model = [t0](double x, const Eigen::VectorXd& p) {
        return p[0] * std::exp(-p[1] * (x - t0)) + p[2];
    };
    Eigen::VectorXd p0(3);
    p0 << a0, k0, bg0;
    FitResult out;
    LmResult lm = levenberg_marquardt(model, t, y, s, p0);
    // Weights from observed counts bias tau upward (low bins get too much
    // weight), so refit with the Poisson variance taken from the model.
    for (int pass = 0; pass < 3 && lm.converged; ++pass) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            s[i] = std::sqrt(std::max(model(t[i], lm.params), 1.0));
        }
        lm = levenberg_marquardt(model, t, y, s, lm.params);
    }
    const double a = lm.params[0], k = lm.params[1], bg = lm.params[2];
    const double sa = lm.error(0), sk = lm.error(1), sbg = lm.error(2);
    out.converged = lm.converged;
    out.chi2_reduced = lm.chi2_reduced();
    out.set("amplitude", a, sa);
    out.set("tau_ps", k > 0.0 ? 1.0 / k : kInfinity, k > 0.0 ? sk / (k * k) : kInfinity);
    out.set("background", bg, sbg);
    if (!(k > 0.0) || !(a > 2.0 * sa) || !std::isfinite(sk)) {
        out.converged = false;
        out.warnings.emplace_back("no resolvable decay: tau unconstrained");
    }
    if (!lm.converged) {
        out.warnings.push_back("fit did not converge: " + lm.message);
    }
    return out;
}

namespace {

FitResult fit_cosine_impl(std::span<const double> t_all, std::span<const double> y_all,
                          std::span<const double> s_all, CosineForm form, const CosineGuess& guess,
                          const CosineOptions& options, bool refine_frequency) {
    if (t_all.size() != y_all.size() || t_all.size() != s_all.size()) {
        throw ValidationError("trace arrays differ in length");
    }
    const bool two_sided = form == CosineForm::two_sided;
    std::vector<double> t, y, s;
    for (std::size_t i = 0; i < t_all.size(); ++i) {
        if (options.window_ps) {
            const double key = two_sided ? std::abs(t_all[i]) : t_all[i];
            if (key < options.window_ps->first || key >= options.window_ps->second) {
                continue;
            }
        }
        t.push_back(t_all[i]);
        y.push_back(y_all[i]);
        s.push_back(s_all[i]);
    }
    if (t.size() < 8) {
        throw ValidationError("damped-cosine fit needs at least 8 bins");
    }
    // Fit in the variable the model oscillates in.
    std::vector<double> u(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        u[i] = two_sided ? std::abs(t[i]) : t[i];
    }
    const auto [u_min, u_max] = std::minmax_element(u.begin(), u.end());
    const double span = *u_max - *u_min;
    if (!(span > 0.0)) {
        throw ValidationError("trace has zero time span");
    }

    // A frequency guess only bounds the start: over many cycles a few percent
    // off already lands LM in a cycle-slipped minimum.
    const double f_nyquist = 0.5 / median_step(u);
    double f0 = 0.0;
    if (guess.frequency_ghz && !refine_frequency) {
        f0 = *guess.frequency_ghz * 1e-3;
    } else if (guess.frequency_ghz) {
        const double g = *guess.frequency_ghz * 1e-3;
        const double lo = 0.6 * g, hi = std::min(1.4 * g, f_nyquist);
        f0 = hi > lo ? periodogram_peak(u, y, s, span, lo, hi) : g;
    } else {
        f0 = periodogram_peak(u, y, s, span, 0.5 / span, f_nyquist);
    }
    const double w0 = kTwoPi * f0;
    const double g0 = guess.t2_star_ns ? (std::isinf(*guess.t2_star_ns) ? 0.0 : 1e-3 / *guess.t2_star_ns)
                                       : 0.5 / span;
    const bool phase_free = two_sided || options.fit_phase;

    // Linear amplitudes at the guessed frequency and decay.
    Eigen::MatrixXd design(static_cast<Eigen::Index>(u.size()), 3);
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double e = std::exp(-g0 * u[i]);
        design(static_cast<Eigen::Index>(i), 0) = e * std::cos(w0 * u[i]);
        design(static_cast<Eigen::Index>(i), 1) = e * std::sin(w0 * u[i]);
        design(static_cast<Eigen::Index>(i), 2) = 1.0;
    }
    if (!options.fit_offset) {
        design.col(2).setZero();
    }
    const Eigen::VectorXd lin = linear_solve(design, y, s);
    double a0 = 0.0, phi0 = 0.0;
    if (phase_free) {
        a0 = std::hypot(lin[0], lin[1]);
        phi0 = std::atan2(-lin[1], lin[0]);
    } else {
        a0 = lin[0];
    }
    if (guess.amplitude) {
        a0 = *guess.amplitude;
    }
    if (guess.phase_rad) {
        phi0 = *guess.phase_rad;
    }
    const double c0 = guess.offset ? *guess.offset : (options.fit_offset ? lin[2] : 0.0);

    const ModelFunction model = [](double x, const Eigen::VectorXd& p) {
        return p[4] + p[0] * std::exp(-p[2] * x) * std::cos(p[1] * x + p[3]);
    };
    Eigen::VectorXd p0(5);
    p0 << a0, w0, g0, phase_free ? phi0 : (guess.phase_rad ? *guess.phase_rad : 0.0), c0;
    std::vector<bool> fixed{false, false, false, !phase_free, !options.fit_offset};
    LmOptions lm_opts;
    lm_opts.scale_covariance = options.scale_errors;
    const LmResult lm = levenberg_marquardt(model, u, y, s, p0, fixed, lm_opts);

    double amp = lm.params[0], w = lm.params[1], gam = lm.params[2], phi = lm.params[3];
    if (w < 0.0) {
        w = -w;
        phi = -phi;
        if (!phase_free) {
            phi = 0.0;
        }
    }
    if (phase_free && amp < 0.0) {
        amp = -amp;
        phi += constants::pi;
    }
    if (phase_free) {
        phi = wrap_phase(phi);
    }
    const double s_amp = lm.error(0), s_w = lm.error(1), s_g = lm.error(2);

    FitResult out;
    out.converged = lm.converged;
    out.chi2_reduced = lm.chi2_reduced();
    out.set("amplitude", amp, s_amp);
    out.set("frequency_ghz", w / kTwoPi * 1e3, s_w / kTwoPi * 1e3);
    out.set("decay_per_ns", gam * 1e3, s_g * 1e3);
    if (gam > 0.0) {
        out.set("t2_star_ns", 1e-3 / gam, 1e-3 * s_g / (gam * gam));
    } else {
        out.set("t2_star_ns", kInfinity, kInfinity);
        out.warnings.emplace_back("non-positive decay rate: T2* unbounded");
    }
    out.set("phase_rad", phi, phase_free ? lm.error(3) : 0.0);
    out.set("offset", lm.params[4], options.fit_offset ? lm.error(4) : 0.0);
    out.set("splitting_uev", constants::hbar_uev_ps * w, constants::hbar_uev_ps * s_w);
    if (w > 0.0) {
        out.set("period_ps", kTwoPi / w, kTwoPi * s_w / (w * w));
    } else {
        out.set("period_ps", kInfinity, kInfinity);
    }
    if (!lm.converged) {
        out.warnings.push_back("fit did not converge: " + lm.message);
    }
    if (!(std::abs(amp) > 2.0 * s_amp)) {
        out.warnings.emplace_back("amplitude consistent with zero: frequency unconstrained");
        out.set_meta("frequency_constrained", 0.0);
        return out;
    }
    out.set_meta("frequency_constrained", 1.0);
    if (!(w > 0.0) || kTwoPi / w > span) {
        throw FitError(fmt::format("unresolvable frequency: period {:.1f} ps exceeds the {:.1f} ps window",
                                   w > 0.0 ? kTwoPi / w : kInfinity, span));
    }
    return out;
}

} // namespace

FitResult fit_damped_cosine(std::span<const double> t, std::span<const double> y,
                            std::span<const double> sigma, CosineForm form, const CosineGuess& guess,
                            const CosineOptions& options) {
    return fit_cosine_impl(t, y, sigma, form, guess, options, true);
}

FitResult fit_damped_cosine(const DopTrace& trace, CosineForm form, const CosineGuess& guess,
                            const CosineOptions& options) {
    std::vector<double> sigma(trace.size());
    for (std::size_t i = 0; i < trace.size(); ++i) {
        sigma[i] = std::max(trace.dop_err[i], 1.0 / trace.counts[i]);
    }
    FitResult fit = fit_cosine_impl(trace.time_ps, trace.dop, sigma, form, guess, options, true);
    // Binomial errors from the observed counts are too small wherever a
    // sparse bin happens to be one-sided; take the variance from the model
    // instead and refit.
    const bool two_sided = form == CosineForm::two_sided;
    for (int pass = 0; pass < 2; ++pass) {
        const double amp = fit.value("amplitude"), w = kTwoPi * fit.value("frequency_ghz") * 1e-3;
        const double gam = fit.value("decay_per_ns") * 1e-3, phi = fit.value("phase_rad");
        const double c = fit.value("offset");
        for (std::size_t i = 0; i < trace.size(); ++i) {
            const double u = two_sided ? std::abs(trace.time_ps[i]) : trace.time_ps[i];
            const double m = std::clamp(c + amp * std::exp(-gam * u) * std::cos(w * u + phi), -1.0, 1.0);
            sigma[i] = std::max(std::sqrt((1.0 - m * m) / trace.counts[i]), 1.0 / trace.counts[i]);
        }
        CosineGuess start;
        start.frequency_ghz = fit.value("frequency_ghz");
        start.t2_star_ns = gam > 0.0 ? 1e-3 / gam : kInfinity;
        start.amplitude = amp;
        start.phase_rad = phi;
        start.offset = c;
        try {
            fit = fit_cosine_impl(trace.time_ps, trace.dop, sigma, form, start, options, false);
        } catch (const AnalysisError&) {
            break;
        }
    }
    return fit;
}

NormalizedCorrelation normalize_antibunching(const CorrelationTrace& raw) {
    if (raw.size() < 8) {
        throw ValidationError("correlation trace too short to normalize");
    }
    const double reach = std::max(std::abs(raw.delay_ps.front()), std::abs(raw.delay_ps.back()));
    std::vector<double> sigma(raw.size());
    double far_sum = 0.0;
    std::size_t far_n = 0;
    double center = 0.0;
    double center_dist = kInfinity;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        sigma[i] = std::sqrt(std::max(raw.value[i], 1.0));
        const double d = std::abs(raw.delay_ps[i]);
        if (d >= 0.8 * reach) {
            far_sum += raw.value[i];
            ++far_n;
        }
        if (d < center_dist) {
            center_dist = d;
            center = raw.value[i];
        }
    }
    const double plateau = far_n > 0 ? far_sum / static_cast<double>(far_n) : 0.0;
    if (!(plateau > 0.0)) {
        throw AnalysisError("correlation plateau is empty");
    }

    NormalizedCorrelation out;
    const ModelFunction model = [](double x, const Eigen::VectorXd& p) {
        return p[0] * (1.0 - p[1] * std::exp(-std::abs(x) / p[2]));
    };
    const double depth0 = std::clamp(1.0 - center / plateau, 0.05, 1.0);
    double width0 = 0.1 * reach;
    for (std::size_t i = raw.size() / 2; i < raw.size(); ++i) {
        if (raw.delay_ps[i] > 0.0 && raw.value[i] >= plateau * (1.0 - depth0 / std::exp(1.0))) {
            width0 = std::max(raw.delay_ps[i], raw.delay_ps[1] - raw.delay_ps[0]);
            break;
        }
    }
    Eigen::VectorXd p0(3);
    p0 << plateau, depth0, width0;
    std::optional<LmResult> lm;
    try {
        lm = levenberg_marquardt(model, raw.delay_ps, raw.value, sigma, p0);
    } catch (const FitError& e) {
        out.warnings.push_back(std::string("dip fit failed: ") + e.what());
    }
    bool use_fit = lm && lm->converged && lm->params[1] > 2.0 * lm->error(1) && lm->params[2] > 0.0;
    if (lm) {
        out.dip_fit.converged = lm->converged;
        out.dip_fit.chi2_reduced = lm->chi2_reduced();
        out.dip_fit.set("plateau", lm->params[0], lm->error(0));
        out.dip_fit.set("depth", lm->params[1], lm->error(1));
        out.dip_fit.set("width_ps", lm->params[2], lm->error(2));
    }
    out.trace = raw;
    out.trace.normalized = true;
    if (!use_fit) {
        out.dip_detected = false;
        out.warnings.emplace_back("no antibunching dip detected; normalized by the plateau only");
        for (double& v : out.trace.value) {
            v /= plateau;
        }
        return out;
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out.trace.value[i] = raw.value[i] / model(raw.delay_ps[i], lm->params);
    }
    return out;
}

CorrelationTrace fold_symmetric(const CorrelationTrace& trace) {
    const std::size_t n = trace.size();
    if (n < 3 || n % 2 == 0) {
        throw ValidationError("folding needs an odd-length trace centered on zero delay");
    }
    const std::size_t mid = n / 2;
    const double w = trace.delay_ps[mid + 1] - trace.delay_ps[mid];
    if (std::abs(trace.delay_ps[mid]) > 1e-6 * w) {
        throw ValidationError("trace is not centered on zero delay");
    }
    CorrelationTrace out;
    out.normalized = trace.normalized;
    for (std::size_t k = 0; k <= mid; ++k) {
        out.delay_ps.push_back(trace.delay_ps[mid + k]);
        out.value.push_back(0.5 * (trace.value[mid + k] + trace.value[mid - k]));
    }
    return out;
}

double FrequencySpectrum::resolution_ghz() const noexcept {
    return 1e3 / (static_cast<double>(freq_ghz.size()) * bin_width_ps);
}

FrequencySpectrum fourier_spectrum(const CorrelationTrace& trace) {
    const std::size_t n = trace.size();
    if (n < 2 || trace.value.size() != n) {
        throw ValidationError("spectrum needs at least 2 uniformly spaced samples");
    }
    const double w = trace.delay_ps[1] - trace.delay_ps[0];
    if (!(w > 0.0)) {
        throw ValidationError("delays must increase");
    }
    for (std::size_t i = 1; i < n; ++i) {
        const double d = trace.delay_ps[i] - trace.delay_ps[i - 1];
        if (std::abs(d - w) > 1e-6 * w) {
            throw ValidationError("non-uniform bins");
        }
    }
    FrequencySpectrum spec;
    spec.start_ps = trace.delay_ps.front();
    spec.bin_width_ps = w;
    spec.mean = std::accumulate(trace.value.begin(), trace.value.end(), 0.0) / static_cast<double>(n);
    std::vector<std::complex<double>> in(n);
    for (std::size_t i = 0; i < n; ++i) {
        in[i] = trace.value[i] - spec.mean;
    }
    const auto out = dft(in, FFTW_FORWARD);
    const long lo = -static_cast<long>(n / 2);
    spec.freq_ghz.resize(n);
    spec.amplitude.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const long m = lo + static_cast<long>(j);
        spec.freq_ghz[j] = static_cast<double>(m) / (static_cast<double>(n) * w) * 1e3;
        spec.amplitude[j] = out[fft_index(m, n)] / static_cast<double>(n);
    }
    return spec;
}

CorrelationTrace inverse_spectrum(const FrequencySpectrum& spec, bool add_mean) {
    const std::size_t n = spec.size();
    if (n < 2) {
        throw ValidationError("empty spectrum");
    }
    const long lo = -static_cast<long>(n / 2);
    std::vector<std::complex<double>> in(n);
    for (std::size_t j = 0; j < n; ++j) {
        in[fft_index(lo + static_cast<long>(j), n)] = spec.amplitude[j];
    }
    const auto out = dft(in, FFTW_BACKWARD);
    CorrelationTrace trace;
    trace.delay_ps.resize(n);
    trace.value.resize(n);
    trace.normalized = true;
    for (std::size_t i = 0; i < n; ++i) {
        trace.delay_ps[i] = spec.start_ps + static_cast<double>(i) * spec.bin_width_ps;
        trace.value[i] = out[i].real() + (add_mean ? spec.mean : 0.0);
    }
    return trace;
}

double spectral_noise_floor(const FrequencySpectrum& spec, double dc_cutoff_ghz) {
    std::vector<double> mags;
    for (std::size_t j = 0; j < spec.size(); ++j) {
        if (spec.freq_ghz[j] >= dc_cutoff_ghz) {
            mags.push_back(std::abs(spec.amplitude[j]));
        }
    }
    if (mags.empty()) {
        throw ValidationError("no frequencies above the DC cutoff");
    }
    return median(std::move(mags));
}

SpectralPeak dominant_peak(const FrequencySpectrum& spec, double dc_cutoff_ghz) {
    std::size_t best = spec.size();
    double best_mag = -1.0;
    for (std::size_t j = 0; j < spec.size(); ++j) {
        if (spec.freq_ghz[j] >= dc_cutoff_ghz && std::abs(spec.amplitude[j]) > best_mag) {
            best_mag = std::abs(spec.amplitude[j]);
            best = j;
        }
    }
    if (best == spec.size()) {
        throw ValidationError("no frequencies above the DC cutoff");
    }
    SpectralPeak peak{spec.freq_ghz[best], best_mag};
    if (best > 0 && best + 1 < spec.size()) {
        const double a = std::abs(spec.amplitude[best - 1]);
        const double c = std::abs(spec.amplitude[best + 1]);
        const double denom = a - 2.0 * best_mag + c;
        if (denom < 0.0) {
            const double shift = 0.5 * (a - c) / denom;
            peak.frequency_ghz += shift * (spec.freq_ghz[best + 1] - spec.freq_ghz[best]);
        }
    }
    return peak;
}

CorrelationTrace band_pass(const FrequencySpectrum& spec, double lo_ghz, double hi_ghz) {
    FrequencySpectrum filtered = spec;
    for (std::size_t j = 0; j < filtered.size(); ++j) {
        const double f = std::abs(filtered.freq_ghz[j]);
        if (f < lo_ghz || f > hi_ghz) {
            filtered.amplitude[j] = 0.0;
        }
    }
    return inverse_spectrum(filtered, false);
}

IsolatedComponent isolate_component(const FrequencySpectrum& spec, double guess, const PeakSearch& search) {
    if (!(guess > 0.0)) {
        throw ValidationError("peak guess must be > 0");
    }
    const double floor = spectral_noise_floor(spec, search.dc_cutoff_ghz);
    const double lo = std::max(search.dc_cutoff_ghz, guess * (1.0 - search.tolerance));
    const double hi = guess * (1.0 + search.tolerance);
    std::vector<std::size_t> range;
    for (std::size_t j = 0; j < spec.size(); ++j) {
        if (spec.freq_ghz[j] >= lo && spec.freq_ghz[j] <= hi) {
            range.push_back(j);
        }
    }
    if (range.size() < 3) {
        throw ComponentNotDetected(fmt::format("component not detected near {:.3f} GHz: search range "
                                               "holds fewer than 3 frequency bins",
                                               guess));
    }
    auto mag = [&](std::size_t j) { return std::abs(spec.amplitude[j]); };
    std::size_t peak = range.front();
    for (std::size_t j : range) {
        if (mag(j) > mag(peak)) {
            peak = j;
        }
    }
    const bool local_max = peak > 0 && peak + 1 < spec.size() && mag(peak) >= mag(peak - 1) &&
                           mag(peak) >= mag(peak + 1);
    double left_min = mag(peak), right_min = mag(peak);
    for (std::size_t j : range) {
        if (j < peak) {
            left_min = std::min(left_min, mag(j));
        } else if (j > peak) {
            right_min = std::min(right_min, mag(j));
        }
    }
    const double prominence = mag(peak) - std::max(left_min, right_min);
    if (!local_max) {
        throw ComponentNotDetected(
            fmt::format("component not detected near {:.3f} GHz: no local maximum in the search range", guess));
    }
    if (!(mag(peak) >= search.min_amplitude * floor)) {
        throw ComponentNotDetected(fmt::format(
            "component not detected near {:.3f} GHz: amplitude {:.3g} below {:.1f}x noise floor {:.3g}", guess,
            mag(peak), search.min_amplitude, floor));
    }

    // Gaussian fit to the core of the peak: the bins above half height
    // over the prominence base. The flanks are left out because the tails
    // of DC and neighbouring structure would widen the fit.
    const double base = mag(peak) - prominence;
    const double half = base + 0.5 * prominence;
    std::size_t a = peak, b = peak;
    while (a > 0 && spec.freq_ghz[a - 1] >= search.dc_cutoff_ghz && mag(a - 1) >= half &&
           mag(a - 1) <= mag(a)) {
        --a;
    }
    while (b + 1 < spec.size() && mag(b + 1) >= half && mag(b + 1) <= mag(b)) {
        ++b;
    }
    while (b - a < 4) {
        if (a > 0 && spec.freq_ghz[a - 1] >= search.dc_cutoff_ghz && (peak - a) <= (b - peak)) {
            --a;
        } else if (b + 1 < spec.size()) {
            ++b;
        } else {
            break;
        }
    }
    std::vector<double> f, m, s;
    for (std::size_t j = a; j <= b; ++j) {
        f.push_back(spec.freq_ghz[j]);
        m.push_back(mag(j));
        s.push_back(floor > 0.0 ? floor : 1.0);
    }
    const double df = spec.freq_ghz[1] - spec.freq_ghz[0];
    IsolatedComponent out;
    out.noise_floor = floor;
    out.prominence = prominence;
    const ModelFunction model = [base](double x, const Eigen::VectorXd& p) {
        const double d = (x - p[1]) / p[2];
        return p[0] * std::exp(-0.5 * d * d) + base;
    };
    const double width0 = std::max(df, 0.25 * (f.back() - f.front()));
    Eigen::VectorXd p0(3);
    p0 << prominence, spec.freq_ghz[peak], width0;
    LmOptions opts;
    opts.scale_covariance = true;
    double center = spec.freq_ghz[peak], sigma = width0;
    double center_err = df, sigma_err = df;
    bool fit_ok = false;
    try {
        const LmResult lm = levenberg_marquardt(model, f, m, s, p0, {}, opts);
        const double c = lm.params[1];
        const double w = std::abs(lm.params[2]);
        if (lm.converged && lm.params[0] > 0.0 && c >= f.front() && c <= f.back() && w > 0.0 &&
            w < f.back() - f.front() + 2.0 * df) {
            center = c;
            sigma = w;
            center_err = std::isfinite(lm.error(1)) ? lm.error(1) : df;
            sigma_err = std::isfinite(lm.error(2)) ? lm.error(2) : df;
            fit_ok = true;
            out.peak_fit.converged = true;
            out.peak_fit.chi2_reduced = lm.chi2_reduced();
            out.peak_fit.set("height", lm.params[0], lm.error(0));
            out.peak_fit.set("baseline", base, 0.0);
        }
    } catch (const std::exception&) {
    }
    if (!fit_ok) {
        out.peak_fit.warnings.emplace_back("Gaussian peak fit failed; using the peak bin and core width");
        out.peak_fit.set("height", prominence, floor);
        out.peak_fit.set("baseline", base, 0.0);
    }
    out.peak_fit.set("center_ghz", center, center_err);
    out.peak_fit.set("sigma_ghz", sigma, sigma_err);
    out.window_lo_ghz = std::max(search.dc_cutoff_ghz, center - search.window_sigmas * sigma);
    out.window_hi_ghz = center + search.window_sigmas * sigma;
    out.trace = band_pass(spec, out.window_lo_ghz, out.window_hi_ghz);
    return out;
}

FitResult fit_component(const FrequencySpectrum& spec, const IsolatedComponent& comp,
                        const PeakSearch& search, std::optional<std::pair<double, double>> fit_window) {
    const double center0 = comp.peak_fit.value("center_ghz");
    const double sigma = comp.peak_fit.value("sigma_ghz");
    CosineGuess guess;
    guess.frequency_ghz = center0;
    // Lorentzian-like peak: decay rate ~ pi * FWHM.
    guess.t2_star_ns = 1.0 / (constants::pi * 2.3548 * sigma);
    CosineOptions opts;
    opts.fit_offset = false;
    opts.scale_errors = true;
    opts.window_ps = fit_window;
    auto fit_trace = [&](const CorrelationTrace& tr) {
        const std::vector<double> ones(tr.size(), 1.0);
        return fit_damped_cosine(tr.delay_ps, tr.value, ones, CosineForm::two_sided, guess, opts);
    };
    // The |amplitude| maximum is pulled by the tails of neighbouring
    // structure, so the window is re-centred on the fitted frequency until
    // the two agree to a fraction of a frequency bin.
    const double df_bin = spec.resolution_ghz();
    auto window_trace = [&](double c, double s) {
        return band_pass(spec, std::max(search.dc_cutoff_ghz, c - search.window_sigmas * s),
                         c + search.window_sigmas * s);
    };
    FitResult fit = fit_trace(comp.trace);
    double center = center0;
    int iterations = 0;
    for (; iterations < search.max_recenter; ++iterations) {
        const double f_new = fit.value("frequency_ghz");
        if (std::abs(f_new - center) <= 0.05 * df_bin) {
            break;
        }
        if (std::abs(f_new - center0) > 3.0 * sigma) {
            fit.warnings.emplace_back("window re-centring left the isolated peak; kept the last window");
            break;
        }
        center = f_new;
        guess.frequency_ghz = center;
        fit = fit_trace(window_trace(center, sigma));
    }
    fit.set_meta("recenter_iterations", iterations);
    fit.set_meta("window_center_ghz", center);

    // Window-edge propagation.
    const double sc = comp.peak_fit.error("center_ghz");
    const double ss = comp.peak_fit.error("sigma_ghz");
    double var_f = 0.0, var_g = 0.0;
    auto refit = [&](double c_lo, double s_lo, double c_hi, double s_hi) {
        try {
            const auto lo_fit = fit_trace(window_trace(c_lo, s_lo));
            const auto hi_fit = fit_trace(window_trace(c_hi, s_hi));
            const double df = 0.5 * (hi_fit.value("frequency_ghz") - lo_fit.value("frequency_ghz"));
            const double dg = 0.5 * (hi_fit.value("decay_per_ns") - lo_fit.value("decay_per_ns"));
            var_f += df * df;
            var_g += dg * dg;
        } catch (const std::exception& e) {
            fit.warnings.push_back(std::string("window-edge refit failed: ") + e.what());
        }
    };
    refit(center - sc, sigma, center + sc, sigma);
    refit(center, std::max(sigma - ss, 0.5 * sigma), center, sigma + ss);

    const double f = fit.value("frequency_ghz");
    const double f_err = std::hypot(fit.error("frequency_ghz"), std::sqrt(var_f));
    const double g = fit.value("decay_per_ns");
    const double g_err = std::hypot(fit.error("decay_per_ns"), std::sqrt(var_g));
    fit.set("frequency_ghz", f, f_err);
    fit.set("decay_per_ns", g, g_err);
    if (g > 0.0) {
        fit.set("t2_star_ns", 1.0 / g, g_err / (g * g));
    }
    const double w = kTwoPi * f * 1e-3;
    const double w_err = kTwoPi * f_err * 1e-3;
    fit.set("splitting_uev", constants::hbar_uev_ps * w, constants::hbar_uev_ps * w_err);
    fit.set("period_ps", kTwoPi / w, kTwoPi * w_err / (w * w));
    fit.set_meta("window_lo_ghz", std::max(search.dc_cutoff_ghz, center - search.window_sigmas * sigma));
    fit.set_meta("window_hi_ghz", center + search.window_sigmas * sigma);
    return fit;
}

GFactorResult gfactor_fit(std::span<const GFactorPoint> points, bool weighted) {
    if (points.size() < 2) {
        throw ValidationError("g-factor fit needs at least 2 points");
    }
    std::vector<double> b, d, e;
    bool all_zero = true, any_zero = false;
    std::size_t unbounded = 0;
    for (const auto& p : points) {
        if (!std::isfinite(p.b_field_t) || !std::isfinite(p.splitting_uev) || !(p.splitting_err >= 0.0)) {
            throw ValidationError("g-factor points must be finite with non-negative errors");
        }
        // An unbounded error carries zero weight.
        if (weighted && std::isinf(p.splitting_err)) {
            ++unbounded;
            continue;
        }
        b.push_back(p.b_field_t);
        d.push_back(p.splitting_uev);
        e.push_back(p.splitting_err);
        all_zero = all_zero && p.splitting_err == 0.0;
        any_zero = any_zero || p.splitting_err == 0.0;
    }
    if (b.size() < 2) {
        throw ValidationError("g-factor fit needs at least 2 points with finite errors");
    }
    GFactorResult res;
    if (unbounded > 0) {
        res.fit.warnings.push_back(fmt::format("{} point(s) with unbounded error left out", unbounded));
    }
    if (weighted && any_zero && !all_zero) {
        throw ValidationError("weighted g-factor fit needs a positive error on every point");
    }
    res.weighted = weighted && !all_zero;
    if (weighted && all_zero) {
        res.fit.warnings.emplace_back("all point errors are zero; fit is unweighted");
    }
    const std::span<const double> sig = res.weighted ? std::span<const double>(e) : std::span<const double>();
    const LineFit line = fit_line(b, d, sig);
    const double mu = constants::mu_bohr_uev_per_t;
    res.fit.converged = true;
    res.fit.chi2_reduced = line.dof > 0 ? line.chi2 / line.dof : 0.0;
    res.fit.set("g", std::abs(line.slope) / mu, line.slope_err / mu);
    res.fit.set("slope_uev_per_t", line.slope, line.slope_err);
    res.fit.set("intercept_uev", line.intercept, line.intercept_err);
    if (line.intercept_err > 0.0 && std::abs(line.intercept) > 3.0 * line.intercept_err) {
        res.fit.warnings.emplace_back("intercept inconsistent with zero");
    }

    // Leave-one-out pulls so an outlier cannot hide by dragging the line.
    // Outliers are removed one at a time, worst first, so a single bad point
    // does not drag the prediction for every other point.
    std::vector<bool> excluded(b.size(), false);
    auto pull_for = [&](std::size_t i) {
        std::vector<double> bb, dd, ee;
        for (std::size_t k = 0; k < b.size(); ++k) {
            if (k != i && !excluded[k]) {
                bb.push_back(b[k]);
                dd.push_back(d[k]);
                ee.push_back(e[k]);
            }
        }
        try {
            const LineFit loo = fit_line(bb, dd, res.weighted ? std::span<const double>(ee) : std::span<const double>());
            const double pred = loo.slope * b[i] + loo.intercept;
            double sx = 0.0, sxx = 0.0, sw = 0.0;
            for (std::size_t k = 0; k < bb.size(); ++k) {
                const double w = res.weighted ? 1.0 / (ee[k] * ee[k]) : 1.0;
                sw += w;
                sx += w * bb[k];
                sxx += w * bb[k] * bb[k];
            }
            // Variance of the prediction at b[i] for unit-weight scatter.
            const double lev = (sxx - 2.0 * b[i] * sx + b[i] * b[i] * sw) / (sw * sxx - sx * sx);
            double var = kNaN;
            if (res.weighted) {
                var = e[i] * e[i] + lev;
            } else if (loo.dof > 0) {
                var = loo.chi2 / loo.dof * (1.0 + lev);
            }
            const double dev = d[i] - pred;
            if (std::isnan(var)) {
                return kNaN;
            }
            if (var > 0.0) {
                return dev / std::sqrt(var);
            }
            return dev == 0.0 ? 0.0 : std::copysign(kInfinity, dev);
        } catch (const ValidationError&) {
            return kNaN;
        }
    };
    std::vector<double> pulls(b.size(), kNaN);
    for (;;) {
        std::size_t worst = b.size();
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (excluded[i]) {
                continue;
            }
            pulls[i] = pull_for(i);
            if (std::abs(pulls[i]) > 3.0 && (worst == b.size() || std::abs(pulls[i]) > std::abs(pulls[worst]))) {
                worst = i;
            }
        }
        if (worst == b.size()) {
            break;
        }
        excluded[worst] = true;
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double pred = line.slope * b[i] + line.intercept;
        res.residuals.push_back({b[i], d[i], pred, d[i] - pred, pulls[i], excluded[i]});
    }
    return res;
}

ValueWithError polarization_memory(std::span<const PhotonRecord> rec_r, std::span<const PhotonRecord> rec_l) {
    auto integrated = [](std::span<const PhotonRecord> recs, Basis co) {
        double n_co = 0.0, n_cross = 0.0;
        for (const auto& r : recs) {
            if (r.channel == co) {
                n_co += 1.0;
            } else if (r.channel == antipode(co)) {
                n_cross += 1.0;
            }
        }
        const double n = n_co + n_cross;
        if (!(n > 0.0)) {
            throw ValidationError("empty record set: no R/L detections");
        }
        return ValueWithError{(n_co - n_cross) / n, 2.0 * std::sqrt(n_co * n_cross / (n * n * n))};
    };
    const ValueWithError r = integrated(rec_r, Basis::R);
    const ValueWithError l = integrated(rec_l, Basis::L);
    return {0.5 * (r.value + l.value), 0.5 * std::hypot(r.error, l.error)};
}

G2Analysis analyze_correlation(const CorrelationTrace& raw,
                               const std::vector<std::pair<std::string, double>>& guesses,
                               const G2Options& options) {
    G2Analysis out;
    out.raw = raw;
    out.normalized = normalize_antibunching(raw);
    out.folded = fold_symmetric(out.normalized.trace);
    out.spectrum = fourier_spectrum(out.folded);
    for (const auto& [label, guess] : guesses) {
        G2Component c;
        c.label = label;
        c.guess_ghz = guess;
        try {
            c.isolated = isolate_component(out.spectrum, guess, options.search);
            c.fit = fit_component(out.spectrum, *c.isolated, options.search, options.fit_window_ps);
        } catch (const AnalysisError& e) {
            c.failure = e.what();
        } catch (const ValidationError& e) {
            c.failure = e.what();
        }
        out.components.push_back(std::move(c));
    }
    return out;
}

G2Analysis analyze_g2(std::span<const double> tags,
                      const std::vector<std::pair<std::string, double>>& guesses,
                      const G2Options& options) {
    return analyze_correlation(correlate(tags, options.bin_width_ps, options.max_delay_ns), guesses, options);
}

} // namespace edl
