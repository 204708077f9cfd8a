#pragma once

// Extraction pipeline: DOP traces, lifetime and damped-cosine fits,
// coincidence normalization, Fourier isolation of Larmor components and the
// linear g-factor regression.

#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edl/fitting.hpp"
#include "edl/montecarlo.hpp"
#include "edl/traces.hpp"

namespace edl {

struct DopTrace {
    std::vector<double> time_ps;
    std::vector<double> dop;
    std::vector<double> dop_err; // 2 sqrt(n_co n_cross / N^3)
    std::vector<double> counts;  // N per bin

    std::size_t size() const noexcept { return time_ps.size(); }
};

// Bins with no counts are dropped. Throws ValidationError on binning mismatch.
DopTrace dop_trace(const Histogram& co, const Histogram& cross);

// A e^{-t/tau} + background over [window.first, window.second), with
// Poisson variances taken from the model. Reports A, tau_ps, background.
FitResult fit_exponential_lifetime(const Histogram& hist, std::pair<double, double> window_ps);

enum class CosineForm {
    pulsed,    // c + A e^{-t/T2*} cos(w t + phi), phi fixed at 0 unless fit_phase
    two_sided, // c + A e^{-|t|/T2*} cos(w |t| + phi)
};

struct CosineGuess {
    std::optional<double> frequency_ghz;
    std::optional<double> t2_star_ns;
    std::optional<double> amplitude;
    std::optional<double> phase_rad;
    std::optional<double> offset;
};

struct CosineOptions {
    bool fit_phase = false; // pulsed form only; two-sided always fits phi
    bool fit_offset = true;
    // Treat sigmas as relative weights and rescale errors by chi2_reduced.
    bool scale_errors = false;
    std::optional<std::pair<double, double>> window_ps;
};

// A frequency guess is refined by a periodogram search over 0.6-1.4 times
// the guess before the least-squares fit; without one the whole band up to
// Nyquist is searched.
// Fit results name the parameters amplitude, frequency_ghz, decay_per_ns,
// t2_star_ns, phase_rad, offset, plus derived splitting_uev and period_ps.
// decay_per_ns is the fitted quantity; t2_star_ns = 1/decay_per_ns.
FitResult fit_damped_cosine(std::span<const double> t_ps, std::span<const double> y,
                            std::span<const double> sigma, CosineForm form,
                            const CosineGuess& guess = {}, const CosineOptions& options = {});

// Starts from dop_err floored at 1/N, then refits twice with the binomial
// variance (1 - m^2)/N of the fitted model m, floored at 1/N.
FitResult fit_damped_cosine(const DopTrace& trace, CosineForm form, const CosineGuess& guess = {},
                            const CosineOptions& options = {});

struct NormalizedCorrelation {
    CorrelationTrace trace;
    FitResult dip_fit; // plateau, depth, width_ps
    bool dip_detected = true;
    std::vector<std::string> warnings;
};

// Fits C (1 - a e^{-|t|/t_d}) to the raw coincidences and divides by it.
NormalizedCorrelation normalize_antibunching(const CorrelationTrace& raw);

// Averages the +t and -t halves of a trace symmetric about zero delay and
// returns the t >= 0 half.
CorrelationTrace fold_symmetric(const CorrelationTrace& trace);

struct FrequencySpectrum {
    std::vector<double> freq_ghz;                  // ascending, symmetric about 0
    std::vector<std::complex<double>> amplitude;   // DFT / N
    double mean = 0.0;                             // subtracted before the transform
    double start_ps = 0.0;
    double bin_width_ps = 0.0;

    std::size_t size() const noexcept { return freq_ghz.size(); }
    double resolution_ghz() const noexcept;
};

// Mean-subtracted DFT. Throws ValidationError on non-uniform delays.
FrequencySpectrum fourier_spectrum(const CorrelationTrace& trace);

// Inverse of fourier_spectrum (mean restored when add_mean is set).
CorrelationTrace inverse_spectrum(const FrequencySpectrum& spectrum, bool add_mean = true);

struct PeakSearch {
    double dc_cutoff_ghz = 0.2;
    double window_sigmas = 2.0;
    // Search range around the guess as a fraction of the guess.
    double tolerance = 0.3;
    // Minimum peak |amplitude| in units of the spectral noise floor.
    double min_amplitude = 3.0;
    // Re-centring passes of the band-pass window in fit_component.
    int max_recenter = 8;
};

// Median |amplitude| over |f| >= dc_cutoff.
double spectral_noise_floor(const FrequencySpectrum& spectrum, double dc_cutoff_ghz);

struct SpectralPeak {
    double frequency_ghz = 0.0;
    double magnitude = 0.0;
};

// Largest |amplitude| at f >= dc_cutoff, refined by parabolic interpolation.
SpectralPeak dominant_peak(const FrequencySpectrum& spectrum, double dc_cutoff_ghz);

struct IsolatedComponent {
    CorrelationTrace trace;
    double window_lo_ghz = 0.0;
    double window_hi_ghz = 0.0;
    FitResult peak_fit; // center_ghz, sigma_ghz, height on |amplitude|
    double prominence = 0.0;
    double noise_floor = 0.0;
};

// Gaussian fit to |amplitude| near the guess, band-pass of center +-
// window_sigmas * sigma (mirrored at -f), inverse transform. Throws
// ComponentNotDetected when no peak clears the prominence threshold.
IsolatedComponent isolate_component(const FrequencySpectrum& spectrum, double peak_guess_ghz,
                                    const PeakSearch& search = {});

// Band-pass with an explicit window, used for refits at the window edges.
CorrelationTrace band_pass(const FrequencySpectrum& spectrum, double lo_ghz, double hi_ghz);

// Two-sided damped-cosine fit of an isolated component. Errors on
// frequency and T2* include the spread from refitting with the window
// center and width moved by their 1-sigma Gaussian-fit errors.
FitResult fit_component(const FrequencySpectrum& spectrum, const IsolatedComponent& component,
                        const PeakSearch& search = {},
                        std::optional<std::pair<double, double>> fit_window_ps = std::nullopt);

struct GFactorPoint {
    double b_field_t = 0.0;
    double splitting_uev = 0.0;
    double splitting_err = 0.0;
};

struct GFactorResidual {
    double b_field_t;
    double splitting_uev;
    double predicted_uev;
    double residual_uev;
    double pull; // leave-one-out residual over its standard error; NaN when undefined
    bool outlier;
};

struct GFactorResult {
    FitResult fit; // g, slope_uev_per_t, intercept_uev
    std::vector<GFactorResidual> residuals;
    bool weighted = true;
};

// Weighted unless `weighted` is false or every point error is zero. In a
// weighted fit, points with infinite error are left out of the fit and the
// residual list. Pulls are leave-one-out; points beyond 3 sigma are flagged
// worst first and dropped from the pulls of the rest (the line itself uses
// every point).
GFactorResult gfactor_fit(std::span<const GFactorPoint> points, bool weighted = true);

struct ValueWithError {
    double value = 0.0;
    double error = 0.0;
};

// Time-integrated DOP_Z for R and L pumped records (L sign-flipped), averaged.
ValueWithError polarization_memory(std::span<const PhotonRecord> records_r_pump,
                                   std::span<const PhotonRecord> records_l_pump);

struct G2Options {
    double bin_width_ps = 20.0;
    double max_delay_ns = 16.0;
    PeakSearch search;
    // Delay range of the damped-cosine fit on each isolated component.
    std::optional<std::pair<double, double>> fit_window_ps = std::pair{0.0, 8000.0};
};

struct G2Component {
    std::string label;
    double guess_ghz = 0.0;
    std::optional<IsolatedComponent> isolated;
    std::optional<FitResult> fit;
    std::string failure; // set when not detected or the fit failed
};

struct G2Analysis {
    CorrelationTrace raw;
    NormalizedCorrelation normalized;
    // The spectrum is taken of the folded t >= 0 half: each Larmor term
    // then shows up as a peak at its own frequency instead of a dispersive
    // zero crossing.
    CorrelationTrace folded;
    FrequencySpectrum spectrum;
    std::vector<G2Component> components;
};

// correlate -> normalize -> FFT -> isolate -> fit for each labelled guess.
G2Analysis analyze_g2(std::span<const double> sorted_tags_ps,
                      const std::vector<std::pair<std::string, double>>& guesses_ghz,
                      const G2Options& options = {});

G2Analysis analyze_correlation(const CorrelationTrace& raw,
                               const std::vector<std::pair<std::string, double>>& guesses_ghz,
                               const G2Options& options = {});

} // namespace edl
