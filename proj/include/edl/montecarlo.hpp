#pragma once

// Stochastic photon generation for pulsed polarization-resolved lifetime
// runs and CW-pumped correlation runs.
//
// Every pulse (pulsed mode) or time segment (CW mode) draws from its own RNG
// substream keyed on (seed, trajectory id), so results do not depend on how
// the work is split across threads.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edl/dynamics.hpp"
#include "edl/polarization.hpp"
#include "edl/traces.hpp"

namespace edl {

enum class EmitterKind { neutral_exciton, negative_trion };

struct EmitterConfig {
    EmitterKind kind = EmitterKind::neutral_exciton;
    std::optional<ExcitonParams> exciton;
    std::optional<TrionParams> trion;
    double pump_rate_per_ns = 0.0; // CW only
    Basis pump = Basis::R;
    double detection_efficiency = 1.0;
    // Probability that an emitted photon carries no polarization; models
    // polarization memory below 1.
    double depolarization = 0.0;
    // Tilt of the written spin about z (H toward D), for imperfect eigenstate
    // initialization. Pulsed mode only.
    double init_leakage_rad = 0.0;

    static EmitterConfig neutral_exciton(const ExcitonParams& p, Basis pump);
    static EmitterConfig negative_trion(const TrionParams& p, Basis pump);

    void validate(bool cw_mode) const;

    double lifetime_ps() const;
    // Splitting and T2* of the spin that precesses while the emitter is excited.
    double excited_splitting_uev() const;
    double excited_t2_star_ns() const;
};

struct DetectorConfig {
    double jitter_fwhm_ps = 0.0;
    double dead_time_ps = 0.0;

    double sigma_ps() const noexcept { return jitter_fwhm_ps / constants::fwhm_per_sigma; }
    void validate() const;
};

struct PhotonRecord {
    std::int64_t trajectory_id = 0;
    std::int64_t pulse_index = -1; // -1 for CW
    double emit_time_ps = 0.0;
    double detect_time_ps = 0.0;
    Basis channel = Basis::H;

    bool operator==(const PhotonRecord&) const = default;
};

// Spin written by the pump pulse: the pump's Bloch axis, tilted by the
// configured leakage angle.
BlochVector written_spin(const EmitterConfig& config);

// Polarization carried by the photon: the full spin for the exciton, only
// the z component for the trion (the electron trace removes x and y).
BlochVector emitted_stokes(EmitterKind kind, const BlochVector& spin) noexcept;

class PulsedSimulator {
public:
    PulsedSimulator(EmitterConfig config, DetectorConfig detector, BasisPair detection,
                    std::uint64_t seed);

    // One excitation pulse; empty when the photon is not detected.
    std::optional<PhotonRecord> pulse(std::int64_t pulse_index) const;

    const EmitterConfig& config() const noexcept { return config_; }

private:
    EmitterConfig config_;
    DetectorConfig detector_;
    BasisPair detection_;
    std::uint64_t seed_;
    BlochVector initial_;
    double lifetime_ps_;
    double splitting_uev_;
    double t2_star_ns_;
    double sigma_ps_;
};

std::vector<PhotonRecord> simulate_pulsed(const EmitterConfig& config, const DetectorConfig& detector,
                                          BasisPair detection, std::int64_t n_pulses,
                                          std::uint64_t seed, unsigned threads = 1);

// Streaming variant for runs too large to hold in memory.
template <class Sink>
void for_each_pulsed_photon(const PulsedSimulator& sim, std::int64_t first, std::int64_t last,
                            Sink&& sink) {
    for (std::int64_t i = first; i < last; ++i) {
        if (auto r = sim.pulse(i)) {
            sink(*r);
        }
    }
}

struct TimeTagStream {
    std::vector<double> detect_time_ps; // sorted
    double duration_ps = 0.0;
    std::uint64_t emitted = 0;
    std::vector<std::string> warnings;
};

struct CwOptions {
    // Length of one independent trajectory segment.
    double segment_ns = 1e6;
    unsigned threads = 1;
};

// Continuous-time jump simulation of a CW-pumped trion recorded in one
// polarization channel.
TimeTagStream simulate_cw_g2(const EmitterConfig& config, const DetectorConfig& detector,
                             Basis detect_channel, double duration_ns, std::uint64_t seed,
                             const CwOptions& options = {});

std::vector<PhotonRecord> apply_jitter(std::span<const PhotonRecord> records,
                                       const DetectorConfig& detector, std::uint64_t seed);
std::vector<double> apply_jitter(std::span<const double> tags_ps, const DetectorConfig& detector,
                                 std::uint64_t seed);

// Attenuation of a cosine of the given period under Gaussian jitter.
double visibility_factor(double jitter_fwhm_ps, double period_ps);

enum class TimeField { detect, emit };

Histogram build_histogram(std::span<const PhotonRecord> records, double bin_width_ps,
                          double start_ps, double end_ps, std::optional<Basis> channel = std::nullopt,
                          TimeField field = TimeField::detect);

// Symmetric histogram of all ordered-pair delays within +-max_delay.
CorrelationTrace correlate(std::span<const double> sorted_tags_ps, double bin_width_ps,
                           double max_delay_ns);

} // namespace edl
