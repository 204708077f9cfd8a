#include "edl/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "edl/errors.hpp"
#include "edl/rng.hpp"

namespace edl {

namespace {

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

unsigned clamp_threads(unsigned threads, std::size_t work_items) {
    if (threads == 0) {
        threads = std::max(1u, std::thread::hardware_concurrency());
    }
    return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(threads, work_items)));
}

// Runs body(part) for part in [0, parts) on up to `threads` threads.
template <class Body>
void parallel_parts(std::size_t parts, unsigned threads, Body&& body) {
    threads = clamp_threads(threads, parts);
    if (threads <= 1) {
        for (std::size_t p = 0; p < parts; ++p) {
            body(p);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t p = w; p < parts; p += threads) {
                body(p);
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
}

} // namespace

EmitterConfig EmitterConfig::neutral_exciton(const ExcitonParams& p, Basis pump) {
    EmitterConfig c;
    c.kind = EmitterKind::neutral_exciton;
    c.exciton = p;
    c.pump = pump;
    return c;
}

EmitterConfig EmitterConfig::negative_trion(const TrionParams& p, Basis pump) {
    EmitterConfig c;
    c.kind = EmitterKind::negative_trion;
    c.trion = p;
    c.pump = pump;
    return c;
}

void EmitterConfig::validate(bool cw_mode) const {
    if (kind == EmitterKind::neutral_exciton) {
        if (!exciton || trion) {
            throw ValidationError("neutral exciton config needs exciton parameters only");
        }
        exciton->validate();
    } else {
        if (!trion || exciton) {
            throw ValidationError("trion config needs trion parameters only");
        }
        trion->validate();
    }
    if (cw_mode) {
        if (kind != EmitterKind::negative_trion) {
            throw ValidationError("CW correlation runs need a trion config");
        }
        if (!(pump_rate_per_ns > 0.0) || !std::isfinite(pump_rate_per_ns)) {
            throw ValidationError("pump_rate must be > 0 in CW mode");
        }
    }
    if (!is_probability(detection_efficiency)) {
        throw ValidationError("detection_efficiency must lie in [0, 1]");
    }
    if (!is_probability(depolarization)) {
        throw ValidationError("depolarization must lie in [0, 1]");
    }
    if (!std::isfinite(init_leakage_rad)) {
        throw ValidationError("init_leakage must be finite");
    }
}

double EmitterConfig::lifetime_ps() const {
    return kind == EmitterKind::neutral_exciton ? exciton->lifetime_ps : trion->lifetime_ps;
}

double EmitterConfig::excited_splitting_uev() const {
    return kind == EmitterKind::neutral_exciton ? exciton->e_fss_uev : trion->hole_splitting_uev();
}

double EmitterConfig::excited_t2_star_ns() const {
    return kind == EmitterKind::neutral_exciton ? exciton->t2_star_ns : trion->t2_star_hole_ns;
}

void DetectorConfig::validate() const {
    if (!(jitter_fwhm_ps >= 0.0) || !std::isfinite(jitter_fwhm_ps)) {
        throw ValidationError("jitter_fwhm must be finite and >= 0");
    }
    if (!(dead_time_ps >= 0.0) || !std::isfinite(dead_time_ps)) {
        throw ValidationError("dead_time must be finite and >= 0");
    }
}

BlochVector written_spin(const EmitterConfig& config) {
    const BlochVector axis = bloch_axis(config.pump);
    if (config.init_leakage_rad == 0.0) {
        return axis;
    }
    return rotate(axis, {0.0, 0.0, 1.0}, config.init_leakage_rad);
}

BlochVector emitted_stokes(EmitterKind kind, const BlochVector& spin) noexcept {
    if (kind == EmitterKind::neutral_exciton) {
        return spin;
    }
    return {0.0, 0.0, spin.z};
}

PulsedSimulator::PulsedSimulator(EmitterConfig config, DetectorConfig detector, BasisPair detection,
                                 std::uint64_t seed)
    : config_(std::move(config)), detector_(detector), detection_(detection), seed_(seed) {
    config_.validate(false);
    detector_.validate();
    if (detection_.cross != antipode(detection_.co)) {
        throw ValidationError("detection basis must be an antipodal pair");
    }
    initial_ = written_spin(config_);
    lifetime_ps_ = config_.lifetime_ps();
    splitting_uev_ = config_.excited_splitting_uev();
    t2_star_ns_ = config_.excited_t2_star_ns();
    sigma_ps_ = detector_.sigma_ps();
}

std::optional<PhotonRecord> PulsedSimulator::pulse(std::int64_t pulse_index) const {
    Rng rng(seed_, static_cast<std::uint64_t>(pulse_index));
    const double t_emit = rng.exponential(lifetime_ps_);
    const double u_depol = rng.uniform();
    const double u_channel = rng.uniform();
    const double u_detect = rng.uniform();
    const double jitter = rng.normal();

    const BlochVector spin = precess_about_x(initial_, splitting_uev_, t2_star_ns_, t_emit);
    BlochVector stokes = emitted_stokes(config_.kind, spin);
    if (u_depol < config_.depolarization) {
        stokes = {};
    }
    const double p_co = projection_probability(stokes, detection_.co);
    if (u_detect >= config_.detection_efficiency) {
        return std::nullopt;
    }
    PhotonRecord r;
    r.trajectory_id = pulse_index;
    r.pulse_index = pulse_index;
    r.emit_time_ps = t_emit;
    r.detect_time_ps = t_emit + sigma_ps_ * jitter;
    r.channel = u_channel < p_co ? detection_.co : detection_.cross;
    return r;
}

std::vector<PhotonRecord> simulate_pulsed(const EmitterConfig& config, const DetectorConfig& detector,
                                          BasisPair detection, std::int64_t n_pulses,
                                          std::uint64_t seed, unsigned threads) {
    if (n_pulses < 1) {
        throw ValidationError("n_pulses must be >= 1");
    }
    const PulsedSimulator sim(config, detector, detection, seed);
    constexpr std::int64_t kChunk = 1 << 16;
    const auto chunks = static_cast<std::size_t>((n_pulses + kChunk - 1) / kChunk);
    std::vector<std::vector<PhotonRecord>> parts(chunks);
    parallel_parts(chunks, threads, [&](std::size_t c) {
        const std::int64_t first = static_cast<std::int64_t>(c) * kChunk;
        const std::int64_t last = std::min(n_pulses, first + kChunk);
        auto& out = parts[c];
        out.reserve(static_cast<std::size_t>(last - first));
        for_each_pulsed_photon(sim, first, last, [&](const PhotonRecord& r) { out.push_back(r); });
    });
    std::vector<PhotonRecord> records;
    std::size_t total = 0;
    for (const auto& p : parts) {
        total += p.size();
    }
    records.reserve(total);
    for (auto& p : parts) {
        records.insert(records.end(), p.begin(), p.end());
    }
    return records;
}

namespace {

struct CwSegment {
    std::vector<double> tags;
    std::uint64_t emitted = 0;
};

CwSegment run_cw_segment(const EmitterConfig& config, const DetectorConfig& detector,
                         Basis detect_channel, double start_ps, double end_ps, std::uint64_t seed,
                         std::uint64_t segment) {
    const TrionParams& tp = *config.trion;
    const double pump_per_ps = config.pump_rate_per_ns * 1e-3;
    const double pump_z = bloch_axis(config.pump).z;
    const BlochVector hole_written = bloch_axis(config.pump);
    const double delta_e = tp.electron_splitting_uev();
    const double delta_h = tp.hole_splitting_uev();
    const double sigma = detector.sigma_ps();

    Rng rng(seed, segment);
    CwSegment out;
    BlochVector electron{}; // unpolarized at segment start
    double t = start_ps;
    double last_detect = -kInfinity;
    for (;;) {
        // Ground level: thinning against the maximal excitation rate.
        const double candidate = t + rng.exponential(1.0 / pump_per_ps);
        if (candidate >= end_ps) {
            break;
        }
        electron = precess_about_x(electron, delta_e, tp.t2_star_electron_ns, candidate - t);
        t = candidate;
        if (rng.uniform() >= 0.5 * (1.0 + pump_z * electron.z)) {
            continue;
        }
        // Excited level: the pump writes the hole, which precesses until emission.
        const double dwell = rng.exponential(tp.lifetime_ps);
        const BlochVector hole = precess_about_x(hole_written, delta_h, tp.t2_star_hole_ns, dwell);
        const double u_depol = rng.uniform();
        const double u_channel = rng.uniform();
        const double u_detect = rng.uniform();
        const double jitter = rng.normal();
        const double s_z = u_depol < config.depolarization ? 0.0 : hole.z;
        const bool right = u_channel < 0.5 * (1.0 + s_z);
        t += dwell;
        if (t >= end_ps) {
            break;
        }
        ++out.emitted;
        electron = right ? BlochVector{0.0, 0.0, 1.0} : BlochVector{0.0, 0.0, -1.0};
        const Basis channel = right ? Basis::R : Basis::L;
        if (channel != detect_channel || u_detect >= config.detection_efficiency) {
            continue;
        }
        if (t - last_detect < detector.dead_time_ps) {
            continue;
        }
        last_detect = t;
        out.tags.push_back(t + sigma * jitter);
    }
    return out;
}

} // namespace

TimeTagStream simulate_cw_g2(const EmitterConfig& config, const DetectorConfig& detector,
                             Basis detect_channel, double duration_ns, std::uint64_t seed,
                             const CwOptions& options) {
    config.validate(true);
    detector.validate();
    if (detect_channel != Basis::R && detect_channel != Basis::L) {
        throw ValidationError("CW detection channel must be R or L");
    }
    if (!(duration_ns > 0.0) || !std::isfinite(duration_ns)) {
        throw ValidationError("duration must be > 0");
    }
    if (!(options.segment_ns > 0.0)) {
        throw ValidationError("segment length must be > 0");
    }
    const double duration_ps = duration_ns * 1e3;
    const double segment_ps = options.segment_ns * 1e3;
    const auto n_segments = static_cast<std::size_t>(std::ceil(duration_ps / segment_ps));
    std::vector<CwSegment> segments(n_segments);
    parallel_parts(n_segments, options.threads, [&](std::size_t k) {
        const double start = static_cast<double>(k) * segment_ps;
        const double end = std::min(duration_ps, start + segment_ps);
        segments[k] = run_cw_segment(config, detector, detect_channel, start, end, seed, k);
    });

    TimeTagStream stream;
    stream.duration_ps = duration_ps;
    std::size_t total = 0;
    for (const auto& s : segments) {
        total += s.tags.size();
    }
    stream.detect_time_ps.reserve(total);
    for (const auto& s : segments) {
        stream.detect_time_ps.insert(stream.detect_time_ps.end(), s.tags.begin(), s.tags.end());
        stream.emitted += s.emitted;
    }
    std::sort(stream.detect_time_ps.begin(), stream.detect_time_ps.end());
    if (stream.detect_time_ps.size() < 2) {
        stream.warnings.emplace_back("fewer than 2 detections; correlation will be empty");
    }
    return stream;
}

std::vector<PhotonRecord> apply_jitter(std::span<const PhotonRecord> records,
                                       const DetectorConfig& detector, std::uint64_t seed) {
    detector.validate();
    std::vector<PhotonRecord> out(records.begin(), records.end());
    const double sigma = detector.sigma_ps();
    if (sigma == 0.0) {
        return out;
    }
    Rng rng(seed, 0);
    for (auto& r : out) {
        r.detect_time_ps += sigma * rng.normal();
    }
    return out;
}

std::vector<double> apply_jitter(std::span<const double> tags_ps, const DetectorConfig& detector,
                                 std::uint64_t seed) {
    detector.validate();
    std::vector<double> out(tags_ps.begin(), tags_ps.end());
    const double sigma = detector.sigma_ps();
    if (sigma == 0.0) {
        return out;
    }
    Rng rng(seed, 0);
    for (auto& t : out) {
        t += sigma * rng.normal();
    }
    std::sort(out.begin(), out.end());
    return out;
}

double visibility_factor(double jitter_fwhm_ps, double period_ps) {
    if (!(period_ps > 0.0)) {
        throw ValidationError("period must be > 0");
    }
    if (!(jitter_fwhm_ps >= 0.0)) {
        throw ValidationError("jitter_fwhm must be >= 0");
    }
    const double sigma = jitter_fwhm_ps / constants::fwhm_per_sigma;
    const double x = constants::pi * sigma / period_ps;
    return std::exp(-2.0 * x * x);
}

Histogram Histogram::with_range(double bin_width_ps, double start_ps, double end_ps) {
    if (!(bin_width_ps > 0.0) || !std::isfinite(bin_width_ps)) {
        throw ValidationError("bin width must be > 0");
    }
    if (!(end_ps > start_ps) || !std::isfinite(start_ps) || !std::isfinite(end_ps)) {
        throw ValidationError("empty histogram range");
    }
    Histogram h;
    h.start_ps = start_ps;
    h.bin_width_ps = bin_width_ps;
    const double n = std::ceil((end_ps - start_ps) / bin_width_ps - 1e-9);
    h.counts.assign(static_cast<std::size_t>(std::max(1.0, n)), 0.0);
    return h;
}

double Histogram::in_range_total() const noexcept {
    double s = 0.0;
    for (double c : counts) {
        s += c;
    }
    return s;
}

void Histogram::add(double t_ps, double weight) noexcept {
    const double pos = std::floor((t_ps - start_ps) / bin_width_ps);
    if (pos < 0.0) {
        underflow += weight;
    } else if (pos >= static_cast<double>(counts.size())) {
        overflow += weight;
    } else {
        counts[static_cast<std::size_t>(pos)] += weight;
    }
}

bool Histogram::same_binning(const Histogram& other) const noexcept {
    return counts.size() == other.counts.size() && start_ps == other.start_ps &&
           bin_width_ps == other.bin_width_ps;
}

void Histogram::merge(const Histogram& other) {
    if (!same_binning(other)) {
        throw ValidationError("histogram binning mismatch");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
        counts[i] += other.counts[i];
    }
    underflow += other.underflow;
    overflow += other.overflow;
}

Histogram build_histogram(std::span<const PhotonRecord> records, double bin_width_ps,
                          double start_ps, double end_ps, std::optional<Basis> channel,
                          TimeField field) {
    Histogram h = Histogram::with_range(bin_width_ps, start_ps, end_ps);
    for (const auto& r : records) {
        if (channel && r.channel != *channel) {
            continue;
        }
        h.add(field == TimeField::detect ? r.detect_time_ps : r.emit_time_ps);
    }
    return h;
}

CorrelationTrace correlate(std::span<const double> tags, double bin_width_ps, double max_delay_ns) {
    if (tags.size() < 2) {
        throw ValidationError("correlation needs at least 2 tags");
    }
    if (!(bin_width_ps > 0.0)) {
        throw ValidationError("bin width must be > 0");
    }
    if (!(max_delay_ns > 0.0)) {
        throw ValidationError("max delay must be > 0");
    }
    if (!std::is_sorted(tags.begin(), tags.end())) {
        throw ValidationError("time tags must be sorted");
    }
    const auto half = static_cast<std::int64_t>(std::llround(max_delay_ns * 1e3 / bin_width_ps));
    if (half < 1) {
        throw ValidationError("max delay shorter than one bin");
    }
    const double reach = (static_cast<double>(half) + 0.5) * bin_width_ps;
    CorrelationTrace trace;
    const auto n = static_cast<std::size_t>(2 * half + 1);
    trace.delay_ps.resize(n);
    trace.value.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        trace.delay_ps[k] = static_cast<double>(static_cast<std::int64_t>(k) - half) * bin_width_ps;
    }
    for (std::size_t i = 0; i < tags.size(); ++i) {
        for (std::size_t j = i + 1; j < tags.size(); ++j) {
            const double d = tags[j] - tags[i];
            if (d >= reach) {
                break;
            }
            const auto k = static_cast<std::int64_t>(std::llround(d / bin_width_ps));
            if (k > half) {
                continue;
            }
            trace.value[static_cast<std::size_t>(half + k)] += 1.0;
            trace.value[static_cast<std::size_t>(half - k)] += 1.0;
        }
    }
    return trace;
}

} // namespace edl
