#pragma once

// Run configuration files.
//
// Grammar, one entry per line:
//
//   line    := blank | comment | entry
//   comment := '#' any*
//   entry   := key '=' value [comment]
//   key     := section ('.' name)*      letters, digits and '_'
//   value   := any text up to '#', trimmed
//
// Lists are whitespace separated. Numbers accept `inf`. Every key has a
// default except `experiment` and `output`; unknown keys, duplicate keys and
// unparsable values are errors that name the offending line.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "edl/analysis.hpp"
#include "edl/errors.hpp"
#include "edl/montecarlo.hpp"

namespace edl {

class ConfigError : public ValidationError {
public:
    ConfigError(const std::string& origin, std::size_t line, const std::string& what);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

enum class Experiment { pulsed_x0, pulsed_trion, cw_g2, sweep_b };

std::string_view to_string(Experiment e) noexcept;

struct RunConfig {
    Experiment experiment = Experiment::pulsed_x0;
    std::filesystem::path output;
    std::uint64_t seed = 1;

    ExcitonParams exciton{36.17, 1015.0, kInfinity};
    TrionParams trion{0.593, 2.876, 0.2, 1135.0, 8.6, kInfinity};
    double detection_efficiency = 1.0;
    double depolarization = 0.0;
    double init_leakage_rad = 0.0;
    DetectorConfig detector{28.0, 0.0};

    // Pulsed runs: one record file per (pump, detection pair).
    std::vector<Basis> pumps{Basis::R};
    std::vector<BasisPair> detection_pairs{{Basis::R, Basis::L}};
    std::int64_t n_pulses = 1'000'000;

    // CW runs.
    Basis cw_pump = Basis::R;
    Basis cw_detect = Basis::R;
    double pump_rate_per_ns = 1.0;
    double duration_ns = 1e7;
    double segment_ns = 1e6;

    // Field sweep: each field is an independent run of `sweep_mode`.
    Experiment sweep_mode = Experiment::cw_g2;
    std::vector<double> b_fields_mt{30, 40, 50, 60, 70, 80, 90};

    // Analysis.
    double histogram_bin_ps = 8.0;
    double histogram_end_ps = 6000.0;
    double dop_fit_start_ps = 0.0;
    double dop_fit_end_ps = 6000.0;
    bool dop_fit_phase = false;
    double lifetime_fit_start_ps = 100.0;
    G2Options g2;
    bool gfactor_weighted = true;

    // Builds the emitter for a single run (the sweep field is applied by the
    // caller through trion.b_field_t).
    EmitterConfig emitter_for_pump(Basis pump) const;

    // Cross-field checks, run after command-line overrides are applied.
    void validate() const;
};

RunConfig parse_run_config(std::string_view text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

// Every key with its resolved value. Parsing the manifest gives back the
// same configuration.
std::string format_manifest(const RunConfig& config);

BasisPair pair_from_string(std::string_view s);
std::string pair_to_string(const BasisPair& p);

} // namespace edl
