#include "edl/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>

#include <fmt/format.h>

#include "edl/io.hpp"

namespace edl {

ConfigError::ConfigError(const std::string& origin, std::size_t line, const std::string& what)
    : ValidationError(line > 0 ? fmt::format("{}:{}: {}", origin, line, what) : fmt::format("{}: {}", origin, what)),
      line_(line) {}

std::string_view to_string(Experiment e) noexcept {
    switch (e) {
    case Experiment::pulsed_x0:
        return "pulsed_x0";
    case Experiment::pulsed_trion:
        return "pulsed_trion";
    case Experiment::cw_g2:
        return "cw_g2";
    case Experiment::sweep_b:
        return "sweep_b";
    }
    return "?";
}

BasisPair pair_from_string(std::string_view s) {
    if (s.size() != 2) {
        throw ValidationError(fmt::format("'{}' is not a detection pair (HV, DA or RL)", s));
    }
    const Basis a = basis_from_char(s[0]);
    const Basis b = basis_from_char(s[1]);
    if (antipode(a) != b) {
        throw ValidationError(fmt::format("'{}' is not an antipodal pair", s));
    }
    return BasisPair::containing(a);
}

std::string pair_to_string(const BasisPair& p) { return {to_char(p.co), to_char(p.cross)}; }

EmitterConfig RunConfig::emitter_for_pump(Basis pump) const {
    const Experiment kind = experiment == Experiment::sweep_b ? sweep_mode : experiment;
    EmitterConfig e = kind == Experiment::pulsed_x0 ? EmitterConfig::neutral_exciton(exciton, pump)
                                                    : EmitterConfig::negative_trion(trion, pump);
    e.detection_efficiency = detection_efficiency;
    e.depolarization = depolarization;
    e.init_leakage_rad = kind == Experiment::cw_g2 ? 0.0 : init_leakage_rad;
    if (kind == Experiment::cw_g2) {
        e.pump_rate_per_ns = pump_rate_per_ns;
    }
    return e;
}

void RunConfig::validate() const {
    if (output.empty()) {
        throw ValidationError("output directory is not set");
    }
    const Experiment kind = experiment == Experiment::sweep_b ? sweep_mode : experiment;
    if (experiment == Experiment::sweep_b) {
        if (sweep_mode != Experiment::cw_g2 && sweep_mode != Experiment::pulsed_trion) {
            throw ValidationError("sweep.mode must be cw_g2 or pulsed_trion");
        }
        if (b_fields_mt.empty()) {
            throw ValidationError("sweep.b_fields_mt is empty");
        }
        for (double b : b_fields_mt) {
            if (!std::isfinite(b) || b < 0.0) {
                throw ValidationError("sweep fields must be finite and >= 0");
            }
        }
    }
    detector.validate();
    if (kind == Experiment::cw_g2) {
        emitter_for_pump(cw_pump).validate(true);
        if (cw_detect != Basis::R && cw_detect != Basis::L) {
            throw ValidationError("cw.detect must be R or L");
        }
        if (!(duration_ns > 0.0) || !std::isfinite(duration_ns)) {
            throw ValidationError("cw.duration_ns must be > 0");
        }
        if (!(segment_ns > 0.0)) {
            throw ValidationError("cw.segment_ns must be > 0");
        }
    } else {
        if (pumps.empty() || detection_pairs.empty()) {
            throw ValidationError("pulsed.pumps and pulsed.detect must be non-empty");
        }
        for (Basis p : pumps) {
            emitter_for_pump(p).validate(false);
        }
        if (n_pulses <= 0) {
            throw ValidationError("pulsed.n_pulses must be > 0");
        }
    }
    if (!(histogram_bin_ps > 0.0) || !(histogram_end_ps > histogram_bin_ps)) {
        throw ValidationError("analysis histogram binning is empty");
    }
    if (!(dop_fit_end_ps > dop_fit_start_ps)) {
        throw ValidationError("analysis.dop_fit window is empty");
    }
    if (!(g2.bin_width_ps > 0.0) || !(g2.max_delay_ns * 1e3 > g2.bin_width_ps)) {
        throw ValidationError("analysis g2 binning is empty");
    }
    if (g2.fit_window_ps && !(g2.fit_window_ps->second > g2.fit_window_ps->first)) {
        throw ValidationError("analysis.g2_fit window is empty");
    }
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> words(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == ',')) {
            ++i;
        }
        const std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != ',') {
            ++i;
        }
        if (i > start) {
            out.push_back(s.substr(start, i - start));
        }
    }
    return out;
}

double to_double(std::string_view s) {
    double v = 0.0;
    std::string_view t = s;
    if (!t.empty() && t.front() == '+') {
        t.remove_prefix(1);
    }
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || std::isnan(v)) {
        throw ValidationError(fmt::format("'{}' is not a number", s));
    }
    return v;
}

template <class Int>
Int to_int(std::string_view s) {
    Int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw ValidationError(fmt::format("'{}' is not a valid integer", s));
    }
    return v;
}

bool to_bool(std::string_view s) {
    if (s == "true") {
        return true;
    }
    if (s == "false") {
        return false;
    }
    throw ValidationError(fmt::format("'{}' is not true or false", s));
}

Basis to_basis(std::string_view s) {
    if (s.size() != 1) {
        throw ValidationError(fmt::format("'{}' is not one of H V D A R L", s));
    }
    return basis_from_char(s.front());
}

Experiment to_experiment(std::string_view s) {
    for (Experiment e : {Experiment::pulsed_x0, Experiment::pulsed_trion, Experiment::cw_g2, Experiment::sweep_b}) {
        if (s == to_string(e)) {
            return e;
        }
    }
    throw ValidationError(fmt::format("unknown experiment '{}'", s));
}

std::string num(double v) { return format_number(v); }

struct Key {
    std::string name;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

Key number(std::string name, double RunConfig::*field) {
    return {std::move(name), [field](RunConfig& c, std::string_view v) { c.*field = to_double(v); },
            [field](const RunConfig& c) { return num(c.*field); }};
}

template <class Member, class Sub>
Key sub_number(std::string name, Member RunConfig::*outer, double Sub::*field) {
    return {std::move(name), [outer, field](RunConfig& c, std::string_view v) { (c.*outer).*field = to_double(v); },
            [outer, field](const RunConfig& c) { return num((c.*outer).*field); }};
}

Key flag(std::string name, bool RunConfig::*field) {
    return {std::move(name), [field](RunConfig& c, std::string_view v) { c.*field = to_bool(v); },
            [field](const RunConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

Key basis(std::string name, Basis RunConfig::*field) {
    return {std::move(name), [field](RunConfig& c, std::string_view v) { c.*field = to_basis(v); },
            [field](const RunConfig& c) { return std::string(1, to_char(c.*field)); }};
}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = [] {
        std::vector<Key> k;
        k.push_back({"experiment", [](RunConfig& c, std::string_view v) { c.experiment = to_experiment(v); },
                     [](const RunConfig& c) { return std::string(to_string(c.experiment)); }});
        k.push_back({"output", [](RunConfig& c, std::string_view v) { c.output = std::string(v); },
                     [](const RunConfig& c) { return c.output.string(); }});
        k.push_back({"seed", [](RunConfig& c, std::string_view v) { c.seed = to_int<std::uint64_t>(v); },
                     [](const RunConfig& c) { return std::to_string(c.seed); }});

        k.push_back(sub_number("exciton.e_fss_uev", &RunConfig::exciton, &ExcitonParams::e_fss_uev));
        k.push_back(sub_number("exciton.lifetime_ps", &RunConfig::exciton, &ExcitonParams::lifetime_ps));
        k.push_back(sub_number("exciton.t2_star_ns", &RunConfig::exciton, &ExcitonParams::t2_star_ns));
        k.push_back(sub_number("trion.g_hole", &RunConfig::trion, &TrionParams::g_hole));
        k.push_back(sub_number("trion.g_electron", &RunConfig::trion, &TrionParams::g_electron));
        k.push_back(sub_number("trion.b_field_t", &RunConfig::trion, &TrionParams::b_field_t));
        k.push_back(sub_number("trion.lifetime_ps", &RunConfig::trion, &TrionParams::lifetime_ps));
        k.push_back(sub_number("trion.t2_star_hole_ns", &RunConfig::trion, &TrionParams::t2_star_hole_ns));
        k.push_back(sub_number("trion.t2_star_electron_ns", &RunConfig::trion, &TrionParams::t2_star_electron_ns));
        k.push_back(number("emitter.detection_efficiency", &RunConfig::detection_efficiency));
        k.push_back(number("emitter.depolarization", &RunConfig::depolarization));
        k.push_back(number("emitter.init_leakage_rad", &RunConfig::init_leakage_rad));
        k.push_back(sub_number("detector.jitter_fwhm_ps", &RunConfig::detector, &DetectorConfig::jitter_fwhm_ps));
        k.push_back(sub_number("detector.dead_time_ps", &RunConfig::detector, &DetectorConfig::dead_time_ps));

        k.push_back({"pulsed.pumps",
                     [](RunConfig& c, std::string_view v) {
                         c.pumps.clear();
                         for (auto w : words(v)) {
                             c.pumps.push_back(to_basis(w));
                         }
                     },
                     [](const RunConfig& c) {
                         std::string s;
                         for (Basis b : c.pumps) {
                             s += s.empty() ? "" : " ";
                             s += to_char(b);
                         }
                         return s;
                     }});
        k.push_back({"pulsed.detect",
                     [](RunConfig& c, std::string_view v) {
                         c.detection_pairs.clear();
                         for (auto w : words(v)) {
                             c.detection_pairs.push_back(pair_from_string(w));
                         }
                     },
                     [](const RunConfig& c) {
                         std::string s;
                         for (const auto& p : c.detection_pairs) {
                             s += s.empty() ? "" : " ";
                             s += pair_to_string(p);
                         }
                         return s;
                     }});
        k.push_back({"pulsed.n_pulses", [](RunConfig& c, std::string_view v) { c.n_pulses = to_int<std::int64_t>(v); },
                     [](const RunConfig& c) { return std::to_string(c.n_pulses); }});

        k.push_back(basis("cw.pump", &RunConfig::cw_pump));
        k.push_back(basis("cw.detect", &RunConfig::cw_detect));
        k.push_back(number("cw.pump_rate_per_ns", &RunConfig::pump_rate_per_ns));
        k.push_back(number("cw.duration_ns", &RunConfig::duration_ns));
        k.push_back(number("cw.segment_ns", &RunConfig::segment_ns));

        k.push_back({"sweep.mode", [](RunConfig& c, std::string_view v) { c.sweep_mode = to_experiment(v); },
                     [](const RunConfig& c) { return std::string(to_string(c.sweep_mode)); }});
        k.push_back({"sweep.b_fields_mt",
                     [](RunConfig& c, std::string_view v) {
                         c.b_fields_mt.clear();
                         for (auto w : words(v)) {
                             c.b_fields_mt.push_back(to_double(w));
                         }
                     },
                     [](const RunConfig& c) {
                         std::string s;
                         for (double b : c.b_fields_mt) {
                             s += s.empty() ? "" : " ";
                             s += num(b);
                         }
                         return s;
                     }});

        k.push_back(number("analysis.histogram_bin_ps", &RunConfig::histogram_bin_ps));
        k.push_back(number("analysis.histogram_end_ps", &RunConfig::histogram_end_ps));
        k.push_back(number("analysis.dop_fit_start_ps", &RunConfig::dop_fit_start_ps));
        k.push_back(number("analysis.dop_fit_end_ps", &RunConfig::dop_fit_end_ps));
        k.push_back(flag("analysis.dop_fit_phase", &RunConfig::dop_fit_phase));
        k.push_back(number("analysis.lifetime_fit_start_ps", &RunConfig::lifetime_fit_start_ps));
        k.push_back({"analysis.g2_bin_ps", [](RunConfig& c, std::string_view v) { c.g2.bin_width_ps = to_double(v); },
                     [](const RunConfig& c) { return num(c.g2.bin_width_ps); }});
        k.push_back({"analysis.g2_max_delay_ns",
                     [](RunConfig& c, std::string_view v) { c.g2.max_delay_ns = to_double(v); },
                     [](const RunConfig& c) { return num(c.g2.max_delay_ns); }});
        k.push_back({"analysis.g2_fit_start_ps",
                     [](RunConfig& c, std::string_view v) {
                         const double end = c.g2.fit_window_ps ? c.g2.fit_window_ps->second : kInfinity;
                         c.g2.fit_window_ps = std::pair{to_double(v), end};
                     },
                     [](const RunConfig& c) { return num(c.g2.fit_window_ps ? c.g2.fit_window_ps->first : 0.0); }});
        k.push_back({"analysis.g2_fit_end_ps",
                     [](RunConfig& c, std::string_view v) {
                         const double start = c.g2.fit_window_ps ? c.g2.fit_window_ps->first : 0.0;
                         c.g2.fit_window_ps = std::pair{start, to_double(v)};
                     },
                     [](const RunConfig& c) {
                         return num(c.g2.fit_window_ps ? c.g2.fit_window_ps->second : kInfinity);
                     }});
        k.push_back({"analysis.dc_cutoff_ghz",
                     [](RunConfig& c, std::string_view v) { c.g2.search.dc_cutoff_ghz = to_double(v); },
                     [](const RunConfig& c) { return num(c.g2.search.dc_cutoff_ghz); }});
        k.push_back({"analysis.window_sigmas",
                     [](RunConfig& c, std::string_view v) { c.g2.search.window_sigmas = to_double(v); },
                     [](const RunConfig& c) { return num(c.g2.search.window_sigmas); }});
        k.push_back({"analysis.search_tolerance",
                     [](RunConfig& c, std::string_view v) { c.g2.search.tolerance = to_double(v); },
                     [](const RunConfig& c) { return num(c.g2.search.tolerance); }});
        k.push_back({"analysis.min_amplitude",
                     [](RunConfig& c, std::string_view v) { c.g2.search.min_amplitude = to_double(v); },
                     [](const RunConfig& c) { return num(c.g2.search.min_amplitude); }});
        k.push_back({"analysis.max_recenter",
                     [](RunConfig& c, std::string_view v) { c.g2.search.max_recenter = to_int<int>(v); },
                     [](const RunConfig& c) { return std::to_string(c.g2.search.max_recenter); }});
        k.push_back(flag("analysis.gfactor_weighted", &RunConfig::gfactor_weighted));
        return k;
    }();
    return table;
}

} // namespace

RunConfig parse_run_config(std::string_view text, const std::string& origin) {
    RunConfig cfg;
    cfg.output.clear();
    std::map<std::string, std::size_t, std::less<>> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            if (end == text.size()) {
                break;
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(origin, line_no, "expected 'key = value'");
        }
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin, line_no, "missing key");
        }
        const auto& table = keys();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return k.name == key; });
        if (it == table.end()) {
            throw ConfigError(origin, line_no, fmt::format("unknown key '{}'", key));
        }
        if (const auto prev = seen.find(key); prev != seen.end()) {
            throw ConfigError(origin, line_no, fmt::format("duplicate key '{}' (first set on line {})", key, prev->second));
        }
        seen.emplace(std::string(key), line_no);
        if (value.empty()) {
            throw ConfigError(origin, line_no, fmt::format("key '{}' has no value", key));
        }
        try {
            it->set(cfg, value);
        } catch (const ValidationError& e) {
            throw ConfigError(origin, line_no, fmt::format("{}: {}", key, e.what()));
        }
        if (end == text.size()) {
            break;
        }
    }
    if (!seen.count("experiment")) {
        throw ConfigError(origin, 0, "missing required key 'experiment'");
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(read_text(path), path.string());
}

std::string format_manifest(const RunConfig& config) {
    std::string out = "# resolved run configuration\n";
    for (const auto& k : keys()) {
        out += fmt::format("{} = {}\n", k.name, k.get(config));
    }
    return out;
}

} // namespace edl
