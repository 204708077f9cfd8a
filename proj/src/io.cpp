#include "edl/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include <fmt/format.h>

namespace edl {

namespace fs = std::filesystem;

CsvError::CsvError(const std::string& path, std::size_t row, std::size_t column, const std::string& what)
    : ValidationError(column > 0 ? fmt::format("{}: row {}, column {}: {}", path, row, column, what)
                                 : fmt::format("{}: row {}: {}", path, row, what)),
      row_(row),
      column_(column) {}

void write_atomic(const fs::path& path, std::string_view content) {
    std::error_code ec;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
        if (ec) {
            throw std::runtime_error(fmt::format("cannot create directory {}: {}",
                                                 path.parent_path().string(), ec.message()));
        }
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error(fmt::format("cannot write {}", tmp.string()));
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            throw std::runtime_error(fmt::format("write to {} failed", tmp.string()));
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error(fmt::format("cannot rename {} to {}: {}", tmp.string(), path.string(), ec.message()));
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError(fmt::format("cannot read {}", path.string()));
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_number(double v) { return fmt::format("{}", v); }

namespace {

// Splits text into lines, dropping a trailing CR so CRLF input still parses.
std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        lines.push_back(line);
        pos = end + 1;
    }
    return lines;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (true) {
        const std::size_t comma = line.find(',', pos);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(pos));
            return fields;
        }
        fields.push_back(line.substr(pos, comma - pos));
        pos = comma + 1;
    }
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    return s;
}

bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) {
        return false;
    }
    if (s.front() == '+') {
        s.remove_prefix(1);
    }
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_int(std::string_view s, std::int64_t& out) {
    s = trim(s);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

struct Table {
    std::vector<std::vector<std::string_view>> rows; // data rows
    std::vector<std::size_t> row_numbers;            // 1-based file rows
};

Table read_table(std::string_view text, const std::string& origin, std::string_view header) {
    const auto lines = split_lines(text);
    if (lines.empty() || trim(lines.front()) != header) {
        throw CsvError(origin, 1, 0, fmt::format("expected header '{}'", header));
    }
    const std::size_t n_cols = split_fields(header).size();
    Table t;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) {
            continue;
        }
        auto fields = split_fields(lines[i]);
        if (fields.size() != n_cols) {
            throw CsvError(origin, i + 1, 0, fmt::format("expected {} columns, found {}", n_cols, fields.size()));
        }
        t.rows.push_back(std::move(fields));
        t.row_numbers.push_back(i + 1);
    }
    return t;
}

double field_double(const Table& t, std::size_t r, std::size_t c, const std::string& origin) {
    double v = 0.0;
    if (!parse_double(t.rows[r][c], v) || !std::isfinite(v)) {
        throw CsvError(origin, t.row_numbers[r], c + 1,
                       fmt::format("'{}' is not a finite number", t.rows[r][c]));
    }
    return v;
}

} // namespace

std::string format_records_csv(std::span<const PhotonRecord> records) {
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "trajectory_id,pulse_index,emit_time_ps,detect_time_ps,channel\n");
    for (const auto& r : records) {
        fmt::format_to(std::back_inserter(buf), "{},{},{:.3f},{:.3f},{}\n", r.trajectory_id, r.pulse_index,
                       r.emit_time_ps, r.detect_time_ps, to_char(r.channel));
    }
    return fmt::to_string(buf);
}

std::vector<PhotonRecord> parse_records_csv(std::string_view text, const std::string& origin) {
    const Table t = read_table(text, origin, "trajectory_id,pulse_index,emit_time_ps,detect_time_ps,channel");
    std::vector<PhotonRecord> out;
    out.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        PhotonRecord rec;
        if (!parse_int(t.rows[r][0], rec.trajectory_id)) {
            throw CsvError(origin, t.row_numbers[r], 1, fmt::format("'{}' is not an integer", t.rows[r][0]));
        }
        if (!parse_int(t.rows[r][1], rec.pulse_index)) {
            throw CsvError(origin, t.row_numbers[r], 2, fmt::format("'{}' is not an integer", t.rows[r][1]));
        }
        rec.emit_time_ps = field_double(t, r, 2, origin);
        rec.detect_time_ps = field_double(t, r, 3, origin);
        const std::string_view ch = trim(t.rows[r][4]);
        try {
            if (ch.size() != 1) {
                throw ValidationError("bad label");
            }
            rec.channel = basis_from_char(ch.front());
        } catch (const ValidationError&) {
            throw CsvError(origin, t.row_numbers[r], 5, fmt::format("'{}' is not one of H V D A R L", ch));
        }
        out.push_back(rec);
    }
    return out;
}

std::string format_tags_csv(std::span<const double> tags) {
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "detect_time_ps\n");
    for (double t : tags) {
        fmt::format_to(std::back_inserter(buf), "{:.3f}\n", t);
    }
    return fmt::to_string(buf);
}

std::vector<double> parse_tags_csv(std::string_view text, const std::string& origin) {
    const Table t = read_table(text, origin, "detect_time_ps");
    std::vector<double> out;
    out.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        out.push_back(field_double(t, r, 0, origin));
    }
    return out;
}

std::string format_histogram_csv(const Histogram& hist) {
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "bin_center_ps,count\n");
    for (std::size_t i = 0; i < hist.size(); ++i) {
        fmt::format_to(std::back_inserter(buf), "{},{}\n", hist.bin_center(i), hist.counts[i]);
    }
    return fmt::to_string(buf);
}

std::string format_dop_csv(const DopTrace& trace) {
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "time_ps,dop,dop_err\n");
    for (std::size_t i = 0; i < trace.size(); ++i) {
        fmt::format_to(std::back_inserter(buf), "{},{},{}\n", trace.time_ps[i], trace.dop[i], trace.dop_err[i]);
    }
    return fmt::to_string(buf);
}

std::string format_spectrum_csv(const FrequencySpectrum& spec) {
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "freq_ghz,re,im\n");
    for (std::size_t j = 0; j < spec.size(); ++j) {
        fmt::format_to(std::back_inserter(buf), "{},{},{}\n", spec.freq_ghz[j], spec.amplitude[j].real(),
                       spec.amplitude[j].imag());
    }
    return fmt::to_string(buf);
}

std::string format_trace_csv(const CorrelationTrace& trace) {
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "delay_ps,value\n");
    for (std::size_t i = 0; i < trace.size(); ++i) {
        fmt::format_to(std::back_inserter(buf), "{},{}\n", trace.delay_ps[i], trace.value[i]);
    }
    return fmt::to_string(buf);
}

std::string format_fit_result(const FitResult& fit) {
    fmt::memory_buffer buf;
    for (std::size_t i = 0; i < fit.names.size(); ++i) {
        fmt::format_to(std::back_inserter(buf), "{} = {} ± {}\n", fit.names[i], format_number(fit.values[i]),
                       format_number(fit.errors[i]));
    }
    fmt::format_to(std::back_inserter(buf), "chi2_reduced = {}\n", format_number(fit.chi2_reduced));
    fmt::format_to(std::back_inserter(buf), "converged = {}\n", fit.converged ? "true" : "false");
    for (const auto& [k, v] : fit.meta) {
        fmt::format_to(std::back_inserter(buf), "meta.{} = {}\n", k, format_number(v));
    }
    for (const auto& w : fit.warnings) {
        fmt::format_to(std::back_inserter(buf), "# warning: {}\n", w);
    }
    return fmt::to_string(buf);
}

FitResult parse_fit_result(std::string_view text, const std::string& origin) {
    static constexpr std::string_view kPlusMinus = "±";
    static constexpr std::string_view kWarning = "# warning: ";
    FitResult fit;
    bool have_chi2 = false, have_converged = false;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t row = i + 1;
        const std::string_view line = trim(lines[i]);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '#') {
            if (line.substr(0, kWarning.size()) == kWarning) {
                fit.warnings.emplace_back(line.substr(kWarning.size()));
            }
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw CsvError(origin, row, 0, "expected 'name = value'");
        }
        const std::string_view name = trim(line.substr(0, eq));
        const std::string_view rhs = trim(line.substr(eq + 1));
        if (name.empty()) {
            throw CsvError(origin, row, 1, "empty name");
        }
        const auto col_of = [&](std::string_view part) {
            return static_cast<std::size_t>(part.data() - lines[i].data()) + 1;
        };
        const std::size_t rhs_col = col_of(rhs);
        if (name == "converged") {
            if (rhs != "true" && rhs != "false") {
                throw CsvError(origin, row, rhs_col, "converged must be true or false");
            }
            fit.converged = rhs == "true";
            have_converged = true;
            continue;
        }
        if (name == "chi2_reduced" || name.substr(0, 5) == "meta.") {
            double v = 0.0;
            if (!parse_double(rhs, v)) {
                throw CsvError(origin, row, rhs_col, fmt::format("'{}' is not a number", rhs));
            }
            if (name == "chi2_reduced") {
                fit.chi2_reduced = v;
                have_chi2 = true;
            } else {
                fit.set_meta(name.substr(5), v);
            }
            continue;
        }
        const std::size_t pm = rhs.find(kPlusMinus);
        if (pm == std::string_view::npos) {
            throw CsvError(origin, row, rhs_col, "expected 'value ± error'");
        }
        double v = 0.0, e = 0.0;
        if (!parse_double(rhs.substr(0, pm), v)) {
            throw CsvError(origin, row, rhs_col, fmt::format("'{}' is not a number", trim(rhs.substr(0, pm))));
        }
        if (!parse_double(rhs.substr(pm + kPlusMinus.size()), e) || e < 0.0) {
            throw CsvError(origin, row, col_of(trim(rhs.substr(pm + kPlusMinus.size()))),
                           fmt::format("'{}' is not a non-negative error", trim(rhs.substr(pm + kPlusMinus.size()))));
        }
        fit.set(name, v, e);
    }
    if (!have_chi2 || !have_converged) {
        throw CsvError(origin, lines.size(), 0, "missing chi2_reduced or converged line");
    }
    return fit;
}

} // namespace edl
