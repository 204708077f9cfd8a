#pragma once

// File formats. Every writer goes through write_atomic (temp file + rename)
// and formats numbers with fmt, so output never depends on the C locale.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edl/analysis.hpp"
#include "edl/errors.hpp"
#include "edl/fitting.hpp"
#include "edl/montecarlo.hpp"
#include "edl/traces.hpp"

namespace edl {

// Malformed input file. Row and column are 1-based; column 0 means the
// whole row.
class CsvError : public ValidationError {
public:
    CsvError(const std::string& path, std::size_t row, std::size_t column, const std::string& what);

    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

// Writes to a sibling temporary and renames it over `path`. Creates the
// parent directory. Throws std::runtime_error when the target is not
// writable.
void write_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_text(const std::filesystem::path& path);

std::string format_records_csv(std::span<const PhotonRecord> records);
std::vector<PhotonRecord> parse_records_csv(std::string_view text, const std::string& origin = "<input>");

std::string format_tags_csv(std::span<const double> tags_ps);
std::vector<double> parse_tags_csv(std::string_view text, const std::string& origin = "<input>");

std::string format_histogram_csv(const Histogram& hist);
std::string format_dop_csv(const DopTrace& trace);
std::string format_spectrum_csv(const FrequencySpectrum& spectrum);
std::string format_trace_csv(const CorrelationTrace& trace);

// `name = value ± error` per parameter, `chi2_reduced = ...`,
// `converged = true|false`, `meta.<key> = value` and `# warning: ...`
// lines.
std::string format_fit_result(const FitResult& fit);
FitResult parse_fit_result(std::string_view text, const std::string& origin = "<input>");

// Shortest representation that parses back to the same double.
std::string format_number(double v);

} // namespace edl
