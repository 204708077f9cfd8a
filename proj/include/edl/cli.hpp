#pragma once

// Command-line front end. run_cli is the whole program minus main() so tests
// can drive it in-process.
//
// Exit codes: 0 success, 1 validation error (bad flags, config or input
// files), 2 runtime or fit failure.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edl/config.hpp"

namespace edl {

struct Preset {
    std::string_view name;
    std::string_view text;
};

std::span<const Preset> presets();
std::optional<std::string_view> find_preset(std::string_view name);

// EDL_THREADS when set to a positive integer, else the hardware concurrency.
unsigned thread_budget();

struct CommandIo {
    std::ostream& out;
    std::ostream& err;
    unsigned threads = 1;
    bool gnuplot = false;
};

// Writes record or tag files plus manifest.cfg under config.output.
void cmd_simulate(const RunConfig& config, const CommandIo& io);

// Analyzes a simulate output directory (or a single record/tag CSV) with
// the given config and writes every intermediate under `out_dir`. Returns
// false when no fit succeeded.
bool cmd_analyze(const std::filesystem::path& input, const RunConfig& config,
                 const std::filesystem::path& out_dir, const CommandIo& io);

// g-factor regression over FitResult files carrying meta.b_field_t.
// Writes the report to io.out and, when report_path is set, to that file.
void cmd_gfactor(const std::vector<std::filesystem::path>& fit_files, bool weighted,
                 const std::optional<std::filesystem::path>& report_path, const CommandIo& io);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace edl
