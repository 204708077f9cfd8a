#include "edl/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "edl/analysis.hpp"
#include "edl/io.hpp"
#include "edl/rng.hpp"

namespace edl {

namespace fs = std::filesystem;

unsigned thread_budget() {
    if (const char* env = std::getenv("EDL_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) {
            return static_cast<unsigned>(v);
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

std::string field_dir_name(double b_mt) { return "b_" + format_number(b_mt) + "mT"; }

std::string records_name(Basis pump, const BasisPair& pair) {
    return fmt::format("records_{}_{}.csv", to_char(pump), pair_to_string(pair));
}

// Runs jobs 0..n-1 on at most `workers` threads. The first exception is
// rethrown after all workers finish.
template <class Job>
void run_parallel(std::size_t n, unsigned workers, Job&& job) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex m;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next++;
            if (i >= n) {
                return;
            }
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(m);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < workers; ++w) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

RunConfig field_config(const RunConfig& sweep, std::size_t index) {
    RunConfig c = sweep;
    c.experiment = sweep.sweep_mode;
    c.trion.b_field_t = sweep.b_fields_mt[index] * 1e-3;
    c.output = sweep.output / field_dir_name(sweep.b_fields_mt[index]);
    c.seed = derive_seed(sweep.seed, index);
    return c;
}

void simulate_single(const RunConfig& cfg, const CommandIo& io, unsigned threads) {
    if (cfg.experiment == Experiment::cw_g2) {
        CwOptions opts;
        opts.segment_ns = cfg.segment_ns;
        opts.threads = threads;
        const TimeTagStream s =
            simulate_cw_g2(cfg.emitter_for_pump(cfg.cw_pump), cfg.detector, cfg.cw_detect, cfg.duration_ns, cfg.seed, opts);
        for (const auto& w : s.warnings) {
            fmt::print(io.err, "warning: {}\n", w);
        }
        write_atomic(cfg.output / "tags.csv", format_tags_csv(s.detect_time_ps));
    } else {
        std::uint64_t key = 0;
        for (Basis pump : cfg.pumps) {
            for (const auto& pair : cfg.detection_pairs) {
                const auto recs = simulate_pulsed(cfg.emitter_for_pump(pump), cfg.detector, pair, cfg.n_pulses,
                                                  derive_seed(cfg.seed, key++), threads);
                write_atomic(cfg.output / records_name(pump, pair), format_records_csv(recs));
            }
        }
    }
    write_atomic(cfg.output / "manifest.cfg", format_manifest(cfg));
}

std::string gnuplot_lines(const std::vector<std::string>& files, const std::string& using_cols) {
    std::string s;
    for (std::size_t i = 0; i < files.size(); ++i) {
        s += fmt::format("{}'{}' using {} with lines title '{}'", i == 0 ? "plot " : ", \\\n     ", files[i],
                         using_cols, files[i]);
    }
    return s + "\n";
}

void write_gnuplot(const fs::path& path, const std::string& xlabel, const std::string& ylabel,
                   const std::vector<std::string>& files, const std::string& using_cols) {
    std::string s = "set datafile separator ','\nset key autotitle columnhead\n";
    s += fmt::format("set xlabel '{}'\nset ylabel '{}'\n", xlabel, ylabel);
    s += gnuplot_lines(files, using_cols);
    write_atomic(path, s);
}

FitResult with_field(FitResult fit, double b_field_t) {
    fit.set_meta("b_field_t", b_field_t);
    return fit;
}

// Pulsed analysis of one records file. Returns the number of fits written.
int analyze_records(const fs::path& file, Basis pump, const BasisPair& pair, const RunConfig& cfg,
                    const fs::path& out_dir, const CommandIo& io, std::vector<std::string>& dop_files) {
    const auto recs = parse_records_csv(read_text(file), file.string());
    if (recs.empty()) {
        throw ValidationError(fmt::format("{}: no records", file.string()));
    }
    const std::string tag = fmt::format("{}_{}", to_char(pump), pair_to_string(pair));
    const Histogram co = build_histogram(recs, cfg.histogram_bin_ps, 0.0, cfg.histogram_end_ps, pair.co);
    const Histogram cross = build_histogram(recs, cfg.histogram_bin_ps, 0.0, cfg.histogram_end_ps, pair.cross);
    write_atomic(out_dir / fmt::format("hist_{}_{}.csv", to_char(pump), to_char(pair.co)), format_histogram_csv(co));
    write_atomic(out_dir / fmt::format("hist_{}_{}.csv", to_char(pump), to_char(pair.cross)),
                 format_histogram_csv(cross));
    const DopTrace dop = dop_trace(co, cross);
    const std::string dop_name = fmt::format("dop_{}.csv", tag);
    write_atomic(out_dir / dop_name, format_dop_csv(dop));
    dop_files.push_back(dop_name);

    const double b = cfg.experiment == Experiment::pulsed_x0 ? 0.0 : cfg.trion.b_field_t;
    int written = 0;
    try {
        Histogram both = co;
        both.merge(cross);
        const FitResult life = fit_exponential_lifetime(both, {cfg.lifetime_fit_start_ps, cfg.histogram_end_ps});
        write_atomic(out_dir / fmt::format("fit_lifetime_{}.txt", tag), format_fit_result(with_field(life, b)));
        ++written;
    } catch (const std::exception& e) {
        fmt::print(io.err, "{}: lifetime fit failed: {}\n", tag, e.what());
    }
    try {
        CosineOptions opts;
        opts.fit_phase = cfg.dop_fit_phase;
        opts.window_ps = std::pair{cfg.dop_fit_start_ps, cfg.dop_fit_end_ps};
        const FitResult fit = fit_damped_cosine(dop, CosineForm::pulsed, {}, opts);
        for (const auto& w : fit.warnings) {
            fmt::print(io.err, "{}: {}\n", tag, w);
        }
        write_atomic(out_dir / fmt::format("fit_dop_{}.txt", tag), format_fit_result(with_field(fit, b)));
        ++written;
    } catch (const std::exception& e) {
        fmt::print(io.err, "{}: DOP fit failed: {}\n", tag, e.what());
    }
    return written;
}

int analyze_tags(const fs::path& file, const RunConfig& cfg, const fs::path& out_dir, const CommandIo& io) {
    auto tags = parse_tags_csv(read_text(file), file.string());
    if (tags.empty()) {
        throw ValidationError(fmt::format("{}: no records", file.string()));
    }
    std::sort(tags.begin(), tags.end());
    const double fe = splitting_to_frequency_ghz(cfg.trion.electron_splitting_uev());
    const double fh = splitting_to_frequency_ghz(cfg.trion.hole_splitting_uev());
    std::vector<std::pair<std::string, double>> guesses;
    if (fe > 0.0) {
        guesses.emplace_back("electron", fe);
    }
    if (fh > 0.0) {
        guesses.emplace_back("hole", fh);
    }
    const G2Analysis a = analyze_g2(tags, guesses, cfg.g2);
    write_atomic(out_dir / "g2_raw.csv", format_trace_csv(a.raw));
    write_atomic(out_dir / "g2_normalized.csv", format_trace_csv(a.normalized.trace));
    write_atomic(out_dir / "g2_folded.csv", format_trace_csv(a.folded));
    write_atomic(out_dir / "spectrum.csv", format_spectrum_csv(a.spectrum));
    write_atomic(out_dir / "fit_dip.txt", format_fit_result(a.normalized.dip_fit));
    for (const auto& w : a.normalized.warnings) {
        fmt::print(io.err, "warning: {}\n", w);
    }
    int written = 0;
    std::vector<std::string> comp_files;
    for (const auto& c : a.components) {
        if (!c.fit) {
            fmt::print(io.err, "{} at {} T: {}\n", c.label, format_number(cfg.trion.b_field_t), c.failure);
            continue;
        }
        const std::string comp = fmt::format("component_{}.csv", c.label);
        write_atomic(out_dir / comp, format_trace_csv(c.isolated->trace));
        comp_files.push_back(comp);
        FitResult fit = with_field(*c.fit, cfg.trion.b_field_t);
        fit.set_meta("peak_center_ghz", c.isolated->peak_fit.value("center_ghz"));
        fit.set_meta("peak_sigma_ghz", c.isolated->peak_fit.value("sigma_ghz"));
        write_atomic(out_dir / fmt::format("fit_{}.txt", c.label), format_fit_result(fit));
        ++written;
    }
    if (io.gnuplot) {
        write_gnuplot(out_dir / "plot_g2.gp", "delay (ps)", "g2", {"g2_normalized.csv"}, "1:2");
        write_gnuplot(out_dir / "plot_spectrum.gp", "frequency (GHz)", "|F|", {"spectrum.csv"},
                      "1:(sqrt($2**2+$3**2))");
        if (!comp_files.empty()) {
            write_gnuplot(out_dir / "plot_components.gp", "delay (ps)", "filtered g2", comp_files, "1:2");
        }
    }
    return written;
}

int analyze_single(const fs::path& input, const RunConfig& cfg, const fs::path& out_dir, const CommandIo& io) {
    if (cfg.experiment == Experiment::cw_g2) {
        const fs::path file = fs::is_directory(input) ? input / "tags.csv" : input;
        return analyze_tags(file, cfg, out_dir, io);
    }
    std::vector<std::string> dop_files;
    int written = 0;
    if (!fs::is_directory(input)) {
        // records_<pump>_<pair>.csv
        const std::string stem = input.stem().string();
        if (stem.size() != 12 || stem.rfind("records_", 0) != 0) {
            throw ValidationError(fmt::format("{}: expected a records_<pump>_<pair>.csv file", input.string()));
        }
        written += analyze_records(input, basis_from_char(stem[8]), pair_from_string(stem.substr(10)), cfg, out_dir,
                                   io, dop_files);
    } else {
        bool any = false;
        for (Basis pump : cfg.pumps) {
            for (const auto& pair : cfg.detection_pairs) {
                const fs::path file = input / records_name(pump, pair);
                if (!fs::exists(file)) {
                    throw ValidationError(fmt::format("{}: missing record file", file.string()));
                }
                any = true;
                written += analyze_records(file, pump, pair, cfg, out_dir, io, dop_files);
            }
        }
        if (!any) {
            throw ValidationError(fmt::format("{}: no records", input.string()));
        }
    }
    if (io.gnuplot) {
        write_gnuplot(out_dir / "plot_dop.gp", "time (ps)", "DOP", dop_files, "1:2");
    }
    return written;
}

std::string gfactor_report(const GFactorResult& g) {
    std::string s = format_fit_result(g.fit);
    s += fmt::format("# weighted: {}\n", g.weighted ? "true" : "false");
    s += "# b_field_t,splitting_uev,predicted_uev,residual_uev,pull,outlier\n";
    for (const auto& r : g.residuals) {
        s += fmt::format("# {},{},{},{},{},{}\n", format_number(r.b_field_t), format_number(r.splitting_uev),
                         format_number(r.predicted_uev), format_number(r.residual_uev), format_number(r.pull),
                         r.outlier ? "true" : "false");
    }
    return s;
}

std::string residuals_csv(const GFactorResult& g) {
    std::string s = "b_field_t,splitting_uev,predicted_uev,residual_uev,pull,outlier\n";
    for (const auto& r : g.residuals) {
        s += fmt::format("{},{},{},{},{},{}\n", format_number(r.b_field_t), format_number(r.splitting_uev),
                         format_number(r.predicted_uev), format_number(r.residual_uev), format_number(r.pull),
                         r.outlier ? 1 : 0);
    }
    return s;
}

GFactorResult gfactor_from_files(const std::vector<fs::path>& files, bool weighted) {
    std::vector<GFactorPoint> pts;
    for (const auto& f : files) {
        const FitResult fit = parse_fit_result(read_text(f), f.string());
        const auto b = fit.get_meta("b_field_t");
        if (!b) {
            throw ValidationError(fmt::format("{}: missing B metadata (meta.b_field_t)", f.string()));
        }
        if (!fit.has("splitting_uev")) {
            throw ValidationError(fmt::format("{}: no splitting_uev parameter", f.string()));
        }
        pts.push_back({*b, fit.value("splitting_uev"), fit.error("splitting_uev")});
    }
    if (pts.size() < 2) {
        throw ValidationError("g-factor fit needs at least 2 fit results");
    }
    return gfactor_fit(pts, weighted);
}

} // namespace

void cmd_simulate(const RunConfig& config, const CommandIo& io) {
    config.validate();
    if (config.experiment != Experiment::sweep_b) {
        simulate_single(config, io, io.threads);
        fmt::print(io.out, "wrote {}\n", config.output.string());
        return;
    }
    const std::size_t n = config.b_fields_mt.size();
    const unsigned workers = std::min<unsigned>(io.threads, static_cast<unsigned>(n));
    const unsigned inner = std::max(1u, io.threads / std::max(1u, workers));
    run_parallel(n, workers, [&](std::size_t i) {
        const RunConfig c = field_config(config, i);
        c.validate();
        simulate_single(c, io, inner);
    });
    write_atomic(config.output / "manifest.cfg", format_manifest(config));
    fmt::print(io.out, "wrote {} field runs under {}\n", n, config.output.string());
}

bool cmd_analyze(const fs::path& input, const RunConfig& config, const fs::path& out_dir, const CommandIo& io) {
    if (!fs::exists(input)) {
        throw ValidationError(fmt::format("{}: no such file or directory", input.string()));
    }
    write_atomic(out_dir / "manifest.cfg", format_manifest(config));
    if (config.experiment != Experiment::sweep_b) {
        const int n = analyze_single(input, config, out_dir, io);
        fmt::print(io.out, "wrote {} fit(s) to {}\n", n, out_dir.string());
        return n > 0;
    }
    const std::size_t n = config.b_fields_mt.size();
    std::vector<int> written(n, 0);
    std::mutex err_mutex;
    run_parallel(n, io.threads, [&](std::size_t i) {
        const std::string sub = field_dir_name(config.b_fields_mt[i]);
        RunConfig c = field_config(config, i);
        const fs::path manifest = input / sub / "manifest.cfg";
        if (fs::exists(manifest)) {
            c = load_run_config(manifest);
        }
        std::ostringstream err;
        CommandIo local{io.out, err, 1, io.gnuplot};
        written[i] = analyze_single(input / sub, c, out_dir / sub, local);
        std::lock_guard lock(err_mutex);
        io.err << err.str();
    });

    // One regression per fitted label across the fields.
    std::map<std::string, std::vector<fs::path>> by_label;
    for (std::size_t i = 0; i < n; ++i) {
        const fs::path dir = out_dir / field_dir_name(config.b_fields_mt[i]);
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("fit_", 0) != 0 || entry.path().extension() != ".txt" || name == "fit_dip.txt" ||
                name.rfind("fit_lifetime_", 0) == 0) {
                continue;
            }
            by_label[name.substr(4, name.size() - 8)].push_back(entry.path());
        }
    }
    int total = std::accumulate(written.begin(), written.end(), 0);
    for (auto& [label, files] : by_label) {
        std::sort(files.begin(), files.end());
        if (files.size() < 2) {
            fmt::print(io.err, "{}: fewer than 2 fields fitted; no g-factor\n", label);
            continue;
        }
        try {
            const GFactorResult g = gfactor_from_files(files, config.gfactor_weighted);
            write_atomic(out_dir / fmt::format("gfactor_{}.txt", label), gfactor_report(g));
            write_atomic(out_dir / fmt::format("gfactor_{}_residuals.csv", label), residuals_csv(g));
            fmt::print(io.out, "{}: |g| = {} ± {} from {} fields\n", label, format_number(g.fit.value("g")),
                       format_number(g.fit.error("g")), g.residuals.size());
        } catch (const std::exception& e) {
            fmt::print(io.err, "{}: g-factor fit failed: {}\n", label, e.what());
        }
    }
    fmt::print(io.out, "wrote {} fit(s) to {}\n", total, out_dir.string());
    return total > 0;
}

void cmd_gfactor(const std::vector<fs::path>& files, bool weighted, const std::optional<fs::path>& report_path,
                 const CommandIo& io) {
    const GFactorResult g = gfactor_from_files(files, weighted);
    const std::string report = gfactor_report(g);
    io.out << report;
    if (report_path) {
        write_atomic(*report_path, report);
    }
}

namespace {

RunConfig config_from_flags(const std::string& config_path, const std::string& preset, std::optional<std::uint64_t> seed,
                            const std::string& out) {
    if (!config_path.empty() && !preset.empty()) {
        throw ValidationError("--config and --preset are mutually exclusive");
    }
    RunConfig cfg;
    if (!config_path.empty()) {
        cfg = load_run_config(config_path);
    } else if (!preset.empty()) {
        const auto text = find_preset(preset);
        if (!text) {
            throw ValidationError(fmt::format("unknown preset '{}'", preset));
        }
        cfg = parse_run_config(*text, "preset " + preset);
    } else {
        throw ValidationError("one of --config or --preset is required");
    }
    if (seed) {
        cfg.seed = *seed;
    }
    if (!out.empty()) {
        cfg.output = out;
    }
    return cfg;
}

void check_format(const std::string& format) {
    if (format != "csv") {
        throw ValidationError(fmt::format("unsupported --format '{}' (only csv)", format));
    }
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Exciton and trion spin-photon simulator and analysis pipeline", "edl"};
    app.require_subcommand(1);

    std::string config_path, preset_name, out_dir, format = "csv";
    std::optional<std::uint64_t> seed;
    bool gnuplot = false;
    bool unweighted = false;
    std::string input;
    std::vector<std::string> fit_files;
    std::string show_name;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration file");
        sub->add_option("--preset", preset_name, "built-in configuration (see `edl preset list`)");
        sub->add_option("--seed", seed, "override the configured seed");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--format", format, "output format (csv)");
        sub->add_flag("--gnuplot", gnuplot, "also write gnuplot scripts");
    };
    CLI::App* simulate = app.add_subcommand("simulate", "generate photon records or time tags");
    add_common(simulate);
    CLI::App* analyze = app.add_subcommand("analyze", "run the extraction pipeline on simulate output");
    add_common(analyze);
    analyze->add_option("input", input, "simulate output directory or CSV file")->required();
    CLI::App* gfactor = app.add_subcommand("gfactor", "linear g-factor fit over FitResult files");
    gfactor->add_option("fits", fit_files, "FitResult files with meta.b_field_t")->required();
    gfactor->add_option("--out", out_dir, "directory for gfactor_report.txt");
    gfactor->add_flag("--unweighted", unweighted, "ignore per-point errors");
    CLI::App* preset = app.add_subcommand("preset", "list or print built-in configurations");
    preset->require_subcommand(1);
    CLI::App* preset_list = preset->add_subcommand("list", "list preset names");
    CLI::App* preset_show = preset->add_subcommand("show", "print a preset");
    preset_show->add_option("name", show_name)->required();

    std::vector<std::string> argv_store{"edl"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) {
        argv.push_back(a.data());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    CommandIo io{out, err, thread_budget(), gnuplot};
    try {
        if (simulate->parsed()) {
            check_format(format);
            cmd_simulate(config_from_flags(config_path, preset_name, seed, out_dir), io);
            return 0;
        }
        if (analyze->parsed()) {
            check_format(format);
            RunConfig cfg;
            const fs::path in = input;
            if (config_path.empty() && preset_name.empty()) {
                const fs::path manifest = fs::is_directory(in) ? in / "manifest.cfg" : in.parent_path() / "manifest.cfg";
                if (!fs::exists(manifest)) {
                    throw ValidationError(fmt::format("{} not found; pass --config", manifest.string()));
                }
                cfg = load_run_config(manifest);
            } else {
                cfg = config_from_flags(config_path, preset_name, seed, "");
            }
            const fs::path dest = out_dir.empty() ? (fs::is_directory(in) ? in : in.parent_path()) / "analysis" : fs::path(out_dir);
            return cmd_analyze(in, cfg, dest, io) ? 0 : 2;
        }
        if (gfactor->parsed()) {
            std::vector<fs::path> files(fit_files.begin(), fit_files.end());
            std::optional<fs::path> report;
            if (!out_dir.empty()) {
                report = fs::path(out_dir) / "gfactor_report.txt";
            }
            cmd_gfactor(files, !unweighted, report, io);
            return 0;
        }
        if (preset_list->parsed()) {
            for (const auto& p : presets()) {
                fmt::print(out, "{}\n", p.name);
            }
            return 0;
        }
        if (preset_show->parsed()) {
            const auto text = find_preset(show_name);
            if (!text) {
                throw ValidationError(fmt::format("unknown preset '{}'", show_name));
            }
            out << *text;
            return 0;
        }
    } catch (const ValidationError& e) {
        fmt::print(err, "error: {}\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        fmt::print(err, "error: {}\n", e.what());
        return 2;
    }
    return 1;
}

} // namespace edl
