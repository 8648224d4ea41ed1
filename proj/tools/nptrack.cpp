#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nptrack/config.hpp"
#include "nptrack/errors.hpp"
#include "nptrack/plant.hpp"
#include "nptrack/util.hpp"
#include "svg_plot.hpp"

namespace fs = std::filesystem;
using namespace nptrack;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string dump_config_path;
};

RunConfig load_config(const GlobalOpts& g) {
    if (g.config_path.empty()) {
        throw ConfigError("--config <file> is required for this command");
    }
    RunConfig cfg = RunConfig::load(g.config_path);
    if (!g.dump_config_path.empty()) {
        cfg.dump(g.dump_config_path);
    }
    return cfg;
}

GeneratedTrack make_track(const RunConfig& cfg) {
    return generate_track(cfg.track.shape, cfg.track.profile, cfg.track.profile_params,
                          cfg.track.gen);
}

void write_track_artifacts(const GeneratedTrack& track, const fs::path& dir) {
    fs::create_directories(dir);
    track.terrain.save(dir / "terrain.nptg");
    track.reference.save_csv(dir / "reference.csv");
    write_map_stats(dir / "map_stats.txt", track.terrain.stats());
}

std::vector<std::uint64_t> run_seeds(const RunConfig& cfg, int seeds_count,
                                     const GlobalOpts& g) {
    if (seeds_count > 0) {
        std::vector<std::uint64_t> seeds(seeds_count);
        for (int i = 0; i < seeds_count; ++i) seeds[i] = static_cast<std::uint64_t>(i);
        return seeds;
    }
    if (g.seed_given) return {g.seed};
    return cfg.run.seeds;
}

int cmd_collect(const GlobalOpts& g, double duration_override) {
    const RunConfig cfg = load_config(g);
    const GeneratedTrack track = make_track(cfg);
    write_track_artifacts(track, g.out_dir);

    const std::uint64_t seed = g.seed_given ? g.seed : cfg.run.seeds.front();
    ClosedLoopConfig cl = cfg.closed_loop(seed);
    cl.excitation_frac = cfg.run.excitation_frac;
    const double duration = duration_override >= 0.0 ? duration_override
                                                     : cfg.run.collect_duration_s;
    cl.max_steps = static_cast<int>(std::floor(duration / cl.mppi.dt));

    ResidualDataset dataset;
    const RunLog log = run_closed_loop(track.reference, track.terrain, ControllerMode::baseline,
                                       cl, nullptr, &dataset);
    const fs::path out = fs::path(g.out_dir) / "dataset.txt";
    dataset.save(out);
    std::cout << "collected " << dataset.size() << " residual pairs over " << log.records.size()
              << " steps (" << log.outliers_rejected << " outliers rejected) -> " << out.string()
              << "\n";
    if (log.departed && log.records.size() < 25) {
        std::cerr << "error: immediate track departure during collection\n";
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_fit_gp(const GlobalOpts& g, const std::string& dataset_path,
               const std::string& model_path) {
    const RunConfig cfg = load_config(g);
    const fs::path ds_path =
        dataset_path.empty() ? fs::path(g.out_dir) / "dataset.txt" : fs::path(dataset_path);
    if (!fs::exists(ds_path)) {
        std::cerr << "error: dataset file '" << ds_path.string() << "' not found\n";
        return kExitUsage;
    }
    const ResidualDataset ds = ResidualDataset::load(ds_path);
    const int m = cfg.gp.num_inducing;
    if (ds.size() < 2 || ds.size() < m) {
        std::cerr << "error: degenerate dataset (" << ds.size() << " rows, need >= "
                  << std::max(2, m) << ")\n";
        return kExitRuntime;
    }

    const std::uint64_t seed = g.seed_given ? g.seed : 0;
    const Eigen::MatrixXd inducing = kmeans_inducing(ds.inputs, m, seed);

    // held-out RMSE on every 5th row, fit on the rest
    std::vector<Eigen::Index> train, held;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        (i % 5 == 4 ? held : train).push_back(i);
    }
    Eigen::MatrixXd ztr(train.size(), 9), zhe(held.size(), 9);
    Eigen::MatrixXd ytr(train.size(), 3), yhe(held.size(), 3);
    for (std::size_t i = 0; i < train.size(); ++i) {
        ztr.row(i) = ds.inputs.row(train[i]);
        ytr.row(i) = ds.targets.row(train[i]);
    }
    for (std::size_t i = 0; i < held.size(); ++i) {
        zhe.row(i) = ds.inputs.row(held[i]);
        yhe.row(i) = ds.targets.row(held[i]);
    }

    auto hyper = cfg.gp.hyper();
    const char* names[3] = {"dv", "dbeta", "dr"};
    std::array<SparseGPHead, 3> heads;
    try {
        for (int h = 0; h < 3; ++h) {
            if (cfg.gp.grid_search) {
                hyper[h] = grid_search_hyper(ds.inputs, ds.targets.col(h), hyper[h], HyperGrid{});
            }
            const SparseGPHead probe =
                SparseGPHead::batch_fit(ztr, ytr.col(h), inducing, hyper[h], cfg.gp.forgetting);
            double se = 0.0;
            for (Eigen::Index i = 0; i < zhe.rows(); ++i) {
                const double err = probe.predict(zhe.row(i).transpose()).mean - yhe(i, h);
                se += err * err;
            }
            const double rmse = zhe.rows() > 0 ? std::sqrt(se / zhe.rows()) : 0.0;
            std::cout << "head " << names[h] << ": held-out RMSE " << format_double(rmse) << "\n";
            // final head uses the full dataset
            heads[h] = SparseGPHead::batch_fit(ds.inputs, ds.targets.col(h), inducing, hyper[h],
                                               cfg.gp.forgetting);
        }
    } catch (const SingularKernelMatrix& e) {
        std::cerr << "error: degenerate dataset: " << e.what() << "\n";
        return kExitRuntime;
    }
    const ResidualModel model(heads[0], heads[1], heads[2]);
    const fs::path out =
        model_path.empty() ? fs::path(g.out_dir) / "model.npgp" : fs::path(model_path);
    fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
    model.save(out);
    std::cout << "wrote " << out.string() << " (M = " << m << ", " << ds.size() << " samples)\n";
    return kExitOk;
}

void write_summary(const fs::path& path, const std::vector<RunSummary>& rows) {
    std::ofstream out(path);
    out << "mode,seed,steps,mean_abs_cte,median_abs_cte,max_abs_cte,lap_completed,departed,"
           "median_solve_ms,frequency_hz\n";
    for (const auto& s : rows) {
        out << s.mode << ',' << s.seed << ',' << s.steps << ',' << format_double(s.mean_abs_cte)
            << ',' << format_double(s.median_abs_cte) << ',' << format_double(s.max_abs_cte) << ','
            << (s.lap_completed ? 1 : 0) << ',' << (s.departed ? 1 : 0) << ','
            << format_double(s.median_solve_ms) << ',' << format_double(s.frequency_hz) << '\n';
    }
}

void write_histogram(const fs::path& path, const std::vector<double>& values, int bins) {
    double lo = 0.0, hi = 1.0;
    if (!values.empty()) {
        hi = *std::max_element(values.begin(), values.end());
        if (!(hi > 0.0)) hi = 1.0;
    }
    std::vector<int> counts(bins, 0);
    for (double v : values) {
        int b = static_cast<int>((v - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++counts[b];
    }
    std::ofstream out(path);
    out << "bin_lo,bin_hi,count\n";
    for (int b = 0; b < bins; ++b) {
        out << format_double(lo + (hi - lo) * b / bins) << ','
            << format_double(lo + (hi - lo) * (b + 1) / bins) << ',' << counts[b] << '\n';
    }
}

int cmd_run(const GlobalOpts& g, std::vector<std::string> modes, int seeds_count,
            const std::string& model_path, int bins) {
    const RunConfig cfg = load_config(g);
    if (modes.empty()) modes = cfg.run.modes;
    const auto seeds = run_seeds(cfg, seeds_count, g);

    const GeneratedTrack track = make_track(cfg);
    write_track_artifacts(track, g.out_dir);

    const bool needs_model = std::any_of(modes.begin(), modes.end(), [](const std::string& m) {
        return mode_from_string(m) != ControllerMode::baseline;
    });
    ResidualModel trained;
    if (needs_model) {
        const fs::path mp =
            model_path.empty() ? fs::path(g.out_dir) / "model.npgp" : fs::path(model_path);
        if (!fs::exists(mp)) {
            std::cerr << "error: model file '" << mp.string()
                      << "' not found (run collect + fit-gp first)\n";
            return kExitUsage;
        }
        trained = ResidualModel::load(mp);
    }

    std::vector<RunSummary> rows;
    std::map<std::string, std::vector<double>> cte_by_mode, freq_by_mode;
    for (const auto& mode_name : modes) {
        const ControllerMode mode = mode_from_string(mode_name);
        for (const std::uint64_t seed : seeds) {
            const ClosedLoopConfig cl = cfg.closed_loop(seed);
            ResidualModel model = trained;  // fresh copy per episode
            const RunLog log =
                run_closed_loop(track.reference, track.terrain, mode, cl,
                                mode == ControllerMode::baseline ? nullptr : &model);
            const fs::path log_path = fs::path(g.out_dir) /
                                      ("run_" + mode_name + "_seed" + std::to_string(seed) + ".csv");
            log.write_csv(log_path);
            const RunSummary s = summarize(log, mode, seed);
            rows.push_back(s);
            for (const auto& r : log.records) {
                cte_by_mode[mode_name].push_back(std::abs(r.cte));
                if (r.solve_ms > 0.0) freq_by_mode[mode_name].push_back(1000.0 / r.solve_ms);
            }
            std::cout << mode_name << " seed " << seed << ": " << s.steps << " steps, mean |cte| "
                      << format_double(s.mean_abs_cte) << " m, "
                      << (s.lap_completed ? "lap completed"
                                          : (s.departed ? "departed" : "step budget"))
                      << ", median solve " << format_double(s.median_solve_ms) << " ms\n";
        }
    }
    write_summary(fs::path(g.out_dir) / "summary.csv", rows);
    for (const auto& [mode_name, values] : cte_by_mode) {
        write_histogram(fs::path(g.out_dir) / ("hist_cte_" + mode_name + ".csv"), values, bins);
    }
    for (const auto& [mode_name, values] : freq_by_mode) {
        write_histogram(fs::path(g.out_dir) / ("hist_freq_" + mode_name + ".csv"), values, bins);
    }
    std::cout << "wrote " << (fs::path(g.out_dir) / "summary.csv").string() << "\n";
    return kExitOk;
}

const char* mode_color(const std::string& mode) {
    if (mode == "baseline") return "#d62728";
    if (mode == "gp") return "#2ca02c";
    return "#1f77b4";  // gp_recursive
}

int cmd_plot(const GlobalOpts& g, int bins) {
    const fs::path dir(g.out_dir);
    struct LogEntry {
        std::string mode;
        std::uint64_t seed;
        RunLog log;
    };
    std::vector<LogEntry> logs;
    if (fs::exists(dir)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string name = e.path().filename().string();
            if (name.rfind("run_", 0) == 0 && e.path().extension() == ".csv") {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::string stem = f.stem().string().substr(4);  // strip "run_"
            const auto pos = stem.rfind("_seed");
            if (pos == std::string::npos) continue;
            LogEntry entry;
            entry.mode = stem.substr(0, pos);
            entry.seed = std::strtoull(stem.substr(pos + 5).c_str(), nullptr, 10);
            entry.log = RunLog::read_csv(f);
            logs.push_back(std::move(entry));
        }
    }
    if (logs.empty()) {
        std::cerr << "error: no run logs (run_*.csv) found in '" << dir.string() << "'\n";
        return kExitUsage;
    }

    // trajectory overlay over the reference
    SvgPlot traj(720, 560, "Trajectories");
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    std::vector<Eigen::Vector2d> ref_pts;
    const fs::path ref_path = dir / "reference.csv";
    if (fs::exists(ref_path)) {
        const ReferenceTrajectory ref = ReferenceTrajectory::load_csv(ref_path);
        ref_pts = ref.points();
    }
    auto grow = [&](const Eigen::Vector2d& p) {
        xmin = std::min(xmin, p.x());
        xmax = std::max(xmax, p.x());
        ymin = std::min(ymin, p.y());
        ymax = std::max(ymax, p.y());
    };
    for (const auto& p : ref_pts) grow(p);
    for (const auto& e : logs) {
        for (const auto& r : e.log.records) grow({r.state.px, r.state.py});
    }
    traj.set_view(xmin - 1, xmax + 1, ymin - 1, ymax + 1, /*equal_aspect=*/true);
    if (!ref_pts.empty()) {
        traj.polyline(ref_pts, "#777777", 1.2, true);
        traj.legend_entry("reference", "#777777");
    }
    std::map<std::string, bool> seen;
    for (const auto& e : logs) {
        std::vector<Eigen::Vector2d> pts;
        pts.reserve(e.log.records.size());
        for (const auto& r : e.log.records) pts.emplace_back(r.state.px, r.state.py);
        traj.polyline(pts, mode_color(e.mode), 1.4);
        if (!seen[e.mode]) {
            traj.legend_entry(e.mode, mode_color(e.mode));
            seen[e.mode] = true;
        }
    }
    traj.axis_labels("x [m]", "y [m]");
    traj.save(dir / "trajectory.svg");

    // cross-track error time series
    SvgPlot cte(720, 360, "Cross-track error");
    double tmax = 0.0, cmin = 0.0, cmax = 0.0;
    for (const auto& e : logs) {
        for (const auto& r : e.log.records) {
            tmax = std::max(tmax, r.t);
            cmin = std::min(cmin, r.cte);
            cmax = std::max(cmax, r.cte);
        }
    }
    cte.set_view(0.0, tmax + 1e-9, cmin - 0.05, cmax + 0.05);
    seen.clear();
    for (const auto& e : logs) {
        std::vector<Eigen::Vector2d> pts;
        for (const auto& r : e.log.records) pts.emplace_back(r.t, r.cte);
        cte.polyline(pts, mode_color(e.mode), 1.1);
        if (!seen[e.mode]) {
            cte.legend_entry(e.mode, mode_color(e.mode));
            seen[e.mode] = true;
        }
    }
    cte.axis_labels("t [s]", "cte [m]");
    cte.save(dir / "cte_timeseries.svg");

    // histograms: |cte| and solve frequency per mode
    auto hist_svg = [&](const std::string& title, const fs::path& out,
                        const std::map<std::string, std::vector<double>>& by_mode,
                        const std::string& xlabel, double marker) {
        double hi = 1.0;
        for (const auto& [mode, vs] : by_mode) {
            for (double v : vs) hi = std::max(hi, v);
        }
        SvgPlot plot(720, 360, title);
        double peak = 1.0;
        std::map<std::string, std::vector<double>> counts;
        for (const auto& [mode, vs] : by_mode) {
            auto& c = counts[mode];
            c.assign(bins, 0.0);
            for (double v : vs) {
                int b = static_cast<int>(v / hi * bins);
                c[std::clamp(b, 0, bins - 1)] += 1.0;
            }
            for (double ci : c) peak = std::max(peak, ci);
        }
        plot.set_view(0.0, hi, 0.0, peak * 1.05);
        std::vector<double> edges(bins + 1);
        for (int b = 0; b <= bins; ++b) edges[b] = hi * b / bins;
        for (const auto& [mode, c] : counts) {
            plot.bars(edges, c, mode_color(mode));
            plot.legend_entry(mode, mode_color(mode));
        }
        if (marker > 0.0) plot.vline(marker, "#d62728");
        plot.axis_labels(xlabel, "count");
        plot.save(out);
    };
    std::map<std::string, std::vector<double>> cte_by_mode, freq_by_mode;
    for (const auto& e : logs) {
        for (const auto& r : e.log.records) {
            cte_by_mode[e.mode].push_back(std::abs(r.cte));
            if (r.solve_ms > 0.0) freq_by_mode[e.mode].push_back(1000.0 / r.solve_ms);
        }
    }
    hist_svg("Absolute cross-track error distribution", dir / "cte_hist.svg", cte_by_mode,
             "|cte| [m]", 0.0);
    hist_svg("Control frequency distribution", dir / "freq_hist.svg", freq_by_mode,
             "frequency [Hz]", 50.0);
    std::cout << "wrote trajectory.svg, cte_timeseries.svg, cte_hist.svg, freq_hist.svg in "
              << dir.string() << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nonplanar vehicle tracking: terrain, GP residual dynamics, MPPI"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "run configuration file (YAML)");
    app.add_option("--out-dir", g.out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", g.seed, "seed override");
    app.add_option("--dump-config", g.dump_config_path,
                   "write the effective config to this path");

    auto* gen = app.add_subcommand("gen-track", "generate terrain, reference path, map stats");
    std::string shape_flag, profile_flag;
    double scale_flag = 0.0, amp_flag = 0.0, bank_flag = 0.0;
    gen->add_option("--shape", shape_flag, "track shape (kidney, l_shape, oval)");
    gen->add_option("--profile", profile_flag, "terrain profile");
    gen->add_option("--scale", scale_flag, "track scale factor");
    gen->add_option("--amp", amp_flag, "sinusoidal_hills amplitude");
    gen->add_option("--bank", bank_flag, "banked_ring bank angle [deg]");

    auto* collect = app.add_subcommand("collect", "drive the plant and log residual pairs");
    double duration_flag = -1.0;
    collect->add_option("--duration", duration_flag, "collection duration [s]");

    auto* fit = app.add_subcommand("fit-gp", "fit the sparse GP residual model");
    std::string dataset_flag, model_out_flag;
    fit->add_option("--dataset", dataset_flag, "dataset file (default <out-dir>/dataset.txt)");
    fit->add_option("--model", model_out_flag, "output model file (default <out-dir>/model.npgp)");

    auto* run = app.add_subcommand("run", "closed-loop tracking runs with summaries");
    std::vector<std::string> mode_flags;
    int seeds_count = 0, bins_flag = 30;
    std::string model_in_flag;
    run->add_option("--mode", mode_flags, "controller mode (repeatable)");
    run->add_option("--seeds", seeds_count, "run seeds 0..N-1");
    run->add_option("--model", model_in_flag, "residual model file for gp modes");
    run->add_option("--bins", bins_flag, "histogram bin count");

    auto* plot = app.add_subcommand("plot", "emit SVG figures from run logs");
    int plot_bins = 30;
    plot->add_option("--bins", plot_bins, "histogram bin count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_name() == "CallForHelp" ? kExitOk : kExitUsage;
    }
    g.seed_given = seed_opt->count() > 0;

    try {
        if (gen->parsed()) {
            // flag overrides on top of the config (config optional here)
            RunConfig cfg;
            if (!g.config_path.empty()) {
                cfg = RunConfig::load(g.config_path);
            } else {
                cfg.track = TrackConfig{};
            }
            if (!shape_flag.empty()) cfg.track.shape = shape_flag;
            if (!profile_flag.empty()) cfg.track.profile = profile_flag;
            if (scale_flag > 0.0) cfg.track.gen.scale = scale_flag;
            if (amp_flag != 0.0) cfg.track.profile_params["amp"] = amp_flag;
            if (bank_flag != 0.0) cfg.track.profile_params["bank_deg"] = bank_flag;
            const GeneratedTrack track =
                generate_track(cfg.track.shape, cfg.track.profile, cfg.track.profile_params,
                               cfg.track.gen);
            write_track_artifacts(track, g.out_dir);
            const auto st = track.terrain.stats();
            std::cout << "track " << cfg.track.shape << " on " << cfg.track.profile
                      << ": length " << format_double(track.reference.length())
                      << " m, elevation range " << format_double(st.elevation_range)
                      << " m, max slope " << format_double(st.max_slope_deg) << " deg\n";
            return kExitOk;
        }
        if (collect->parsed()) return cmd_collect(g, duration_flag);
        if (fit->parsed()) return cmd_fit_gp(g, dataset_flag, model_out_flag);
        if (run->parsed()) return cmd_run(g, mode_flags, seeds_count, model_in_flag, bins_flag);
        if (plot->parsed()) return cmd_plot(g, plot_bins);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UnknownShape& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UnknownProfile& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
