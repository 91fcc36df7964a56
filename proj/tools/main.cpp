// Command-line front end: one subcommand per exported artifact family.
//   modes      -> modes.csv + per-mode field grids
//   tune       -> tuning.csv
//   fieldmap   -> plane_<offset>mm.csv per configured offset
//   odmr       -> spectrum.csv + fit.csv
//   scan       -> scan.csv
//   invert-axis-> candidates.csv
//   calibrate  -> calibrated_geometry.json + calibration.csv
// Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 infeasible measurement.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "nvcavity/axisinversion.hpp"
#include "nvcavity/config.hpp"
#include "nvcavity/csv.hpp"
#include "nvcavity/fieldmap.hpp"
#include "nvcavity/modesolver.hpp"
#include "nvcavity/nvodmr.hpp"

namespace fs = std::filesystem;
using namespace nvcavity;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitInfeasible = 4;

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int jobs = static_cast<int>(std::thread::hardware_concurrency());
};

fs::path prepare_out_dir(const GlobalArgs& args, const RunConfig& cfg) {
    const fs::path dir = args.out_dir.empty() ? fs::path(cfg.output_directory)
                                              : fs::path(args.out_dir);
    fs::create_directories(dir);
    return dir;
}

SolverOptions solver_options(const RunConfig& cfg) {
    SolverOptions opt;
    opt.tolerance = cfg.solver.tolerance;
    return opt;
}

std::vector<double> scan_radii(const ModeSolution& mode, double step) {
    const double rmax = mode.grid.r_of(mode.grid.nr - 1);
    if (step <= 0.0) step = mode.grid.dr;
    std::vector<double> radii;
    for (double r = 0.0; r <= rmax + 1e-12; r += step) radii.push_back(std::min(r, rmax));
    return radii;
}

int cmd_modes(const GlobalArgs& args, const RunConfig& cfg) {
    const fs::path dir = prepare_out_dir(args, cfg);
    const auto modes =
        solve_te0_modes(cfg.geometry, cfg.solver.resolution, cfg.solver.mode_count,
                        solver_options(cfg));
    std::vector<std::vector<double>> rows;
    for (size_t k = 0; k < modes.size(); ++k)
        rows.push_back({static_cast<double>(k), static_cast<double>(modes[k].n_radial),
                        static_cast<double>(modes[k].p_axial), modes[k].frequency / 1e9});
    write_csv_atomic(dir / "modes.csv", "index,n,p,frequency_ghz", rows);

    for (size_t k = 0; k < modes.size(); ++k) {
        const auto& m = modes[k];
        std::vector<std::vector<double>> grid_rows;
        grid_rows.reserve(m.grid.size());
        for (int j = 0; j < m.grid.nz; ++j)
            for (int i = 0; i < m.grid.nr; ++i)
                grid_rows.push_back({m.grid.r_of(i) * 1e3, m.grid.z_of(j) * 1e3,
                                     m.e_theta[m.grid.index(i, j)], m.h_r[m.grid.index(i, j)],
                                     m.h_z[m.grid.index(i, j)]});
        char name[64];
        std::snprintf(name, sizeof name, "mode_%02zu_fields.csv", k);
        write_csv_atomic(dir / name, "r_mm,z_mm,e_theta,h_r,h_z", grid_rows);
    }
    std::cout << "wrote " << (dir / "modes.csv").string() << " (" << modes.size() << " modes)\n";
    return kExitOk;
}

int cmd_tune(const GlobalArgs& args, const RunConfig& cfg) {
    const fs::path dir = prepare_out_dir(args, cfg);
    const double maxd = cfg.geometry.max_plunger_depth();
    const double stop = cfg.tune.depth_stop < 0.0 ? maxd : cfg.tune.depth_stop;
    std::vector<double> depths;
    const int n_steps = static_cast<int>(
        std::floor((stop - cfg.tune.depth_start) / cfg.tune.depth_step + 1e-9));
    for (int k = 0; k <= n_steps; ++k)
        depths.push_back(std::min(cfg.tune.depth_start + k * cfg.tune.depth_step, maxd));
    if (depths.empty() || depths.back() < stop - 1e-12) depths.push_back(std::min(stop, maxd));

    const auto curve = tuning_curve(cfg.geometry, depths, {cfg.tune.mode_n, cfg.tune.mode_p},
                                    cfg.solver.resolution, args.jobs, solver_options(cfg));
    std::vector<std::vector<double>> rows;
    for (const auto& pt : curve) rows.push_back({pt.depth * 1e3, pt.frequency / 1e9});
    write_csv_atomic(dir / "tuning.csv", "depth_mm,frequency_ghz", rows);
    std::cout << "wrote " << (dir / "tuning.csv").string() << " [" << curve.front().frequency / 1e9
              << ", " << curve.back().frequency / 1e9 << "] GHz\n";

    if (cfg.tune.target) {
        const double depth =
            find_plunger_for_frequency(cfg.geometry, *cfg.tune.target,
                                       {cfg.tune.mode_n, cfg.tune.mode_p}, cfg.solver.resolution,
                                       args.jobs, solver_options(cfg));
        write_csv_atomic(dir / "plunger_target.csv", "target_ghz,depth_mm",
                         {{*cfg.tune.target / 1e9, depth * 1e3}});
        std::cout << "target " << *cfg.tune.target / 1e9 << " GHz at depth " << depth * 1e3
                  << " mm\n";
    }
    return kExitOk;
}

ModeSolution solve_working_mode(const RunConfig& cfg, int jobs) {
    (void)jobs;
    const auto modes = solve_te0_modes(cfg.geometry, cfg.solver.resolution, cfg.solver.mode_count,
                                       solver_options(cfg));
    for (const auto& m : modes)
        if (m.n_radial == cfg.tune.mode_n && m.p_axial == cfg.tune.mode_p) return m;
    throw ModeTrackingLost("configured working mode not found among the solved modes");
}

int cmd_fieldmap(const GlobalArgs& args, const RunConfig& cfg) {
    const fs::path dir = prepare_out_dir(args, cfg);
    const ModeSolution mode = solve_working_mode(cfg, args.jobs);
    for (const double z : cfg.fieldmap.z_offsets) {
        const auto radii = scan_radii(mode, cfg.fieldmap.radial_step);
        const FieldPlane plane = sample_plane(mode, z, radii);
        std::vector<std::vector<double>> rows;
        for (size_t k = 0; k < radii.size(); ++k)
            rows.push_back({radii[k] * 1e3, plane.h_r[k], plane.h_z[k], plane.normalized_h_r[k],
                            plane.normalized_h_z[k]});
        char name[64];
        std::snprintf(name, sizeof name, "plane_%gmm.csv", z * 1e3);
        write_csv_atomic(dir / name, "r_mm,h_r,h_z,norm_h_r,norm_h_z", rows);
        std::cout << "wrote " << (dir / name).string() << "\n";
    }
    return kExitOk;
}

int cmd_odmr(const GlobalArgs& args, const RunConfig& cfg) {
    const fs::path dir = prepare_out_dir(args, cfg);
    ODMRSpectrum spectrum;
    if (cfg.odmr.import_csv) {
        spectrum = read_spectrum_csv(*cfg.odmr.import_csv);
    } else {
        const ModeSolution mode = solve_working_mode(cfg, args.jobs);
        const auto field = field_at(mode, cfg.odmr.position[0], cfg.odmr.position[1],
                                    cfg.odmr.position[2]);
        std::vector<double> freqs(cfg.odmr.points);
        for (int k = 0; k < cfg.odmr.points; ++k)
            freqs[k] = cfg.odmr.start +
                       (cfg.odmr.stop - cfg.odmr.start) * k / (cfg.odmr.points - 1);
        const std::uint64_t seed = args.seed.value_or(cfg.odmr.seed);
        spectrum = synthesize_spectrum(cfg.nv, field, cfg.odmr.drive_power, freqs,
                                       cfg.odmr.noise_sigma, seed);
        std::vector<std::vector<double>> rows;
        for (size_t k = 0; k < spectrum.frequencies.size(); ++k)
            rows.push_back({spectrum.frequencies[k] / 1e9, spectrum.fluorescence[k]});
        write_csv_atomic(dir / "spectrum.csv", "frequency_ghz,fluorescence", rows);
        std::cout << "wrote " << (dir / "spectrum.csv").string() << "\n";
    }

    const FitResult fit = fit_odmr(spectrum, cfg.odmr.fit_lines);
    std::vector<std::vector<double>> fit_rows;
    for (size_t k = 0; k < fit.centers.size(); ++k)
        fit_rows.push_back({static_cast<double>(k), fit.centers[k] / 1e9, fit.fwhm / 1e6,
                            fit.contrast, fit.baseline, fit.rms_residual,
                            fit.low_significance ? 1.0 : 0.0});
    write_csv_atomic(dir / "fit.csv",
                     "line,center_ghz,fwhm_mhz,contrast,baseline,rms_residual,low_significance",
                     fit_rows);
    std::cout << "fit: contrast " << fit.contrast << ", fwhm " << fit.fwhm / 1e6 << " MHz\n";
    return kExitOk;
}

int cmd_scan(const GlobalArgs& args, const RunConfig& cfg) {
    const fs::path dir = prepare_out_dir(args, cfg);
    const ModeSolution mode = solve_working_mode(cfg, args.jobs);
    std::vector<std::array<double, 3>> path;
    const int n_steps =
        static_cast<int>(std::lround((cfg.scan.stop - cfg.scan.start) / cfg.scan.step));
    for (int k = 0; k <= n_steps; ++k) {
        const double s = cfg.scan.start + k * cfg.scan.step;
        if (cfg.scan.axis == 'x') path.push_back({s, 0.0, cfg.scan.z_offset});
        else path.push_back({0.0, s, cfg.scan.z_offset});
    }
    const ContrastScan scan =
        contrast_scan(mode, cfg.nv, path, cfg.scan.drive_power, cfg.scan.normalize);
    std::vector<std::vector<double>> rows;
    for (size_t k = 0; k < scan.positions.size(); ++k)
        rows.push_back({scan.positions[k] * 1e3, scan.contrasts[k]});
    write_csv_atomic(dir / "scan.csv", "position_mm,contrast", rows);
    std::cout << "wrote " << (dir / "scan.csv").string() << "\n";
    return kExitOk;
}

int cmd_invert_axis(const GlobalArgs& args, const RunConfig& cfg) {
    const fs::path dir = prepare_out_dir(args, cfg);
    AxisCandidateSet set;
    std::vector<std::string> notes;
    if (cfg.invert.simulate) {
        const ModeSolution mode = solve_working_mode(cfg, args.jobs);
        const EndToEndResult e2e =
            end_to_end_axis_recovery(mode, cfg.nv, cfg.invert.z_offset, cfg.invert.drive_power);
        set = e2e.recovered;
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "simulated protocol: radius %.3f mm, rho %.6f, nearest error %.4f deg",
                      e2e.protocol_radius * 1e3, e2e.rho, e2e.nearest_error * 180.0 / M_PI);
        notes.emplace_back(buf);
    } else if (cfg.invert.method == "least_squares" || !cfg.invert.extra_points.empty()) {
        set = invert_axis_least_squares(cfg.invert.measurement, cfg.invert.extra_points);
    } else {
        set = invert_axis_closed_form(cfg.invert.measurement);
    }
    notes.push_back("gauge: " + set.gauge_note);
    std::vector<std::vector<double>> rows;
    for (const auto& c : set.candidates) rows.push_back({c[0], c[1], c[2], set.residual});
    write_csv_atomic(dir / "candidates.csv", "nx,ny,nz,residual", rows, notes);
    std::cout << "wrote " << (dir / "candidates.csv").string() << " (" << set.candidates.size()
              << " candidates)\n";
    return kExitOk;
}

int cmd_calibrate(const GlobalArgs& args, const RunConfig& cfg) {
    const fs::path dir = prepare_out_dir(args, cfg);
    CalibrationOptions opt;
    opt.resolution = cfg.calibrate.resolution;
    opt.max_sweeps = cfg.calibrate.max_sweeps;
    opt.ring_top_max = cfg.calibrate.ring_top_max;
    const CalibrationResult result =
        calibrate_geometry(cfg.geometry, cfg.calibrate.targets, cfg.calibrate.free_params, opt);

    const fs::path geo_path = dir / "calibrated_geometry.json";
    const fs::path tmp = geo_path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << geometry_to_json(result.geometry) << "\n";
    }
    fs::rename(tmp, geo_path);

    std::vector<std::vector<double>> rows;
    for (size_t k = 0; k < cfg.calibrate.targets.size(); ++k)
        rows.push_back({static_cast<double>(cfg.calibrate.targets[k].n),
                        static_cast<double>(cfg.calibrate.targets[k].p),
                        cfg.calibrate.targets[k].frequency / 1e9, result.achieved[k] / 1e9,
                        result.residuals[k]});
    write_csv_atomic(dir / "calibration.csv", "n,p,target_ghz,achieved_ghz,residual", rows);
    std::cout << "wrote " << geo_path.string() << " (objective " << result.objective << ", "
              << result.sweeps << " sweeps)\n";
    for (size_t k = 0; k < result.residuals.size(); ++k)
        std::cout << "  target (" << cfg.calibrate.targets[k].n << ","
                  << cfg.calibrate.targets[k].p << "): achieved " << result.achieved[k] / 1e9
                  << " GHz, residual " << result.residuals[k] * 100.0 << "%\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Axisymmetric dielectric-cavity mode solver with NV ODMR modeling"};
    app.require_subcommand(1);

    GlobalArgs args;
    app.add_option("--config", args.config_path, "JSON run configuration")->required();
    app.add_option("--out", args.out_dir, "output directory (overrides output.directory)");
    std::uint64_t seed_value = 0;
    const auto seed_opt = app.add_option("--seed", seed_value, "noise seed (overrides odmr.seed)");
    app.add_option("--jobs", args.jobs, "worker cap for parallel solves");

    const auto add = [&](const char* name, const char* help, const char* keys) {
        auto* sub = app.add_subcommand(name, std::string(help) + "\nConfig keys: " + keys);
        sub->fallthrough(); // global flags may follow the subcommand
        return sub;
    };
    auto* modes = add("modes", "solve and export the lowest TE0 modes",
                      "geometry.*, solver.resolution_mm, solver.mode_count, solver.tolerance, "
                      "output.directory");
    auto* tune = add("tune", "plunger tuning curve of the selected mode",
                     "geometry.*, solver.*, tune.depth_start_mm, tune.depth_stop_mm, "
                     "tune.depth_step_mm, tune.mode_n, tune.mode_p, tune.target_ghz, "
                     "output.directory");
    auto* fieldmap = add("fieldmap", "evanescent-field planes below the cavity",
                         "geometry.*, solver.*, tune.mode_n, tune.mode_p, "
                         "fieldmap.z_offsets_mm, fieldmap.radial_step_mm, output.directory");
    auto* odmr = add("odmr", "synthesize and fit an ODMR spectrum",
                     "geometry.*, solver.*, tune.mode_n, tune.mode_p, nv.*, odmr.drive_power, "
                     "odmr.start_ghz, odmr.stop_ghz, odmr.points, odmr.noise_sigma, odmr.seed, "
                     "odmr.fit_lines, odmr.position_mm, odmr.import_csv, output.directory");
    auto* scan = add("scan", "ODMR contrast versus lateral position",
                     "geometry.*, solver.*, tune.mode_n, tune.mode_p, nv.*, scan.start_mm, "
                     "scan.stop_mm, scan.step_mm, scan.z_offset_mm, scan.axis, scan.drive_power, "
                     "scan.normalize, output.directory");
    auto* invert = add("invert-axis", "recover the NV axis from three-point contrasts",
                       "invert.method, invert.measurement.*, invert.extra_points, "
                       "invert.simulate, invert.z_offset_mm, invert.drive_power, nv.* and "
                       "geometry.*/solver.*/tune.mode_* when simulate = true, output.directory");
    auto* calibrate = add("calibrate", "fit free geometry parameters to target mode frequencies",
                          "geometry.*, calibrate.targets, calibrate.free_params, "
                          "calibrate.max_sweeps, calibrate.ring_top_max_mm, "
                          "calibrate.resolution_mm, output.directory");

    CLI11_PARSE(app, argc, argv);

    RunConfig cfg;
    try {
        cfg = load_config(args.config_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    if (seed_opt->count() > 0) args.seed = seed_value;
    if (args.jobs < 1) args.jobs = 1;

    try {
        if (modes->parsed()) return cmd_modes(args, cfg);
        if (tune->parsed()) return cmd_tune(args, cfg);
        if (fieldmap->parsed()) return cmd_fieldmap(args, cfg);
        if (odmr->parsed()) return cmd_odmr(args, cfg);
        if (scan->parsed()) return cmd_scan(args, cfg);
        if (invert->parsed()) return cmd_invert_axis(args, cfg);
        if (calibrate->parsed()) return cmd_calibrate(args, cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const InconsistentMeasurement& e) {
        std::cerr << "infeasible measurement: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const DegenerateRatio& e) {
        std::cerr << "infeasible measurement: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
