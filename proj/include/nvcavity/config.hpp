#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nvcavity/axisinversion.hpp"
#include "nvcavity/modesolver.hpp"
#include "nvcavity/nvodmr.hpp"

namespace nvcavity {

struct SolverConfig {
    double resolution = 0.5e-3;
    int mode_count = 8;
    double window_lo = 1e9; // informational frequency window for reports
    double window_hi = 4e9;
    double tolerance = 1e-9;
};

struct OdmrConfig {
    double drive_power = 1e-6;                  // W
    double start = 2.80e9;                      // Hz
    double stop = 2.94e9;                       // Hz
    int points = 401;
    double noise_sigma = 0.0;
    std::uint64_t seed = 1;
    int fit_lines = 1;
    std::array<double, 3> position{7e-3, 0.0, 1e-3}; // x, y, z_offset (m)
    std::optional<std::string> import_csv;
};

struct ScanConfig {
    double start = -12e-3;
    double stop = 12e-3;
    double step = 1e-3;
    double z_offset = 1e-3;
    char axis = 'x';
    double drive_power = 1e-6; // W
    bool normalize = true;
};

struct FieldmapConfig {
    std::vector<double> z_offsets{1e-3};
    double radial_step = 0.0; // 0 = grid resolution
};

struct TuneConfig {
    double depth_start = 0.0;
    double depth_stop = -1.0; // -1 = full travel
    double depth_step = 0.25e-3;
    int mode_n = 1;
    int mode_p = 2;
    std::optional<double> target = 2.87e9; // Hz, for the plunger search
};

struct InvertConfig {
    std::string method = "closed_form"; // or "least_squares"
    ThreePointMeasurement measurement;
    std::vector<std::pair<double, double>> extra_points; // (phi rad, contrast)
    bool measurement_present = false;
    double z_offset = 1e-3;      // simulated-protocol options
    double drive_power = 1e-8;   // W
    bool simulate = false;       // derive the measurement from the solved mode
};

struct CalibrateConfig {
    std::vector<CalibrationTarget> targets{{1, 1, 2.2e9}, {1, 2, 2.7e9}};
    std::vector<FreeParam> free_params{FreeParam::RelativePermittivity, FreeParam::RingTop};
    int max_sweeps = 50;
    double ring_top_max = 16e-3;
    double resolution = 0.5e-3;
};

/// Full run configuration. Parsing is fail-closed: unknown keys anywhere in
/// the file are an error. Lengths are millimeters in the file and meters
/// here; powers accept "<x>dBm" / "<x>W" strings or plain watts.
struct RunConfig {
    CavityGeometry geometry;
    SolverConfig solver;
    NVCenter nv;
    OdmrConfig odmr;
    ScanConfig scan;
    FieldmapConfig fieldmap;
    TuneConfig tune;
    InvertConfig invert;
    CalibrateConfig calibrate;
    std::string output_directory = "out";
};

[[nodiscard]] RunConfig load_config(const std::filesystem::path& path);
[[nodiscard]] RunConfig parse_config(const std::string& json_text);

/// "<x>dBm", "<x>W", "<x>mW" or a plain number (watts).
[[nodiscard]] double parse_power(const std::string& text);

/// Geometry section serialized back to config JSON (millimeters).
[[nodiscard]] std::string geometry_to_json(const CavityGeometry& g);

} // namespace nvcavity
