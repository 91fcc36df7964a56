#include "nvcavity/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <algorithm>

#include <json.hpp>

namespace nvcavity {

namespace {

using nlohmann::json;

void require_keys(const json& obj, const std::string& section,
                  const std::set<std::string>& known) {
    for (const auto& [key, _] : obj.items())
        if (!known.count(key))
            throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
}

double get_number(const json& obj, const std::string& key, double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number()) throw ConfigError("key '" + key + "' must be a number");
    return obj[key].get<double>();
}

int get_int(const json& obj, const std::string& key, int fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_integer()) throw ConfigError("key '" + key + "' must be an integer");
    return obj[key].get<int>();
}

bool get_bool(const json& obj, const std::string& key, bool fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_boolean()) throw ConfigError("key '" + key + "' must be a boolean");
    return obj[key].get<bool>();
}

double get_mm(const json& obj, const std::string& key, double fallback_m) {
    return obj.contains(key) ? get_number(obj, key, 0.0) * 1e-3 : fallback_m;
}

double get_power(const json& obj, const std::string& key, double fallback_w) {
    if (!obj.contains(key)) return fallback_w;
    if (obj[key].is_number()) return obj[key].get<double>();
    if (obj[key].is_string()) return parse_power(obj[key].get<std::string>());
    throw ConfigError("key '" + key + "' must be a power string or a number of watts");
}

Material parse_material(const json& obj, const std::string& section, const Material& fallback) {
    require_keys(obj, section, {"relative_permittivity", "loss_tangent"});
    Material m = fallback;
    m.relative_permittivity = get_number(obj, "relative_permittivity", m.relative_permittivity);
    m.loss_tangent = get_number(obj, "loss_tangent", m.loss_tangent);
    return m;
}

CavityGeometry parse_geometry(const json& obj) {
    require_keys(obj, "geometry",
                 {"shield_radius_mm", "shield_height_mm", "ring_inner_radius_mm",
                  "ring_outer_radius_mm", "ring_bottom_mm", "ring_top_mm", "plunger_radius_mm",
                  "plunger_depth_mm", "bottom_extension_mm", "dielectric", "ambient"});
    CavityGeometry g = default_geometry();
    g.shield_radius = get_mm(obj, "shield_radius_mm", g.shield_radius);
    g.shield_height = get_mm(obj, "shield_height_mm", g.shield_height);
    g.ring_inner_radius = get_mm(obj, "ring_inner_radius_mm", g.ring_inner_radius);
    g.ring_outer_radius = get_mm(obj, "ring_outer_radius_mm", g.ring_outer_radius);
    g.ring_bottom = get_mm(obj, "ring_bottom_mm", g.ring_bottom);
    g.ring_top = get_mm(obj, "ring_top_mm", g.ring_top);
    g.plunger_radius = get_mm(obj, "plunger_radius_mm", g.plunger_radius);
    g.plunger_depth = get_mm(obj, "plunger_depth_mm", g.plunger_depth);
    g.bottom_extension = get_mm(obj, "bottom_extension_mm", g.bottom_extension);
    if (obj.contains("dielectric")) g.dielectric = parse_material(obj["dielectric"], "geometry.dielectric", g.dielectric);
    if (obj.contains("ambient")) g.ambient = parse_material(obj["ambient"], "geometry.ambient", g.ambient);
    try {
        g.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("invalid geometry: ") + e.what());
    }
    return g;
}

SolverConfig parse_solver(const json& obj) {
    require_keys(obj, "solver",
                 {"resolution_mm", "mode_count", "frequency_window_ghz", "tolerance"});
    SolverConfig s;
    s.resolution = get_mm(obj, "resolution_mm", s.resolution);
    s.mode_count = get_int(obj, "mode_count", s.mode_count);
    s.tolerance = get_number(obj, "tolerance", s.tolerance);
    if (obj.contains("frequency_window_ghz")) {
        const auto& w = obj["frequency_window_ghz"];
        if (!w.is_array() || w.size() != 2)
            throw ConfigError("frequency_window_ghz must be [lo, hi]");
        s.window_lo = w[0].get<double>() * 1e9;
        s.window_hi = w[1].get<double>() * 1e9;
    }
    if (s.mode_count < 1) throw ConfigError("mode_count must be >= 1");
    return s;
}

NVCenter parse_nv(const json& obj) {
    require_keys(obj, "nv",
                 {"axis", "d_splitting_ghz", "strain_mhz", "hyperfine_mhz", "linewidth_fwhm_mhz",
                  "contrast_ceiling", "saturation_power"});
    NVCenter nv;
    nv.axis = {0.0, 1.0, 1.0};
    if (obj.contains("axis")) {
        const auto& a = obj["axis"];
        if (!a.is_array() || a.size() != 3) throw ConfigError("nv.axis must be [x, y, z]");
        nv.axis = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    }
    NVCenter tmp;
    nv.d_splitting = get_number(obj, "d_splitting_ghz", tmp.d_splitting / 1e9) * 1e9;
    nv.strain_e = get_number(obj, "strain_mhz", 0.0) * 1e6;
    nv.hyperfine_a = get_number(obj, "hyperfine_mhz", 0.0) * 1e6;
    nv.linewidth_fwhm = get_number(obj, "linewidth_fwhm_mhz", tmp.linewidth_fwhm / 1e6) * 1e6;
    nv.contrast_ceiling = get_number(obj, "contrast_ceiling", tmp.contrast_ceiling);
    nv.p_sat = get_power(obj, "saturation_power", tmp.p_sat);
    try {
        nv.normalize_axis();
        nv.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid nv section: ") + e.what());
    }
    return nv;
}

OdmrConfig parse_odmr(const json& obj) {
    require_keys(obj, "odmr",
                 {"drive_power", "start_ghz", "stop_ghz", "points", "noise_sigma", "seed",
                  "fit_lines", "position_mm", "import_csv"});
    OdmrConfig o;
    o.drive_power = get_power(obj, "drive_power", o.drive_power);
    o.start = get_number(obj, "start_ghz", o.start / 1e9) * 1e9;
    o.stop = get_number(obj, "stop_ghz", o.stop / 1e9) * 1e9;
    o.points = get_int(obj, "points", o.points);
    o.noise_sigma = get_number(obj, "noise_sigma", o.noise_sigma);
    if (obj.contains("seed")) o.seed = obj["seed"].get<std::uint64_t>();
    o.fit_lines = get_int(obj, "fit_lines", o.fit_lines);
    if (obj.contains("position_mm")) {
        const auto& p = obj["position_mm"];
        if (!p.is_array() || p.size() != 3)
            throw ConfigError("odmr.position_mm must be [x, y, z_offset]");
        o.position = {p[0].get<double>() * 1e-3, p[1].get<double>() * 1e-3,
                      p[2].get<double>() * 1e-3};
    }
    if (obj.contains("import_csv")) o.import_csv = obj["import_csv"].get<std::string>();
    if (o.points < 8) throw ConfigError("odmr.points must be >= 8");
    if (!(o.start < o.stop)) throw ConfigError("odmr frequency range must be increasing");
    return o;
}

ScanConfig parse_scan(const json& obj) {
    require_keys(obj, "scan",
                 {"start_mm", "stop_mm", "step_mm", "z_offset_mm", "axis", "drive_power",
                  "normalize"});
    ScanConfig s;
    s.start = get_mm(obj, "start_mm", s.start);
    s.stop = get_mm(obj, "stop_mm", s.stop);
    s.step = get_mm(obj, "step_mm", s.step);
    s.z_offset = get_mm(obj, "z_offset_mm", s.z_offset);
    s.drive_power = get_power(obj, "drive_power", s.drive_power);
    s.normalize = get_bool(obj, "normalize", s.normalize);
    if (obj.contains("axis")) {
        const std::string a = obj["axis"].get<std::string>();
        if (a != "x" && a != "y") throw ConfigError("scan.axis must be \"x\" or \"y\"");
        s.axis = a[0];
    }
    if (!(s.step > 0.0) || !(s.start < s.stop)) throw ConfigError("invalid scan range");
    return s;
}

FieldmapConfig parse_fieldmap(const json& obj) {
    require_keys(obj, "fieldmap", {"z_offsets_mm", "radial_step_mm"});
    FieldmapConfig f;
    if (obj.contains("z_offsets_mm")) {
        f.z_offsets.clear();
        for (const auto& v : obj["z_offsets_mm"]) f.z_offsets.push_back(v.get<double>() * 1e-3);
        if (f.z_offsets.empty()) throw ConfigError("fieldmap.z_offsets_mm must not be empty");
    }
    f.radial_step = get_mm(obj, "radial_step_mm", f.radial_step);
    return f;
}

TuneConfig parse_tune(const json& obj) {
    require_keys(obj, "tune",
                 {"depth_start_mm", "depth_stop_mm", "depth_step_mm", "mode_n", "mode_p",
                  "target_ghz"});
    TuneConfig t;
    t.depth_start = get_mm(obj, "depth_start_mm", t.depth_start);
    t.depth_stop = get_mm(obj, "depth_stop_mm", t.depth_stop);
    t.depth_step = get_mm(obj, "depth_step_mm", t.depth_step);
    t.mode_n = get_int(obj, "mode_n", t.mode_n);
    t.mode_p = get_int(obj, "mode_p", t.mode_p);
    if (obj.contains("target_ghz")) t.target = obj["target_ghz"].get<double>() * 1e9;
    return t;
}

InvertConfig parse_invert(const json& obj) {
    require_keys(obj, "invert",
                 {"method", "measurement", "extra_points", "z_offset_mm", "drive_power",
                  "simulate"});
    InvertConfig inv;
    if (obj.contains("method")) {
        inv.method = obj["method"].get<std::string>();
        if (inv.method != "closed_form" && inv.method != "least_squares")
            throw ConfigError("invert.method must be closed_form or least_squares");
    }
    if (obj.contains("measurement")) {
        const auto& m = obj["measurement"];
        require_keys(m, "invert.measurement",
                     {"c_center", "c_a", "c_b", "phi_a_deg", "phi_b_deg", "rho",
                      "linear_regime"});
        inv.measurement.c_center = get_number(m, "c_center", 0.0);
        inv.measurement.c_a = get_number(m, "c_a", 0.0);
        inv.measurement.c_b = get_number(m, "c_b", 0.0);
        inv.measurement.phi_a = get_number(m, "phi_a_deg", 0.0) * M_PI / 180.0;
        inv.measurement.phi_b = get_number(m, "phi_b_deg", 90.0) * M_PI / 180.0;
        inv.measurement.rho = get_number(m, "rho", 1.0);
        inv.measurement.linear_regime = get_bool(m, "linear_regime", true);
        inv.measurement_present = true;
    }
    if (obj.contains("extra_points")) {
        for (const auto& p : obj["extra_points"]) {
            if (!p.is_array() || p.size() != 2)
                throw ConfigError("invert.extra_points entries must be [phi_deg, contrast]");
            inv.extra_points.emplace_back(p[0].get<double>() * M_PI / 180.0, p[1].get<double>());
        }
    }
    inv.z_offset = get_mm(obj, "z_offset_mm", inv.z_offset);
    inv.drive_power = get_power(obj, "drive_power", inv.drive_power);
    inv.simulate = get_bool(obj, "simulate", inv.simulate);
    if (!inv.simulate && !inv.measurement_present)
        throw ConfigError("invert needs a measurement block or simulate = true");
    return inv;
}

CalibrateConfig parse_calibrate(const json& obj) {
    require_keys(obj, "calibrate",
                 {"targets", "free_params", "max_sweeps", "ring_top_max_mm", "resolution_mm"});
    CalibrateConfig c;
    if (obj.contains("targets")) {
        c.targets.clear();
        for (const auto& t : obj["targets"]) {
            require_keys(t, "calibrate.targets[]", {"n", "p", "frequency_ghz"});
            c.targets.push_back({get_int(t, "n", 1), get_int(t, "p", 1),
                                 get_number(t, "frequency_ghz", 0.0) * 1e9});
        }
    }
    if (obj.contains("free_params")) {
        c.free_params.clear();
        for (const auto& p : obj["free_params"]) {
            const std::string name = p.get<std::string>();
            if (name == "relative_permittivity")
                c.free_params.push_back(FreeParam::RelativePermittivity);
            else if (name == "ring_outer_radius")
                c.free_params.push_back(FreeParam::RingOuterRadius);
            else if (name == "ring_top")
                c.free_params.push_back(FreeParam::RingTop);
            else
                throw ConfigError("unknown calibration free parameter '" + name + "'");
        }
    }
    c.max_sweeps = get_int(obj, "max_sweeps", c.max_sweeps);
    c.ring_top_max = get_mm(obj, "ring_top_max_mm", c.ring_top_max);
    c.resolution = get_mm(obj, "resolution_mm", c.resolution);
    return c;
}

} // namespace

double parse_power(const std::string& text) {
    std::string s = text;
    s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == ' '; }), s.end());
    const auto ends_with = [&](const std::string& suffix) {
        return s.size() > suffix.size() &&
               s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    try {
        size_t used = 0;
        if (ends_with("dBm")) {
            const double v = std::stod(s.substr(0, s.size() - 3), &used);
            if (used != s.size() - 3) throw ConfigError("bad power value '" + text + "'");
            return dbm_to_watts(v);
        }
        if (ends_with("mW")) {
            const double v = std::stod(s.substr(0, s.size() - 2), &used);
            if (used != s.size() - 2) throw ConfigError("bad power value '" + text + "'");
            return v * 1e-3;
        }
        if (ends_with("W")) {
            const double v = std::stod(s.substr(0, s.size() - 1), &used);
            if (used != s.size() - 1) throw ConfigError("bad power value '" + text + "'");
            return v;
        }
    } catch (const std::invalid_argument&) {
        throw ConfigError("bad power value '" + text + "'");
    }
    throw ConfigError("power '" + text + "' needs a dBm, mW or W suffix");
}

RunConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be an object");
    require_keys(root, "<root>",
                 {"geometry", "solver", "nv", "odmr", "scan", "fieldmap", "tune", "invert",
                  "calibrate", "output"});
    RunConfig cfg;
    cfg.nv.axis = {0.0, 1.0, 1.0};
    cfg.nv.normalize_axis();
    if (root.contains("geometry")) cfg.geometry = parse_geometry(root["geometry"]);
    if (root.contains("solver")) cfg.solver = parse_solver(root["solver"]);
    if (root.contains("nv")) cfg.nv = parse_nv(root["nv"]);
    if (root.contains("odmr")) cfg.odmr = parse_odmr(root["odmr"]);
    if (root.contains("scan")) cfg.scan = parse_scan(root["scan"]);
    if (root.contains("fieldmap")) cfg.fieldmap = parse_fieldmap(root["fieldmap"]);
    if (root.contains("tune")) cfg.tune = parse_tune(root["tune"]);
    if (root.contains("invert")) cfg.invert = parse_invert(root["invert"]);
    if (root.contains("calibrate")) cfg.calibrate = parse_calibrate(root["calibrate"]);
    if (root.contains("output")) {
        require_keys(root["output"], "output", {"directory"});
        if (root["output"].contains("directory"))
            cfg.output_directory = root["output"]["directory"].get<std::string>();
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string geometry_to_json(const CavityGeometry& g) {
    json j;
    j["shield_radius_mm"] = g.shield_radius * 1e3;
    j["shield_height_mm"] = g.shield_height * 1e3;
    j["ring_inner_radius_mm"] = g.ring_inner_radius * 1e3;
    j["ring_outer_radius_mm"] = g.ring_outer_radius * 1e3;
    j["ring_bottom_mm"] = g.ring_bottom * 1e3;
    j["ring_top_mm"] = g.ring_top * 1e3;
    j["plunger_radius_mm"] = g.plunger_radius * 1e3;
    j["plunger_depth_mm"] = g.plunger_depth * 1e3;
    j["bottom_extension_mm"] = g.bottom_extension * 1e3;
    j["dielectric"] = {{"relative_permittivity", g.dielectric.relative_permittivity},
                       {"loss_tangent", g.dielectric.loss_tangent}};
    j["ambient"] = {{"relative_permittivity", g.ambient.relative_permittivity},
                    {"loss_tangent", g.ambient.loss_tangent}};
    return j.dump(2);
}

} // namespace nvcavity
