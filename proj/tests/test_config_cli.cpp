#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nvcavity/config.hpp"
#include "nvcavity/csv.hpp"

using namespace nvcavity;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(NVCAVITY_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

} // namespace

TEST_CASE("power strings") {
    CHECK(parse_power("5dBm") == doctest::Approx(3.16227766e-3).epsilon(1e-9));
    CHECK(parse_power("0dBm") == doctest::Approx(1e-3));
    CHECK(parse_power("2mW") == doctest::Approx(2e-3));
    CHECK(parse_power("0.5W") == doctest::Approx(0.5));
    CHECK(parse_power("-20 dBm") == doctest::Approx(1e-5));
    CHECK_THROWS_AS((void)parse_power("fast"), ConfigError);
    CHECK_THROWS_AS((void)parse_power("5dB"), ConfigError);
}

TEST_CASE("config parsing is fail-closed") {
    CHECK_NOTHROW((void)parse_config("{}")); // everything defaulted
    CHECK_THROWS_AS((void)parse_config("{\"geomtry\": {}}"), ConfigError);
    CHECK_THROWS_AS((void)parse_config("{\"geometry\": {\"shield_radius\": 16}}"), ConfigError);
    CHECK_THROWS_AS((void)parse_config("{\"nv\": {\"axis\": [0, 0]}}"), ConfigError);
    CHECK_THROWS_AS((void)parse_config("not json"), ConfigError);
    // invariant violations surface as config errors
    CHECK_THROWS_AS((void)parse_config("{\"geometry\": {\"ring_outer_radius_mm\": 17.0}}"),
                    ConfigError);
}

TEST_CASE("config units and defaults") {
    const RunConfig cfg = parse_config(R"({
        "geometry": {"ring_top_mm": 15.0},
        "nv": {"axis": [0, 3, 4], "saturation_power": "5dBm"},
        "odmr": {"drive_power": 2.5e-16}
    })");
    CHECK(cfg.geometry.ring_top == doctest::Approx(15e-3));
    CHECK(cfg.geometry.shield_radius == doctest::Approx(16e-3));
    CHECK(cfg.nv.axis[1] == doctest::Approx(0.6));
    CHECK(cfg.nv.axis[2] == doctest::Approx(0.8));
    CHECK(cfg.nv.p_sat == doctest::Approx(3.16227766e-3).epsilon(1e-9));
    CHECK(cfg.odmr.drive_power == doctest::Approx(2.5e-16));
    CHECK(cfg.solver.resolution == doctest::Approx(0.5e-3));
}

TEST_CASE("spectrum CSV round trip") {
    const fs::path dir = fresh_dir("nvcavity_csv_test");
    fs::create_directories(dir);
    std::vector<std::vector<double>> rows;
    for (int k = 0; k < 32; ++k) rows.push_back({2.8 + 0.001 * k, 1.0 - 0.01 * (k == 16)});
    write_csv_atomic(dir / "s.csv", "frequency_ghz,fluorescence", rows);
    const ODMRSpectrum spec = read_spectrum_csv(dir / "s.csv");
    REQUIRE(spec.frequencies.size() == 32);
    CHECK(spec.frequencies[1] == doctest::Approx(2.801e9));
    CHECK(spec.fluorescence[16] == doctest::Approx(0.99));
    CHECK_FALSE(fs::exists(dir / "s.csv.tmp"));
    fs::remove_all(dir);
}

TEST_CASE("cli: malformed config exits 2 and writes nothing") {
    const fs::path dir = fresh_dir("nvcavity_cli_bad");
    const fs::path cfg = fs::temp_directory_path() / "nvcavity_bad.json";
    write_file(cfg, "{\"unknown_section\": 1}");
    CHECK(run_cli("modes --config " + cfg.string() + " --out " + dir.string()) == 2);
    CHECK_FALSE(fs::exists(dir));
    CHECK(run_cli("modes --config /nonexistent.json --out " + dir.string()) == 2);
    fs::remove(cfg);
}

TEST_CASE("cli: hollow-cavity modes match the analytic oracle") {
    const fs::path dir = fresh_dir("nvcavity_cli_hollow");
    const fs::path cfg = fs::temp_directory_path() / "nvcavity_hollow.json";
    write_file(cfg, R"({
        "geometry": {"bottom_extension_mm": 0.0,
                     "dielectric": {"relative_permittivity": 1.0}},
        "solver": {"resolution_mm": 0.5, "mode_count": 2}
    })");
    REQUIRE(run_cli("modes --config " + cfg.string() + " --out " + dir.string()) == 0);

    const std::string text = slurp(dir / "modes.csv");
    REQUIRE(text.rfind("index,n,p,frequency_ghz\n", 0) == 0);
    std::istringstream ss(text);
    std::string header, row;
    std::getline(ss, header);
    std::getline(ss, row);
    double idx, n, p, f_ghz;
    char c;
    std::istringstream(row) >> idx >> c >> n >> c >> p >> c >> f_ghz;
    CHECK(n == 1);
    CHECK(p == 1);
    const double exact = analytic_te0np(16e-3, 20e-3, 1, 1);
    CHECK(std::abs(f_ghz * 1e9 - exact) / exact < 0.005);
    CHECK(fs::exists(dir / "mode_00_fields.csv"));
    CHECK(slurp(dir / "mode_00_fields.csv").rfind("r_mm,z_mm,e_theta,h_r,h_z\n", 0) == 0);

    // no temp files linger and reruns are byte-identical
    for (const auto& entry : fs::directory_iterator(dir))
        CHECK(entry.path().extension() != ".tmp");
    REQUIRE(run_cli("modes --config " + cfg.string() + " --out " + dir.string() + "2") == 0);
    CHECK(slurp(dir / "modes.csv") == slurp(fs::path(dir.string() + "2") / "modes.csv"));

    fs::remove_all(dir);
    fs::remove_all(dir.string() + "2");
    fs::remove(cfg);
}

TEST_CASE("cli: spectrum import path fits external data") {
    const fs::path dir = fresh_dir("nvcavity_cli_import");
    fs::create_directories(dir);
    NVCenter nv;
    nv.axis = {0, 0, 1};
    std::vector<double> freqs(301);
    for (int k = 0; k < 301; ++k) freqs[k] = 2.82e9 + (2.92e9 - 2.82e9) * k / 300;
    const auto spec = synthesize_spectrum(nv, {1, 0, 0}, nv.p_sat, freqs, 0.0, 9);
    std::vector<std::vector<double>> rows;
    for (size_t k = 0; k < freqs.size(); ++k)
        rows.push_back({spec.frequencies[k] / 1e9, spec.fluorescence[k]});
    write_csv_atomic(dir / "measured.csv", "frequency_ghz,fluorescence", rows);

    const fs::path cfg = fs::temp_directory_path() / "nvcavity_import.json";
    write_file(cfg, std::string("{\"odmr\": {\"import_csv\": \"") + (dir / "measured.csv").string() +
                        "\", \"fit_lines\": 1}}");
    REQUIRE(run_cli("odmr --config " + cfg.string() + " --out " + dir.string()) == 0);
    const std::string fit = slurp(dir / "fit.csv");
    REQUIRE(fit.rfind("line,center_ghz,fwhm_mhz,contrast,baseline,rms_residual,low_significance\n",
                      0) == 0);
    // total contrast 0.06 at s = 1 shows up in the fitted row
    std::istringstream fs_(fit);
    std::string header2, row2;
    std::getline(fs_, header2);
    std::getline(fs_, row2);
    double line, center_ghz, fwhm_mhz, contrast;
    char comma;
    std::istringstream(row2) >> line >> comma >> center_ghz >> comma >> fwhm_mhz >> comma >>
        contrast;
    CHECK(contrast == doctest::Approx(0.06).epsilon(1e-3));
    CHECK(center_ghz == doctest::Approx(2.87).epsilon(1e-6));
    fs::remove_all(dir);
    fs::remove(cfg);
}

TEST_CASE("cli: infeasible inversion measurement exits 4") {
    const fs::path dir = fresh_dir("nvcavity_cli_inv");
    const fs::path cfg = fs::temp_directory_path() / "nvcavity_infeasible.json";
    write_file(cfg, R"({
        "invert": {"method": "closed_form",
                   "measurement": {"c_center": 0.0, "c_a": 1.0, "c_b": 0.0,
                                    "phi_a_deg": 0.0, "phi_b_deg": 90.0,
                                    "rho": 1.0, "linear_regime": true}}
    })");
    CHECK(run_cli("invert-axis --config " + cfg.string() + " --out " + dir.string()) == 4);
    fs::remove_all(dir);
    fs::remove(cfg);
}

TEST_CASE("cli: feasible inversion writes the candidate table") {
    const fs::path dir = fresh_dir("nvcavity_cli_inv2");
    const fs::path cfg = fs::temp_directory_path() / "nvcavity_feasible.json";
    // forward contrasts of the diagonal axis at rho 0.5, kappa 1
    write_file(cfg, R"({
        "invert": {"method": "closed_form",
                   "measurement": {"c_center": 0.16666666666666666, "c_a": 0.6666666666666666,
                                    "c_b": 0.6666666666666666, "phi_a_deg": 0.0,
                                    "phi_b_deg": 90.0, "rho": 0.5, "linear_regime": true}}
    })");
    REQUIRE(run_cli("invert-axis --config " + cfg.string() + " --out " + dir.string()) == 0);
    const std::string text = slurp(dir / "candidates.csv");
    CHECK(text.find("nx,ny,nz,residual") != std::string::npos);
    CHECK(text.find("# gauge:") != std::string::npos);
    CHECK(text.find("0.57735") != std::string::npos);
    fs::remove_all(dir);
    fs::remove(cfg);
}
