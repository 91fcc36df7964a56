#include <doctest.h>

#include <cmath>

#include "nvcavity/modesolver.hpp"

using namespace nvcavity;

namespace {

CavityGeometry hollow_closed() {
    CavityGeometry g = default_geometry();
    g.bottom_extension = 0.0;
    g.dielectric.relative_permittivity = 1.0; // ring becomes plain air
    return g;
}

const std::vector<ModeSolution>& hollow_modes() {
    static const std::vector<ModeSolution> modes = solve_te0_modes(hollow_closed(), 0.25e-3, 5);
    return modes;
}

} // namespace

TEST_CASE("analytic TE0np frequencies") {
    CHECK(analytic_te0np(16e-3, 20e-3, 1, 1) == doctest::Approx(13.67e9).epsilon(0.001));
    CHECK(analytic_te0np(16e-3, 20e-3, 1, 2) > analytic_te0np(16e-3, 20e-3, 1, 1));
    // Maxwell eigenfrequencies scale inversely with the geometry
    for (int n = 1; n <= 3; ++n)
        for (int p = 1; p <= 3; ++p)
            CHECK(analytic_te0np(32e-3, 40e-3, n, p) ==
                  doctest::Approx(0.5 * analytic_te0np(16e-3, 20e-3, n, p)).epsilon(1e-12));
    CHECK_THROWS_AS((void)analytic_te0np(16e-3, 20e-3, 0, 1), std::invalid_argument);
}

TEST_CASE("assembled operator: Dirichlet rows and interior stencil") {
    const Grid2D grid = rasterize(hollow_closed(), 0.5e-3);
    const EigenProblem ep = assemble_eigenproblem(grid);

    // metal row: unit diagonal only
    const int metal = grid.index(4, 0);
    REQUIRE(grid.region_of(4, 0) == Region::Metal);
    int metal_row_entries = 0;
    for (int outer = 0; outer < ep.a.outerSize(); ++outer)
        for (Eigen::SparseMatrix<double>::InnerIterator it(ep.a, outer); it; ++it)
            if (it.row() == metal) {
                ++metal_row_entries;
                CHECK(it.col() == metal);
                CHECK(it.value() == 1.0);
            }
    CHECK(metal_row_entries == 1);
    CHECK(ep.b_diag[metal] == 0.0);

    // interior row: conservative radial coefficients, plain axial ones
    const int i = grid.nr / 2, j = grid.nz / 2;
    const int k = grid.index(i, j);
    const double dr = grid.dr, dz = grid.dz, r = grid.r_of(i);
    CHECK(ep.a.coeff(k, grid.index(i + 1, j)) ==
          doctest::Approx(-grid.r_of(i + 1) / ((r + dr / 2) * dr * dr)));
    CHECK(ep.a.coeff(k, grid.index(i - 1, j)) ==
          doctest::Approx(-grid.r_of(i - 1) / ((r - dr / 2) * dr * dr)));
    CHECK(ep.a.coeff(k, grid.index(i, j + 1)) == doctest::Approx(-1.0 / (dz * dz)));
    CHECK(ep.a.coeff(k, k) ==
          doctest::Approx((r / (r + dr / 2) + r / (r - dr / 2)) / (dr * dr) + 2 / (dz * dz)));
    CHECK(ep.b_diag[k] == doctest::Approx(1.0));

    // the radial coupling approaches the plain Laplacian away from the axis
    const double near_axis = grid.r_of(2) / ((grid.r_of(1) + dr / 2) * dr * dr) * dr * dr;
    const double far = grid.r_of(grid.nr - 2) / ((grid.r_of(grid.nr - 3) + dr / 2) * dr * dr) * dr * dr;
    CHECK(std::abs(far - 1.0) < std::abs(near_axis - 1.0));
    CHECK(far == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("assembled operator is symmetric under the r-weighted inner product") {
    for (const bool dielectric : {false, true}) {
        CavityGeometry g = dielectric ? default_geometry() : hollow_closed();
        g.plunger_depth = dielectric ? 1.3e-3 : 0.0; // exercise the face cut rows too
        const Grid2D grid = rasterize(g, 0.5e-3);
        const EigenProblem ep = assemble_eigenproblem(grid);
        double worst = 0.0;
        for (int outer = 0; outer < ep.a.outerSize(); ++outer)
            for (Eigen::SparseMatrix<double>::InnerIterator it(ep.a, outer); it; ++it) {
                if (ep.row_weight[it.row()] == 0.0 || ep.row_weight[it.col()] == 0.0) continue;
                const double forward = ep.row_weight[it.row()] * it.value();
                const double backward = ep.row_weight[it.col()] * ep.a.coeff(it.col(), it.row());
                worst = std::max(worst, std::abs(forward - backward) / std::max(1.0, std::abs(forward)));
            }
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("hollow cavity eigenfrequencies match the Bessel oracle") {
    const auto& modes = hollow_modes();
    REQUIRE(modes.size() >= 5);
    std::vector<double> exact;
    for (int n = 1; n <= 3; ++n)
        for (int p = 1; p <= 4; ++p) exact.push_back(analytic_te0np(16e-3, 20e-3, n, p));
    std::sort(exact.begin(), exact.end());
    for (int k = 0; k < 5; ++k)
        CHECK(std::abs(modes[k].frequency - exact[k]) / exact[k] < 0.005);
}

TEST_CASE("hollow-mode classification against the analytic shapes") {
    const auto& modes = hollow_modes();
    CHECK(modes[0].n_radial == 1);
    CHECK(modes[0].p_axial == 1);
    const double f13 = analytic_te0np(16e-3, 20e-3, 1, 3);
    for (const auto& m : modes)
        if (std::abs(m.frequency - f13) / f13 < 0.005) {
            CHECK(m.n_radial == 1);
            CHECK(m.p_axial == 3);
        }
}

TEST_CASE("uniform-sign field classifies as (1,1)") {
    ModeSolution mode;
    mode.grid = rasterize(hollow_closed(), 1e-3 * 0.5);
    mode.e_theta.assign(mode.grid.size(), 0.0);
    for (int j = 1; j < mode.grid.nz - 1; ++j)
        for (int i = 1; i < mode.grid.nr - 1; ++i)
            if (mode.grid.region_of(i, j) != Region::Metal)
                mode.e_theta[mode.grid.index(i, j)] = 1.0;
    const auto [n, p] = classify_mode(mode);
    CHECK(n == 1);
    CHECK(p == 1);
}

TEST_CASE("eigenvector orthogonality in the permittivity-weighted product") {
    const auto modes = solve_te0_modes(default_geometry(), 0.5e-3, 4);
    REQUIRE(modes.size() >= 4);
    const Grid2D& g = modes[0].grid;
    for (size_t a = 0; a < modes.size(); ++a)
        for (size_t b = a + 1; b < modes.size(); ++b) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (int j = 0; j < g.nz; ++j)
                for (int i = 0; i < g.nr; ++i) {
                    const double w = g.eps_of(i, j) * g.r_of(i) * g.dr * g.dz;
                    const double ea = modes[a].e_theta[g.index(i, j)];
                    const double eb = modes[b].e_theta[g.index(i, j)];
                    dot += ea * eb * w;
                    na += ea * ea * w;
                    nb += eb * eb * w;
                }
            CHECK(std::abs(dot) / std::sqrt(na * nb) < 1e-8);
        }
}

TEST_CASE("axis regularity of the magnetic fields") {
    const auto& modes = hollow_modes();
    const Grid2D& g = modes[0].grid;
    for (const auto& m : modes)
        for (int j = 0; j < g.nz; ++j) {
            CHECK(m.h_r[g.index(0, j)] == 0.0);
            CHECK(std::isfinite(m.h_z[g.index(0, j)]));
        }
}

TEST_CASE("solver determinism") {
    const auto a = solve_te0_modes(default_geometry(), 0.5e-3, 3);
    const auto b = solve_te0_modes(default_geometry(), 0.5e-3, 3);
    REQUIRE(a.size() == b.size());
    for (size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].frequency == b[k].frequency);
        CHECK(a[k].e_theta == b[k].e_theta);
    }
}

TEST_CASE("far-wall independence of the evanescent tail") {
    CavityGeometry g = default_geometry();
    g.ring_top = 16e-3;
    g.dielectric.relative_permittivity = 122.0;
    const auto find_12 = [](const std::vector<ModeSolution>& modes) {
        for (const auto& m : modes)
            if (m.n_radial == 1 && m.p_axial == 2) return m.frequency;
        return 0.0;
    };
    const double f_near = find_12(solve_te0_modes(g, 0.5e-3, 6));
    g.bottom_extension = 20e-3;
    const double f_far = find_12(solve_te0_modes(g, 0.5e-3, 6));
    REQUIRE(f_near > 0.0);
    REQUIRE(f_far > 0.0);
    CHECK(std::abs(f_far - f_near) / f_near < 1e-3);
}

TEST_CASE("tuning curve is monotone and tracks the selected mode") {
    CavityGeometry g = default_geometry();
    g.ring_top = 16e-3;
    g.dielectric.relative_permittivity = 122.0;
    const std::vector<double> depths{0.0, 1e-3, 2e-3, 3e-3, 4e-3};
    const auto curve = tuning_curve(g, depths, {1, 2}, 0.5e-3, 2);
    REQUIRE(curve.size() == depths.size());
    for (size_t k = 0; k + 1 < curve.size(); ++k)
        CHECK(curve[k + 1].frequency >= curve[k].frequency * (1.0 - 1e-12));
    CHECK(curve.back().frequency > curve.front().frequency);

    SUBCASE("plunger search endpoints") {
        const double d0 = find_plunger_for_frequency(g, curve.front().frequency, {1, 2}, 0.5e-3, 2);
        CHECK(d0 == doctest::Approx(0.0).epsilon(1e-9));
        CHECK_THROWS_AS(
            (void)find_plunger_for_frequency(g, 10e9, {1, 2}, 0.5e-3, 2), TargetOutOfRange);
    }
    SUBCASE("unsorted depths are rejected") {
        CHECK_THROWS_AS((void)tuning_curve(g, {1e-3, 0.0}, {1, 2}, 0.5e-3, 1),
                        std::invalid_argument);
    }
    SUBCASE("missing selector") {
        CHECK_THROWS_AS((void)tuning_curve(g, {0.0}, {4, 7}, 0.5e-3, 1), ModeTrackingLost);
    }
}

TEST_CASE("quality factor and circulating power scalars") {
    CHECK(q_from_linewidth(3.5e9, 3.5e6) == 1000.0);
    CHECK(q_from_linewidth(2.7e9, 3.5e6) == doctest::Approx(771.4285714));
    CHECK(q_from_linewidth(1.23e9, 1.23e9) == 1.0);
    CHECK_THROWS_AS((void)q_from_linewidth(1e9, 0.0), std::invalid_argument);

    CHECK(circulating_power(1.0, 1000.0, 1.0) == 1000.0);
    CHECK(circulating_power(1.0, 1000.0, 0.01) == doctest::Approx(39.2118419).epsilon(1e-6));
    CHECK(circulating_power(0.0, 123.0, 0.37) == 0.0);
    // critical coupling maximizes the enhancement
    const double peak = circulating_power(1.0, 500.0, 1.0);
    for (const double beta : {0.01, 0.1, 0.5, 0.9, 1.1, 2.0, 10.0})
        CHECK(circulating_power(1.0, 500.0, beta) < peak);
}

TEST_CASE("calibration returns the base geometry when targets already hold") {
    const CavityGeometry g = hollow_closed();
    const auto modes = solve_te0_modes(g, 0.5e-3, 4);
    std::vector<CalibrationTarget> targets;
    targets.push_back({modes[0].n_radial, modes[0].p_axial, modes[0].frequency});
    targets.push_back({modes[1].n_radial, modes[1].p_axial, modes[1].frequency});
    const auto result = calibrate_geometry(
        g, targets, {FreeParam::RelativePermittivity, FreeParam::RingTop});
    CHECK(result.sweeps == 0);
    CHECK(result.geometry.ring_top == g.ring_top);
    CHECK(result.geometry.dielectric.relative_permittivity ==
          g.dielectric.relative_permittivity);
    CHECK(result.objective < 1e-6);
}

TEST_CASE("calibration rejects an underdetermined setup") {
    const std::vector<CalibrationTarget> two{{1, 1, 2.2e9}, {1, 2, 2.7e9}};
    CHECK_THROWS_AS((void)calibrate_geometry(default_geometry(), two,
                                             {FreeParam::RelativePermittivity,
                                              FreeParam::RingOuterRadius, FreeParam::RingTop}),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)calibrate_geometry(default_geometry(), {}, {FreeParam::RingTop}),
                    std::invalid_argument);
}
