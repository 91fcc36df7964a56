#include <doctest.h>

#include <cmath>
#include <random>

#include "nvcavity/axisinversion.hpp"

using namespace nvcavity;

namespace {

std::array<double, 3> random_axis(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::array<double, 3> n{gauss(rng), gauss(rng), gauss(rng)};
    const double norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    for (auto& c : n) c /= norm;
    return n;
}

ThreePointMeasurement measure(const std::array<double, 3>& axis, double rho, double kappa) {
    const auto c = forward_contrasts(axis, rho, 0.0, M_PI_2, kappa);
    ThreePointMeasurement m;
    m.c_center = c[0];
    m.c_a = c[1];
    m.c_b = c[2];
    m.rho = rho;
    return m;
}

CavityGeometry calibrated_like() {
    CavityGeometry g = default_geometry();
    g.ring_top = 16e-3;
    g.dielectric.relative_permittivity = 122.0;
    return g;
}

const ModeSolution& working_mode() {
    static const ModeSolution mode = [] {
        for (const auto& m : solve_te0_modes(calibrated_like(), 0.5e-3, 6))
            if (m.n_radial == 1 && m.p_axial == 2) return m;
        throw std::runtime_error("working mode not found");
    }();
    return mode;
}

} // namespace

TEST_CASE("forward model evaluates the documented cases") {
    SUBCASE("axial spin sees no center contrast") {
        const auto c = forward_contrasts({0, 0, 1}, 0.7, 0.0, M_PI_2, 2.0);
        CHECK(c[0] == doctest::Approx(0.0));
        CHECK(c[1] == doctest::Approx(2.0));
        CHECK(c[2] == doctest::Approx(2.0));
    }
    SUBCASE("diagonal axis") {
        const double s = 1.0 / std::sqrt(3.0);
        const auto c = forward_contrasts({s, s, s}, 0.5, 0.0, M_PI_2, 1.0);
        CHECK(c[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
        CHECK(c[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        CHECK(c[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("linear in kappa") {
        const double s = 1.0 / std::sqrt(3.0);
        const auto c1 = forward_contrasts({s, s, s}, 0.5, 0.0, M_PI_2, 1.0);
        const auto c2 = forward_contrasts({s, s, s}, 0.5, 0.0, M_PI_2, 2.0);
        for (int k = 0; k < 3; ++k) CHECK(c2[k] == doctest::Approx(2.0 * c1[k]).epsilon(1e-12));
    }
}

TEST_CASE("closed-form inversion of the documented cases") {
    SUBCASE("diagonal axis recovers kappa = 1") {
        ThreePointMeasurement m;
        m.c_center = 1.0 / 6.0;
        m.c_a = 2.0 / 3.0;
        m.c_b = 2.0 / 3.0;
        m.rho = 0.5;
        const auto set = invert_axis_closed_form(m);
        CHECK(set.kappa == doctest::Approx(1.0).epsilon(1e-12));
        REQUIRE(!set.candidates.empty());
        const double s = 1.0 / std::sqrt(3.0);
        for (const auto& c : set.candidates) {
            CHECK(std::abs(c[0]) == doctest::Approx(s).epsilon(1e-9));
            CHECK(std::abs(c[1]) == doctest::Approx(s).epsilon(1e-9));
            CHECK(std::abs(c[2]) == doctest::Approx(s).epsilon(1e-9));
        }
        CHECK(set.candidates.size() == 4);
    }
    SUBCASE("zero center contrast pins the z axis uniquely") {
        ThreePointMeasurement m;
        m.c_center = 0.0;
        m.c_a = 1.4;
        m.c_b = 1.4;
        m.rho = 0.8;
        const auto set = invert_axis_closed_form(m);
        REQUIRE(set.candidates.size() == 1);
        CHECK(set.candidates[0][2] == doctest::Approx(1.0));
    }
    SUBCASE("infeasible contrasts are rejected") {
        ThreePointMeasurement m;
        m.c_center = 0.0;
        m.c_a = 1.0;
        m.c_b = 0.0;
        m.rho = 1.0; // kappa = 0.5 < c_a: u^2 would be -1
        CHECK_THROWS_AS((void)invert_axis_closed_form(m), InconsistentMeasurement);
    }
    SUBCASE("degenerate ratio") {
        ThreePointMeasurement m;
        m.rho = 0.0;
        CHECK_THROWS_AS((void)invert_axis_closed_form(m), DegenerateRatio);
    }
    SUBCASE("coincident azimuths") {
        ThreePointMeasurement m;
        m.phi_b = m.phi_a + M_PI; // same line mod pi
        CHECK_THROWS_AS(m.validate(), InconsistentMeasurement);
    }
}

TEST_CASE("closed-form round trip over random axes and scales") {
    std::mt19937_64 rng(2026);
    for (int trial = 0; trial < 100; ++trial) {
        const auto axis = random_axis(rng);
        for (const double rho : {0.25, 0.5, 1.0, 2.0})
            for (const double kappa : {0.5, 1.0, 3.0}) {
                const auto set = invert_axis_closed_form(measure(axis, rho, kappa));
                CHECK(set.kappa == doctest::Approx(kappa).epsilon(1e-9));
                CHECK(set.candidates.size() <= 4);
                double best = M_PI;
                for (const auto& c : set.candidates)
                    best = std::min(best, director_angle(c, gauge_representative(axis)));
                CHECK(best < 1e-6);
            }
    }
}

TEST_CASE("candidate multiplicity at degenerate boundaries") {
    // one vanishing component halves the sign ambiguity
    const auto planar = invert_axis_closed_form(measure({0.6, 0.0, 0.8}, 1.0, 1.0));
    CHECK(planar.candidates.size() == 2);
    // coordinate axes are unique
    const auto zhat = invert_axis_closed_form(measure({0.0, 0.0, 1.0}, 1.0, 1.0));
    CHECK(zhat.candidates.size() == 1);
    const auto xhat = invert_axis_closed_form(measure({1.0, 0.0, 0.0}, 1.0, 1.0));
    CHECK(xhat.candidates.size() == 1);
}

TEST_CASE("least-squares path agrees with the closed form") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const auto axis = random_axis(rng);
        const auto m = measure(axis, 0.8, 1.3);
        const auto cf = invert_axis_closed_form(m);
        const auto ls = invert_axis_least_squares(m);
        REQUIRE(!ls.candidates.empty());
        for (const auto& c : cf.candidates) {
            double best = M_PI;
            for (const auto& l : ls.candidates) best = std::min(best, director_angle(c, l));
            CHECK(best < 1e-6);
        }
    }
}

TEST_CASE("least-squares path under multiplicative noise") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    std::vector<double> errors;
    for (int trial = 0; trial < 20; ++trial) {
        const auto axis = random_axis(rng);
        auto m = measure(axis, 1.0, 1.0);
        m.c_center *= 1.0 + noise(rng);
        m.c_a *= 1.0 + noise(rng);
        m.c_b *= 1.0 + noise(rng);
        const auto set = invert_axis_least_squares(m);
        double best = M_PI;
        for (const auto& c : set.candidates)
            best = std::min(best, director_angle(c, gauge_representative(axis)));
        errors.push_back(best * 180.0 / M_PI);
    }
    std::sort(errors.begin(), errors.end());
    CHECK(errors[errors.size() / 2] < 5.0); // median
}

TEST_CASE("a redundant consistent point never worsens the fit") {
    std::mt19937_64 rng(17);
    const auto axis = random_axis(rng);
    const auto m = measure(axis, 0.9, 1.1);
    const double phi_extra = 1.0;
    const double u = axis[0], v = axis[1];
    const double extra_contrast =
        1.1 * (1.0 - std::pow(u * std::cos(phi_extra) + v * std::sin(phi_extra), 2));
    const auto base = invert_axis_least_squares(m);
    const auto more = invert_axis_least_squares(m, {{phi_extra, extra_contrast}});
    CHECK(more.residual <= base.residual + 1e-12);
}

TEST_CASE("brute-force grid finds no better axis than the solver") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    for (int trial = 0; trial < 3; ++trial) {
        const auto axis = random_axis(rng);
        auto m = measure(axis, 1.0, 1.0);
        m.c_center *= 1.0 + noise(rng);
        m.c_a *= 1.0 + noise(rng);
        m.c_b *= 1.0 + noise(rng);
        const auto set = invert_axis_least_squares(m);

        double grid_best = 1e300;
        for (int it = 0; it < 180; ++it)
            for (int ip = 0; ip < 360; ++ip) {
                const double theta = (it + 0.5) * M_PI / 180.0;
                const double psi = ip * M_PI / 180.0;
                const double st = std::sin(theta);
                const std::array<double, 3> n{st * std::cos(psi), st * std::sin(psi),
                                              std::cos(theta)};
                const auto c = forward_contrasts(n, m.rho, 0.0, M_PI_2, 1.0);
                // optimal kappa for this direction
                const double num = c[0] * m.c_center + c[1] * m.c_a + c[2] * m.c_b;
                const double den = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
                const double kap = den > 0 ? std::max(num / den, 0.0) : 0.0;
                const double res = std::pow(kap * c[0] - m.c_center, 2) +
                                   std::pow(kap * c[1] - m.c_a, 2) +
                                   std::pow(kap * c[2] - m.c_b, 2);
                grid_best = std::min(grid_best, res);
            }
        CHECK(grid_best >= set.residual - 1e-12);
    }
}

TEST_CASE("gauge representative and director angle") {
    CHECK(gauge_representative({0, 0, -1})[2] == 1.0);
    const auto g = gauge_representative({-0.6, 0.0, -0.8});
    CHECK(g[0] == doctest::Approx(0.6));
    CHECK(g[2] == doctest::Approx(0.8));
    const auto planar = gauge_representative({-1.0, 0.0, 0.0});
    CHECK(planar[0] == 1.0);
    CHECK(director_angle({0, 0, 1}, {0, 0, -1}) == doctest::Approx(0.0));
    CHECK(director_angle({1, 0, 0}, {0, 1, 0}) == doctest::Approx(M_PI_2));
}

TEST_CASE("end-to-end recovery on the simulated cavity field") {
    const auto& mode = working_mode();
    const double drive = 1e-17;

    SUBCASE("tilted axis") {
        NVCenter nv;
        const double s = 1.0 / std::sqrt(3.0);
        nv.axis = {s, s, s};
        const auto r = end_to_end_axis_recovery(mode, nv, 1e-3, drive);
        CHECK(r.nearest_error * 180.0 / M_PI < 3.0);
        CHECK(r.protocol_radius > 5e-3);
        CHECK(r.protocol_radius < 10e-3);
    }
    SUBCASE("axial NV axis") {
        NVCenter nv;
        nv.axis = {0, 0, 1};
        const auto r = end_to_end_axis_recovery(mode, nv, 1e-3, drive);
        REQUIRE(!r.recovered.candidates.empty());
        double best_w2 = 0.0;
        for (const auto& c : r.recovered.candidates) best_w2 = std::max(best_w2, c[2] * c[2]);
        CHECK(best_w2 > 0.99);
    }
    SUBCASE("linear-regime precondition") {
        NVCenter nv;
        nv.axis = {0, 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)};
        CHECK_THROWS_AS((void)end_to_end_axis_recovery(mode, nv, 1e-3, 1.0),
                        std::invalid_argument);
    }
}
