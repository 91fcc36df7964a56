#include "nvcavity/axisinversion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

namespace nvcavity {

namespace {

constexpr double kSquareSlack = 1e-9;     // tolerated negative overshoot of squares
constexpr double kForwardTol = 1e-6;      // relative forward-model agreement
constexpr double kDedupeAngle = 1e-4;     // rad, candidate de-duplication

double sq(double x) { return x * x; }

} // namespace

void ThreePointMeasurement::validate() const {
    if (!(c_center >= 0.0 && c_a >= 0.0 && c_b >= 0.0))
        throw InconsistentMeasurement("contrasts must be >= 0");
    if (!std::isfinite(rho) || rho == 0.0)
        throw DegenerateRatio("field ratio rho must be finite and nonzero");
    const double dphi = std::remainder(phi_a - phi_b, M_PI);
    if (std::abs(dphi) < 1e-9)
        throw InconsistentMeasurement("azimuths must differ modulo pi");
}

std::array<double, 3> forward_contrasts(const std::array<double, 3>& axis, double rho,
                                        double phi_a, double phi_b, double kappa) {
    const double norm = std::sqrt(sq(axis[0]) + sq(axis[1]) + sq(axis[2]));
    if (std::abs(norm - 1.0) > 1e-12)
        throw std::invalid_argument("forward_contrasts: axis must be unit length");
    if (!(kappa > 0.0)) throw std::invalid_argument("forward_contrasts: kappa must be > 0");
    const double u = axis[0], v = axis[1], w = axis[2];
    const double c_center = kappa * rho * rho * (1.0 - w * w);
    const double c_a = kappa * (1.0 - sq(u * std::cos(phi_a) + v * std::sin(phi_a)));
    const double c_b = kappa * (1.0 - sq(u * std::cos(phi_b) + v * std::sin(phi_b)));
    return {c_center, c_a, c_b};
}

std::array<double, 3> gauge_representative(const std::array<double, 3>& axis) {
    std::array<double, 3> n = axis;
    const bool flip = n[2] < 0.0 || (n[2] == 0.0 && (n[0] < 0.0 || (n[0] == 0.0 && n[1] < 0.0)));
    if (flip)
        for (auto& c : n) c = -c;
    for (auto& c : n)
        if (c == 0.0) c = 0.0; // normalize -0
    return n;
}

double director_angle(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double d = std::abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
    return std::acos(std::min(1.0, d));
}

namespace {

void append_unique(std::vector<std::array<double, 3>>& list, const std::array<double, 3>& cand) {
    for (const auto& c : list)
        if (director_angle(c, cand) < kDedupeAngle) return;
    list.push_back(cand);
}

} // namespace

AxisCandidateSet invert_axis_closed_form(const ThreePointMeasurement& m) {
    m.validate();
    if (std::abs(m.phi_a) > 1e-9 || std::abs(m.phi_b - M_PI_2) > 1e-9)
        throw std::invalid_argument(
            "closed-form inversion requires the orthogonal azimuths phi_a = 0, phi_b = pi/2");
    if (!m.linear_regime)
        throw std::invalid_argument("closed-form inversion assumes the linear regime");

    const double rho2 = m.rho * m.rho;
    const double kappa = (m.c_center + rho2 * (m.c_a + m.c_b)) / (2.0 * rho2);
    if (!(kappa > 0.0)) throw InconsistentMeasurement("recovered kappa is not positive");

    double u2 = 1.0 - m.c_a / kappa;
    double v2 = 1.0 - m.c_b / kappa;
    if (u2 < -kSquareSlack || v2 < -kSquareSlack || u2 > 1.0 + kSquareSlack ||
        v2 > 1.0 + kSquareSlack)
        throw InconsistentMeasurement("squared axis components outside [0, 1]");
    u2 = std::clamp(u2, 0.0, 1.0);
    v2 = std::clamp(v2, 0.0, 1.0);
    double w2 = 1.0 - u2 - v2;
    if (w2 < -kSquareSlack) throw InconsistentMeasurement("u^2 + v^2 exceeds 1");
    w2 = std::clamp(w2, 0.0, 1.0);

    const double u = std::sqrt(u2), v = std::sqrt(v2), w = std::sqrt(w2);
    AxisCandidateSet set;
    set.kappa = kappa;
    const double scale = std::max({m.c_center, m.c_a, m.c_b, 1e-300});
    for (int su : {1, -1})
        for (int sv : {1, -1})
            for (int sw : {1, -1}) {
                const std::array<double, 3> n{su * u, sv * v, sw * w};
                const auto fwd = forward_contrasts(
                    {n[0], n[1], n[2]}, m.rho, 0.0, M_PI_2, kappa);
                const double err = std::max({std::abs(fwd[0] - m.c_center),
                                             std::abs(fwd[1] - m.c_a), std::abs(fwd[2] - m.c_b)});
                if (err <= kForwardTol * scale) append_unique(set.candidates, gauge_representative(n));
            }
    if (set.candidates.empty())
        throw InconsistentMeasurement("no sign combination reproduces the measured contrasts");
    set.residual = 0.0;
    std::ostringstream note;
    note << "director gauge n ~ -n collapsed to the upper hemisphere; " << set.candidates.size()
         << " sign-ambiguous candidate(s) remain";
    set.gauge_note = note.str();
    return set;
}

namespace {

struct CircPoint {
    double phi;
    double contrast;
};

double model_residual(double theta, double psi, double kappa, double rho,
                      const ThreePointMeasurement& m, const std::vector<CircPoint>& circ) {
    const double st = std::sin(theta);
    const double u = st * std::cos(psi), v = st * std::sin(psi), w = std::cos(theta);
    double res = sq(kappa * rho * rho * (1.0 - w * w) - m.c_center);
    for (const auto& c : circ)
        res += sq(kappa * (1.0 - sq(u * std::cos(c.phi) + v * std::sin(c.phi))) - c.contrast);
    return res;
}

double optimal_kappa(double theta, double psi, double rho, const ThreePointMeasurement& m,
                     const std::vector<CircPoint>& circ) {
    const double st = std::sin(theta);
    const double u = st * std::cos(psi), v = st * std::sin(psi), w = std::cos(theta);
    double num = rho * rho * (1.0 - w * w) * m.c_center;
    double den = sq(rho * rho * (1.0 - w * w));
    for (const auto& c : circ) {
        const double g = 1.0 - sq(u * std::cos(c.phi) + v * std::sin(c.phi));
        num += g * c.contrast;
        den += g * g;
    }
    return den > 0.0 ? std::max(num / den, 1e-12) : 1e-12;
}

} // namespace

AxisCandidateSet invert_axis_least_squares(const ThreePointMeasurement& m,
                                           const std::vector<std::pair<double, double>>& extra) {
    m.validate();
    std::vector<CircPoint> circ{{m.phi_a, m.c_a}, {m.phi_b, m.c_b}};
    for (const auto& [phi, c] : extra) circ.push_back({phi, c});
    for (size_t i = 0; i < circ.size(); ++i)
        for (size_t j = i + 1; j < circ.size(); ++j)
            if (std::abs(std::remainder(circ[i].phi - circ[j].phi, M_PI)) < 1e-9)
                throw std::invalid_argument("circumference azimuths must be distinct modulo pi");

    struct Minimum {
        double theta, psi, kappa, residual;
        int start_index;
    };
    std::vector<Minimum> minima;

    // Nelder-Mead over (theta, psi) with kappa eliminated analytically.
    const auto objective = [&](double theta, double psi) {
        const double kappa = optimal_kappa(theta, psi, m.rho, m, circ);
        return model_residual(theta, psi, kappa, m.rho, m, circ);
    };
    const auto refine = [&](double theta0, double psi0) {
        struct Vertex {
            double t, p, f;
        };
        const double h = M_PI / 36.0;
        std::array<Vertex, 3> s{{{theta0, psi0, objective(theta0, psi0)},
                                 {theta0 + h, psi0, objective(theta0 + h, psi0)},
                                 {theta0, psi0 + h, objective(theta0, psi0 + h)}}};
        for (int it = 0; it < 300; ++it) {
            std::sort(s.begin(), s.end(),
                      [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
            if (std::hypot(s[2].t - s[0].t, s[2].p - s[0].p) < 1e-12) break;
            const double ct = 0.5 * (s[0].t + s[1].t), cp = 0.5 * (s[0].p + s[1].p);
            const auto eval = [&](double alpha) {
                return Vertex{ct + alpha * (ct - s[2].t), cp + alpha * (cp - s[2].p), 0.0};
            };
            Vertex refl = eval(1.0);
            refl.f = objective(refl.t, refl.p);
            if (refl.f < s[0].f) {
                Vertex exp_ = eval(2.0);
                exp_.f = objective(exp_.t, exp_.p);
                s[2] = exp_.f < refl.f ? exp_ : refl;
            } else if (refl.f < s[1].f) {
                s[2] = refl;
            } else {
                Vertex con = eval(-0.5);
                con.f = objective(con.t, con.p);
                if (con.f < s[2].f) {
                    s[2] = con;
                } else {
                    for (int v = 1; v < 3; ++v) {
                        s[v].t = 0.5 * (s[v].t + s[0].t);
                        s[v].p = 0.5 * (s[v].p + s[0].p);
                        s[v].f = objective(s[v].t, s[v].p);
                    }
                }
            }
        }
        std::sort(s.begin(), s.end(), [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
        return s[0];
    };

    int start_index = 0;
    for (int it = 0; it < 12; ++it) {
        for (int ip = 0; ip < 12; ++ip, ++start_index) {
            const auto best = refine((it + 0.5) * M_PI / 12.0, ip * 2.0 * M_PI / 12.0);
            if (!std::isfinite(best.f)) throw FitNoConvergence("axis fit diverged");
            minima.push_back({best.t, best.p, optimal_kappa(best.t, best.p, m.rho, m, circ),
                              best.f, start_index});
        }
    }

    std::sort(minima.begin(), minima.end(), [](const Minimum& a, const Minimum& b) {
        return a.residual != b.residual ? a.residual < b.residual : a.start_index < b.start_index;
    });
    const double best = minima.front().residual;
    const double cutoff = best <= 1e-18 ? 1e-18 : best * 1.05;

    AxisCandidateSet set;
    set.residual = best;
    set.kappa = minima.front().kappa;
    for (const auto& mn : minima) {
        if (mn.residual > cutoff) break;
        const double st = std::sin(mn.theta);
        append_unique(set.candidates, gauge_representative({st * std::cos(mn.psi),
                                                            st * std::sin(mn.psi),
                                                            std::cos(mn.theta)}));
    }
    std::ostringstream note;
    note << "director gauge n ~ -n collapsed to the upper hemisphere; " << set.candidates.size()
         << " local minimum(-a) within 1.05x of the best residual";
    set.gauge_note = note.str();
    return set;
}

namespace {

/// Radius where h_z crosses zero on the plane (the purely-radial point of the
/// evanescent tail); falls back to the |h_r| peak when no crossing exists.
double protocol_radius(const ModeSolution& mode, double z_offset) {
    const Grid2D& g = mode.grid;
    std::vector<double> radii(g.nr);
    for (int i = 0; i < g.nr; ++i) radii[i] = g.r_of(i);
    const FieldPlane plane = sample_plane(mode, z_offset, radii);

    size_t peak = 0;
    for (size_t k = 1; k < radii.size(); ++k)
        if (std::abs(plane.h_r[k]) > std::abs(plane.h_r[peak])) peak = k;
    const double hr_scale = std::abs(plane.h_r[peak]);

    for (size_t k = 1; k + 1 < radii.size(); ++k) {
        if (plane.h_z[k] * plane.h_z[k + 1] < 0.0 &&
            std::abs(plane.h_r[k]) > 0.25 * hr_scale) {
            const double f = plane.h_z[k] / (plane.h_z[k] - plane.h_z[k + 1]);
            return radii[k] + f * (radii[k + 1] - radii[k]);
        }
    }
    return radii[peak];
}

double fitted_contrast(const ModeSolution& mode, const NVCenter& nv, double x, double y,
                       double z_offset, double drive_power) {
    const auto field = field_at(mode, x, y, z_offset);
    const double gamma = nv.linewidth_fwhm;
    const double span = 8.0 * gamma + 4.0 * (nv.strain_e + nv.hyperfine_a);
    const int n_points = 601;
    std::vector<double> freqs(n_points);
    for (int k = 0; k < n_points; ++k)
        freqs[k] = nv.d_splitting - span / 2 + span * k / (n_points - 1);
    const auto spectrum = synthesize_spectrum(nv, field, drive_power, freqs, 0.0, 0);
    const int n_lines = nv.strain_e > 0.0 ? 2 : (nv.hyperfine_a > 0.0 ? 3 : 1);
    return fit_odmr(spectrum, n_lines).contrast;
}

} // namespace

EndToEndResult end_to_end_axis_recovery(const ModeSolution& mode, const NVCenter& nv,
                                        double z_offset, double drive_power) {
    nv.validate();
    EndToEndResult result;
    result.protocol_radius = protocol_radius(mode, z_offset);
    const double r = result.protocol_radius;

    // Linear-regime precondition at the strongest of the three points.
    double s_max = 0.0;
    for (const auto& pos : {std::array<double, 3>{0, 0, z_offset}, {r, 0, z_offset},
                            {0, r, z_offset}}) {
        const auto f = field_at(mode, pos[0], pos[1], pos[2]);
        const double coupling = rabi_coupling(f, nv.axis);
        s_max = std::max(s_max, drive_power * coupling * coupling / nv.p_sat);
    }
    if (s_max > 0.01)
        throw std::invalid_argument(
            "end_to_end_axis_recovery: drive power leaves the linear regime (s > 0.01)");

    const FieldPlane probe = sample_plane(mode, z_offset, {0.0, r});
    result.rho = probe.h_z[0] / probe.h_r[1];

    const double c_center = fitted_contrast(mode, nv, 0.0, 0.0, z_offset, drive_power);
    const double c_a = fitted_contrast(mode, nv, r, 0.0, z_offset, drive_power);
    const double c_b = fitted_contrast(mode, nv, 0.0, r, z_offset, drive_power);
    result.fitted_contrasts = {c_center, c_a, c_b};

    ThreePointMeasurement m;
    m.c_center = std::max(c_center, 0.0);
    m.c_a = std::max(c_a, 0.0);
    m.c_b = std::max(c_b, 0.0);
    m.rho = result.rho;
    m.linear_regime = true;
    // Fitted contrasts carry small fit and saturation wiggle, so they can sit
    // just outside the exactly-feasible set; the least-squares inversion
    // projects onto it instead of rejecting.
    result.recovered = invert_axis_least_squares(m);

    result.true_axis = gauge_representative(nv.axis);
    double nearest = M_PI;
    for (const auto& cand : result.recovered.candidates) {
        const double err = director_angle(cand, result.true_axis);
        result.angular_errors.push_back(err);
        nearest = std::min(nearest, err);
    }
    result.nearest_error = nearest;
    return result;
}

} // namespace nvcavity
