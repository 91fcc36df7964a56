#pragma once

#include <array>
#include <string>
#include <vector>

#include "nvcavity/nvodmr.hpp"

namespace nvcavity {

/// ODMR contrasts at the cavity center and at two azimuths on the protocol
/// circle, plus the axial-to-radial field ratio rho = h_z(0)/h_r(r_protocol).
struct ThreePointMeasurement {
    double c_center = 0.0;
    double c_a = 0.0;
    double c_b = 0.0;
    double phi_a = 0.0;          // rad
    double phi_b = M_PI_2;       // rad
    double rho = 1.0;
    bool linear_regime = true;

    void validate() const;
};

/// Recovered axis directions. The spin axis is a director (n and -n are the
/// same state), so candidates are collapsed to the upper hemisphere; the
/// remaining sign ambiguity of the squared components is kept explicit.
struct AxisCandidateSet {
    std::vector<std::array<double, 3>> candidates;
    std::string gauge_note;
    double residual = 0.0; // least-squares path; 0 for the closed form
    double kappa = 0.0;    // recovered contrast scale
};

/// Linear-regime forward model: c_center = kappa rho^2 (1 - w^2),
/// c_j = kappa (1 - (u cos phi_j + v sin phi_j)^2) for the unit axis
/// (u, v, w). The circumference field is taken purely radial and the center
/// field purely axial.
[[nodiscard]] std::array<double, 3> forward_contrasts(const std::array<double, 3>& axis,
                                                      double rho, double phi_a, double phi_b,
                                                      double kappa);

/// Closed-form inversion for the orthogonal-azimuth protocol
/// (phi_a = 0, phi_b = pi/2).
[[nodiscard]] AxisCandidateSet invert_axis_closed_form(const ThreePointMeasurement& m);

/// Multi-start least squares over (theta, psi, kappa); accepts extra
/// (phi, contrast) circumference points beyond the orthogonal pair.
[[nodiscard]] AxisCandidateSet invert_axis_least_squares(
    const ThreePointMeasurement& m,
    const std::vector<std::pair<double, double>>& extra = {});

/// Gauge representative of a director: upper hemisphere, ties broken toward
/// +x then +y.
[[nodiscard]] std::array<double, 3> gauge_representative(const std::array<double, 3>& axis);

/// Angular distance between directors, arccos(|a . b|), in radians.
[[nodiscard]] double director_angle(const std::array<double, 3>& a,
                                    const std::array<double, 3>& b);

struct EndToEndResult {
    std::array<double, 3> true_axis{0, 0, 1}; // gauge representative
    AxisCandidateSet recovered;
    std::vector<double> angular_errors; // rad, per candidate
    double nearest_error = 0.0;         // rad
    double protocol_radius = 0.0;       // m
    double rho = 0.0;
    std::array<double, 3> fitted_contrasts{0, 0, 0};
};

/// Full protocol rehearsal on simulated fields: synthesize ODMR spectra at
/// the center and two orthogonal azimuths on the protocol circle, fit the
/// contrasts, invert, and compare against the NV axis that generated them.
/// The protocol circle sits at the H_z null of the sampled plane (falling
/// back to the |h_r| peak), where the purely-radial model is exact.
[[nodiscard]] EndToEndResult end_to_end_axis_recovery(const ModeSolution& mode, const NVCenter& nv,
                                                      double z_offset, double drive_power);

} // namespace nvcavity
