#pragma once

#include <array>
#include <vector>

#include "nvcavity/modesolver.hpp"

namespace nvcavity {

/// Magnetic-field samples on a horizontal plane below the cavity bottom.
/// z_offset is measured downward from z = 0; normalized components satisfy
/// norm_h_r^2 + norm_h_z^2 = 1 wherever the field is above the noise floor
/// (1e-9 of the plane maximum) and are zeroed below it.
struct FieldPlane {
    double z_offset = 0.0;
    std::vector<double> radii;
    std::vector<double> h_r;
    std::vector<double> h_z;
    std::vector<double> normalized_h_r;
    std::vector<double> normalized_h_z;
};

[[nodiscard]] FieldPlane sample_plane(const ModeSolution& mode, double z_offset,
                                      const std::vector<double>& radii);

/// Cartesian lift of the axisymmetric field at (x, y, z_offset below bottom):
/// (h_r x/r, h_r y/r, h_z), with the on-axis limit (0, 0, h_z).
[[nodiscard]] std::array<double, 3> field_at(const ModeSolution& mode, double x, double y,
                                             double z_offset);

/// h_z(r=0) / h_r(r*) on the plane, where r* maximizes |h_r|; sign preserved.
[[nodiscard]] double field_ratio(const ModeSolution& mode, double z_offset);

/// Radius of maximum |h_r| on the plane (grid-resolution sampling).
[[nodiscard]] double peak_radial_field_radius(const ModeSolution& mode, double z_offset);

} // namespace nvcavity
