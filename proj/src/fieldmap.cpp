#include "nvcavity/fieldmap.hpp"

#include <algorithm>
#include <cmath>

namespace nvcavity {

namespace {

double bilinear(const std::vector<double>& field, const Grid2D& g, double r, double z) {
    const double x = r / g.dr;
    const double y = (z - g.z0) / g.dz;
    int i = static_cast<int>(std::floor(x));
    int j = static_cast<int>(std::floor(y));
    i = std::clamp(i, 0, g.nr - 2);
    j = std::clamp(j, 0, g.nz - 2);
    const double fx = std::clamp(x - i, 0.0, 1.0);
    const double fy = std::clamp(y - j, 0.0, 1.0);
    const double v00 = field[g.index(i, j)];
    const double v10 = field[g.index(i + 1, j)];
    const double v01 = field[g.index(i, j + 1)];
    const double v11 = field[g.index(i + 1, j + 1)];
    return (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 + fx * fy * v11;
}

void check_offset(const ModeSolution& mode, double z_offset) {
    const double ext = -mode.grid.z0;
    if (!(z_offset >= 0.0) || z_offset > ext + 1e-12)
        throw OffsetOutsideDomain("z_offset must lie within the modeled bottom extension");
}

double shield_radius_of(const ModeSolution& mode) {
    return mode.grid.r_of(mode.grid.nr - 1);
}

} // namespace

FieldPlane sample_plane(const ModeSolution& mode, double z_offset,
                        const std::vector<double>& radii) {
    check_offset(mode, z_offset);
    const double rmax = shield_radius_of(mode);
    for (double r : radii)
        if (r < 0.0 || r > rmax + 1e-12)
            throw OffsetOutsideDomain("plane radius outside [0, shield_radius]");

    FieldPlane plane;
    plane.z_offset = z_offset;
    plane.radii = radii;
    const double z = -z_offset;
    plane.h_r.reserve(radii.size());
    plane.h_z.reserve(radii.size());
    double plane_max = 0.0;
    for (double r : radii) {
        const double hr = bilinear(mode.h_r, mode.grid, r, z);
        const double hz = bilinear(mode.h_z, mode.grid, r, z);
        plane.h_r.push_back(hr);
        plane.h_z.push_back(hz);
        plane_max = std::max(plane_max, std::hypot(hr, hz));
    }
    const double floor = 1e-9 * plane_max;
    plane.normalized_h_r.resize(radii.size(), 0.0);
    plane.normalized_h_z.resize(radii.size(), 0.0);
    for (size_t k = 0; k < radii.size(); ++k) {
        const double mag = std::hypot(plane.h_r[k], plane.h_z[k]);
        if (mag > floor) {
            plane.normalized_h_r[k] = plane.h_r[k] / mag;
            plane.normalized_h_z[k] = plane.h_z[k] / mag;
        }
    }
    return plane;
}

std::array<double, 3> field_at(const ModeSolution& mode, double x, double y, double z_offset) {
    check_offset(mode, z_offset);
    const double r = std::hypot(x, y);
    if (r > shield_radius_of(mode) + 1e-12)
        throw OffsetOutsideDomain("position outside the shield radius");
    const double z = -z_offset;
    const double hz = bilinear(mode.h_z, mode.grid, r, z);
    if (r < 1e-15) return {0.0, 0.0, hz};
    const double hr = bilinear(mode.h_r, mode.grid, r, z);
    return {hr * x / r, hr * y / r, hz};
}

namespace {

std::vector<double> grid_radii(const ModeSolution& mode) {
    std::vector<double> radii(mode.grid.nr);
    for (int i = 0; i < mode.grid.nr; ++i) radii[i] = mode.grid.r_of(i);
    return radii;
}

} // namespace

double peak_radial_field_radius(const ModeSolution& mode, double z_offset) {
    const FieldPlane plane = sample_plane(mode, z_offset, grid_radii(mode));
    size_t peak = 0;
    for (size_t k = 1; k < plane.radii.size(); ++k)
        if (std::abs(plane.h_r[k]) > std::abs(plane.h_r[peak])) peak = k;
    return plane.radii[peak];
}

double field_ratio(const ModeSolution& mode, double z_offset) {
    const FieldPlane plane = sample_plane(mode, z_offset, grid_radii(mode));
    size_t peak = 0;
    double plane_max = 0.0;
    for (size_t k = 0; k < plane.radii.size(); ++k) {
        if (std::abs(plane.h_r[k]) > std::abs(plane.h_r[peak])) peak = k;
        plane_max = std::max(plane_max, std::hypot(plane.h_r[k], plane.h_z[k]));
    }
    const double hr_peak = plane.h_r[peak];
    if (std::abs(hr_peak) < 1e-9 * plane_max)
        throw DegenerateRatio("radial field vanishes on the sampled plane");
    return plane.h_z[0] / hr_peak;
}

} // namespace nvcavity
