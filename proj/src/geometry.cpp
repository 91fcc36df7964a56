#include "nvcavity/geometry.hpp"

#include <cmath>

namespace nvcavity {

namespace {

constexpr double kTiny = 1e-12; // sub-picometer guard for boundary membership

bool in_half_open(double x, double lo, double hi) {
    return x >= lo - kTiny && x < hi - kTiny;
}

} // namespace

void Material::validate() const {
    if (!(relative_permittivity >= 1.0))
        throw ConfigError("relative_permittivity must be >= 1");
    if (!(loss_tangent >= 0.0))
        throw ConfigError("loss_tangent must be >= 0");
}

void CavityGeometry::validate() const {
    dielectric.validate();
    ambient.validate();
    if (!(shield_radius > 0.0) || !(shield_height > 0.0))
        throw ConfigError("shield dimensions must be positive");
    if (!(0.0 < ring_inner_radius && ring_inner_radius < ring_outer_radius &&
          ring_outer_radius < shield_radius))
        throw ConfigError("require 0 < ring_inner_radius < ring_outer_radius < shield_radius");
    if (!(0.0 <= ring_bottom && ring_bottom < ring_top && ring_top <= shield_height))
        throw ConfigError("require 0 <= ring_bottom < ring_top <= shield_height");
    if (!(0.0 <= plunger_depth && plunger_depth <= shield_height - ring_top + kTiny))
        throw ConfigError("plunger_depth must lie in [0, shield_height - ring_top]");
    if (!(plunger_radius > 0.0 && plunger_radius < shield_radius))
        throw ConfigError("plunger_radius must lie in (0, shield_radius)");
    if (!(bottom_extension >= 0.0))
        throw ConfigError("bottom_extension must be >= 0 (0 closes the bottom)");
}

CavityGeometry default_geometry() {
    CavityGeometry g;
    g.validate();
    return g;
}

Grid2D rasterize(const CavityGeometry& g, double resolution) {
    g.validate();
    if (!(resolution > 0.0))
        throw ResolutionTooCoarse("resolution must be positive");

    Grid2D grid;
    const double height = g.shield_height + g.bottom_extension;
    grid.nr = static_cast<int>(std::lround(g.shield_radius / resolution)) + 1;
    grid.nz = static_cast<int>(std::lround(height / resolution)) + 1;
    if (grid.nr < 3 || grid.nz < 3)
        throw ResolutionTooCoarse("grid must have at least 3 nodes per direction");
    grid.dr = g.shield_radius / (grid.nr - 1);
    grid.dz = height / (grid.nz - 1);
    grid.z0 = -g.bottom_extension;

    if ((g.ring_outer_radius - g.ring_inner_radius) / grid.dr < 4.0 - 1e-9 ||
        (g.ring_top - g.ring_bottom) / grid.dz < 4.0 - 1e-9)
        throw ResolutionTooCoarse("dielectric ring must span at least 4 cells per direction");

    grid.region.assign(static_cast<size_t>(grid.nr) * grid.nz, Region::Ambient);
    grid.epsilon.assign(static_cast<size_t>(grid.nr) * grid.nz, g.ambient.relative_permittivity);

    const double face_z = g.shield_height - g.plunger_depth;
    for (int j = 0; j < grid.nz; ++j) {
        const double z = grid.z_of(j);
        for (int i = 0; i < grid.nr; ++i) {
            const double r = grid.r_of(i);
            Region tag = Region::Ambient;
            if (i == grid.nr - 1 || j == 0 || j == grid.nz - 1) {
                tag = Region::Metal; // shield wall, far bottom wall, top plate
            } else if (g.plunger_depth > 0.0 && r <= g.plunger_radius + kTiny &&
                       z >= face_z - kTiny) {
                tag = Region::Metal;
            } else if (in_half_open(r, g.ring_inner_radius, g.ring_outer_radius) &&
                       in_half_open(z, g.ring_bottom, g.ring_top)) {
                tag = Region::Dielectric;
            }
            grid.region[grid.index(i, j)] = tag;
            grid.epsilon[grid.index(i, j)] =
                tag == Region::Dielectric ? g.dielectric.relative_permittivity
                                          : g.ambient.relative_permittivity;
        }
    }

    // Plunger face between node rows: remember the cut fraction for assembly.
    if (g.plunger_depth > 0.0) {
        const int j_face = static_cast<int>(std::floor((face_z - grid.z0) / grid.dz + kTiny));
        if (j_face >= 1 && j_face < grid.nz - 1) {
            const double theta = (face_z - grid.z_of(j_face)) / grid.dz;
            if (theta > kTiny && theta < 1.0 - kTiny) {
                grid.face_row = j_face;
                grid.face_theta = std::max(theta, 0.05);
                int cols = 0;
                while (cols < grid.nr && grid.r_of(cols) <= g.plunger_radius + kTiny) ++cols;
                grid.face_cols = cols;
            }
        }
    }
    return grid;
}

} // namespace nvcavity
