#pragma once

#include <cstdint>
#include <vector>

#include "nvcavity/errors.hpp"

namespace nvcavity {

/// Linear, isotropic, non-magnetic medium.
struct Material {
    double relative_permittivity = 1.0;
    double loss_tangent = 0.0;

    void validate() const;
};

/// Axisymmetric cavity: metal shield of radius/height, a dielectric ring
/// resting inside, a coaxial plunger descending from the top plate, and an
/// air column modeled below the open bottom plane (z < 0). All lengths in
/// meters; z = 0 is the bottom plane of the shield.
struct CavityGeometry {
    double shield_radius = 16e-3;
    double shield_height = 20e-3;
    double ring_inner_radius = 6e-3;
    double ring_outer_radius = 8e-3;
    double ring_bottom = 0.0;
    double ring_top = 13e-3;
    double plunger_radius = 14e-3;
    double plunger_depth = 0.0;     // insertion from the top plate; 0 = retracted
    double bottom_extension = 10e-3; // 0 closes the bottom (validation geometries)
    Material dielectric{100.0, 1e-4};
    Material ambient{1.0, 0.0};

    void validate() const;
    [[nodiscard]] double max_plunger_depth() const { return shield_height - ring_top; }
};

/// Calibration-start geometry. Shield dimensions are fixed by the hardware;
/// the ring cross-section, permittivity and plunger radius are tunable
/// calibration parameters, not ground truth.
[[nodiscard]] CavityGeometry default_geometry();

enum class Region : std::uint8_t { Ambient = 0, Dielectric = 1, Metal = 2 };

/// Uniform node-centered grid over r in [0, shield_radius],
/// z in [-bottom_extension, shield_height]. Node (0, j) lies on the axis.
struct Grid2D {
    int nr = 0;
    int nz = 0;
    double dr = 0.0;
    double dz = 0.0;
    double z0 = 0.0; // z of node row j = 0
    std::vector<Region> region; // nr*nz, index i + nr*j
    std::vector<double> epsilon; // relative permittivity per node
    // Plunger-face cut: fraction of dz between a node row and the metal face
    // directly above it, 1 when the face coincides with the next node row.
    double face_theta = 1.0;
    int face_row = -1;      // node row just below the plunger face, -1 if none
    int face_cols = 0;      // columns 0..face_cols-1 are under the plunger

    [[nodiscard]] double r_of(int i) const { return i * dr; }
    [[nodiscard]] double z_of(int j) const { return z0 + j * dz; }
    [[nodiscard]] Region region_of(int i, int j) const { return region[i + nr * j]; }
    [[nodiscard]] double eps_of(int i, int j) const { return epsilon[i + nr * j]; }
    [[nodiscard]] int index(int i, int j) const { return i + nr * j; }
    [[nodiscard]] int size() const { return nr * nz; }
};

/// Tags every node by cell-center membership. `resolution` is the target cell
/// size; actual spacings divide the extents exactly. Throws ResolutionTooCoarse
/// when the dielectric ring would span fewer than 4 cells in either direction.
[[nodiscard]] Grid2D rasterize(const CavityGeometry& geometry, double resolution);

} // namespace nvcavity
