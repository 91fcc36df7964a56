#pragma once

#include <utility>
#include <vector>

#include <Eigen/Sparse>

#include "nvcavity/geometry.hpp"

namespace nvcavity {

/// One TE0 eigenmode on its grid. Fields are L2-normalized with the radial
/// measure (sum e^2 r dr dz = 1) and sign-fixed so that e_theta > 0 at its
/// largest-magnitude node. h_r = de/dz and h_z = (1/r) d(r e)/dr share that
/// normalization (the common 1/(omega mu0) factor is dropped).
struct ModeSolution {
    double frequency = 0.0; // Hz
    std::vector<double> e_theta;
    std::vector<double> h_r;
    std::vector<double> h_z;
    int n_radial = 0;
    int p_axial = 0;
    Grid2D grid;
};

/// Generalized eigenproblem A x = lambda B x with lambda = (omega/c)^2.
/// Dirichlet rows (metal, axis, outer boundary) carry a unit diagonal in A
/// and zero in b_diag. A is symmetric under the row_weight inner product.
struct EigenProblem {
    Eigen::SparseMatrix<double> a;
    Eigen::VectorXd b_diag;
    Eigen::VectorXd row_weight; // r * dr * dz per node (cut cells scaled), 0 on Dirichlet rows
};

[[nodiscard]] EigenProblem assemble_eigenproblem(const Grid2D& grid);

struct SolverOptions {
    double shift_hz = 0.0;          // spectral shift; 0 targets the lowest modes
    double tolerance = 1e-9;        // relative Ritz residual
    int max_lanczos = 1200;
    int dense_fallback_limit = 20000;
    unsigned long long seed = 0x6e76636176ULL; // Lanczos start vector
};

/// Closed-form TE0np frequency of an empty metal cylinder,
/// f = (c/2pi) sqrt((chi_n/R)^2 + (p pi/L)^2) with J1(chi_n) = 0.
[[nodiscard]] double analytic_te0np(double radius, double height, int n, int p);

/// n-th positive root of the Bessel function J1 (n in [1, 8]).
[[nodiscard]] double bessel_j1_root(int n);

/// The `count` lowest TE0 modes of the rasterized geometry, classified and
/// sorted by frequency. Near-degenerate pairs (within 0.01%) are both kept.
[[nodiscard]] std::vector<ModeSolution> solve_te0_modes(const CavityGeometry& geometry,
                                                        double resolution, int count,
                                                        const SolverOptions& options = {});

/// Same, on an already rasterized grid.
[[nodiscard]] std::vector<ModeSolution> solve_grid_modes(const Grid2D& grid, int count,
                                                         const SolverOptions& options = {});

/// (n, p) by counting interior sign changes of e_theta along the radial line
/// through the peak height and the axial line through the peak radius.
[[nodiscard]] std::pair<int, int> classify_mode(const ModeSolution& mode);

/// L2 field overlap |<e1, e2>_r| for two modes on identical grids; 1 for
/// identical normalized fields.
[[nodiscard]] double mode_overlap(const ModeSolution& a, const ModeSolution& b);

struct TuningPoint {
    double depth = 0.0;     // m
    double frequency = 0.0; // Hz
};

/// Frequency of the selected mode versus plunger depth. The mode is picked by
/// classification at the first depth and tracked to later depths by field
/// overlap (not by rank), so avoided crossings do not swap branches.
[[nodiscard]] std::vector<TuningPoint> tuning_curve(const CavityGeometry& geometry,
                                                    const std::vector<double>& depths,
                                                    std::pair<int, int> mode_selector,
                                                    double resolution, int jobs = 1,
                                                    const SolverOptions& options = {});

/// Plunger depth whose tracked-mode frequency is within 1 MHz of target.
[[nodiscard]] double find_plunger_for_frequency(const CavityGeometry& geometry, double target_hz,
                                                std::pair<int, int> mode_selector,
                                                double resolution, int jobs = 1,
                                                const SolverOptions& options = {});

/// Q = f0 / fwhm.
[[nodiscard]] double q_from_linewidth(double f0, double fwhm);

/// Steady-state circulating power of a single-port resonator,
/// p_in * Q * 4 beta / (1 + beta)^2.
[[nodiscard]] double circulating_power(double p_in, double q_loaded, double beta);

struct CalibrationTarget {
    int n = 1;
    int p = 1;
    double frequency = 0.0; // Hz
};

enum class FreeParam { RelativePermittivity, RingOuterRadius, RingTop };

struct CalibrationOptions {
    double resolution = 0.5e-3;
    int mode_count = 8;
    int max_sweeps = 50;
    double convergence = 1e-6;  // objective improvement per sweep
    double ring_top_max = 16e-3; // keeps plunger travel for tuning
    double permittivity_min = 1.5;
    double permittivity_max = 400.0;
};

struct CalibrationResult {
    CavityGeometry geometry;
    std::vector<double> achieved;  // Hz, one per target (0 when mode not found)
    std::vector<double> residuals; // |f - target| / target
    double objective = 0.0;        // sum of squared relative residuals
    int sweeps = 0;
};

/// Coordinate descent with bracketed golden-section line searches over the
/// free parameters, minimizing the summed squared relative frequency error.
[[nodiscard]] CalibrationResult calibrate_geometry(const CavityGeometry& base,
                                                   const std::vector<CalibrationTarget>& targets,
                                                   const std::vector<FreeParam>& free_params,
                                                   const CalibrationOptions& options = {});

} // namespace nvcavity
