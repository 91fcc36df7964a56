#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nvcavity/fieldmap.hpp"

namespace nvcavity {

/// Ground-state spin parameters of a single NV- center. The axis is a
/// director (n and -n are equivalent) and is stored unit-normalized.
struct NVCenter {
    std::array<double, 3> axis{0.0, 0.0, 1.0};
    double d_splitting = 2.870e9;   // Hz
    double strain_e = 0.0;          // Hz
    double hyperfine_a = 0.0;       // Hz, 0 disables hyperfine structure
    double linewidth_fwhm = 10e6;   // Hz
    double contrast_ceiling = 0.12;
    double p_sat = 3.16227766e-3;   // W (5 dBm) at unit perpendicular coupling

    void validate() const;
    /// Normalizes the axis in place; throws on a zero vector.
    void normalize_axis();
};

/// Normalized fluorescence versus drive frequency; 1 is the off-resonant
/// baseline. Seeded Gaussian noise may push individual samples slightly
/// above 1; the noiseless signal stays within (0, 1].
struct ODMRSpectrum {
    std::vector<double> frequencies; // Hz, strictly increasing
    std::vector<double> fluorescence;
    double drive_power = 0.0;            // W
    std::array<double, 3> field{0, 0, 0}; // drive field used (mode units)
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;
};

struct SpectralLine {
    double center = 0.0; // Hz
    double weight = 0.0; // relative, sums to 1 over all lines
};

struct FitResult {
    std::vector<double> centers; // Hz, sorted ascending
    double fwhm = 0.0;           // Hz, common to all lines
    double contrast = 0.0;       // total dip depth
    double baseline = 1.0;
    double rms_residual = 0.0;
    int iterations = 0;
    bool low_significance = false; // contrast below the residual noise level
};

struct ContrastScan {
    std::vector<double> positions; // m along the scan axis
    std::vector<double> contrasts;
    bool max_normalized = false;
};

/// Magnitude of the drive-field component perpendicular to the NV axis.
[[nodiscard]] double rabi_coupling(const std::array<double, 3>& field,
                                   const std::array<double, 3>& axis);

/// Zero-static-field resonance lines: two electronic lines at
/// d_splitting +- strain_e, each split into a hyperfine triplet when
/// hyperfine_a > 0. Weights sum to 1; coincident lines are merged.
[[nodiscard]] std::vector<SpectralLine> resonance_lines(const NVCenter& nv);

/// Steady-state ODMR contrast, ceiling * s / (1 + s) with s = power / p_sat.
[[nodiscard]] double saturation_contrast(const NVCenter& nv, double local_power);

/// Lorentzian ODMR spectrum for the drive field seen by the NV; noise is
/// seeded and reproducible.
[[nodiscard]] ODMRSpectrum synthesize_spectrum(const NVCenter& nv,
                                               const std::array<double, 3>& field,
                                               double drive_power,
                                               const std::vector<double>& frequencies,
                                               double noise_sigma, std::uint64_t seed);

/// Levenberg-Marquardt fit of n_lines equal-weight Lorentzian dips with a
/// shared width against a spectrum (synthetic or imported).
[[nodiscard]] FitResult fit_odmr(const ODMRSpectrum& spectrum, int n_lines);

/// Saturation contrast along a path of (x, y, z_offset) positions under the
/// mode's evanescent field.
[[nodiscard]] ContrastScan contrast_scan(const ModeSolution& mode, const NVCenter& nv,
                                         const std::vector<std::array<double, 3>>& path,
                                         double drive_power, bool max_normalize = true);

/// dBm <-> W conversions (interface layer; all internal powers are watts).
[[nodiscard]] double dbm_to_watts(double dbm);
[[nodiscard]] double watts_to_dbm(double watts);

} // namespace nvcavity
