#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nvcavity/nvodmr.hpp"

namespace nvcavity {

/// Writes a CSV file atomically (temp file in the same directory + rename).
/// '.' decimal separator, LF line endings, header row first (after any
/// comment lines). Numbers are written with enough digits to round-trip.
void write_csv_atomic(const std::filesystem::path& path, const std::string& header,
                      const std::vector<std::vector<double>>& rows,
                      const std::vector<std::string>& comment_lines = {});

/// Reads a `frequency_ghz,fluorescence` spectrum (the export schema).
[[nodiscard]] ODMRSpectrum read_spectrum_csv(const std::filesystem::path& path);

} // namespace nvcavity
