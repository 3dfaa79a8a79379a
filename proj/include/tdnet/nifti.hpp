#pragma once

#include <string>

#include "tdnet/core_types.hpp"

namespace tdnet::nifti {

/// Reads a .nii or .nii.gz scalar volume; spacing comes from the header
/// pixdim. Supported on-disk types: uint8, int16, uint16, int32, float32,
/// float64; scl_slope/scl_inter are applied when set.
Volume read_volume(const std::string& path);

/// Reads an integer label grid (values must fit uint8; 255 is the ignore code).
ByteGrid read_labels(const std::string& path, std::array<double, 3>* spacing = nullptr);

/// Writes float32 data. Compresses when the path ends in ".gz".
void write_volume(const std::string& path, const Volume& v);

/// Writes a uint8 label grid.
void write_labels(const std::string& path, const ByteGrid& labels,
                  const std::array<double, 3>& spacing);

}  // namespace tdnet::nifti
