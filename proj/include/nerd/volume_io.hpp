#pragma once

#include <filesystem>

#include "nerd/data.hpp"

namespace nerd {

/// NIfTI-1 single-file volumes (.nii, .nii.gz). Axes map as
/// (nz, ny, nx) -> (depth, height, width); scl_slope/scl_inter are applied.
Volume read_nifti(const std::filesystem::path& path);
/// Writes float32 NIfTI-1; gzip-compressed when the name ends in ".gz".
void write_nifti(const std::filesystem::path& path, const Volume& volume);

/// Raw little-endian float32 D*H*W array with a JSON sidecar "<path>.json":
/// {"dims": [D, H, W], "spacing": [sd, sh, sw]}.
Volume read_raw_volume(const std::filesystem::path& path);
void write_raw_volume(const std::filesystem::path& path, const Volume& volume);

/// Dispatches on extension: .nii/.nii.gz -> NIfTI, .raw -> raw + sidecar.
Volume read_volume(const std::filesystem::path& path);

}  // namespace nerd
