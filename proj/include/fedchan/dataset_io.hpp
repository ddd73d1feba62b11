// SPDX-License-Identifier: Apache-2.0
//
// Binary dataset container. Layout (little-endian):
//   "FCDS", u32 version, u32 scenario, u32 user, u32 rows, u32 cols,
//   u32 planes, u32 label_len, u64 count, u64 seed,
//   then per record: f32[planes*rows*cols] input, f32[label_len] label.
// Samples are stored at 32-bit precision and widened to double on read; the
// train/validation split is recomputed from the seed.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "fedchan/pilot_frontend.hpp"

namespace fedchan {

/// Thrown when a file ends before its declared payload.
struct TruncatedFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a header is inconsistent with itself or with the payload.
struct DatasetFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_dataset(const std::filesystem::path& path, const LocalDataset& ds);
LocalDataset read_dataset(const std::filesystem::path& path);

}  // namespace fedchan
