#pragma once

#include <filesystem>

#include "minkgeo/errors.hpp"
#include "minkgeo/field.hpp"

namespace minkgeo {

// Raster file layout (little-endian throughout):
//   bytes  0-7   magic "MGF2D\0\0\1"
//   bytes  8-11  height  (u32)
//   bytes 12-15  width   (u32)
//   bytes 16-23  pixel_size (f64)
//   byte  24     units tag (0 physical, 1 normalized)
//   bytes 25-31  reserved, zero
//   then height*width f32 values, row-major.

Field2D read_raster(const std::filesystem::path& path);
void write_raster(const Field2D& field, const std::filesystem::path& path);

/// FNV-1a 64-bit digest; used for store chunk and manifest checksums.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);

}  // namespace minkgeo
