#pragma once

// 8-bit netpbm I/O (P6 colour, P5 grey) and conversions between byte
// rasters and [0, 1] tensors.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "transfer/tensor.hpp"

namespace transfer {

struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;  // 3 for P6, 1 for P5
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

void write_ppm(const std::filesystem::path& path, const Raster& image);
void write_pgm(const std::filesystem::path& path, const Raster& image);
/// Reads binary P6 or P5 with maxval 255; throws DataError otherwise.
Raster read_netpbm(const std::filesystem::path& path);

/// [h x w x c] values in [0, 1] (clamped) -> bytes, rounding to nearest.
Raster to_raster(const Tensor& image);
/// Bytes -> [h x w x c] tensor in [0, 1].
Tensor from_raster(const Raster& image);

/// Nearest 8-bit level for a value in [0, 1].
inline double quantize_unit(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<double>(static_cast<int>(c * 255.0 + 0.5)) / 255.0;
}

}  // namespace transfer
