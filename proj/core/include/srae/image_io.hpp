#pragma once

#include <filesystem>

#include "srae/tensor.hpp"

namespace srae {

/// Reads a binary PGM (P5) or PPM (P6) with maxval 255 into an H x W x C
/// tensor scaled to [0, 1].
Tensor read_pnm(const std::filesystem::path& path);

/// Writes H x W x 1 as P5 and H x W x 3 as P6; values are clamped to [0, 1]
/// and rounded to the nearest 1/255.
void write_pnm(const std::filesystem::path& path, const Tensor& image);

/// Tiles equally sized images into a grid with a one-pixel white gutter.
Tensor montage(const std::vector<Tensor>& images, int columns);

}  // namespace srae
