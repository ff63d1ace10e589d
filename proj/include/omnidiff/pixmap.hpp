#pragma once

// Plain-text P3 pixmaps of toy grids: each cell becomes a scale x scale
// block in a fixed 16-color palette.

#include <array>
#include <filesystem>
#include <string>

#include "omnidiff/tokenizer.hpp"

namespace omnidiff {

inline constexpr int kPixmapScale = 16;

using Rgb = std::array<int, 3>;

/// Palette entry for a cell value in [0, 16).
const Rgb& palette_color(int value);

std::string render_pixmap(const ToyImage& img, int scale = kPixmapScale);
void emit_image(const ToyImage& img, const std::filesystem::path& path, int scale = kPixmapScale);

}  // namespace omnidiff
