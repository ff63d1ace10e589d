#include "omnidiff/pixmap.hpp"

#include <fstream>
#include <sstream>

namespace omnidiff {

namespace {

constexpr std::array<Rgb, 16> kPalette = {{
    {0, 0, 0},       {220, 40, 40},  {40, 180, 60},  {50, 80, 220},
    {240, 220, 50},  {245, 245, 245}, {245, 140, 30}, {140, 60, 190},
    {60, 210, 220},  {120, 120, 120}, {130, 80, 40},  {250, 160, 200},
    {20, 90, 40},    {20, 30, 100},   {190, 190, 120}, {100, 0, 0},
}};

}  // namespace

const Rgb& palette_color(int value) {
  if (value < 0 || value >= static_cast<int>(kPalette.size())) {
    throw ArgumentError("palette value " + std::to_string(value) + " out of range");
  }
  return kPalette[value];
}

std::string render_pixmap(const ToyImage& img, int scale) {
  if (scale < 1) throw ArgumentError("pixmap scale must be >= 1");
  std::ostringstream os;
  os << "P3\n" << img.width() * scale << ' ' << img.height() * scale << "\n255\n";
  for (int r = 0; r < img.height() * scale; ++r) {
    for (int c = 0; c < img.width() * scale; ++c) {
      const Rgb& rgb = palette_color(img.grid(r / scale, c / scale));
      os << rgb[0] << ' ' << rgb[1] << ' ' << rgb[2] << (c + 1 == img.width() * scale ? '\n' : ' ');
    }
  }
  return os.str();
}

void emit_image(const ToyImage& img, const std::filesystem::path& path, int scale) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write image " + path.string());
  out << render_pixmap(img, scale);
}

}  // namespace omnidiff
