#include "omnidiff/tokenizer.hpp"

#include <algorithm>

namespace omnidiff {

Vocabulary::Vocabulary(std::string alphabet, int image_size)
    : alphabet_(std::move(alphabet)), image_size_(image_size) {
  if (alphabet_.empty()) throw ArgumentError("vocabulary: empty alphabet");
  if (image_size_ < 1) throw ArgumentError("vocabulary: image codebook size must be >= 1");
  char_to_id_.fill(-1);
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    auto& slot = char_to_id_[static_cast<unsigned char>(alphabet_[i])];
    if (slot != -1) {
      throw ArgumentError(std::string("vocabulary: duplicate alphabet character '") +
                          alphabet_[i] + "'");
    }
    slot = static_cast<int>(i);
  }
}

int Vocabulary::image_id(int code) const {
  if (code < 0 || code >= image_size_) {
    throw ArgumentError("image code " + std::to_string(code) + " outside codebook");
  }
  return image_begin() + code;
}

int Vocabulary::code_of(int id) const {
  if (!is_image(id)) throw ArgumentError("id " + std::to_string(id) + " is not an image id");
  return id - image_begin();
}

IdRange Vocabulary::range_of(int id) const {
  if (id < 0 || id >= total()) return IdRange::invalid;
  if (id < text_size()) return IdRange::text;
  if (id < image_begin()) return IdRange::special;
  return IdRange::image;
}

std::string Vocabulary::token_name(int id) const {
  switch (range_of(id)) {
    case IdRange::text:
      return std::string(1, alphabet_[id]);
    case IdRange::special:
      return std::string(kSpecialNames[id - text_size()]);
    case IdRange::image:
      return "<img:" + std::to_string(code_of(id)) + ">";
    case IdRange::invalid:
      break;
  }
  return "<invalid:" + std::to_string(id) + ">";
}

std::vector<int> encode_text(std::string_view s, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int id = vocab.char_id(s[i]);
    if (id < 0) {
      throw EncodingError("character '" + std::string(1, s[i]) + "' at position " +
                          std::to_string(i) + " is outside the alphabet");
    }
    ids.push_back(id);
  }
  return ids;
}

std::string decode_text(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string s;
  s.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!vocab.is_text(ids[i])) {
      throw DecodingError("id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                          " is not a text id");
    }
    s.push_back(vocab.alphabet()[ids[i]]);
  }
  return s;
}

ToyImage make_image(int height, int width, const std::vector<int>& cells, int palette_bits) {
  if (height < 1 || width < 1) throw ArgumentError("image dimensions must be positive");
  if (cells.size() != static_cast<std::size_t>(height) * width) {
    throw ArgumentError("image: expected " + std::to_string(height * width) + " cells, got " +
                        std::to_string(cells.size()));
  }
  if (palette_bits < 1 || palette_bits > 4) throw ArgumentError("palette_bits must be in [1,4]");
  ToyImage img;
  img.palette_bits = palette_bits;
  img.grid.resize(height, width);
  for (int i = 0; i < height * width; ++i) {
    if (cells[i] < 0 || cells[i] >= (1 << palette_bits)) {
      throw ArgumentError("cell value " + std::to_string(cells[i]) + " exceeds palette");
    }
    img.grid.data()[i] = cells[i];
  }
  return img;
}

std::vector<int> encode_toy_image(const ToyImage& img, const Vocabulary& vocab) {
  if ((1 << img.palette_bits) > vocab.image_size()) {
    throw ArgumentError("palette of " + std::to_string(1 << img.palette_bits) +
                        " colors exceeds codebook size " + std::to_string(vocab.image_size()));
  }
  std::vector<int> ids(img.cells());
  for (int i = 0; i < img.cells(); ++i) {
    const int v = img.grid.data()[i];
    if (v < 0 || v >= (1 << img.palette_bits)) throw ArgumentError("cell exceeds palette");
    ids[i] = vocab.image_id(v);
  }
  return ids;
}

ToyImage decode_toy_image(const std::vector<int>& ids, const Vocabulary& vocab, int height,
                          int width, int palette_bits) {
  if (height < 1 || width < 1 || ids.size() != static_cast<std::size_t>(height) * width) {
    throw ArgumentError("decode_toy_image: length does not match " + std::to_string(height) +
                        "x" + std::to_string(width));
  }
  std::vector<int> cells(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == vocab.mask_id()) {
      throw DecodingError("decode_toy_image: [MASK] at position " + std::to_string(i));
    }
    if (!vocab.is_image(ids[i])) {
      throw DecodingError("decode_toy_image: id " + std::to_string(ids[i]) +
                          " is not an image id");
    }
    cells[i] = vocab.code_of(ids[i]);
    if (cells[i] >= (1 << palette_bits)) {
      throw DecodingError("decode_toy_image: code exceeds palette");
    }
  }
  return make_image(height, width, cells, palette_bits);
}

ToyImage parse_grid(std::string_view text, int palette_bits) {
  std::vector<int> cells;
  int height = 0;
  int width = -1;
  int row = 0;
  auto end_row = [&] {
    if (width == -1) width = row;
    if (row != width || row == 0) throw ArgumentError("grid: ragged or empty row");
    ++height;
    row = 0;
  };
  for (char c : text) {
    if (c == '/') {
      end_row();
      continue;
    }
    int v;
    if (c >= '0' && c <= '9') {
      v = c - '0';
    } else if (c >= 'a' && c <= 'f') {
      v = c - 'a' + 10;
    } else if (c >= 'A' && c <= 'F') {
      v = c - 'A' + 10;
    } else {
      throw ArgumentError(std::string("grid: unexpected character '") + c + "'");
    }
    cells.push_back(v);
    ++row;
  }
  end_row();
  return make_image(height, width, cells, palette_bits);
}

std::string format_grid(const ToyImage& img) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (int r = 0; r < img.height(); ++r) {
    if (r) out.push_back('/');
    for (int c = 0; c < img.width(); ++c) out.push_back(kHex[img.grid(r, c)]);
  }
  return out;
}

}  // namespace omnidiff
