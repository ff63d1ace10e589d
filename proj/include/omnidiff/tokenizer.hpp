#pragma once

// Unified vocabulary: text ids, then special/task ids, then image codebook ids.

#include <Eigen/Core>

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "omnidiff/errors.hpp"

namespace omnidiff {

enum class Special { mmu, t2i, sot, eot, soi, eoi, mask, pad };

inline constexpr std::array<std::string_view, 8> kSpecialNames = {
    "[MMU]", "[T2I]", "[SOT]", "[EOT]", "[SOI]", "[EOI]", "[MASK]", "[PAD]"};

inline constexpr std::string_view kDefaultAlphabet =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ?";

enum class IdRange { text, special, image, invalid };

class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::string(kDefaultAlphabet), 16) {}
  Vocabulary(std::string alphabet, int image_size);

  const std::string& alphabet() const { return alphabet_; }
  int text_size() const { return static_cast<int>(alphabet_.size()); }
  int special_size() const { return static_cast<int>(kSpecialNames.size()); }
  int image_size() const { return image_size_; }
  int total() const { return text_size() + special_size() + image_size_; }

  int special(Special s) const { return text_size() + static_cast<int>(s); }
  int mask_id() const { return special(Special::mask); }
  int pad_id() const { return special(Special::pad); }
  int image_begin() const { return text_size() + special_size(); }
  int image_id(int code) const;
  int code_of(int image_id) const;

  IdRange range_of(int id) const;
  bool is_text(int id) const { return range_of(id) == IdRange::text; }
  bool is_image(int id) const { return range_of(id) == IdRange::image; }

  /// -1 when the character is outside the alphabet.
  int char_id(char c) const { return char_to_id_[static_cast<unsigned char>(c)]; }

  std::string token_name(int id) const;

  bool operator==(const Vocabulary& other) const {
    return alphabet_ == other.alphabet_ && image_size_ == other.image_size_;
  }

 private:
  std::string alphabet_;
  int image_size_;
  std::array<int, 256> char_to_id_{};
};

std::vector<int> encode_text(std::string_view s, const Vocabulary& vocab);
std::string decode_text(const std::vector<int>& ids, const Vocabulary& vocab);

/// Palette grid standing in for a tokenized image; cells in raster order.
struct ToyImage {
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> grid;
  int palette_bits = 4;

  int height() const { return static_cast<int>(grid.rows()); }
  int width() const { return static_cast<int>(grid.cols()); }
  int cells() const { return static_cast<int>(grid.size()); }

  bool operator==(const ToyImage& other) const {
    return palette_bits == other.palette_bits && grid.rows() == other.grid.rows() &&
           grid.cols() == other.grid.cols() && grid == other.grid;
  }
};

ToyImage make_image(int height, int width, const std::vector<int>& cells, int palette_bits = 4);

std::vector<int> encode_toy_image(const ToyImage& img, const Vocabulary& vocab);
ToyImage decode_toy_image(const std::vector<int>& ids, const Vocabulary& vocab, int height,
                          int width, int palette_bits = 4);

/// Grid text form: hex digit per cell, rows separated by '/', e.g. "01/23".
ToyImage parse_grid(std::string_view text, int palette_bits = 4);
std::string format_grid(const ToyImage& img);

}  // namespace omnidiff
