#pragma once

// Run configuration: line-oriented `key = value` text, '#' starts a comment.
// String values may be double-quoted to keep leading/trailing spaces.

#include <filesystem>
#include <string>
#include <string_view>

#include "omnidiff/model.hpp"
#include "omnidiff/sampler.hpp"
#include "omnidiff/sequence.hpp"
#include "omnidiff/training.hpp"

namespace omnidiff {

struct RunConfig {
  std::string alphabet{kDefaultAlphabet};
  int codebook = 16;
  int image_height = 4;
  int image_width = 4;
  int palette_bits = 4;
  int max_text = 32;
  /// 0 means "derive from the vocabulary"; any other value must match it.
  int vocab_total = 0;

  ModelConfig model{2, 32, 4, 0, 96, 4, false};
  TrainConfig train;
  SamplerOptions sampler;

  int image_tokens() const { return image_height * image_width; }
  Vocabulary vocabulary() const { return Vocabulary(alphabet, codebook); }
  SequenceBuilder builder() const { return SequenceBuilder(vocabulary(), image_tokens(), max_text); }
  /// Model config with vocab_total filled in from the vocabulary.
  ModelConfig model_config() const;

  /// Throws ConfigError naming the first violated cross-module constraint.
  void validate() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  std::string serialize() const;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace omnidiff
