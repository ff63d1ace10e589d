#pragma once

// Binary checkpoints. Little-endian layout:
//
//   magic "ODIFCKPT", u32 version
//   u64 n, config text          (RunConfig::serialize)
//   u64 n, vocabulary table     (token names, '\n'-separated)
//   u64 n, tensor manifest, u64 FNV-1a hash of the manifest bytes
//   u64 count, f64 parameters
//   i64 step, u64 n, rng state text
//   i64 optimizer steps, u8 has_moments, [f64 m, f64 v]

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "omnidiff/config.hpp"

namespace omnidiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  Vector<double> params;
  std::int64_t step = 0;
  std::string rng_state;
  std::int64_t optimizer_steps = 0;
  Vector<double> first_moment;   // empty when the optimizer keeps no moments
  Vector<double> second_moment;

  bool operator==(const Checkpoint& o) const {
    return config == o.config && params.size() == o.params.size() && params == o.params &&
           step == o.step && rng_state == o.rng_state && optimizer_steps == o.optimizer_steps &&
           first_moment.size() == o.first_moment.size() && first_moment == o.first_moment &&
           second_moment.size() == o.second_moment.size() && second_moment == o.second_moment;
  }
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws VersionError, TruncatedError, ManifestError or LoadError.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Manifest text for a layout: "name rows cols offset" per tensor.
std::string layout_manifest(const ParamLayout& layout);
std::string vocabulary_table(const Vocabulary& vocab);

}  // namespace omnidiff
