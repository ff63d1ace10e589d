#pragma once

// Unified prompt layouts and the omni-attention visibility mask.
//
//   t2i:   [T2I][SOT] v_1..v_N [EOT][SOI] u_1..u_M [EOI]
//   mmu:   [MMU][SOI] u_1..u_M [EOI][SOT] question answer [EOT]
//   mixed: [MMU] then each chunk wrapped in [SOT]/[EOT] or [SOI]/[EOI]

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "omnidiff/tokenizer.hpp"

namespace omnidiff {

enum class Role : std::uint8_t { task, text, image, special, pad };
enum class Task : std::uint8_t { t2i, mmu, mixed };
enum class Modality : std::uint8_t { text, image };

struct Segment {
  Role role;
  int start;
  int length;

  int end() const { return start + length; }
  bool operator==(const Segment&) const = default;
};

struct Chunk {
  Modality modality;
  std::vector<int> ids;

  bool operator==(const Chunk&) const = default;
};

struct UnifiedSequence {
  Task task = Task::t2i;
  std::vector<int> ids;
  std::vector<Role> roles;
  /// Original token per position; differs from ids only where training
  /// masking replaced an image token with [MASK].
  std::vector<int> targets;
  std::vector<std::uint8_t> loss_mask;

  int size() const { return static_cast<int>(ids.size()); }

  /// Maximal runs of equal role, partitioning [0, size()).
  std::vector<Segment> segments() const;
  std::vector<Segment> image_segments() const;

  void push(int id, Role role, bool supervised = false) {
    ids.push_back(id);
    roles.push_back(role);
    targets.push_back(id);
    loss_mask.push_back(supervised ? 1 : 0);
  }

  bool operator==(const UnifiedSequence&) const = default;
};

class SequenceBuilder {
 public:
  SequenceBuilder(Vocabulary vocab, int image_tokens, int max_text);

  const Vocabulary& vocab() const { return vocab_; }
  int image_tokens() const { return image_tokens_; }
  int max_text() const { return max_text_; }

  /// image_ids may contain [MASK]; those positions are marked supervised.
  UnifiedSequence t2i(const std::vector<int>& text_ids, const std::vector<int>& image_ids) const;
  /// Supervises the answer tokens and the closing [EOT].
  UnifiedSequence mmu(const std::vector<int>& image_ids, const std::vector<int>& question_ids,
                      const std::vector<int>& answer_ids) const;
  /// mmu layout cut after the question, ready for text decoding.
  UnifiedSequence mmu_prefix(const std::vector<int>& image_ids,
                             const std::vector<int>& question_ids) const;
  UnifiedSequence mixed(const std::vector<Chunk>& chunks) const;
  UnifiedSequence text(const std::vector<int>& text_ids) const;

  /// Longest layout any builder can produce under the configured limits.
  int max_layout_length() const;

  /// Throws ArgumentError on any broken UnifiedSequence invariant.
  void validate(const UnifiedSequence& seq) const;

 private:
  void check_text(const std::vector<int>& ids) const;
  void check_image(const std::vector<int>& ids, bool allow_mask) const;
  void append_text(UnifiedSequence& seq, const std::vector<int>& ids, bool supervised) const;
  void append_image(UnifiedSequence& seq, const std::vector<int>& ids) const;

  Vocabulary vocab_;
  int image_tokens_;
  int max_text_;
};

/// Content chunks in order, delimiters stripped.
std::vector<Chunk> extract_chunks(const UnifiedSequence& seq, const Vocabulary& vocab);

struct MmuParts {
  std::vector<int> image;
  std::vector<int> question;
  std::vector<int> answer;
};
MmuParts extract_mmu(const UnifiedSequence& seq, const Vocabulary& vocab);

/// The t2i sequence with its caption replaced by the empty text.
UnifiedSequence null_text_variant(const UnifiedSequence& seq, const Vocabulary& vocab);

/// Overwrites the ids of the n-th image segment (targets follow unless masked).
void set_image_tokens(UnifiedSequence& seq, const std::vector<int>& ids, int mask_id,
                      int segment = 0);

UnifiedSequence pad_to(const UnifiedSequence& seq, int length, const Vocabulary& vocab);

// ---------------------------------------------------------------------------

struct AttentionMask {
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> allow;

  int size() const { return static_cast<int>(allow.rows()); }
  bool operator()(int query, int key) const { return allow(query, key); }
  bool operator==(const AttentionMask& other) const {
    return allow.rows() == other.allow.rows() && allow == other.allow;
  }
};

struct MaskOptions {
  /// Ablation: causal instead of full attention inside image segments.
  bool causal_image = false;
};

AttentionMask build_omni_mask(const UnifiedSequence& seq, MaskOptions options = {});
AttentionMask causal_mask(int length);

/// One row per query position, '1' = may attend.
std::string format_mask(const AttentionMask& mask);

}  // namespace omnidiff
