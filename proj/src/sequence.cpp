#include "omnidiff/sequence.hpp"

#include <algorithm>

namespace omnidiff {

std::vector<Segment> UnifiedSequence::segments() const {
  std::vector<Segment> out;
  for (int i = 0; i < size(); ++i) {
    if (out.empty() || out.back().role != roles[i]) {
      out.push_back({roles[i], i, 1});
    } else {
      ++out.back().length;
    }
  }
  return out;
}

std::vector<Segment> UnifiedSequence::image_segments() const {
  std::vector<Segment> out;
  for (const auto& s : segments()) {
    if (s.role == Role::image) out.push_back(s);
  }
  return out;
}

SequenceBuilder::SequenceBuilder(Vocabulary vocab, int image_tokens, int max_text)
    : vocab_(std::move(vocab)), image_tokens_(image_tokens), max_text_(max_text) {
  if (image_tokens_ < 1) throw ArgumentError("image token count must be >= 1");
  if (max_text_ < 0) throw ArgumentError("max text length must be >= 0");
}

void SequenceBuilder::check_text(const std::vector<int>& ids) const {
  if (static_cast<int>(ids.size()) > max_text_) {
    throw ArgumentError("text of length " + std::to_string(ids.size()) + " exceeds max " +
                        std::to_string(max_text_));
  }
  for (int id : ids) {
    if (!vocab_.is_text(id)) throw ArgumentError("non-text id " + std::to_string(id) + " in text");
  }
}

void SequenceBuilder::check_image(const std::vector<int>& ids, bool allow_mask) const {
  if (static_cast<int>(ids.size()) != image_tokens_) {
    throw ArgumentError("image segment has " + std::to_string(ids.size()) + " tokens, expected " +
                        std::to_string(image_tokens_));
  }
  for (int id : ids) {
    if (id == vocab_.mask_id()) {
      if (!allow_mask) throw ArgumentError("[MASK] not allowed in this image segment");
    } else if (!vocab_.is_image(id)) {
      throw ArgumentError("non-image id " + std::to_string(id) + " in image segment");
    }
  }
}

void SequenceBuilder::append_text(UnifiedSequence& seq, const std::vector<int>& ids,
                                  bool supervised) const {
  seq.push(vocab_.special(Special::sot), Role::special);
  for (int id : ids) seq.push(id, Role::text, supervised);
  seq.push(vocab_.special(Special::eot), Role::special, supervised);
}

void SequenceBuilder::append_image(UnifiedSequence& seq, const std::vector<int>& ids) const {
  seq.push(vocab_.special(Special::soi), Role::special);
  for (int id : ids) seq.push(id, Role::image, id == vocab_.mask_id());
  seq.push(vocab_.special(Special::eoi), Role::special);
}

UnifiedSequence SequenceBuilder::t2i(const std::vector<int>& text_ids,
                                     const std::vector<int>& image_ids) const {
  check_text(text_ids);
  check_image(image_ids, true);
  UnifiedSequence seq;
  seq.task = Task::t2i;
  seq.push(vocab_.special(Special::t2i), Role::task);
  append_text(seq, text_ids, false);
  append_image(seq, image_ids);
  return seq;
}

UnifiedSequence SequenceBuilder::mmu(const std::vector<int>& image_ids,
                                     const std::vector<int>& question_ids,
                                     const std::vector<int>& answer_ids) const {
  std::vector<int> all = question_ids;
  all.insert(all.end(), answer_ids.begin(), answer_ids.end());
  check_text(all);
  check_image(image_ids, false);
  UnifiedSequence seq;
  seq.task = Task::mmu;
  seq.push(vocab_.special(Special::mmu), Role::task);
  append_image(seq, image_ids);
  seq.push(vocab_.special(Special::sot), Role::special);
  for (int id : question_ids) seq.push(id, Role::text);
  for (int id : answer_ids) seq.push(id, Role::text, true);
  seq.push(vocab_.special(Special::eot), Role::special, true);
  return seq;
}

UnifiedSequence SequenceBuilder::mmu_prefix(const std::vector<int>& image_ids,
                                            const std::vector<int>& question_ids) const {
  check_text(question_ids);
  check_image(image_ids, false);
  UnifiedSequence seq;
  seq.task = Task::mmu;
  seq.push(vocab_.special(Special::mmu), Role::task);
  append_image(seq, image_ids);
  seq.push(vocab_.special(Special::sot), Role::special);
  for (int id : question_ids) seq.push(id, Role::text);
  return seq;
}

UnifiedSequence SequenceBuilder::mixed(const std::vector<Chunk>& chunks) const {
  UnifiedSequence seq;
  seq.task = Task::mixed;
  seq.push(vocab_.special(Special::mmu), Role::task);
  for (const auto& chunk : chunks) {
    if (chunk.modality == Modality::text) {
      check_text(chunk.ids);
      append_text(seq, chunk.ids, true);
    } else {
      check_image(chunk.ids, true);
      append_image(seq, chunk.ids);
    }
  }
  return seq;
}

UnifiedSequence SequenceBuilder::text(const std::vector<int>& text_ids) const {
  return mixed({Chunk{Modality::text, text_ids}});
}

int SequenceBuilder::max_layout_length() const {
  return max_text_ + image_tokens_ + 5;
}

void SequenceBuilder::validate(const UnifiedSequence& seq) const {
  const auto n = seq.ids.size();
  if (seq.roles.size() != n || seq.targets.size() != n || seq.loss_mask.size() != n) {
    throw ArgumentError("sequence field lengths differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int id = seq.ids[i];
    bool ok = false;
    switch (seq.roles[i]) {
      case Role::task:
        ok = id == vocab_.special(Special::t2i) || id == vocab_.special(Special::mmu);
        break;
      case Role::text:
        ok = vocab_.is_text(id);
        break;
      case Role::image:
        ok = vocab_.is_image(id) || id == vocab_.mask_id();
        break;
      case Role::special:
        ok = vocab_.range_of(id) == IdRange::special && id != vocab_.mask_id() &&
             id != vocab_.pad_id();
        break;
      case Role::pad:
        ok = id == vocab_.pad_id();
        break;
    }
    if (!ok) throw ArgumentError("position " + std::to_string(i) + ": id inconsistent with role");
    if (seq.loss_mask[i] && (seq.roles[i] == Role::pad || seq.roles[i] == Role::task)) {
      throw ArgumentError("position " + std::to_string(i) + ": pad/task must not be supervised");
    }
  }
  for (const auto& s : seq.image_segments()) {
    if (s.length != image_tokens_) {
      throw ArgumentError("image segment of length " + std::to_string(s.length));
    }
  }
}

std::vector<Chunk> extract_chunks(const UnifiedSequence& seq, const Vocabulary& vocab) {
  std::vector<Chunk> chunks;
  bool open = false;
  for (int i = 0; i < seq.size(); ++i) {
    const int id = seq.ids[i];
    if (seq.roles[i] == Role::special) {
      if (id == vocab.special(Special::sot) || id == vocab.special(Special::soi)) {
        chunks.push_back({id == vocab.special(Special::sot) ? Modality::text : Modality::image, {}});
        open = true;
      } else if (id == vocab.special(Special::eot) || id == vocab.special(Special::eoi)) {
        open = false;
      }
    } else if (seq.roles[i] == Role::text || seq.roles[i] == Role::image) {
      if (!open) throw ArgumentError("content token outside delimiters");
      chunks.back().ids.push_back(id);
    }
  }
  return chunks;
}

MmuParts extract_mmu(const UnifiedSequence& seq, const Vocabulary& vocab) {
  if (seq.task != Task::mmu) throw ArgumentError("extract_mmu: not an mmu sequence");
  MmuParts parts;
  const auto chunks = extract_chunks(seq, vocab);
  if (chunks.empty() || chunks.front().modality != Modality::image) {
    throw ArgumentError("extract_mmu: missing image chunk");
  }
  parts.image = chunks.front().ids;
  for (int i = 0; i < seq.size(); ++i) {
    if (seq.roles[i] != Role::text) continue;
    (seq.loss_mask[i] ? parts.answer : parts.question).push_back(seq.ids[i]);
  }
  return parts;
}

UnifiedSequence null_text_variant(const UnifiedSequence& seq, const Vocabulary& vocab) {
  if (seq.task != Task::t2i) throw ArgumentError("null_text_variant: not a t2i sequence");
  const int soi = vocab.special(Special::soi);
  int cut = -1;
  for (int i = 0; i < seq.size(); ++i) {
    if (seq.ids[i] == soi && seq.roles[i] == Role::special) {
      cut = i;
      break;
    }
  }
  if (cut < 0) throw ArgumentError("null_text_variant: no image segment");
  UnifiedSequence out;
  out.task = Task::t2i;
  out.push(vocab.special(Special::t2i), Role::task);
  out.push(vocab.special(Special::sot), Role::special);
  out.push(vocab.special(Special::eot), Role::special);
  out.ids.insert(out.ids.end(), seq.ids.begin() + cut, seq.ids.end());
  out.roles.insert(out.roles.end(), seq.roles.begin() + cut, seq.roles.end());
  out.targets.insert(out.targets.end(), seq.targets.begin() + cut, seq.targets.end());
  out.loss_mask.insert(out.loss_mask.end(), seq.loss_mask.begin() + cut, seq.loss_mask.end());
  return out;
}

void set_image_tokens(UnifiedSequence& seq, const std::vector<int>& ids, int mask_id,
                      int segment) {
  const auto segs = seq.image_segments();
  if (segment < 0 || segment >= static_cast<int>(segs.size())) {
    throw ArgumentError("set_image_tokens: no such image segment");
  }
  const auto& s = segs[segment];
  if (static_cast<int>(ids.size()) != s.length) {
    throw ArgumentError("set_image_tokens: length mismatch");
  }
  for (int i = 0; i < s.length; ++i) {
    const int p = s.start + i;
    seq.ids[p] = ids[i];
    if (ids[i] != mask_id) seq.targets[p] = ids[i];
    seq.loss_mask[p] = ids[i] == mask_id ? 1 : 0;
  }
}

UnifiedSequence pad_to(const UnifiedSequence& seq, int length, const Vocabulary& vocab) {
  if (length < seq.size()) throw ArgumentError("pad_to: sequence longer than target length");
  UnifiedSequence out = seq;
  while (out.size() < length) out.push(vocab.pad_id(), Role::pad);
  return out;
}

AttentionMask build_omni_mask(const UnifiedSequence& seq, MaskOptions options) {
  const int n = seq.size();
  std::vector<int> segment_of(n);
  const auto segs = seq.segments();
  for (int s = 0; s < static_cast<int>(segs.size()); ++s) {
    for (int i = segs[s].start; i < segs[s].end(); ++i) segment_of[i] = s;
  }
  AttentionMask mask;
  mask.allow.setConstant(n, n, false);
  for (int i = 0; i < n; ++i) {
    if (seq.roles[i] == Role::pad) continue;
    for (int j = 0; j < n; ++j) {
      if (seq.roles[j] == Role::pad) continue;
      if (segment_of[j] < segment_of[i]) {
        mask.allow(i, j) = true;
      } else if (segment_of[j] == segment_of[i]) {
        const bool full = seq.roles[i] == Role::image && !options.causal_image;
        mask.allow(i, j) = full || j <= i;
      }
    }
  }
  return mask;
}

AttentionMask causal_mask(int length) {
  AttentionMask mask;
  mask.allow.setConstant(length, length, false);
  for (int i = 0; i < length; ++i) {
    for (int j = 0; j <= i; ++j) mask.allow(i, j) = true;
  }
  return mask;
}

std::string format_mask(const AttentionMask& mask) {
  std::string out;
  out.reserve(static_cast<std::size_t>(mask.size()) * (mask.size() + 1));
  for (int i = 0; i < mask.size(); ++i) {
    for (int j = 0; j < mask.size(); ++j) out.push_back(mask(i, j) ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

}  // namespace omnidiff
