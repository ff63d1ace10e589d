#pragma once

// Synthetic caption/grid corpora and their tab-separated line format:
//
//   kind <TAB> caption <TAB> grids <TAB> question <TAB> answer
//
// Mixed records join caption chunks with '|' and grids with ';'; the two
// alternate text, image, text, image, ...

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "omnidiff/sequence.hpp"
#include "omnidiff/tokenizer.hpp"

namespace omnidiff {

enum class RecordKind { t2i, mmu, mixed };

RecordKind parse_record_kind(std::string_view name);
std::string_view to_string(RecordKind kind);

struct DatasetRecord {
  RecordKind kind = RecordKind::t2i;
  std::vector<std::string> captions;  // one for t2i, none for mmu
  std::vector<ToyImage> images;
  std::string question;
  std::string answer;

  bool operator==(const DatasetRecord&) const = default;
};

struct GridShape {
  int height = 4;
  int width = 4;
  int palette_bits = 4;
};

/// Generators: "shapes" (colored shapes in a quadrant, t2i and mmu
/// alternating), "copy" (caption spells the grid in hex), "story" (mixed
/// two-panel records).
std::vector<DatasetRecord> generate_dataset(std::string_view generator, int count,
                                            std::uint64_t seed, GridShape shape);

std::string format_record(const DatasetRecord& record);
DatasetRecord parse_record(std::string_view line, int palette_bits = 4);

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, int palette_bits = 4);
void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path);

/// Clean unified sequence for a record. Throws EncodingError on characters
/// outside the alphabet and ArgumentError on shape or length violations.
UnifiedSequence to_sequence(const DatasetRecord& record, const SequenceBuilder& builder,
                            GridShape shape);

}  // namespace omnidiff
