#include "omnidiff/dataset.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "omnidiff/rng.hpp"

namespace omnidiff {

RecordKind parse_record_kind(std::string_view name) {
  if (name == "t2i") return RecordKind::t2i;
  if (name == "mmu") return RecordKind::mmu;
  if (name == "mixed") return RecordKind::mixed;
  throw ArgumentError("unknown record kind '" + std::string(name) + "'");
}

std::string_view to_string(RecordKind kind) {
  switch (kind) {
    case RecordKind::t2i: return "t2i";
    case RecordKind::mmu: return "mmu";
    case RecordKind::mixed: return "mixed";
  }
  return "?";
}

namespace {

constexpr std::array<std::string_view, 8> kColors = {"red",   "green",  "blue",   "yellow",
                                                     "white", "orange", "purple", "cyan"};
constexpr std::array<std::string_view, 4> kShapes = {"square", "dot", "line", "column"};
constexpr std::array<std::string_view, 4> kPlaces = {"top left", "top right", "bottom left",
                                                     "bottom right"};

struct Scene {
  int color;  // index into kColors; palette value is color + 1
  int shape;
  int place;
};

Scene draw_scene(Rng& rng, int palette_bits) {
  const int colors = std::min<int>(kColors.size(), (1 << palette_bits) - 1);
  Scene s;
  s.color = static_cast<int>(rng.below(colors));
  s.shape = static_cast<int>(rng.below(kShapes.size()));
  s.place = static_cast<int>(rng.below(kPlaces.size()));
  return s;
}

ToyImage render(const Scene& s, GridShape shape) {
  ToyImage img = make_image(shape.height, shape.width,
                            std::vector<int>(static_cast<std::size_t>(shape.height) * shape.width, 0),
                            shape.palette_bits);
  const int qh = std::max(1, shape.height / 2);
  const int qw = std::max(1, shape.width / 2);
  const int r0 = s.place < 2 ? 0 : shape.height - qh;
  const int c0 = s.place % 2 == 0 ? 0 : shape.width - qw;
  const int value = s.color + 1;
  for (int r = 0; r < qh; ++r) {
    for (int c = 0; c < qw; ++c) {
      bool on = false;
      switch (s.shape) {
        case 0: on = true; break;
        case 1: on = r == 0 && c == 0; break;
        case 2: on = r == 0; break;
        case 3: on = c == 0; break;
      }
      if (on) img.grid(r0 + r, c0 + c) = value;
    }
  }
  return img;
}

std::string describe(const Scene& s, bool with_place) {
  std::string out = std::string(kColors[s.color]) + " " + std::string(kShapes[s.shape]);
  if (with_place) out += " " + std::string(kPlaces[s.place]);
  return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto at = s.find(sep, pos);
    out.push_back(s.substr(pos, at == s.npos ? s.npos : at - pos));
    if (at == s.npos) break;
    pos = at + 1;
  }
  return out;
}

}  // namespace

std::vector<DatasetRecord> generate_dataset(std::string_view generator, int count,
                                            std::uint64_t seed, GridShape shape) {
  if (count < 0) throw ArgumentError("dataset count must be >= 0");
  if (shape.height < 1 || shape.width < 1) throw ArgumentError("grid dimensions must be >= 1");
  if (shape.palette_bits < 1 || shape.palette_bits > 4) {
    throw ArgumentError("palette_bits must lie in [1,4]");
  }
  Rng rng(seed);
  std::vector<DatasetRecord> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    DatasetRecord rec;
    if (generator == "shapes") {
      const Scene s = draw_scene(rng, shape.palette_bits);
      rec.images.push_back(render(s, shape));
      if (i % 2 == 0) {
        rec.kind = RecordKind::t2i;
        rec.captions.push_back(describe(s, true));
      } else {
        rec.kind = RecordKind::mmu;
        switch (rng.below(3)) {
          case 0:
            rec.question = "what color is it?";
            rec.answer = std::string(kColors[s.color]);
            break;
          case 1:
            rec.question = "what shape is it?";
            rec.answer = std::string(kShapes[s.shape]);
            break;
          default:
            rec.question = "where is it?";
            rec.answer = std::string(kPlaces[s.place]);
            break;
        }
      }
    } else if (generator == "copy") {
      std::vector<int> cells(static_cast<std::size_t>(shape.height) * shape.width);
      for (auto& c : cells) c = static_cast<int>(rng.below(1u << shape.palette_bits));
      rec.kind = RecordKind::t2i;
      rec.images.push_back(make_image(shape.height, shape.width, cells, shape.palette_bits));
      std::string caption;
      for (int c : cells) caption += "0123456789abcdef"[c];
      rec.captions.push_back(caption);
    } else if (generator == "story") {
      rec.kind = RecordKind::mixed;
      for (int panel = 0; panel < 2; ++panel) {
        const Scene s = draw_scene(rng, shape.palette_bits);
        rec.captions.push_back(describe(s, false));
        rec.images.push_back(render(s, shape));
      }
    } else {
      throw ArgumentError("unknown dataset generator '" + std::string(generator) + "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::string format_record(const DatasetRecord& record) {
  std::string out(to_string(record.kind));
  out += '\t';
  for (std::size_t i = 0; i < record.captions.size(); ++i) {
    if (i) out += '|';
    out += record.captions[i];
  }
  out += '\t';
  for (std::size_t i = 0; i < record.images.size(); ++i) {
    if (i) out += ';';
    out += format_grid(record.images[i]);
  }
  out += '\t' + record.question + '\t' + record.answer;
  return out;
}

DatasetRecord parse_record(std::string_view line, int palette_bits) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto fields = split(line, '\t');
  if (fields.size() != 5) {
    throw ArgumentError("dataset line has " + std::to_string(fields.size()) +
                        " tab-separated fields, expected 5");
  }
  DatasetRecord rec;
  rec.kind = parse_record_kind(fields[0]);
  if (!fields[1].empty()) {
    for (auto c : split(fields[1], '|')) rec.captions.emplace_back(c);
  }
  if (!fields[2].empty()) {
    for (auto g : split(fields[2], ';')) rec.images.push_back(parse_grid(g, palette_bits));
  }
  rec.question = std::string(fields[3]);
  rec.answer = std::string(fields[4]);
  switch (rec.kind) {
    case RecordKind::t2i:
      if (rec.captions.size() > 1 || rec.images.size() != 1) {
        throw ArgumentError("t2i record needs one caption and one grid");
      }
      if (rec.captions.empty()) rec.captions.emplace_back();
      break;
    case RecordKind::mmu:
      if (!rec.captions.empty() || rec.images.size() != 1) {
        throw ArgumentError("mmu record needs one grid and no caption");
      }
      break;
    case RecordKind::mixed:
      if (rec.captions.empty() || rec.captions.size() != rec.images.size()) {
        throw ArgumentError("mixed record needs matching caption and grid counts");
      }
      break;
  }
  return rec;
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, int palette_bits) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open dataset " + path.string());
  std::vector<DatasetRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    try {
      out.push_back(parse_record(line, palette_bits));
    } catch (const std::exception& e) {
      throw ArgumentError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_dataset(const std::vector<DatasetRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write dataset " + path.string());
  for (const auto& r : records) out << format_record(r) << '\n';
}

UnifiedSequence to_sequence(const DatasetRecord& record, const SequenceBuilder& builder,
                            GridShape shape) {
  const auto& vocab = builder.vocab();
  auto image_ids = [&](const ToyImage& img) {
    if (img.height() != shape.height || img.width() != shape.width) {
      throw ArgumentError("grid is " + std::to_string(img.height()) + "x" +
                          std::to_string(img.width()) + ", configured " +
                          std::to_string(shape.height) + "x" + std::to_string(shape.width));
    }
    return encode_toy_image(img, vocab);
  };
  switch (record.kind) {
    case RecordKind::t2i:
      return builder.t2i(encode_text(record.captions.at(0), vocab), image_ids(record.images.at(0)));
    case RecordKind::mmu:
      return builder.mmu(image_ids(record.images.at(0)), encode_text(record.question, vocab),
                         encode_text(record.answer, vocab));
    case RecordKind::mixed: {
      std::vector<Chunk> chunks;
      for (std::size_t i = 0; i < record.captions.size(); ++i) {
        chunks.push_back({Modality::text, encode_text(record.captions[i], vocab)});
        chunks.push_back({Modality::image, image_ids(record.images.at(i))});
      }
      return builder.mixed(chunks);
    }
  }
  throw ArgumentError("unreachable record kind");
}

}  // namespace omnidiff
