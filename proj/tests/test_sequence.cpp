#include <doctest.h>

#include <algorithm>

#include "omnidiff/rng.hpp"
#include "omnidiff/sequence.hpp"

using namespace omnidiff;

namespace {

const Vocabulary kVocab;

std::vector<int> text_ids(int n, int offset = 0) {
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = (i + offset) % kVocab.text_size();
  return ids;
}

std::vector<int> image_ids(int m, int offset = 0) {
  std::vector<int> ids(m);
  for (int i = 0; i < m; ++i) ids[i] = kVocab.image_id((i + offset) % kVocab.image_size());
  return ids;
}

int supervised(const UnifiedSequence& s) {
  return static_cast<int>(std::count(s.loss_mask.begin(), s.loss_mask.end(), 1));
}

int segment_of(const std::vector<Segment>& segs, int pos) {
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (pos >= segs[i].start && pos < segs[i].end()) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

TEST_CASE("t2i layout") {
  const SequenceBuilder b(kVocab, 16, 8);
  SUBCASE("3 text ids and 16 image ids") {
    const auto s = b.t2i(text_ids(3), image_ids(16));
    CHECK(s.size() == 24);
    CHECK(s.ids[0] == kVocab.special(Special::t2i));
    CHECK(s.ids[1] == kVocab.special(Special::sot));
    CHECK(s.ids[5] == kVocab.special(Special::eot));
    CHECK(s.ids[6] == kVocab.special(Special::soi));
    CHECK(s.ids.back() == kVocab.special(Special::eoi));
    CHECK(supervised(s) == 0);
    CHECK_NOTHROW(b.validate(s));
  }
  SUBCASE("null text with all masks") {
    const auto s = b.t2i({}, std::vector<int>(16, kVocab.mask_id()));
    std::vector<int> want{kVocab.special(Special::t2i), kVocab.special(Special::sot),
                          kVocab.special(Special::eot), kVocab.special(Special::soi)};
    want.insert(want.end(), 16, kVocab.mask_id());
    want.push_back(kVocab.special(Special::eoi));
    CHECK(s.ids == want);
    CHECK(supervised(s) == 16);
  }
  SUBCASE("null-text variant keeps the image part") {
    auto img = image_ids(16);
    img[3] = kVocab.mask_id();
    const auto s = b.t2i(text_ids(5), img);
    const auto u = null_text_variant(s, kVocab);
    CHECK(u.size() == s.size() - 5);
    CHECK(std::equal(u.ids.end() - 18, u.ids.end(), s.ids.end() - 18));
    CHECK(supervised(u) == supervised(s));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(b.t2i(text_ids(3), image_ids(15)), ArgumentError);
    CHECK_THROWS_AS(b.t2i(text_ids(9), image_ids(16)), ArgumentError);
    CHECK_THROWS_AS(b.t2i({kVocab.image_id(0)}, image_ids(16)), ArgumentError);
  }
}

TEST_CASE("mmu layout") {
  const SequenceBuilder b(kVocab, 16, 12);
  SUBCASE("empty question and answer supervise only [EOT]") {
    const auto s = b.mmu(image_ids(16), {}, {});
    CHECK(supervised(s) == 1);
    CHECK(s.loss_mask.back() == 1);
    CHECK(s.ids.back() == kVocab.special(Special::eot));
  }
  SUBCASE("4 question and 6 answer ids") {
    const auto s = b.mmu(image_ids(16), text_ids(4), text_ids(6, 10));
    CHECK(supervised(s) == 7);
    CHECK(s.size() == 16 + 4 + 6 + 5);
    const auto parts = extract_mmu(s, kVocab);
    CHECK(parts.image == image_ids(16));
    CHECK(parts.question == text_ids(4));
    CHECK(parts.answer == text_ids(6, 10));
  }
  SUBCASE("prefix stops after the question") {
    const auto p = b.mmu_prefix(image_ids(16), text_ids(4));
    const auto s = b.mmu(image_ids(16), text_ids(4), text_ids(2));
    CHECK(std::equal(p.ids.begin(), p.ids.end(), s.ids.begin()));
  }
  SUBCASE("mask inside the image") {
    auto img = image_ids(16);
    img[0] = kVocab.mask_id();
    CHECK_THROWS_AS(b.mmu(img, {}, {}), ArgumentError);
  }
}

TEST_CASE("mixed layout") {
  const SequenceBuilder b(kVocab, 4, 8);
  SUBCASE("single text chunk equals the text-only sequence") {
    CHECK(b.mixed({{Modality::text, text_ids(5)}}) == b.text(text_ids(5)));
  }
  SUBCASE("text image text image") {
    const std::vector<Chunk> chunks{{Modality::text, text_ids(2)},
                                    {Modality::image, image_ids(4)},
                                    {Modality::text, text_ids(3)},
                                    {Modality::image, image_ids(4, 2)}};
    const auto s = b.mixed(chunks);
    CHECK(s.size() == 1 + 4 + 6 + 5 + 6);
    CHECK(s.image_segments().size() == 2);
    CHECK(extract_chunks(s, kVocab) == chunks);
  }
  SUBCASE("random interleavings round trip") {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Chunk> chunks;
      const int n = 1 + static_cast<int>(rng.below(5));
      for (int c = 0; c < n; ++c) {
        if (rng.bernoulli(0.5)) {
          chunks.push_back({Modality::text, text_ids(static_cast<int>(rng.below(9)), c)});
        } else {
          chunks.push_back({Modality::image, image_ids(4, c)});
        }
      }
      const auto s = b.mixed(chunks);
      CHECK_NOTHROW(b.validate(s));
      CHECK(extract_chunks(s, kVocab) == chunks);
    }
  }
}

TEST_CASE("segments partition the sequence") {
  const SequenceBuilder b(kVocab, 4, 8);
  const auto s = b.mmu(image_ids(4), text_ids(2), text_ids(3));
  const auto segs = s.segments();
  int pos = 0;
  for (const auto& seg : segs) {
    CHECK(seg.start == pos);
    CHECK(seg.length > 0);
    pos = seg.end();
  }
  CHECK(pos == s.size());
  for (std::size_t i = 1; i < segs.size(); ++i) CHECK(segs[i].role != segs[i - 1].role);
}

TEST_CASE("validate catches broken invariants") {
  const SequenceBuilder b(kVocab, 4, 8);
  auto s = b.t2i(text_ids(2), image_ids(4));
  s.loss_mask[0] = 1;
  CHECK_THROWS_AS(b.validate(s), ArgumentError);
  s = b.t2i(text_ids(2), image_ids(4));
  s.roles[2] = Role::image;
  CHECK_THROWS_AS(b.validate(s), ArgumentError);
  s = b.t2i(text_ids(2), image_ids(4));
  s.targets.pop_back();
  CHECK_THROWS_AS(b.validate(s), ArgumentError);
}

TEST_CASE("padding") {
  const SequenceBuilder b(kVocab, 4, 8);
  const auto s = b.t2i(text_ids(2), image_ids(4));
  const auto p = pad_to(s, s.size() + 3, kVocab);
  CHECK(p.size() == s.size() + 3);
  CHECK(p.roles.back() == Role::pad);
  CHECK(p.ids.back() == kVocab.pad_id());
  CHECK(p.loss_mask.back() == 0);
  CHECK_THROWS_AS(pad_to(s, s.size() - 1, kVocab), ArgumentError);

  const auto m = build_omni_mask(p);
  for (int i = s.size(); i < p.size(); ++i) {
    for (int j = 0; j < p.size(); ++j) {
      CHECK_FALSE(m(i, j));
      CHECK_FALSE(m(j, i));
    }
  }
}

TEST_CASE("omni-attention mask") {
  const SequenceBuilder b(kVocab, 4, 8);

  SUBCASE("text-only degenerates to causal") {
    for (int n = 0; n <= 8; ++n) {
      const auto s = b.text(text_ids(n));
      CHECK(build_omni_mask(s) == causal_mask(s.size()));
    }
  }
  SUBCASE("t2i image rows see the prefix and the whole image") {
    const auto s = b.t2i(text_ids(3), image_ids(4));
    const auto m = build_omni_mask(s);
    const auto img = s.image_segments().front();
    for (int i = img.start; i < img.end(); ++i) {
      for (int j = 0; j < img.end(); ++j) CHECK(m(i, j));
      for (int j = img.end(); j < s.size(); ++j) CHECK_FALSE(m(i, j));
    }
  }
  SUBCASE("mmu text rows see the whole image, causal among themselves") {
    const auto s = b.mmu(image_ids(4), text_ids(2), text_ids(3));
    const auto m = build_omni_mask(s);
    const auto img = s.image_segments().front();
    for (int i = img.end(); i < s.size(); ++i) {
      for (int j = img.start; j < img.end(); ++j) CHECK(m(i, j));
      for (int j = img.end(); j < s.size(); ++j) CHECK(m(i, j) == (j <= i));
    }
  }
  SUBCASE("structural properties on random mixed layouts") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Chunk> chunks;
      const int n = 1 + static_cast<int>(rng.below(4));
      for (int c = 0; c < n; ++c) {
        if (rng.bernoulli(0.5)) chunks.push_back({Modality::text, text_ids(static_cast<int>(rng.below(5)))});
        else chunks.push_back({Modality::image, image_ids(4)});
      }
      const auto s = b.mixed(chunks);
      const auto m = build_omni_mask(s);
      const auto segs = s.segments();
      CHECK(m == build_omni_mask(s));
      for (int i = 0; i < s.size(); ++i) {
        CHECK(m(i, i));
        const int si = segment_of(segs, i);
        for (int j = 0; j < s.size(); ++j) {
          const int sj = segment_of(segs, j);
          if (sj > si) CHECK_FALSE(m(i, j));
          if (sj < si) CHECK(m(i, j));
          if (sj == si && segs[si].role == Role::image) CHECK(m(i, j) == m(j, i));
          if (sj == si && segs[si].role != Role::image) CHECK(m(i, j) == (j <= i));
        }
      }
    }
  }
  SUBCASE("causal-image ablation") {
    const auto s = b.t2i(text_ids(2), image_ids(4));
    const auto m = build_omni_mask(s, MaskOptions{true});
    CHECK(m == causal_mask(s.size()));
  }
  SUBCASE("text form") {
    const auto s = b.text(text_ids(1));
    CHECK(format_mask(build_omni_mask(s)) == "1000\n1100\n1110\n1111\n");
  }
}
