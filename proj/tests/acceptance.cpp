// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "omnidiff/checkpoint.hpp"
#include "omnidiff/config.hpp"
#include "omnidiff/dataset.hpp"
#include "omnidiff/oracle.hpp"
#include "omnidiff/pixmap.hpp"
#include "omnidiff/sampler.hpp"
#include "omnidiff/trainer.hpp"

using namespace omnidiff;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ModelParams<double> small_model(const Vocabulary& vocab, int depth, int width, int heads, int max_len,
                                std::uint64_t seed) {
  ModelConfig cfg{depth, width, heads, vocab.total(), max_len, 2, false};
  Rng rng(seed);
  return init_params<double>(cfg, rng);
}

// 1 ------------------------------------------------------------------------
Outcome diffusion_algebra() {
  const auto t0 = Clock::now();
  const auto r = oracle::check_algebra({2, 3, 4}, {2, 3, 4, 5}, 100, 101);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = r.max_marginal_error <= 1e-12 && r.max_posterior_tv <= 1e-10 && r.max_row_error <= 1e-12 &&
           r.unreachable_mismatches == 0 && r.absorption_failures == 0 && secs < 30;
  o.detail = std::to_string(r.schedules) + " schedules, marginal " + fmt("%.2e", r.max_marginal_error) +
             " (<=1e-12), posterior TV " + fmt("%.2e", r.max_posterior_tv) + " (<=1e-10), rows " +
             fmt("%.2e", r.max_row_error) + " (<=1e-12), " + fmt("%.2f", secs) + "s (<30s)";
  return o;
}

// 2 ------------------------------------------------------------------------
Outcome literal_reconciliation() {
  const auto r = oracle::check_literal(500, 202);
  Outcome o;
  o.pass = r.max_alpha_zero_error <= 1e-12 && r.max_beta_zero_error <= 1e-12 && r.max_bound_excess <= 0.0 &&
           r.max_deficit_error <= 1e-15;
  o.detail = std::to_string(r.cases) + " cases, alpha=0 err " + fmt("%.2e", r.max_alpha_zero_error) +
             ", beta=0 err " + fmt("%.2e", r.max_beta_zero_error) + " (<=1e-12), max(disc - ab) " +
             fmt("%.2e", r.max_bound_excess) + " (<=0), deficit err " + fmt("%.2e", r.max_deficit_error) +
             " (<=1e-15, a few ulps)";
  return o;
}

// 3 ------------------------------------------------------------------------
Outcome elbo_chain() {
  const auto t0 = Clock::now();
  const auto rows = oracle::check_elbo_chain(24, 303);
  const double secs = seconds_since(t0);
  double worst_gap = std::numeric_limits<double>::infinity();
  double worst_oracle = 0.0;
  bool shapes_ok = true;
  for (const auto& e : rows) {
    worst_gap = std::min({worst_gap, e.report.likelihood_gap(), e.report.bound_gap()});
    worst_oracle = std::max(worst_oracle, e.oracle_diff);
    shapes_ok = shapes_ok && e.k == 2 && e.steps <= 3 && e.seq_len <= 2;
  }
  Outcome o;
  o.pass = rows.size() >= 20 && shapes_ok && worst_gap >= -1e-9 && secs < 60;
  o.detail = std::to_string(rows.size()) + " instances, min gap " + fmt("%.3e", worst_gap) +
             " (>=-1e-9), path oracle diff " + fmt("%.1e", worst_oracle) + ", " + fmt("%.2f", secs) + "s (<60s)";
  return o;
}

// 4 ------------------------------------------------------------------------
Outcome gradient_check() {
  const auto t0 = Clock::now();
  RunConfig cfg;
  cfg.model.max_len = 64;
  const auto vocab = cfg.vocabulary();
  const auto builder = cfg.builder();
  const GridShape shape{cfg.image_height, cfg.image_width, cfg.palette_bits};
  Rng rng(404);
  const auto params = init_params<double>(cfg.model_config(), rng);
  std::vector<UnifiedSequence> batch;
  for (const auto& r : generate_dataset("shapes", 4, 404, shape)) {
    batch.push_back(prepare_example(to_sequence(r, builder, shape), rng, cfg.train, vocab));
  }
  const auto rep = grad_check(params, batch, vocab, cfg.train, 1e-5, 200, rng);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = rep.coordinates >= 200 && rep.max_rel_error < 1e-4 && secs < 120;
  o.detail = "depth 2 width 32, " + std::to_string(rep.coordinates) + " coordinates, max rel err " +
             fmt("%.2e", rep.max_rel_error) + " (<1e-4), " + fmt("%.1f", secs) + "s (<120s)";
  return o;
}

// 5 ------------------------------------------------------------------------
// Every distinct mask produced by the builders up to length 24, plus padded
// variants; each position is perturbed in turn.
Outcome omni_soundness() {
  const auto t0 = Clock::now();
  const Vocabulary vocab;
  const int max_len = 24;
  const int M = 4;
  const SequenceBuilder b(vocab, M, max_len);
  const auto params = small_model(vocab, 2, 16, 2, max_len, 505);

  std::vector<UnifiedSequence> layouts;
  auto text = [&](int n) {
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = (7 * i + 3) % vocab.text_size();
    return ids;
  };
  std::vector<int> img(M);
  for (int i = 0; i < M; ++i) img[i] = vocab.image_id(i * 3 % vocab.image_size());

  // Chunk lists whose layout fits: task token + (n+2) per text + (M+2) per image.
  std::function<void(std::vector<Chunk>&, int)> grow = [&](std::vector<Chunk>& chunks, int used) {
    if (!chunks.empty()) layouts.push_back(b.mixed(chunks));
    for (int n = 0; used + n + 2 <= max_len; ++n) {
      chunks.push_back({Modality::text, text(n)});
      grow(chunks, used + n + 2);
      chunks.pop_back();
    }
    if (used + M + 2 <= max_len) {
      chunks.push_back({Modality::image, img});
      grow(chunks, used + M + 2);
      chunks.pop_back();
    }
  };
  std::vector<Chunk> chunks;
  grow(chunks, 1);
  for (int n = 0; n <= max_len; ++n) {
    if (n + M + 5 <= max_len) layouts.push_back(b.t2i(text(n), img));
    for (int a = 0; n + a + M + 5 <= max_len; ++a) layouts.push_back(b.mmu(img, text(n), text(a)));
  }
  const std::size_t base = layouts.size();
  for (std::size_t i = 0; i < base; i += 7) {
    for (int len = layouts[i].size() + 1; len <= max_len; len += 3) layouts.push_back(pad_to(layouts[i], len, vocab));
  }

  std::set<std::vector<std::uint8_t>> seen;
  long checked_layouts = 0, checked_pairs = 0, leaks = 0, blind = 0;
  for (const auto& seq : layouts) {
    const auto mask = build_omni_mask(seq);
    std::vector<std::uint8_t> key(mask.allow.data(), mask.allow.data() + mask.allow.size());
    key.push_back(static_cast<std::uint8_t>(seq.size()));
    if (!seen.insert(key).second) continue;
    ++checked_layouts;
    const auto ref = forward(params, seq.ids, mask).logits;
    for (int j = 0; j < seq.size(); ++j) {
      auto ids = seq.ids;
      ids[j] = (ids[j] + 1) % vocab.total();
      const auto logits = forward(params, ids, mask).logits;
      for (int i = 0; i < seq.size(); ++i) {
        const bool same = logits.row(i) == ref.row(i);
        if (!mask(i, j)) {
          ++checked_pairs;
          if (!same) ++leaks;
        } else if (same && seq.roles[i] != Role::pad) {
          ++blind;
        }
      }
    }
  }

  int causal_mismatch = 0;
  for (int n = 0; n + 3 <= max_len; ++n) {
    const auto s = b.text(text(n));
    if (!(build_omni_mask(s) == causal_mask(s.size()))) ++causal_mismatch;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = leaks == 0 && blind == 0 && causal_mismatch == 0;
  o.detail = std::to_string(checked_layouts) + " distinct layouts (len<=24), " + std::to_string(checked_pairs) +
             " invisible pairs, " + std::to_string(leaks) + " leaks, " + std::to_string(blind) +
             " visible pairs without effect, text-only vs causal mismatches " + std::to_string(causal_mismatch) +
             ", " + fmt("%.1f", secs) + "s";
  return o;
}

// 6 ------------------------------------------------------------------------
RunConfig overfit_config() {
  RunConfig cfg;
  cfg.model.max_len = 64;
  cfg.train.batch = 16;
  cfg.train.lr = 3e-3;
  cfg.train.cfg_drop_prob = 0.0;
  cfg.train.steps = 5000;
  cfg.train.seed = 606;
  return cfg;
}

Outcome overfit() {
  const auto t0 = Clock::now();
  const auto cfg = overfit_config();
  const GridShape shape{cfg.image_height, cfg.image_width, cfg.palette_bits};
  const auto records = generate_dataset("shapes", 16, 606, shape);
  int n_t2i = 0, n_mmu = 0;
  std::map<std::string, std::string> caption_to_grid;
  bool consistent = true;
  for (const auto& r : records) {
    if (r.kind == RecordKind::t2i) {
      ++n_t2i;
      const auto [it, fresh] = caption_to_grid.emplace(r.captions[0], format_grid(r.images[0]));
      consistent = consistent && (fresh || it->second == format_grid(r.images[0]));
    } else {
      ++n_mmu;
    }
  }

  Trainer trainer(cfg, records);
  const int window = 20;
  std::vector<double> recent;
  double avg = std::numeric_limits<double>::infinity();
  while (trainer.step() < 5000) {
    recent.push_back(trainer.step_once().total);
    if (static_cast<int>(recent.size()) > window) recent.erase(recent.begin());
    if (static_cast<int>(recent.size()) == window) {
      avg = std::accumulate(recent.begin(), recent.end(), 0.0) / window;
      if (avg < 0.05) break;
    }
  }
  const auto train_secs = seconds_since(t0);

  const auto vocab = cfg.vocabulary();
  const auto builder = cfg.builder();
  int grids_ok = 0, answers_ok = 0;
  SamplerOptions opt;
  opt.steps = 8;
  opt.guidance = 0.0;
  std::uint64_t seed = 1;
  for (const auto& r : records) {
    Rng rng(seed++);
    if (r.kind == RecordKind::t2i) {
      const auto s = sample_image(trainer.params(), builder, encode_text(r.captions[0], vocab), opt, rng);
      grids_ok += s.tokens == encode_toy_image(r.images[0], vocab);
    } else {
      const auto prefix = builder.mmu_prefix(encode_toy_image(r.images[0], vocab), encode_text(r.question, vocab));
      const auto out = sample_text(trainer.params(), vocab, prefix, cfg.max_text, rng);
      answers_ok += decode_text(out, vocab) == r.answer;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = n_t2i == 8 && n_mmu == 8 && consistent && avg < 0.05 && grids_ok == 8 && answers_ok == 8 && secs < 600;
  o.detail = std::to_string(n_t2i) + " t2i + " + std::to_string(n_mmu) + " QA, mean loss over last " +
             std::to_string(window) + " steps " + fmt("%.4f", avg) + " (<0.05) at step " +
             std::to_string(trainer.step()) + " (<=5000), grids " + std::to_string(grids_ok) + "/8 (T=8 w=0), answers " +
             std::to_string(answers_ok) + "/8, train " + fmt("%.1f", train_secs) + "s total " + fmt("%.1f", secs) +
             "s (<600s)";
  return o;
}

// 7 ------------------------------------------------------------------------
Outcome sampler_contracts() {
  const Vocabulary vocab;
  const auto params = small_model(vocab, 1, 16, 2, 300, 707);
  int combos = 0, count_fail = 0, leftover = 0;
  for (const int M : {4, 9, 16, 25}) {
    const SequenceBuilder b(vocab, M, 8);
    for (const int T : {1, 2, 3, 5, 8}) {
      ++combos;
      SamplerOptions opt;
      opt.steps = T;
      Rng rng(static_cast<std::uint64_t>(M * 31 + T));
      const auto s = sample_image(params, b, {1, 2}, opt, rng);
      for (int t = 0; t < T; ++t) {
        count_fail += s.trace[t].masked_after != mask_count(GammaKind::cosine, double(t + 1) / T, M);
      }
      leftover += static_cast<int>(std::count(s.tokens.begin(), s.tokens.end(), vocab.mask_id()));
    }
  }

  // w = 0 against an explicit conditional-only loop.
  const SequenceBuilder b16(vocab, 16, 8);
  SamplerOptions opt;
  opt.steps = 6;
  Rng r1(71), r2(71);
  const auto via_sampler = sample_image(params, b16, {4, 5}, opt, r1);
  CountingModel model(params, vocab);
  auto state = initial_state(PartialImage{std::vector<int>(16, vocab.mask_id()), std::vector<double>(16, 0.0), 4, 4},
                             opt);
  const auto cond = b16.t2i({4, 5}, std::vector<int>(16, vocab.mask_id()));
  for (int t = 0; t < opt.steps; ++t) state = denoise_step(state, model, cond, null_text_variant(cond, vocab), vocab, r2);
  const bool cfg_identity = state.tokens == via_sampler.tokens && model.calls() == opt.steps;

  // Inpainting on random regions.
  int inpaint_fail = 0;
  Rng pick(72);
  std::vector<int> original(16);
  for (auto& id : original) id = vocab.image_id(static_cast<int>(pick.below(16)));
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint8_t> region(16, 0);
    for (auto& f : region) f = pick.bernoulli(0.4);
    region[pick.below(16)] = 1;
    SamplerOptions io;
    io.steps = 5;
    io.guidance = trial % 2 ? 3.0 : 0.0;
    Rng rng(100 + trial);
    const auto s = sample_image(params, b16, {1}, io, rng, make_inpaint_init(original, region, 4, 4, vocab));
    for (int i = 0; i < 16; ++i) inpaint_fail += !region[i] && s.tokens[i] != original[i];
  }

  // Step counting at M = 256 against one call per token.
  const SequenceBuilder b256(vocab, 256, 4);
  double min_ratio = 1e9, ratio13 = 0;
  int call_fail = 0;
  for (int T = 1; T <= 13; ++T) {
    SamplerOptions so;
    so.steps = T;
    Rng rng(T);
    const auto s = sample_image(params, b256, {1}, so, rng);
    call_fail += s.forwards != T || std::count(s.tokens.begin(), s.tokens.end(), vocab.mask_id()) != 0;
    const double ratio = 256.0 / static_cast<double>(s.forwards);
    if (T <= 12) min_ratio = std::min(min_ratio, ratio);
    if (T == 13) ratio13 = ratio;
  }
  SamplerOptions guided;
  guided.steps = 13;
  guided.guidance = 3.0;
  Rng rg(13);
  call_fail += sample_image(params, b256, {1}, guided, rg).forwards != 26;

  Outcome o;
  o.pass = combos == 20 && count_fail == 0 && leftover == 0 && cfg_identity && inpaint_fail == 0 && call_fail == 0 &&
           min_ratio >= 20.0 && std::lround(ratio13) >= 20;
  o.detail = std::to_string(combos) + " (T,M) combos with " + std::to_string(count_fail) +
             " count mismatches, w=0 identity " + (cfg_identity ? "yes" : "no") + ", inpaint violations " +
             std::to_string(inpaint_fail) + ", M=256: 256/T >= " + fmt("%.1f", min_ratio) + "x for T<=12, " +
             fmt("%.2f", ratio13) + "x at T=13 (~20x), 2T forwards when guided";
  return o;
}

// 8 ------------------------------------------------------------------------
Outcome loss_identities() {
  RunConfig cfg;
  const auto vocab = cfg.vocabulary();
  const auto builder = cfg.builder();
  const GridShape shape{cfg.image_height, cfg.image_width, cfg.palette_bits};
  auto pool = generate_dataset("shapes", 40, 808, shape);
  const auto story = generate_dataset("story", 10, 809, shape);
  pool.insert(pool.end(), story.begin(), story.end());
  Rng rng(808);
  double worst_identity = 0, worst_uniform = 0;
  const double lnV = std::log(static_cast<double>(vocab.total()));
  for (int trial = 0; trial < 1000; ++trial) {
    TrainConfig tc = cfg.train;
    tc.alpha_ntp = rng.uniform() * 4.0;
    std::vector<UnifiedSequence> batch;
    std::vector<Matrix<double>> logits, flat;
    const int n = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i) {
      const auto& r = pool[rng.below(pool.size())];
      batch.push_back(prepare_example(to_sequence(r, builder, shape), rng, tc, vocab));
      Matrix<double> l(batch.back().size(), vocab.total());
      for (Eigen::Index k = 0; k < l.size(); ++k) l.data()[k] = 3.0 * rng.normal();
      logits.push_back(l);
      flat.push_back(Matrix<double>::Zero(l.rows(), l.cols()));
    }
    const auto rep = combined_loss(logits, batch, vocab, tc);
    worst_identity = std::max(worst_identity, std::abs(rep.total - (rep.mtp + tc.alpha_ntp * rep.ntp)));
    const auto uni = combined_loss(flat, batch, vocab, tc);
    if (uni.text_count > 0) worst_uniform = std::max(worst_uniform, std::abs(uni.ntp - lnV));
  }
  Outcome o;
  o.pass = worst_identity <= 1e-12 && worst_uniform <= 1e-9;
  o.detail = "1000 batches, |total - (mtp + a*ntp)| " + fmt("%.2e", worst_identity) +
             " (<=1e-12), |uniform ntp - ln V| " + fmt("%.2e", worst_uniform) + " (<=1e-9)";
  return o;
}

// 9 ------------------------------------------------------------------------
Outcome determinism() {
  RunConfig cfg;
  cfg.model = ModelConfig{2, 16, 2, 0, 64, 2, false};
  cfg.train.batch = 6;
  cfg.train.seed = 909;
  const GridShape shape{cfg.image_height, cfg.image_width, cfg.palette_bits};
  const auto records = generate_dataset("shapes", 12, 909, shape);

  auto full_run = [&](std::string& metrics) {
    Trainer t(cfg, records);
    std::ostringstream os;
    t.run(100, &os);
    metrics = os.str();
    return encode_checkpoint(t.checkpoint());
  };
  std::string m1, m2;
  const auto c1 = full_run(m1);
  const auto c2 = full_run(m2);

  Trainer first(cfg, records);
  std::ostringstream ma;
  first.run(50, &ma);
  const auto mid = encode_checkpoint(first.checkpoint());
  Trainer second(decode_checkpoint(mid), records);
  std::ostringstream mb;
  second.run(100, &mb);
  const auto resumed = encode_checkpoint(second.checkpoint());

  const auto ckpt = decode_checkpoint(c1);
  ModelParams<double> params(ckpt.config.model_config());
  params.data = ckpt.params;
  auto sample = [&] {
    Rng rng(99);
    SamplerOptions opt;
    opt.guidance = 2.0;
    const auto s = sample_image(params, cfg.builder(), encode_text("red square top left", cfg.vocabulary()), opt, rng);
    return render_pixmap(decode_toy_image(s.tokens, cfg.vocabulary(), 4, 4));
  };
  const bool train_same = c1 == c2 && m1 == m2;
  const bool resume_same = resumed == c1 && ma.str() + mb.str() == m1;
  const bool sample_same = sample() == sample();
  Outcome o;
  o.pass = train_same && resume_same && sample_same;
  o.detail = std::string("two 100-step runs ") + (train_same ? "byte-identical" : "DIFFER") +
             ", 50+save/load+50 vs 100 " + (resume_same ? "bitwise equal" : "DIFFER") + ", repeated sample " +
             (sample_same ? "identical" : "DIFFERS") + " (" + std::to_string(c1.size()) + "-byte checkpoint)";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
  };
  const Criterion all[] = {
      {1, "diffusion algebra", diffusion_algebra},
      {2, "closed-form transition reconciliation", literal_reconciliation},
      {3, "ELBO chain", elbo_chain},
      {4, "gradient check", gradient_check},
      {5, "omni-attention soundness", omni_soundness},
      {6, "overfit end-to-end", overfit},
      {7, "sampler contracts", sampler_contracts},
      {8, "loss identities", loss_identities},
      {9, "determinism and persistence", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << c.id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << c.name << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
