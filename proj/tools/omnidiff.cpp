// omnidiff: command-line front end for data generation, training, sampling
// and the diffusion/attention diagnostics.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "omnidiff/checkpoint.hpp"
#include "omnidiff/dataset.hpp"
#include "omnidiff/oracle.hpp"
#include "omnidiff/pixmap.hpp"
#include "omnidiff/trainer.hpp"

using namespace omnidiff;

namespace {

constexpr int kUsageExit = 2;

struct Failure : std::runtime_error {
  std::string category;
  Failure(std::string cat, const std::string& msg) : std::runtime_error(msg), category(std::move(cat)) {}
};

std::string category_of(const std::exception& e) {
  if (auto* f = dynamic_cast<const Failure*>(&e)) return f->category;
  if (dynamic_cast<const VersionError*>(&e)) return "version";
  if (dynamic_cast<const TruncatedError*>(&e)) return "truncated";
  if (dynamic_cast<const ManifestError*>(&e)) return "manifest";
  if (dynamic_cast<const LoadError*>(&e)) return "load";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const EncodingError*>(&e)) return "encoding";
  if (dynamic_cast<const DecodingError*>(&e)) return "decoding";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const CapacityError*>(&e)) return "capacity";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const ArgumentError*>(&e)) return "argument";
  return "internal";
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path);
  out << text;
}

struct SampleArgs {
  std::string checkpoint;
  std::string prompt;
  std::optional<int> steps;
  std::optional<double> guidance;
  std::optional<double> temperature;
  std::uint64_t seed = 0;
  std::string out;
  int scale = kPixmapScale;
  bool trace = false;
};

void add_sample_options(CLI::App* cmd, SampleArgs& a, bool prompt_required) {
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  auto* p = cmd->add_option("--prompt", a.prompt, "Caption text");
  if (prompt_required) p->required();
  cmd->add_option("--steps", a.steps, "Denoising steps T (default: from config)");
  cmd->add_option("--guidance", a.guidance, "Guidance scale w (default: from config)");
  cmd->add_option("--temperature", a.temperature, "Sampling temperature (0 = argmax)");
  cmd->add_option("--seed", a.seed, "Sampler seed");
  cmd->add_option("--out", a.out, "Write the result as a P3 pixmap");
  cmd->add_option("--scale", a.scale, "Pixels per cell in the pixmap")->check(CLI::PositiveNumber);
  cmd->add_flag("--trace", a.trace, "Print per-step mask counts and confidences to stderr");
}

SamplerOptions sampler_options(const RunConfig& cfg, const SampleArgs& a) {
  SamplerOptions o = cfg.sampler;
  if (a.steps) o.steps = *a.steps;
  if (a.guidance) o.guidance = *a.guidance;
  if (a.temperature) o.temperature = *a.temperature;
  return o;
}

ModelParams<double> params_from(const Checkpoint& ckpt) {
  ModelParams<double> p(ckpt.config.model_config());
  p.data = ckpt.params;
  return p;
}

// Shared tail of the image commands: decode, print, optionally emit.
void finish_image(const ImageSample& s, const Vocabulary& vocab, int h, int w, int palette_bits,
                  const SampleArgs& a) {
  const ToyImage img = decode_toy_image(s.tokens, vocab, h, w, palette_bits);
  std::cout << format_grid(img) << '\n';
  if (a.trace) std::cerr << format_trace(s.trace) << "forwards=" << s.forwards << '\n';
  if (!a.out.empty()) emit_image(img, a.out, a.scale);
}

int cmd_verify_diffusion(std::uint64_t seed, int per_combo, int instances) {
  bool ok = true;
  auto verdict = [&](bool pass) {
    ok = ok && pass;
    return pass ? "PASS" : "FAIL";
  };
  std::cout.precision(3);
  std::cout << std::scientific;

  const auto alg = oracle::check_algebra({2, 3, 4}, {2, 3, 4, 5}, per_combo, seed);
  std::cout << "marginals     schedules=" << alg.schedules << " max_err=" << alg.max_marginal_error
            << " tol=1e-12 " << verdict(alg.max_marginal_error <= 1e-12) << '\n';
  std::cout << "posteriors    max_tv=" << alg.max_posterior_tv << " tol=1e-10 unreachable="
            << alg.unreachable_pairs << " "
            << verdict(alg.max_posterior_tv <= 1e-10 && alg.unreachable_mismatches == 0) << '\n';
  std::cout << "stochastic    max_row_err=" << alg.max_row_error << " tol=1e-12 "
            << verdict(alg.max_row_error <= 1e-12 && alg.absorption_failures == 0) << '\n';

  const auto lit = oracle::check_literal(200, seed + 1);
  std::cout << "closed-form   alpha0_err=" << lit.max_alpha_zero_error << " beta0_err="
            << lit.max_beta_zero_error << " excess_over_ab=" << lit.max_bound_excess
            << " deficit_err=" << lit.max_deficit_error << " "
            << verdict(lit.max_alpha_zero_error <= 1e-12 && lit.max_beta_zero_error <= 1e-12 &&
                       lit.max_bound_excess <= 1e-15 && lit.max_deficit_error <= 1e-15)
            << '\n';

  const auto elbo = oracle::check_elbo_chain(instances, seed + 2);
  std::cout << "elbo  k T L   exact_loglik          elbo   simplified      C-C1-C2   oracle_diff\n";
  std::cout << std::fixed;
  for (const auto& e : elbo) {
    const bool pass = e.report.ordered(1e-9) && e.oracle_diff <= 1e-9 && e.c_split_error <= 1e-9;
    std::cout.precision(6);
    std::cout << "      " << e.k << ' ' << e.steps << ' ' << e.seq_len << ' ' << std::setw(14)
              << e.report.exact_loglik << ' ' << std::setw(13) << e.report.elbo << ' '
              << std::setw(12) << e.report.simplified_bound << ' ';
    std::cout << std::scientific;
    std::cout.precision(2);
    std::cout << std::setw(12) << e.c_split_error << ' ' << std::setw(12) << e.oracle_diff << ' '
              << verdict(pass) << '\n';
    std::cout << std::fixed;
  }
  if (!ok) throw Failure("verify", "one or more diffusion checks failed");
  return 0;
}

int cmd_dump_mask(const std::string& layout, int text_len, int image_tokens, int question_len,
                  int answer_len, const std::string& chunks, bool causal_image) {
  const Vocabulary vocab;
  const int max_text = std::max({text_len, question_len + answer_len, 1});
  const SequenceBuilder b(vocab, image_tokens, max_text);
  const std::vector<int> img(image_tokens, vocab.image_id(0));
  auto text = [&](int n) { return std::vector<int>(n, vocab.char_id('a')); };
  UnifiedSequence seq;
  if (layout == "t2i") {
    seq = b.t2i(text(text_len), img);
  } else if (layout == "mmu") {
    seq = b.mmu(img, text(question_len), text(answer_len));
  } else if (layout == "text") {
    seq = b.text(text(text_len));
  } else if (layout == "mixed") {
    std::vector<Chunk> cs;
    for (char c : chunks) {
      if (c == 't') cs.push_back({Modality::text, text(text_len)});
      else if (c == 'i') cs.push_back({Modality::image, img});
      else throw ArgumentError("--chunks accepts only 't' and 'i'");
    }
    seq = b.mixed(cs);
  } else {
    throw ArgumentError("unknown layout '" + layout + "' (t2i, mmu, text, mixed)");
  }
  std::cout << format_mask(build_omni_mask(seq, MaskOptions{causal_image}));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified text/image transformer with discrete diffusion, at toy scale", "omnidiff"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // verify-diffusion
  std::uint64_t vd_seed = 0;
  int vd_per_combo = 10;
  int vd_instances = 20;
  auto* vd = app.add_subcommand("verify-diffusion", "Cross-check transition algebra and likelihood bounds");
  vd->add_option("--seed", vd_seed, "Seed for random schedules and models");
  vd->add_option("--schedules", vd_per_combo, "Random schedules per (k, T) pair")->check(CLI::PositiveNumber);
  vd->add_option("--elbo-instances", vd_instances, "Enumerated bound instances")->check(CLI::PositiveNumber);

  // gen-data
  std::string gd_generator = "shapes", gd_out;
  int gd_count = 16, gd_height = 4, gd_width = 4, gd_bits = 4;
  std::uint64_t gd_seed = 0;
  auto* gd = app.add_subcommand("gen-data", "Write a synthetic dataset, one record per line");
  gd->add_option("--generator", gd_generator, "shapes, copy or story");
  gd->add_option("--count", gd_count, "Number of records")->check(CLI::NonNegativeNumber);
  gd->add_option("--seed", gd_seed, "Generator seed");
  gd->add_option("--height", gd_height, "Grid rows");
  gd->add_option("--width", gd_width, "Grid columns");
  gd->add_option("--palette-bits", gd_bits, "Bits per cell");
  gd->add_option("--out", gd_out, "Output file (default stdout)");

  // train
  std::string tr_config, tr_data, tr_out, tr_metrics, tr_resume;
  std::int64_t tr_until = -1;
  auto* tr = app.add_subcommand("train", "Train from a config and dataset");
  tr->add_option("--config", tr_config, "Config file (key = value)");
  tr->add_option("--data", tr_data, "Dataset file")->required();
  tr->add_option("--out", tr_out, "Checkpoint to write")->required();
  tr->add_option("--metrics", tr_metrics, "Append step<TAB>ntp<TAB>mtp<TAB>total lines here");
  tr->add_option("--resume", tr_resume, "Continue from this checkpoint");
  tr->add_option("--until", tr_until, "Stop after this global step (default: all phases)");

  // sample-t2i
  SampleArgs st;
  auto* s2i = app.add_subcommand("sample-t2i", "Generate an image grid from a caption");
  add_sample_options(s2i, st, true);

  // sample-mmu
  std::string mm_checkpoint, mm_image, mm_question;
  int mm_max_new = 32;
  std::optional<double> mm_temperature;
  std::uint64_t mm_seed = 0;
  auto* mm = app.add_subcommand("sample-mmu", "Answer a question about an image grid");
  mm->add_option("--checkpoint", mm_checkpoint, "Checkpoint file")->required();
  mm->add_option("--image", mm_image, "Grid, hex digits with '/' between rows")->required();
  mm->add_option("--question", mm_question, "Question text")->required();
  mm->add_option("--max-new", mm_max_new, "Maximum answer tokens")->check(CLI::NonNegativeNumber);
  mm->add_option("--temperature", mm_temperature, "Sample instead of greedy decoding");
  mm->add_option("--seed", mm_seed, "Sampler seed");

  // inpaint
  SampleArgs ip;
  std::string ip_image, ip_region;
  auto* inp = app.add_subcommand("inpaint", "Regenerate a region of an image grid");
  add_sample_options(inp, ip, false);
  inp->add_option("--image", ip_image, "Source grid")->required();
  inp->add_option("--region", ip_region, "0/1 grid, 1 = regenerate")->required();

  // extrapolate
  SampleArgs ex;
  std::string ex_image, ex_direction;
  int ex_amount = 1;
  auto* ext = app.add_subcommand("extrapolate", "Grow an image grid on one side");
  add_sample_options(ext, ex, false);
  ext->add_option("--image", ex_image, "Source grid")->required();
  ext->add_option("--direction", ex_direction, "left, right, up or down")->required();
  ext->add_option("--amount", ex_amount, "Rows or columns to add");

  // grad-check
  std::string gc_config;
  int gc_coords = 200;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("grad-check", "Compare analytic and finite-difference gradients");
  gc->add_option("--config", gc_config, "Config file (default: depth 2, width 32)");
  gc->add_option("--coords", gc_coords, "Parameter coordinates to probe")->check(CLI::PositiveNumber);
  gc->add_option("--epsilon", gc_eps, "Central-difference step");
  gc->add_option("--tolerance", gc_tol, "Maximum accepted relative error");
  gc->add_option("--seed", gc_seed, "Seed for parameters, data and coordinates");

  // dump-mask
  std::string dm_layout, dm_chunks = "ti";
  int dm_text = 3, dm_image = 4, dm_question = 2, dm_answer = 2;
  bool dm_causal = false;
  auto* dm = app.add_subcommand("dump-mask", "Print the attention mask of a layout as 0/1 rows");
  dm->add_option("--layout", dm_layout, "t2i, mmu, text or mixed")->required();
  dm->add_option("--text-len", dm_text, "Caption / text chunk length")->check(CLI::NonNegativeNumber);
  dm->add_option("--image-tokens", dm_image, "Image tokens M")->check(CLI::PositiveNumber);
  dm->add_option("--question-len", dm_question, "Question length (mmu)")->check(CLI::NonNegativeNumber);
  dm->add_option("--answer-len", dm_answer, "Answer length (mmu)")->check(CLI::NonNegativeNumber);
  dm->add_option("--chunks", dm_chunks, "Mixed layout chunk pattern, e.g. titi");
  dm->add_flag("--causal-image", dm_causal, "Causal attention inside image segments");

  if (argc <= 1) {
    std::cerr << app.help();
    return kUsageExit;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return kUsageExit;
  }

  try {
    if (*vd) return cmd_verify_diffusion(vd_seed, vd_per_combo, vd_instances);

    if (*gd) {
      const auto records =
          generate_dataset(gd_generator, gd_count, gd_seed, GridShape{gd_height, gd_width, gd_bits});
      std::string text;
      for (const auto& r : records) text += format_record(r) + '\n';
      write_text(gd_out, text);
      return 0;
    }

    if (*tr) {
      std::unique_ptr<Trainer> trainer;
      if (!tr_resume.empty()) {
        const Checkpoint ckpt = load_checkpoint(tr_resume);
        const auto records = load_dataset(tr_data, ckpt.config.palette_bits);
        trainer = std::make_unique<Trainer>(ckpt, records);
      } else {
        RunConfig cfg = tr_config.empty() ? RunConfig{} : RunConfig::load(tr_config);
        cfg.validate();
        const auto records = load_dataset(tr_data, cfg.palette_bits);
        trainer = std::make_unique<Trainer>(cfg, records);
      }
      std::ofstream metrics;
      if (!tr_metrics.empty()) {
        metrics.open(tr_metrics, tr_resume.empty() ? std::ios::trunc : std::ios::app);
        if (!metrics) throw ArgumentError("cannot write " + tr_metrics);
      }
      const LossReport last = trainer->run(tr_until, tr_metrics.empty() ? nullptr : &metrics);
      save_checkpoint(trainer->checkpoint(), tr_out);
      std::cout << "step=" << trainer->step() << " ntp=" << last.ntp << " mtp=" << last.mtp
                << " total=" << last.total << '\n';
      return 0;
    }

    if (*s2i) {
      const Checkpoint ckpt = load_checkpoint(st.checkpoint);
      const RunConfig& cfg = ckpt.config;
      const auto params = params_from(ckpt);
      Rng rng(st.seed);
      const auto s = sample_image(params, cfg.builder(), encode_text(st.prompt, cfg.vocabulary()),
                                  sampler_options(cfg, st), rng);
      finish_image(s, cfg.vocabulary(), cfg.image_height, cfg.image_width, cfg.palette_bits, st);
      return 0;
    }

    if (*mm) {
      const Checkpoint ckpt = load_checkpoint(mm_checkpoint);
      const RunConfig& cfg = ckpt.config;
      const auto vocab = cfg.vocabulary();
      const ToyImage img = parse_grid(mm_image, cfg.palette_bits);
      const DatasetRecord probe{RecordKind::mmu, {}, {img}, mm_question, ""};
      (void)to_sequence(probe, cfg.builder(), {cfg.image_height, cfg.image_width, cfg.palette_bits});
      const auto prefix = cfg.builder().mmu_prefix(encode_toy_image(img, vocab), encode_text(mm_question, vocab));
      Rng rng(mm_seed);
      TextOptions opts;
      if (mm_temperature) {
        opts.greedy = false;
        opts.temperature = *mm_temperature;
      }
      const auto answer = sample_text(params_from(ckpt), vocab, prefix, mm_max_new, rng, opts);
      std::cout << decode_text(answer, vocab) << '\n';
      return 0;
    }

    if (*inp) {
      const Checkpoint ckpt = load_checkpoint(ip.checkpoint);
      const RunConfig& cfg = ckpt.config;
      const auto vocab = cfg.vocabulary();
      const ToyImage img = parse_grid(ip_image, cfg.palette_bits);
      const ToyImage region = parse_grid(ip_region, 1);
      if (region.height() != img.height() || region.width() != img.width()) {
        throw ArgumentError("region and image dimensions differ");
      }
      std::vector<std::uint8_t> flags;
      for (int i = 0; i < region.cells(); ++i) flags.push_back(region.grid.data()[i] != 0);
      const auto init = make_inpaint_init(encode_toy_image(img, vocab), flags, img.height(), img.width(), vocab);
      Rng rng(ip.seed);
      const auto s = sample_image(params_from(ckpt), cfg.builder(), encode_text(ip.prompt, vocab),
                                  sampler_options(cfg, ip), rng, init);
      finish_image(s, vocab, img.height(), img.width(), cfg.palette_bits, ip);
      return 0;
    }

    if (*ext) {
      const Checkpoint ckpt = load_checkpoint(ex.checkpoint);
      const RunConfig& cfg = ckpt.config;
      const auto vocab = cfg.vocabulary();
      const ToyImage img = parse_grid(ex_image, cfg.palette_bits);
      const auto init = make_extrapolate_init(encode_toy_image(img, vocab), img.height(), img.width(),
                                              parse_direction(ex_direction), ex_amount,
                                              cfg.image_tokens(), vocab);
      Rng rng(ex.seed);
      const auto s = sample_image(params_from(ckpt), cfg.builder(), encode_text(ex.prompt, vocab),
                                  sampler_options(cfg, ex), rng, init);
      finish_image(s, vocab, init.height, init.width, cfg.palette_bits, ex);
      return 0;
    }

    if (*gc) {
      RunConfig cfg = gc_config.empty() ? RunConfig{} : RunConfig::load(gc_config);
      cfg.validate();
      const auto vocab = cfg.vocabulary();
      const auto builder = cfg.builder();
      Rng rng(gc_seed);
      const auto params = init_params<double>(cfg.model_config(), rng);
      const auto records = generate_dataset("shapes", 4, gc_seed, {cfg.image_height, cfg.image_width, cfg.palette_bits});
      std::vector<UnifiedSequence> batch;
      for (const auto& r : records) {
        batch.push_back(prepare_example(to_sequence(r, builder, {cfg.image_height, cfg.image_width, cfg.palette_bits}), rng, cfg.train, vocab));
      }
      const auto rep = grad_check(params, batch, vocab, cfg.train, gc_eps, gc_coords, rng);
      std::cout << "coordinates=" << rep.coordinates << " max_rel_error=" << rep.max_rel_error
                << " worst_index=" << rep.worst_index << " analytic=" << rep.worst_analytic
                << " numeric=" << rep.worst_numeric << '\n';
      if (!(rep.max_rel_error < gc_tol)) {
        throw Failure("gradcheck", "max relative error " + std::to_string(rep.max_rel_error) +
                                       " exceeds tolerance");
      }
      return 0;
    }

    if (*dm) return cmd_dump_mask(dm_layout, dm_text, dm_image, dm_question, dm_answer, dm_chunks, dm_causal);
  } catch (const std::exception& e) {
    std::cerr << "error: " << category_of(e) << ": " << one_line(e.what()) << '\n';
    return 1;
  }
  return kUsageExit;
}
