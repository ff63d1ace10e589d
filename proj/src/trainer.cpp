#include "omnidiff/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace omnidiff {

namespace {

// Masking and dropout draw from a stream decorrelated from parameter init.
constexpr std::uint64_t kStreamSalt = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + kStreamSalt + (a << 6) + (a >> 2));
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  return x;
}

}  // namespace

std::string format_metrics(std::int64_t step, const LossReport& report) {
  std::ostringstream os;
  os.precision(10);
  os << step << '\t' << report.ntp << '\t' << report.mtp << '\t' << report.total;
  return os.str();
}

Trainer::Trainer(RunConfig config, const std::vector<DatasetRecord>& records)
    : config_(std::move(config)), vocab_(config_.vocabulary()) {
  config_.validate();
  load_records(records);
  Rng init(config_.train.seed);
  params_ = init_params<double>(config_.model_config(), init);
  optimizer_ = Optimizer(config_.train, params_.size());
  rng_ = Rng(mix(config_.train.seed, 1));
}

Trainer::Trainer(const Checkpoint& ckpt, const std::vector<DatasetRecord>& records)
    : config_(ckpt.config), vocab_(config_.vocabulary()) {
  config_.validate();
  load_records(records);
  params_ = ModelParams<double>(config_.model_config());
  if (ckpt.params.size() != params_.data.size()) {
    throw ManifestError("checkpoint parameters do not match the configured layout");
  }
  params_.data = ckpt.params;
  optimizer_ = Optimizer(config_.train, params_.size());
  if (ckpt.first_moment.size() > 0) {
    optimizer_.restore(ckpt.optimizer_steps, ckpt.first_moment, ckpt.second_moment);
  } else {
    const auto zeros = Vector<double>::Zero(params_.data.size());
    optimizer_.restore(ckpt.optimizer_steps, zeros, zeros);
  }
  rng_.set_state(ckpt.rng_state);
  step_ = ckpt.step;
}

void Trainer::load_records(const std::vector<DatasetRecord>& records) {
  if (records.empty()) throw ArgumentError("training needs at least one record");
  const SequenceBuilder builder = config_.builder();
  const GridShape shape{config_.image_height, config_.image_width, config_.palette_bits};
  for (const auto& r : records) {
    UnifiedSequence seq = to_sequence(r, builder, shape);
    if (seq.size() > config_.model.max_len) {
      throw CapacityError("record of length " + std::to_string(seq.size()) + " exceeds max_len " +
                          std::to_string(config_.model.max_len));
    }
    clean_.push_back(std::move(seq));
    kinds_.push_back(r.kind);
  }
}

std::int64_t Trainer::total_steps() const {
  const auto& phases = config_.train.curriculum;
  if (phases.empty()) return config_.train.steps;
  std::int64_t total = 0;
  for (const auto& p : phases) total += p.steps;
  return total;
}

std::vector<UnifiedSequence> Trainer::draw_batch() {
  // Phase and its eligible records; past the last phase the last one repeats.
  const auto& phases = config_.train.curriculum;
  std::size_t phase = 0;
  std::int64_t local = step_;
  std::vector<int> eligible;
  if (phases.empty()) {
    eligible.resize(clean_.size());
    std::iota(eligible.begin(), eligible.end(), 0);
  } else {
    while (phase + 1 < phases.size() && local >= phases[phase].steps) {
      local -= phases[phase].steps;
      ++phase;
    }
    for (std::size_t i = 0; i < clean_.size(); ++i) {
      const auto name = to_string(kinds_[i]);
      const auto& kinds = phases[phase].kinds;
      if (std::find(kinds.begin(), kinds.end(), name) != kinds.end()) {
        eligible.push_back(static_cast<int>(i));
      }
    }
    if (eligible.empty()) {
      throw TrainingError("curriculum phase '" + phases[phase].name + "' matches no records");
    }
  }

  // Epoch e visits a permutation seeded by (seed, phase, e), so the batch at a
  // given step does not depend on how the run was split across resumes.
  const auto n = static_cast<std::int64_t>(eligible.size());
  const int batch = config_.train.batch;
  std::int64_t cached_epoch = -1;
  std::vector<int> perm;
  std::vector<UnifiedSequence> out;
  for (int j = 0; j < batch; ++j) {
    const std::int64_t idx = local * batch + j;
    const std::int64_t epoch = idx / n;
    if (epoch != cached_epoch) {
      perm = eligible;
      Rng shuffle(mix(mix(config_.train.seed, phase + 2), static_cast<std::uint64_t>(epoch)));
      for (std::int64_t i = n - 1; i > 0; --i) {
        std::swap(perm[i], perm[shuffle.below(static_cast<std::uint64_t>(i + 1))]);
      }
      cached_epoch = epoch;
    }
    out.push_back(prepare_example(clean_[perm[idx % n]], rng_, config_.train, vocab_));
  }
  return out;
}

LossReport Trainer::step_once() {
  const auto batch = draw_batch();
  const LossReport report = train_step(params_, optimizer_, batch, vocab_, config_.train);
  ++step_;
  return report;
}

LossReport Trainer::run(std::int64_t until, std::ostream* metrics) {
  if (until < 0) until = total_steps();
  LossReport last;
  while (step_ < until) {
    last = step_once();
    if (metrics != nullptr) *metrics << format_metrics(step_, last) << '\n';
  }
  return last;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = config_;
  c.params = params_.data;
  c.step = step_;
  c.rng_state = rng_.state();
  c.optimizer_steps = optimizer_.steps_taken();
  c.first_moment = optimizer_.first_moment();
  c.second_moment = optimizer_.second_moment();
  return c;
}

}  // namespace omnidiff
