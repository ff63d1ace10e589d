#pragma once

// Training loop over a record set: curriculum phases, per-epoch shuffled
// batches, metrics lines and checkpoint/resume.

#include <cstdint>
#include <ostream>
#include <vector>

#include "omnidiff/checkpoint.hpp"
#include "omnidiff/dataset.hpp"

namespace omnidiff {

class Trainer {
 public:
  /// Fresh parameters drawn from config.train.seed.
  Trainer(RunConfig config, const std::vector<DatasetRecord>& records);
  /// Continues exactly where the checkpoint stopped.
  Trainer(const Checkpoint& ckpt, const std::vector<DatasetRecord>& records);

  std::int64_t step() const { return step_; }
  /// Sum of curriculum phase budgets, or train.steps without a curriculum.
  std::int64_t total_steps() const;

  LossReport step_once();
  /// Steps until `until` (or total_steps() when negative). Writes one
  /// "step\tntp\tmtp\ttotal" line per step to metrics if given.
  LossReport run(std::int64_t until = -1, std::ostream* metrics = nullptr);

  Checkpoint checkpoint() const;

  const RunConfig& config() const { return config_; }
  const ModelParams<double>& params() const { return params_; }
  const std::vector<UnifiedSequence>& examples() const { return clean_; }

 private:
  void load_records(const std::vector<DatasetRecord>& records);
  std::vector<UnifiedSequence> draw_batch();

  RunConfig config_;
  Vocabulary vocab_;
  std::vector<UnifiedSequence> clean_;
  std::vector<RecordKind> kinds_;
  ModelParams<double> params_;
  Optimizer optimizer_;
  Rng rng_;
  std::int64_t step_ = 0;
};

/// Metrics line for one step, no trailing newline.
std::string format_metrics(std::int64_t step, const LossReport& report);

}  // namespace omnidiff
