#pragma once

// Inference: guided logit combination, confidence-based iterative unmasking
// for images, greedy/temperature decoding for text, and initial canvases for
// inpainting and extrapolation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omnidiff/diffusion.hpp"
#include "omnidiff/model.hpp"
#include "omnidiff/sequence.hpp"

namespace omnidiff {

/// (1 + w) l_cond - w l_uncond.
template <typename DerivedC, typename DerivedU>
auto cfg_combine(const Eigen::MatrixBase<DerivedC>& l_cond, const Eigen::MatrixBase<DerivedU>& l_uncond,
                 double w) {
  if (l_cond.rows() != l_uncond.rows() || l_cond.cols() != l_uncond.cols()) {
    throw ArgumentError("cfg_combine: shape mismatch");
  }
  using Scalar = typename DerivedC::Scalar;
  return (static_cast<Scalar>(1.0 + w) * l_cond - static_cast<Scalar>(w) * l_uncond).eval();
}

/// Wraps immutable parameters and counts forward passes.
class CountingModel {
 public:
  CountingModel(const ModelParams<double>& params, const Vocabulary& vocab, MaskOptions mask = {})
      : params_(&params), mask_id_(vocab.mask_id()), mask_options_(mask) {}

  Matrix<double> operator()(const UnifiedSequence& seq) {
    ++calls_;
    return forward_logits(*params_, seq, build_omni_mask(seq, mask_options_), mask_id_);
  }

  std::int64_t calls() const { return calls_; }
  const ModelParams<double>& params() const { return *params_; }

 private:
  const ModelParams<double>* params_;
  int mask_id_;
  MaskOptions mask_options_;
  std::int64_t calls_ = 0;
};

struct SamplerOptions {
  int steps = 8;
  double guidance = 0.0;
  double temperature = 1.0;
  /// Scales temperature by (1 - t/T) at step t.
  bool anneal_temperature = false;
  GammaKind gamma = GammaKind::cosine;

  bool operator==(const SamplerOptions&) const = default;
};

struct SamplerState {
  int step = 0;
  int total_steps = 1;
  std::vector<int> tokens;         // unified ids, [MASK] where undecided
  std::vector<double> confidences; // 1.0 on every committed position
  double guidance = 0.0;
  double temperature = 1.0;
  bool anneal_temperature = false;
  GammaKind gamma = GammaKind::cosine;

  int masked_count(int mask_id) const;
};

struct StepTrace {
  int step = 0;
  int masked_after = 0;
  double min_confidence = 0.0;
  double median_confidence = 0.0;
};

/// One text line per step: "step=<t> masked=<n> min_conf=<x> median_conf=<y>".
std::string format_trace(const std::vector<StepTrace>& trace);

/// Canvas handed to the sampler: ids with [MASK] where generation happens,
/// and confidence 1.0 on fixed cells.
struct PartialImage {
  std::vector<int> ids;
  std::vector<double> confidences;
  int height = 0;
  int width = 0;
};

SamplerState initial_state(const PartialImage& init, const SamplerOptions& options);

/// One denoising round. cond is the t2i layout for the caption, uncond its
/// null-text variant; only their image segments are overwritten here.
SamplerState denoise_step(const SamplerState& state, CountingModel& model, UnifiedSequence cond,
                          UnifiedSequence uncond, const Vocabulary& vocab, Rng& rng,
                          StepTrace* trace = nullptr);

struct ImageSample {
  std::vector<int> tokens;
  std::int64_t forwards = 0;
  std::vector<StepTrace> trace;
};

/// Runs options.steps denoising rounds from init (all [MASK] by default).
ImageSample sample_image(const ModelParams<double>& params, const SequenceBuilder& builder,
                         const std::vector<int>& text_ids, const SamplerOptions& options, Rng& rng,
                         const std::optional<PartialImage>& init = std::nullopt,
                         MaskOptions mask = {});

struct TextOptions {
  bool greedy = true;
  double temperature = 1.0;
};

/// Decodes up to max_new text tokens after the prefix, stopping at [EOT]
/// (not returned) or at the model's max_len.
std::vector<int> sample_text(const ModelParams<double>& params, const Vocabulary& vocab,
                             const UnifiedSequence& prefix, int max_new, Rng& rng,
                             const TextOptions& options = {});

/// region: one flag per cell in raster order, true = regenerate.
PartialImage make_inpaint_init(const std::vector<int>& image_ids,
                               const std::vector<std::uint8_t>& region, int height, int width,
                               const Vocabulary& vocab);

enum class Direction { left, right, up, down };
Direction parse_direction(std::string_view name);

/// Grows the canvas by `amount` columns/rows on one side; new cells are
/// [MASK]. supported_tokens is the image length the model is configured for.
PartialImage make_extrapolate_init(const std::vector<int>& image_ids, int height, int width,
                                   Direction direction, int amount, int supported_tokens,
                                   const Vocabulary& vocab);

}  // namespace omnidiff
