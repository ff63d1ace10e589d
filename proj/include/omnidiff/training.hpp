#pragma once

// Next-token (text) and mask-token (image) objectives, training-time masking,
// condition dropout, gradient verification and the optimizer loop.

#include <cstdint>
#include <string>
#include <vector>

#include "omnidiff/diffusion.hpp"
#include "omnidiff/model.hpp"
#include "omnidiff/sequence.hpp"

namespace omnidiff {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view to_string(OptimizerKind kind);

/// One curriculum phase: a step budget and the record kinds it draws from
/// ("t2i", "mmu", "mixed").
struct Phase {
  std::string name;
  int steps = 0;
  std::vector<std::string> kinds;

  bool operator==(const Phase&) const = default;
};

struct TrainConfig {
  double alpha_ntp = 1.0;
  double cfg_drop_prob = 0.1;
  double lr = 3e-3;
  int steps = 1000;
  int batch = 8;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  GammaKind gamma_kind = GammaKind::cosine;
  /// Ablation: normalize masked-token predictions over the whole vocabulary
  /// instead of the image codebook range.
  bool mtp_full_vocab = false;
  std::vector<Phase> curriculum;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct LossTerm {
  double loss = 0.0;  // mean NLL over supervised positions, 0 when count == 0
  int count = 0;
};

struct LossReport {
  double ntp = 0.0;
  double mtp = 0.0;
  double total = 0.0;
  int text_count = 0;
  int image_count = 0;
};

/// Mean NLL of supervised text/special positions p, predicted from row p-1.
LossTerm ntp_loss(const Matrix<double>& logits, const UnifiedSequence& seq);

/// Mean NLL of the recorded original token at each supervised image position,
/// predicted at that position. Normalized over the image range unless
/// full_vocab is set.
LossTerm mtp_loss(const Matrix<double>& logits, const UnifiedSequence& seq, const Vocabulary& vocab,
                  bool full_vocab = false);

/// total = mtp + alpha * ntp, each term averaged over the batch's supervised
/// positions of its kind.
LossReport combined_loss(const std::vector<Matrix<double>>& logits,
                         const std::vector<UnifiedSequence>& batch, const Vocabulary& vocab,
                         const TrainConfig& cfg);
LossReport combined_loss(const Matrix<double>& logits, const UnifiedSequence& seq,
                         const Vocabulary& vocab, const TrainConfig& cfg);

/// ceil(gamma(r) M) clamped to [1, M].
int training_mask_count(GammaKind kind, double r, int image_tokens);

/// Re-masks every image segment: r ~ U(0,1], then exactly
/// training_mask_count(r) uniformly chosen positions become [MASK]. Targets
/// keep the originals; loss_mask marks the masked positions.
UnifiedSequence apply_training_mask(const UnifiedSequence& seq, Rng& rng, GammaKind kind,
                                    const Vocabulary& vocab);

/// With probability p swaps the caption of a t2i sequence for the empty text.
UnifiedSequence cfg_dropout(const UnifiedSequence& seq, Rng& rng, double p,
                            const Vocabulary& vocab);

/// Combined loss of a batch and, if grads is non-null, its gradient
/// (accumulated into grads). Sequences are padded to a common length.
LossReport loss_and_gradient(const ModelParams<double>& params,
                             const std::vector<UnifiedSequence>& batch, const Vocabulary& vocab,
                             const TrainConfig& cfg, ModelParams<double>* grads,
                             MaskOptions mask_options = {});

struct GradCheckReport {
  double max_rel_error = 0.0;
  int coordinates = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Relative error denominator floor; protects coordinates with ~0 gradient.
inline constexpr double kGradCheckFloor = 1e-3;

/// Central differences on `coordinates` uniformly sampled parameter indices.
GradCheckReport grad_check(const ModelParams<double>& params,
                           const std::vector<UnifiedSequence>& batch, const Vocabulary& vocab,
                           const TrainConfig& cfg, double epsilon, int coordinates, Rng& rng);

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const TrainConfig& cfg, std::size_t size);

  void update(ModelParams<double>& params, const ModelParams<double>& grads);

  std::int64_t steps_taken() const { return t_; }
  const Vector<double>& first_moment() const { return m_; }
  const Vector<double>& second_moment() const { return v_; }
  void restore(std::int64_t t, Vector<double> m, Vector<double> v);

 private:
  OptimizerKind kind_ = OptimizerKind::adam;
  double lr_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  Vector<double> m_, v_;
};

/// One optimizer update on a prepared batch. Throws TrainingError on a
/// non-finite loss or gradient, leaving params untouched.
LossReport train_step(ModelParams<double>& params, Optimizer& optimizer,
                      const std::vector<UnifiedSequence>& batch, const Vocabulary& vocab,
                      const TrainConfig& cfg);

/// Training-time view of a clean example: condition dropout for t2i, then
/// fresh masks on every generated image segment. mmu images stay intact.
UnifiedSequence prepare_example(const UnifiedSequence& clean, Rng& rng, const TrainConfig& cfg,
                                const Vocabulary& vocab);

}  // namespace omnidiff
