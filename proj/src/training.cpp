#include "omnidiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace omnidiff {

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ArgumentError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd";
}

void TrainConfig::validate() const {
  if (!(alpha_ntp >= 0.0)) throw ArgumentError("alpha_ntp must be >= 0");
  if (!(cfg_drop_prob >= 0.0 && cfg_drop_prob < 1.0)) {
    throw ArgumentError("cfg_drop_prob must lie in [0,1)");
  }
  if (!(lr >= 0.0)) throw ArgumentError("lr must be >= 0");
  if (steps < 0) throw ArgumentError("steps must be >= 0");
  if (batch < 1) throw ArgumentError("batch must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ArgumentError("adam betas must lie in [0,1)");
  }
  for (const auto& phase : curriculum) {
    if (phase.steps < 0) throw ArgumentError("phase '" + phase.name + "' has negative steps");
    if (phase.kinds.empty()) throw ArgumentError("phase '" + phase.name + "' draws no kinds");
    for (const auto& k : phase.kinds) {
      if (k != "t2i" && k != "mmu" && k != "mixed") {
        throw ArgumentError("phase '" + phase.name + "': unknown kind '" + k + "'");
      }
    }
  }
}

namespace {

// Cross entropy of one logit row restricted to [begin, begin+count); adds
// weight * dCE/dlogits into the same row of dlogits when given.
double cross_entropy(const Matrix<double>& logits, int row, int begin, int count, int target,
                     double weight, Matrix<double>* dlogits) {
  const auto slice = logits.row(row).segment(begin, count);
  const double best = slice.maxCoeff();
  const Eigen::RowVectorXd e = (slice.array() - best).exp();
  const double z = e.sum();
  const double nll = std::log(z) + best - logits(row, target);
  if (dlogits != nullptr) {
    dlogits->row(row).segment(begin, count) += weight * (e / z);
    (*dlogits)(row, target) -= weight;
  }
  return nll;
}

struct Supervision {
  bool is_text;
  int row;
  int target;
};

std::vector<Supervision> supervised_positions(const UnifiedSequence& seq) {
  std::vector<Supervision> out;
  for (int p = 0; p < seq.size(); ++p) {
    if (!seq.loss_mask[p]) continue;
    if (seq.roles[p] == Role::image) {
      out.push_back({false, p, seq.targets[p]});
    } else if (seq.roles[p] == Role::text || seq.roles[p] == Role::special) {
      if (p == 0) throw ArgumentError("position 0 cannot be next-token supervised");
      out.push_back({true, p - 1, seq.ids[p]});
    }
  }
  return out;
}

void check_logits(const Matrix<double>& logits, const UnifiedSequence& seq) {
  if (logits.rows() < seq.size()) throw ArgumentError("logits have fewer rows than the sequence");
}

}  // namespace

LossTerm ntp_loss(const Matrix<double>& logits, const UnifiedSequence& seq) {
  check_logits(logits, seq);
  LossTerm term;
  double sum = 0.0;
  for (const auto& s : supervised_positions(seq)) {
    if (!s.is_text) continue;
    sum += cross_entropy(logits, s.row, 0, static_cast<int>(logits.cols()), s.target, 0.0, nullptr);
    ++term.count;
  }
  term.loss = term.count ? sum / term.count : 0.0;
  return term;
}

LossTerm mtp_loss(const Matrix<double>& logits, const UnifiedSequence& seq, const Vocabulary& vocab,
                  bool full_vocab) {
  check_logits(logits, seq);
  LossTerm term;
  double sum = 0.0;
  for (const auto& s : supervised_positions(seq)) {
    if (s.is_text) continue;
    if (!vocab.is_image(s.target)) throw ArgumentError("masked position has no image target");
    const int begin = full_vocab ? 0 : vocab.image_begin();
    const int count = full_vocab ? static_cast<int>(logits.cols()) : vocab.image_size();
    sum += cross_entropy(logits, s.row, begin, count, s.target, 0.0, nullptr);
    ++term.count;
  }
  term.loss = term.count ? sum / term.count : 0.0;
  return term;
}

namespace {

// Sums of per-position NLL by kind plus (optionally) weighted logit grads.
struct RawLoss {
  double text_sum = 0.0;
  double image_sum = 0.0;
  int text_count = 0;
  int image_count = 0;
};

RawLoss raw_loss(const Matrix<double>& logits, const UnifiedSequence& seq, const Vocabulary& vocab,
                 const TrainConfig& cfg, double text_weight, double image_weight,
                 Matrix<double>* dlogits) {
  RawLoss raw;
  const int v = static_cast<int>(logits.cols());
  for (const auto& s : supervised_positions(seq)) {
    if (s.is_text) {
      raw.text_sum += cross_entropy(logits, s.row, 0, v, s.target, text_weight, dlogits);
      ++raw.text_count;
    } else {
      const int begin = cfg.mtp_full_vocab ? 0 : vocab.image_begin();
      const int count = cfg.mtp_full_vocab ? v : vocab.image_size();
      raw.image_sum += cross_entropy(logits, s.row, begin, count, s.target, image_weight, dlogits);
      ++raw.image_count;
    }
  }
  return raw;
}

LossReport finish(double text_sum, double image_sum, int text_count, int image_count,
                  const TrainConfig& cfg) {
  LossReport r;
  r.text_count = text_count;
  r.image_count = image_count;
  r.ntp = text_count ? text_sum / text_count : 0.0;
  r.mtp = image_count ? image_sum / image_count : 0.0;
  r.total = r.mtp + cfg.alpha_ntp * r.ntp;
  return r;
}

}  // namespace

LossReport combined_loss(const std::vector<Matrix<double>>& logits,
                         const std::vector<UnifiedSequence>& batch, const Vocabulary& vocab,
                         const TrainConfig& cfg) {
  if (logits.size() != batch.size()) throw ArgumentError("combined_loss: batch size mismatch");
  double ts = 0.0, is = 0.0;
  int tc = 0, ic = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    check_logits(logits[b], batch[b]);
    const auto raw = raw_loss(logits[b], batch[b], vocab, cfg, 0.0, 0.0, nullptr);
    ts += raw.text_sum;
    is += raw.image_sum;
    tc += raw.text_count;
    ic += raw.image_count;
  }
  return finish(ts, is, tc, ic, cfg);
}

LossReport combined_loss(const Matrix<double>& logits, const UnifiedSequence& seq,
                         const Vocabulary& vocab, const TrainConfig& cfg) {
  return combined_loss(std::vector<Matrix<double>>{logits}, std::vector<UnifiedSequence>{seq}, vocab,
                       cfg);
}

int training_mask_count(GammaKind kind, double r, int image_tokens) {
  return std::max(1, mask_count(kind, r, image_tokens));
}

UnifiedSequence apply_training_mask(const UnifiedSequence& seq, Rng& rng, GammaKind kind,
                                    const Vocabulary& vocab) {
  const auto segs = seq.image_segments();
  if (segs.empty()) throw ArgumentError("apply_training_mask: sequence has no image segment");
  UnifiedSequence out = seq;
  for (const auto& s : segs) {
    std::vector<int> order(s.length);
    for (int i = 0; i < s.length; ++i) {
      const int p = s.start + i;
      if (!vocab.is_image(out.targets[p])) {
        throw ArgumentError("apply_training_mask: original token unavailable at position " +
                            std::to_string(p));
      }
      out.ids[p] = out.targets[p];
      out.loss_mask[p] = 0;
      order[i] = i;
    }
    const double r = rng.uniform_open_closed();
    const int count = training_mask_count(kind, r, s.length);
    // Partial Fisher-Yates: the first `count` entries are a uniform subset.
    for (int i = 0; i < count; ++i) {
      const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.length - i)));
      std::swap(order[i], order[j]);
      const int p = s.start + order[i];
      out.ids[p] = vocab.mask_id();
      out.loss_mask[p] = 1;
    }
  }
  return out;
}

UnifiedSequence cfg_dropout(const UnifiedSequence& seq, Rng& rng, double p,
                            const Vocabulary& vocab) {
  const bool drop = rng.uniform() < p;
  if (!drop || seq.task != Task::t2i) return seq;
  return null_text_variant(seq, vocab);
}

UnifiedSequence prepare_example(const UnifiedSequence& clean, Rng& rng, const TrainConfig& cfg,
                                const Vocabulary& vocab) {
  if (clean.task == Task::mmu) return clean;
  UnifiedSequence seq = clean;
  if (seq.task == Task::t2i) seq = cfg_dropout(seq, rng, cfg.cfg_drop_prob, vocab);
  if (!seq.image_segments().empty()) seq = apply_training_mask(seq, rng, cfg.gamma_kind, vocab);
  return seq;
}

LossReport loss_and_gradient(const ModelParams<double>& params,
                             const std::vector<UnifiedSequence>& batch, const Vocabulary& vocab,
                             const TrainConfig& cfg, ModelParams<double>* grads,
                             MaskOptions mask_options) {
  if (batch.empty()) throw ArgumentError("empty batch");
  int length = 0;
  for (const auto& s : batch) length = std::max(length, s.size());

  // First pass: counts fix the per-position weights of the batch means.
  int text_count = 0, image_count = 0;
  for (const auto& s : batch) {
    for (const auto& sup : supervised_positions(s)) (sup.is_text ? text_count : image_count)++;
  }
  const double text_weight = text_count ? cfg.alpha_ntp / text_count : 0.0;
  const double image_weight = image_count ? 1.0 / image_count : 0.0;

  double text_sum = 0.0, image_sum = 0.0;
  for (const auto& original : batch) {
    const UnifiedSequence seq = pad_to(original, length, vocab);
    const AttentionMask mask = build_omni_mask(seq, mask_options);
    const double frac = params.config.time_conditioning ? masked_fraction(seq, vocab.mask_id()) : 0.0;
    const auto cache = forward(params, seq.ids, mask, frac);
    Matrix<double> dlogits;
    if (grads != nullptr) dlogits = Matrix<double>::Zero(cache.logits.rows(), cache.logits.cols());
    const auto raw = raw_loss(cache.logits, seq, vocab, cfg, text_weight, image_weight,
                              grads != nullptr ? &dlogits : nullptr);
    text_sum += raw.text_sum;
    image_sum += raw.image_sum;
    if (grads != nullptr) backward(params, cache, mask, dlogits, *grads);
  }
  return finish(text_sum, image_sum, text_count, image_count, cfg);
}

GradCheckReport grad_check(const ModelParams<double>& params,
                           const std::vector<UnifiedSequence>& batch, const Vocabulary& vocab,
                           const TrainConfig& cfg, double epsilon, int coordinates, Rng& rng) {
  if (!(epsilon > 0.0)) throw ArgumentError("grad_check: epsilon must be positive");
  if (coordinates < 1) throw ArgumentError("grad_check: need at least one coordinate");
  ModelParams<double> grads = params.zeros_like();
  loss_and_gradient(params, batch, vocab, cfg, &grads);

  GradCheckReport report;
  ModelParams<double> probe = params;
  for (int c = 0; c < coordinates; ++c) {
    const auto idx = static_cast<Eigen::Index>(rng.below(params.size()));
    const double saved = probe.data(idx);
    probe.data(idx) = saved + epsilon;
    const double up = loss_and_gradient(probe, batch, vocab, cfg, nullptr).total;
    probe.data(idx) = saved - epsilon;
    const double down = loss_and_gradient(probe, batch, vocab, cfg, nullptr).total;
    probe.data(idx) = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = grads.data(idx);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++report.coordinates;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = static_cast<std::size_t>(idx);
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

Optimizer::Optimizer(const TrainConfig& cfg, std::size_t size)
    : kind_(cfg.optimizer),
      lr_(cfg.lr),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      m_(Vector<double>::Zero(static_cast<Eigen::Index>(size))),
      v_(Vector<double>::Zero(static_cast<Eigen::Index>(size))) {}

void Optimizer::update(ModelParams<double>& params, const ModelParams<double>& grads) {
  if (params.data.size() != m_.size() || grads.data.size() != m_.size()) {
    throw ArgumentError("optimizer: parameter size mismatch");
  }
  ++t_;
  if (kind_ == OptimizerKind::sgd) {
    params.data -= lr_ * grads.data;
    return;
  }
  m_ = beta1_ * m_ + (1.0 - beta1_) * grads.data;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grads.data.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.data.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

void Optimizer::restore(std::int64_t t, Vector<double> m, Vector<double> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw ArgumentError("optimizer: restored moment size mismatch");
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

LossReport train_step(ModelParams<double>& params, Optimizer& optimizer,
                      const std::vector<UnifiedSequence>& batch, const Vocabulary& vocab,
                      const TrainConfig& cfg) {
  ModelParams<double> grads = params.zeros_like();
  const LossReport report = loss_and_gradient(params, batch, vocab, cfg, &grads);
  if (!std::isfinite(report.total) || !grads.all_finite()) {
    std::ostringstream os;
    os << "non-finite training signal at optimizer step " << optimizer.steps_taken() + 1
       << " (ntp=" << report.ntp << ", mtp=" << report.mtp << ", total=" << report.total << ")";
    throw TrainingError(os.str());
  }
  optimizer.update(params, grads);
  return report;
}

}  // namespace omnidiff
