#include "omnidiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace omnidiff {

int SamplerState::masked_count(int mask_id) const {
  return static_cast<int>(std::count(tokens.begin(), tokens.end(), mask_id));
}

std::string format_trace(const std::vector<StepTrace>& trace) {
  std::ostringstream os;
  os.precision(6);
  for (const auto& t : trace) {
    os << "step=" << t.step << " masked=" << t.masked_after << " min_conf=" << t.min_confidence
       << " median_conf=" << t.median_confidence << '\n';
  }
  return os.str();
}

SamplerState initial_state(const PartialImage& init, const SamplerOptions& options) {
  if (options.steps < 1) throw ArgumentError("sampler: steps must be >= 1");
  if (!(options.guidance >= 0.0)) throw ArgumentError("sampler: guidance must be >= 0");
  if (!(options.temperature >= 0.0)) throw ArgumentError("sampler: temperature must be >= 0");
  if (init.ids.size() != init.confidences.size()) {
    throw ArgumentError("sampler: canvas ids and confidences differ in length");
  }
  SamplerState s;
  s.total_steps = options.steps;
  s.tokens = init.ids;
  s.confidences = init.confidences;
  s.guidance = options.guidance;
  s.temperature = options.temperature;
  s.anneal_temperature = options.anneal_temperature;
  s.gamma = options.gamma;
  return s;
}

namespace {

int image_start(const UnifiedSequence& seq) {
  const auto segs = seq.image_segments();
  if (segs.size() != 1) throw ArgumentError("sampler: expected exactly one image segment");
  return segs.front().start;
}

}  // namespace

SamplerState denoise_step(const SamplerState& state, CountingModel& model, UnifiedSequence cond,
                          UnifiedSequence uncond, const Vocabulary& vocab, Rng& rng,
                          StepTrace* trace) {
  const int mask_id = vocab.mask_id();
  const int m_tokens = static_cast<int>(state.tokens.size());
  std::vector<int> masked;
  for (int i = 0; i < m_tokens; ++i) {
    if (state.tokens[i] == mask_id) masked.push_back(i);
  }
  if (masked.empty()) throw ArgumentError("denoise_step: nothing left to denoise");
  if (state.step >= state.total_steps) throw ArgumentError("denoise_step: schedule exhausted");

  const bool guided = state.guidance != 0.0;
  set_image_tokens(cond, state.tokens, mask_id);
  const Matrix<double> l_cond = model(cond);
  const int cond_start = image_start(cond);
  Matrix<double> l_uncond;
  int uncond_start = 0;
  if (guided) {
    set_image_tokens(uncond, state.tokens, mask_id);
    l_uncond = model(uncond);
    uncond_start = image_start(uncond);
  }

  double temperature = state.temperature;
  if (state.anneal_temperature) {
    temperature *= 1.0 - static_cast<double>(state.step) / state.total_steps;
  }

  SamplerState next = state;
  const int k = vocab.image_size();
  const int begin = vocab.image_begin();
  for (int i : masked) {
    Eigen::RowVectorXd logits = l_cond.row(cond_start + i).segment(begin, k);
    if (guided) logits = cfg_combine(logits, l_uncond.row(uncond_start + i).segment(begin, k), state.guidance);
    int choice = 0;
    double prob = 0.0;
    if (temperature > 0.0) {
      const Eigen::RowVectorXd z = logits / temperature;
      const Eigen::RowVectorXd e = (z.array() - z.maxCoeff()).exp();
      const Eigen::RowVectorXd p = e / e.sum();
      const double u = rng.uniform();
      double acc = 0.0;
      choice = k - 1;
      for (int c = 0; c < k; ++c) {
        acc += p(c);
        if (u < acc) {
          choice = c;
          break;
        }
      }
      prob = p(choice);
    } else {
      logits.maxCoeff(&choice);
      const Eigen::RowVectorXd e = (logits.array() - logits.maxCoeff()).exp();
      prob = e(choice) / e.sum();
    }
    next.tokens[i] = vocab.image_id(choice);
    next.confidences[i] = prob;
  }

  // Re-mask the m least confident of this round's predictions; committed
  // cells carry confidence 1.0 and are never candidates.
  const double ratio = static_cast<double>(state.step + 1) / state.total_steps;
  const int m = std::min(mask_count(state.gamma, ratio, m_tokens), static_cast<int>(masked.size()));
  std::vector<int> order = masked;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (next.confidences[a] != next.confidences[b]) return next.confidences[a] < next.confidences[b];
    return a < b;
  });

  if (trace != nullptr) {
    std::vector<double> conf;
    for (int i : masked) conf.push_back(next.confidences[i]);
    std::sort(conf.begin(), conf.end());
    trace->step = state.step;
    trace->masked_after = m;
    trace->min_confidence = conf.front();
    const std::size_t n = conf.size();
    trace->median_confidence = n % 2 ? conf[n / 2] : 0.5 * (conf[n / 2 - 1] + conf[n / 2]);
  }

  for (int r = 0; r < static_cast<int>(order.size()); ++r) {
    const int i = order[r];
    if (r < m) {
      next.tokens[i] = mask_id;
      next.confidences[i] = 0.0;
    } else {
      next.confidences[i] = 1.0;
    }
  }
  next.step = state.step + 1;
  return next;
}

ImageSample sample_image(const ModelParams<double>& params, const SequenceBuilder& builder,
                         const std::vector<int>& text_ids, const SamplerOptions& options, Rng& rng,
                         const std::optional<PartialImage>& init, MaskOptions mask) {
  const auto& vocab = builder.vocab();
  const int m_tokens = builder.image_tokens();
  PartialImage canvas;
  if (init) {
    canvas = *init;
    if (static_cast<int>(canvas.ids.size()) != m_tokens) {
      throw CapacityError("sampler: canvas has " + std::to_string(canvas.ids.size()) +
                          " cells but the model is configured for " + std::to_string(m_tokens));
    }
  } else {
    canvas.ids.assign(m_tokens, vocab.mask_id());
    canvas.confidences.assign(m_tokens, 0.0);
  }

  SamplerState state = initial_state(canvas, options);
  const UnifiedSequence cond = builder.t2i(text_ids, state.tokens);
  const UnifiedSequence uncond = null_text_variant(cond, vocab);
  CountingModel model(params, vocab, mask);

  ImageSample out;
  while (state.step < state.total_steps && state.masked_count(vocab.mask_id()) > 0) {
    StepTrace trace;
    state = denoise_step(state, model, cond, uncond, vocab, rng, &trace);
    out.trace.push_back(trace);
  }
  out.tokens = state.tokens;
  out.forwards = model.calls();
  return out;
}

std::vector<int> sample_text(const ModelParams<double>& params, const Vocabulary& vocab,
                             const UnifiedSequence& prefix, int max_new, Rng& rng,
                             const TextOptions& options) {
  if (max_new < 0) throw ArgumentError("sample_text: max_new must be >= 0");
  if (prefix.size() == 0) throw ArgumentError("sample_text: empty prefix");
  const Role last = prefix.roles.back();
  if (last != Role::text && !(last == Role::special && prefix.ids.back() == vocab.special(Special::sot))) {
    throw ArgumentError("sample_text: prefix must end inside a text segment");
  }
  const int eot = vocab.special(Special::eot);
  UnifiedSequence seq = prefix;
  std::vector<int> out;
  CountingModel model(params, vocab);
  while (static_cast<int>(out.size()) < max_new && seq.size() < params.config.max_len) {
    const Matrix<double> logits = model(seq);
    const Eigen::RowVectorXd row = logits.row(seq.size() - 1);
    // Candidates: the text range plus [EOT].
    std::vector<int> cand(vocab.text_size());
    std::iota(cand.begin(), cand.end(), 0);
    cand.push_back(eot);
    int choice = cand.front();
    if (options.greedy || options.temperature <= 0.0) {
      double best = -std::numeric_limits<double>::infinity();
      for (int id : cand) {
        if (row(id) > best) {
          best = row(id);
          choice = id;
        }
      }
    } else {
      double hi = -std::numeric_limits<double>::infinity();
      for (int id : cand) hi = std::max(hi, row(id));
      std::vector<double> w(cand.size());
      double total = 0.0;
      for (std::size_t c = 0; c < cand.size(); ++c) {
        w[c] = std::exp((row(cand[c]) - hi) / options.temperature);
        total += w[c];
      }
      const double u = rng.uniform() * total;
      double acc = 0.0;
      choice = cand.back();
      for (std::size_t c = 0; c < cand.size(); ++c) {
        acc += w[c];
        if (u < acc) {
          choice = cand[c];
          break;
        }
      }
    }
    if (choice == eot) break;
    out.push_back(choice);
    seq.push(choice, Role::text);
  }
  return out;
}

PartialImage make_inpaint_init(const std::vector<int>& image_ids,
                               const std::vector<std::uint8_t>& region, int height, int width,
                               const Vocabulary& vocab) {
  const std::size_t cells = static_cast<std::size_t>(height) * width;
  if (height < 1 || width < 1 || image_ids.size() != cells || region.size() != cells) {
    throw ArgumentError("inpaint: image and region must both have " + std::to_string(cells) +
                        " cells");
  }
  if (std::none_of(region.begin(), region.end(), [](std::uint8_t f) { return f != 0; })) {
    throw ArgumentError("inpaint: region is empty, nothing to inpaint");
  }
  PartialImage out;
  out.height = height;
  out.width = width;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!region[i] && !vocab.is_image(image_ids[i])) {
      throw ArgumentError("inpaint: kept cell " + std::to_string(i) + " is not an image id");
    }
    out.ids.push_back(region[i] ? vocab.mask_id() : image_ids[i]);
    out.confidences.push_back(region[i] ? 0.0 : 1.0);
  }
  return out;
}

Direction parse_direction(std::string_view name) {
  if (name == "left") return Direction::left;
  if (name == "right") return Direction::right;
  if (name == "up") return Direction::up;
  if (name == "down") return Direction::down;
  throw ArgumentError("unknown direction '" + std::string(name) + "'");
}

PartialImage make_extrapolate_init(const std::vector<int>& image_ids, int height, int width,
                                   Direction direction, int amount, int supported_tokens,
                                   const Vocabulary& vocab) {
  if (amount < 1) throw ArgumentError("extrapolate: amount must be >= 1");
  if (height < 1 || width < 1 || image_ids.size() != static_cast<std::size_t>(height) * width) {
    throw ArgumentError("extrapolate: image does not match its dimensions");
  }
  const bool horizontal = direction == Direction::left || direction == Direction::right;
  const int new_h = horizontal ? height : height + amount;
  const int new_w = horizontal ? width + amount : width;
  if (new_h * new_w != supported_tokens) {
    throw CapacityError("extrapolate: enlarged canvas " + std::to_string(new_h) + "x" +
                        std::to_string(new_w) + " does not match the supported " +
                        std::to_string(supported_tokens) + " image tokens");
  }
  const int row_off = direction == Direction::up ? amount : 0;
  const int col_off = direction == Direction::left ? amount : 0;
  PartialImage out;
  out.height = new_h;
  out.width = new_w;
  out.ids.assign(static_cast<std::size_t>(new_h) * new_w, vocab.mask_id());
  out.confidences.assign(out.ids.size(), 0.0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const int id = image_ids[static_cast<std::size_t>(r) * width + c];
      if (!vocab.is_image(id)) throw ArgumentError("extrapolate: source cell is not an image id");
      const std::size_t dst = static_cast<std::size_t>(r + row_off) * new_w + (c + col_off);
      out.ids[dst] = id;
      out.confidences[dst] = 1.0;
    }
  }
  return out;
}

}  // namespace omnidiff
