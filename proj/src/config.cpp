#include "omnidiff/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace omnidiff {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int to_int(std::string_view key, std::string_view v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "': expected an integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "': expected an unsigned integer");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  // strtod rather than from_chars<double>: the latter is missing in older libstdc++.
  std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError("config key '" + std::string(key) + "': expected a number, got '" + s + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true/false");
}

// "name:steps:kind+kind, name:steps:kind"
std::vector<Phase> parse_curriculum(std::string_view v) {
  std::vector<Phase> phases;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const auto comma = v.find(',', pos);
    const auto item = trim(v.substr(pos, comma == std::string_view::npos ? v.npos : comma - pos));
    if (!item.empty()) {
      const auto c1 = item.find(':');
      const auto c2 = item.find(':', c1 == item.npos ? item.npos : c1 + 1);
      if (c1 == item.npos || c2 == item.npos) {
        throw ConfigError("curriculum entry '" + std::string(item) + "' is not name:steps:kinds");
      }
      Phase p;
      p.name = std::string(item.substr(0, c1));
      p.steps = to_int("curriculum", item.substr(c1 + 1, c2 - c1 - 1));
      auto kinds = item.substr(c2 + 1);
      std::size_t k = 0;
      while (k <= kinds.size()) {
        const auto plus = kinds.find('+', k);
        const auto kind = trim(kinds.substr(k, plus == kinds.npos ? kinds.npos : plus - k));
        if (!kind.empty()) p.kinds.emplace_back(kind);
        if (plus == kinds.npos) break;
        k = plus + 1;
      }
      phases.push_back(std::move(p));
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return phases;
}

std::string format_curriculum(const std::vector<Phase>& phases) {
  std::string out;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    if (i) out += ", ";
    out += phases[i].name + ":" + std::to_string(phases[i].steps) + ":";
    for (std::size_t k = 0; k < phases[i].kinds.size(); ++k) {
      if (k) out += "+";
      out += phases[i].kinds[k];
    }
  }
  return out;
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model;
  m.vocab_total = vocabulary().total();
  return m;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (codebook < 1) fail("codebook must be >= 1");
  if (image_height < 1 || image_width < 1) fail("image_height and image_width must be >= 1");
  if (palette_bits < 1 || palette_bits > 4) fail("palette_bits must lie in [1,4]");
  if ((1 << palette_bits) > codebook) {
    fail("palette of " + std::to_string(1 << palette_bits) + " colors exceeds codebook " +
         std::to_string(codebook));
  }
  if (max_text < 0) fail("max_text must be >= 0");
  Vocabulary vocab("a", 1);
  try {
    vocab = vocabulary();
  } catch (const ArgumentError& e) {
    fail(std::string("vocabulary: ") + e.what());
  }
  if (vocab_total != 0 && vocab_total != vocab.total()) {
    fail("vocab_total " + std::to_string(vocab_total) + " does not match the vocabulary size " +
         std::to_string(vocab.total()));
  }
  const ModelConfig m = model_config();
  try {
    m.validate();
    train.validate();
  } catch (const ArgumentError& e) {
    fail(e.what());
  }
  const int needed = builder().max_layout_length();
  if (m.max_len < needed) {
    fail("max_len " + std::to_string(m.max_len) + " is shorter than the longest layout (" +
         std::to_string(needed) + " = max_text + image tokens + 5)");
  }
  if (sampler.steps < 1) fail("sample_steps must be >= 1");
  if (!(sampler.guidance >= 0.0)) fail("guidance must be >= 0");
  if (!(sampler.temperature >= 0.0)) fail("temperature must be >= 0");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::map<std::string, int> seen;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == text.npos ? text.npos : nl - pos);
    ++line_no;
    pos = nl == text.npos ? text.size() + 1 : nl + 1;

    // Strip comments outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == line.npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    std::string_view value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (seen[key]++) throw ConfigError("config key '" + key + "' given twice");

    try {
      if (key == "alphabet") c.alphabet = std::string(value);
      else if (key == "codebook") c.codebook = to_int(key, value);
      else if (key == "image_height") c.image_height = to_int(key, value);
      else if (key == "image_width") c.image_width = to_int(key, value);
      else if (key == "palette_bits") c.palette_bits = to_int(key, value);
      else if (key == "max_text") c.max_text = to_int(key, value);
      else if (key == "vocab_total") c.vocab_total = to_int(key, value);
      else if (key == "depth") c.model.depth = to_int(key, value);
      else if (key == "width") c.model.width = to_int(key, value);
      else if (key == "heads") c.model.heads = to_int(key, value);
      else if (key == "max_len") c.model.max_len = to_int(key, value);
      else if (key == "mlp_ratio") c.model.mlp_ratio = to_int(key, value);
      else if (key == "time_conditioning") c.model.time_conditioning = to_bool(key, value);
      else if (key == "alpha_ntp") c.train.alpha_ntp = to_double(key, value);
      else if (key == "cfg_drop_prob") c.train.cfg_drop_prob = to_double(key, value);
      else if (key == "lr") c.train.lr = to_double(key, value);
      else if (key == "steps") c.train.steps = to_int(key, value);
      else if (key == "batch") c.train.batch = to_int(key, value);
      else if (key == "seed") c.train.seed = to_u64(key, value);
      else if (key == "optimizer") c.train.optimizer = parse_optimizer(value);
      else if (key == "beta1") c.train.beta1 = to_double(key, value);
      else if (key == "beta2") c.train.beta2 = to_double(key, value);
      else if (key == "adam_eps") c.train.adam_eps = to_double(key, value);
      else if (key == "gamma") {
        c.train.gamma_kind = parse_gamma_kind(value);
        c.sampler.gamma = c.train.gamma_kind;
      }
      else if (key == "mtp_full_vocab") c.train.mtp_full_vocab = to_bool(key, value);
      else if (key == "curriculum") c.train.curriculum = parse_curriculum(value);
      else if (key == "sample_steps") c.sampler.steps = to_int(key, value);
      else if (key == "guidance") c.sampler.guidance = to_double(key, value);
      else if (key == "temperature") c.sampler.temperature = to_double(key, value);
      else if (key == "anneal_temperature") c.sampler.anneal_temperature = to_bool(key, value);
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const ArgumentError& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "alphabet = \"" << alphabet << "\"\n"
     << "codebook = " << codebook << '\n'
     << "image_height = " << image_height << '\n'
     << "image_width = " << image_width << '\n'
     << "palette_bits = " << palette_bits << '\n'
     << "max_text = " << max_text << '\n'
     << "vocab_total = " << vocab_total << '\n'
     << "depth = " << model.depth << '\n'
     << "width = " << model.width << '\n'
     << "heads = " << model.heads << '\n'
     << "max_len = " << model.max_len << '\n'
     << "mlp_ratio = " << model.mlp_ratio << '\n'
     << "time_conditioning = " << (model.time_conditioning ? "true" : "false") << '\n'
     << "alpha_ntp = " << format_double(train.alpha_ntp) << '\n'
     << "cfg_drop_prob = " << format_double(train.cfg_drop_prob) << '\n'
     << "lr = " << format_double(train.lr) << '\n'
     << "steps = " << train.steps << '\n'
     << "batch = " << train.batch << '\n'
     << "seed = " << train.seed << '\n'
     << "optimizer = " << to_string(train.optimizer) << '\n'
     << "beta1 = " << format_double(train.beta1) << '\n'
     << "beta2 = " << format_double(train.beta2) << '\n'
     << "adam_eps = " << format_double(train.adam_eps) << '\n'
     << "gamma = " << to_string(train.gamma_kind) << '\n'
     << "mtp_full_vocab = " << (train.mtp_full_vocab ? "true" : "false") << '\n';
  if (!train.curriculum.empty()) os << "curriculum = " << format_curriculum(train.curriculum) << '\n';
  os << "sample_steps = " << sampler.steps << '\n'
     << "guidance = " << format_double(sampler.guidance) << '\n'
     << "temperature = " << format_double(sampler.temperature) << '\n'
     << "anneal_temperature = " << (sampler.anneal_temperature ? "true" : "false") << '\n';
  return os.str();
}

}  // namespace omnidiff
