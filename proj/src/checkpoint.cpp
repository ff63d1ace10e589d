#include "omnidiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace omnidiff {

namespace {

constexpr std::string_view kMagic = "ODIFCKPT";

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void text(std::string_view s) {
    pod<std::uint64_t>(s.size());
    out_.append(s);
  }
  void doubles(const Vector<double>& v) {
    out_.append(reinterpret_cast<const char*>(v.data()), sizeof(double) * v.size());
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::string_view bytes(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
    auto out = in_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename T>
  T pod(const char* what) {
    T v;
    std::memcpy(&v, bytes(sizeof(T), what).data(), sizeof(T));
    return v;
  }
  std::string text(const char* what) {
    const auto n = pod<std::uint64_t>(what);
    return std::string(bytes(n, what));
  }
  Vector<double> doubles(std::uint64_t count, const char* what) {
    if (count > (in_.size() - pos_) / sizeof(double)) {
      throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
    Vector<double> v(static_cast<Eigen::Index>(count));
    std::memcpy(v.data(), bytes(count * sizeof(double), what).data(), count * sizeof(double));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string layout_manifest(const ParamLayout& layout) {
  std::ostringstream os;
  for (const auto& s : layout.slots()) {
    os << s.name << ' ' << s.rows << ' ' << s.cols << ' ' << s.offset << '\n';
  }
  return os.str();
}

std::string vocabulary_table(const Vocabulary& vocab) {
  std::string out;
  for (int id = 0; id < vocab.total(); ++id) out += vocab.token_name(id) + '\n';
  return out;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const ParamLayout layout(ckpt.config.model_config());
  if (static_cast<std::size_t>(ckpt.params.size()) != layout.total()) {
    throw ArgumentError("checkpoint: parameter count does not match the configured layout");
  }
  const bool moments = ckpt.first_moment.size() > 0;
  if (moments && (ckpt.first_moment.size() != ckpt.params.size() ||
                  ckpt.second_moment.size() != ckpt.params.size())) {
    throw ArgumentError("checkpoint: optimizer moments do not match the parameter count");
  }
  const std::string manifest = layout_manifest(layout);

  Writer w;
  w.raw(kMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.text(ckpt.config.serialize());
  w.text(vocabulary_table(ckpt.config.vocabulary()));
  w.text(manifest);
  w.pod<std::uint64_t>(fnv1a(manifest));
  w.pod<std::uint64_t>(ckpt.params.size());
  w.doubles(ckpt.params);
  w.pod<std::int64_t>(ckpt.step);
  w.text(ckpt.rng_state);
  w.pod<std::int64_t>(ckpt.optimizer_steps);
  w.pod<std::uint8_t>(moments ? 1 : 0);
  if (moments) {
    w.doubles(ckpt.first_moment);
    w.doubles(ckpt.second_moment);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kMagic.size()) throw TruncatedError("checkpoint truncated in header");
  if (r.bytes(kMagic.size(), "magic") != kMagic) throw LoadError("not a checkpoint file");
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }

  Checkpoint ckpt;
  const std::string config_text = r.text("config");
  try {
    ckpt.config = RunConfig::parse(config_text);
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint config: ") + e.what());
  }
  const std::string vocab = r.text("vocabulary");
  if (vocab != vocabulary_table(ckpt.config.vocabulary())) {
    throw ManifestError("checkpoint vocabulary table does not match its config");
  }
  const std::string manifest = r.text("manifest");
  const auto hash = r.pod<std::uint64_t>("manifest hash");
  if (fnv1a(manifest) != hash) throw ManifestError("checkpoint manifest hash mismatch");
  const ParamLayout layout(ckpt.config.model_config());
  if (manifest != layout_manifest(layout)) {
    throw ManifestError("checkpoint manifest does not match the configured model");
  }
  const auto count = r.pod<std::uint64_t>("parameter count");
  if (count != layout.total()) {
    throw ManifestError("checkpoint holds " + std::to_string(count) + " parameters, layout needs " +
                        std::to_string(layout.total()));
  }
  ckpt.params = r.doubles(count, "parameters");
  ckpt.step = r.pod<std::int64_t>("step");
  ckpt.rng_state = r.text("rng state");
  ckpt.optimizer_steps = r.pod<std::int64_t>("optimizer steps");
  const auto moments = r.pod<std::uint8_t>("moment flag");
  if (moments > 1) throw LoadError("checkpoint moment flag is corrupt");
  if (moments) {
    ckpt.first_moment = r.doubles(count, "first moment");
    ckpt.second_moment = r.doubles(count, "second moment");
  }
  if (!r.done()) throw LoadError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace omnidiff
