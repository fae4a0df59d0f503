#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qsep/rng.hpp"

namespace qsep {

enum class Modality : std::uint8_t { audio = 0, image = 1, text = 2, mixed = 3 };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::audio: return "audio";
    case Modality::image: return "image";
    case Modality::text: return "text";
    case Modality::mixed: return "mixed";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "audio") return Modality::audio;
  if (s == "image") return Modality::image;
  if (s == "text") return Modality::text;
  if (s == "mixed") return Modality::mixed;
  throw std::invalid_argument("unknown modality: " + s);
}

struct QueryEmbedding {
  std::vector<double> vector;
  Modality modality = Modality::text;

  std::size_t dim() const { return vector.size(); }
};

struct MixupWeights {
  double w_audio = 0.0;
  double w_image = 0.0;
  double w_text = 0.0;

  double sum() const { return w_audio + w_image + w_text; }
};

namespace detail {

inline void check_same_dim(const QueryEmbedding& a, const QueryEmbedding& b,
                           const char* where) {
  if (a.dim() != b.dim())
    throw std::invalid_argument(std::string(where) + ": dimension mismatch");
}

inline void check_weights(const MixupWeights& w) {
  auto ok = [](double x) { return x >= 0.0 && x <= 1.0 && std::isfinite(x); };
  if (!ok(w.w_audio) || !ok(w.w_image) || !ok(w.w_text))
    throw std::invalid_argument("mixup weights must lie in [0, 1]");
  if (w.sum() < 1e-6)
    throw std::invalid_argument("mixup weights sum below 1e-6");
}

}  // namespace detail

// Convex-like blend of the three modality features, normalized by the
// weight sum so the result stays in the anchors' affine span.
inline QueryEmbedding mix_queries(const QueryEmbedding& qa,
                                  const QueryEmbedding& qv,
                                  const QueryEmbedding& qt,
                                  const MixupWeights& w) {
  detail::check_same_dim(qa, qv, "mix_queries");
  detail::check_same_dim(qa, qt, "mix_queries");
  detail::check_weights(w);
  const double s = w.sum();
  QueryEmbedding out;
  out.modality = Modality::mixed;
  out.vector.resize(qa.dim());
  for (std::size_t i = 0; i < qa.dim(); ++i)
    out.vector[i] =
        (w.w_audio * qa.vector[i] + w.w_image * qv.vector[i] +
         w.w_text * qt.vector[i]) /
        s;
  return out;
}

// Three independent uniforms on [0, 1]; degenerate triples are redrawn.
inline MixupWeights sample_mixup_weights(Rng& rng) {
  MixupWeights w;
  do {
    w.w_audio = rng.uniform();
    w.w_image = rng.uniform();
    w.w_text = rng.uniform();
  } while (w.sum() < 1e-6);
  return w;
}

// Re-weighted removal of an unwanted component: (1+a)Q - a*Qn. At a=0 the
// query is returned unchanged.
inline QueryEmbedding negative_query(const QueryEmbedding& q,
                                     const QueryEmbedding& qn, double alpha) {
  detail::check_same_dim(q, qn, "negative_query");
  if (!(alpha >= 0.0))
    throw std::invalid_argument("negative_query: alpha must be >= 0");
  QueryEmbedding out = q;
  for (std::size_t i = 0; i < q.dim(); ++i)
    out.vector[i] = (1.0 + alpha) * q.vector[i] - alpha * qn.vector[i];
  return out;
}

// Plain subtraction baseline: Q - a*Qn.
inline QueryEmbedding naive_negative_query(const QueryEmbedding& q,
                                           const QueryEmbedding& qn,
                                           double alpha) {
  detail::check_same_dim(q, qn, "naive_negative_query");
  if (!(alpha >= 0.0))
    throw std::invalid_argument("naive_negative_query: alpha must be >= 0");
  QueryEmbedding out = q;
  for (std::size_t i = 0; i < q.dim(); ++i)
    out.vector[i] = q.vector[i] - alpha * qn.vector[i];
  return out;
}

inline double cosine_similarity(const QueryEmbedding& a,
                                const QueryEmbedding& b) {
  detail::check_same_dim(a, b, "cosine_similarity");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.vector[i] * b.vector[i];
    na += a.vector[i] * a.vector[i];
    nb += b.vector[i] * b.vector[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_similarity: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct QuerySetEntry {
  std::uint32_t class_id = 0;
  std::string label;
  QueryEmbedding embedding;
};

struct QuerySet {
  std::vector<QuerySetEntry> entries;
  std::size_t embedding_dim = 0;

  const QuerySetEntry* find_label(const std::string& label) const {
    for (const auto& e : entries)
      if (e.label == label) return &e;
    return nullptr;
  }
  const QuerySetEntry* find_id(std::uint32_t id) const {
    for (const auto& e : entries)
      if (e.class_id == id) return &e;
    return nullptr;
  }
};

struct QueryAugResult {
  std::uint32_t class_id = 0;
  QueryEmbedding embedding;
  double similarity = 0.0;
};

// Nearest in-domain class feature by cosine similarity; ties resolve to
// the lowest class id.
inline QueryAugResult query_aug(const QueryEmbedding& q_des,
                                const QuerySet& qs) {
  if (qs.entries.empty()) throw std::invalid_argument("query_aug: empty set");
  if (q_des.dim() != qs.embedding_dim)
    throw std::invalid_argument("query_aug: dimension mismatch");
  const QuerySetEntry* best = nullptr;
  double best_sim = 0.0;
  for (const auto& e : qs.entries) {
    const double sim = cosine_similarity(q_des, e.embedding);
    if (best == nullptr || sim > best_sim ||
        (sim == best_sim && e.class_id < best->class_id)) {
      best = &e;
      best_sim = sim;
    }
  }
  return {best->class_id, best->embedding, best_sim};
}

// Componentwise mean of several audio-instance features.
inline QueryEmbedding average_audio_queries(
    const std::vector<QueryEmbedding>& samples) {
  if (samples.empty())
    throw std::invalid_argument("average_audio_queries: empty list");
  const std::size_t d = samples.front().dim();
  for (const auto& s : samples) {
    if (s.dim() != d)
      throw std::invalid_argument("average_audio_queries: mixed dimensions");
    if (s.modality != Modality::audio)
      throw std::invalid_argument(
          "average_audio_queries: all samples must be audio");
  }
  QueryEmbedding out;
  out.modality = Modality::audio;
  out.vector.assign(d, 0.0);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < d; ++i) out.vector[i] += s.vector[i];
  for (double& x : out.vector) x /= static_cast<double>(samples.size());
  return out;
}

// Frozen feature extractor contract: same inputs, same vector, forever.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  // Canonical class feature for a modality (no instance variation).
  virtual QueryEmbedding anchor(std::uint32_t class_id,
                                Modality modality) const = 0;
  // Instance feature: anchor plus deterministic per-instance variation.
  virtual QueryEmbedding embed(std::uint32_t class_id, Modality modality,
                               std::uint64_t instance_seed) const = 0;
};

struct SyntheticSpaceConfig {
  std::size_t dim = 64;
  std::size_t n_classes = 8;
  std::uint64_t seed = 1;
  double modality_offset_norm = 0.5;
  double instance_sigma = 0.05;
  bool normalize = false;
};

// A stand-in joint embedding space: every class has a unit anchor
// (pairwise orthogonal), each modality adds a fixed offset vector, and
// instances scatter around that point with small isotropic noise. The
// offsets reproduce the clustered-per-modality geometry real joint
// encoders exhibit, which is what makes mixing and negative queries
// meaningful to test.
class SyntheticEmbeddingSpace final : public EmbeddingProvider {
 public:
  explicit SyntheticEmbeddingSpace(const SyntheticSpaceConfig& cfg)
      : cfg_(cfg) {
    if (cfg.n_classes + 4 > cfg.dim)
      throw std::invalid_argument(
          "SyntheticEmbeddingSpace: dim too small for class count");
    Rng rng(mix_seed({cfg.seed, 0x5eedULL}));
    for (std::size_t c = 0; c < cfg.n_classes; ++c)
      anchors_.push_back(orthonormal_draw(rng));
    for (int m = 0; m < 3; ++m) {
      std::vector<double> g = orthonormal_draw(rng);
      for (double& x : g) x *= cfg.modality_offset_norm;
      offsets_.push_back(std::move(g));
    }
    paraphrase_dir_ = orthonormal_draw(rng);
  }

  std::size_t dim() const override { return cfg_.dim; }
  std::size_t n_classes() const { return cfg_.n_classes; }
  double instance_sigma() const { return cfg_.instance_sigma; }

  QueryEmbedding anchor(std::uint32_t class_id,
                        Modality modality) const override {
    check_class(class_id);
    QueryEmbedding q;
    q.modality = modality;
    q.vector = anchors_[class_id];
    add_offset(q.vector, modality);
    finalize(q.vector);
    return q;
  }

  QueryEmbedding embed(std::uint32_t class_id, Modality modality,
                       std::uint64_t instance_seed) const override {
    return embed_with_sigma(class_id, modality, instance_seed,
                            cfg_.instance_sigma);
  }

  // Same as embed() with an explicit noise scale (used by evaluation
  // protocols that stress query quality).
  QueryEmbedding embed_with_sigma(std::uint32_t class_id, Modality modality,
                                  std::uint64_t instance_seed,
                                  double sigma) const {
    check_class(class_id);
    QueryEmbedding q;
    q.modality = modality;
    q.vector = anchors_[class_id];
    add_offset(q.vector, modality);
    if (sigma > 0.0) {
      Rng rng(mix_seed({cfg_.seed, 0x1257ULL, class_id,
                        static_cast<std::uint64_t>(modality), instance_seed}));
      const double comp = sigma / std::sqrt(static_cast<double>(cfg_.dim));
      for (double& x : q.vector) x += comp * rng.normal();
    }
    finalize(q.vector);
    return q;
  }

  // Fixed direction used by the out-of-domain description simulator.
  const std::vector<double>& paraphrase_dir() const { return paraphrase_dir_; }
  std::uint64_t seed() const { return cfg_.seed; }

 private:
  void check_class(std::uint32_t class_id) const {
    if (class_id >= anchors_.size())
      throw std::invalid_argument("embedding space: unknown class id");
  }

  void add_offset(std::vector<double>& v, Modality m) const {
    if (m == Modality::mixed)
      throw std::invalid_argument(
          "embedding space: mixed features come from mix_queries");
    const std::vector<double>& g = offsets_[static_cast<int>(m)];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += g[i];
  }

  // Emitted components are quantized to f32 so the binary query-set file
  // round-trips bit-exactly.
  void finalize(std::vector<double>& v) const {
    if (cfg_.normalize) {
      double n2 = 0.0;
      for (double x : v) n2 += x * x;
      const double n = std::sqrt(n2);
      if (n > 0.0)
        for (double& x : v) x /= n;
    }
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  }

  // Gaussian draw orthogonalized against everything drawn so far.
  std::vector<double> orthonormal_draw(Rng& rng) {
    std::vector<double> v(cfg_.dim);
    for (int attempt = 0; attempt < 64; ++attempt) {
      for (double& x : v) x = rng.normal();
      for (const auto* basis : {&anchors_, &offsets_}) {
        for (const auto& u : *basis) {
          double unorm2 = 0.0, dot = 0.0;
          for (std::size_t i = 0; i < v.size(); ++i) {
            dot += v[i] * u[i];
            unorm2 += u[i] * u[i];
          }
          for (std::size_t i = 0; i < v.size(); ++i)
            v[i] -= dot / unorm2 * u[i];
        }
      }
      double n2 = 0.0;
      for (double x : v) n2 += x * x;
      if (n2 > 1e-8) {
        const double inv = 1.0 / std::sqrt(n2);
        for (double& x : v) x *= inv;
        return v;
      }
    }
    throw std::runtime_error("embedding space: degenerate random draw");
  }

  SyntheticSpaceConfig cfg_;
  std::vector<std::vector<double>> anchors_;
  std::vector<std::vector<double>> offsets_;
  std::vector<double> paraphrase_dir_;
};

// One canonical entry per class, taken from the provider's anchors.
inline QuerySet build_query_set(
    const EmbeddingProvider& provider,
    const std::vector<std::pair<std::uint32_t, std::string>>& classes,
    Modality modality) {
  QuerySet qs;
  qs.embedding_dim = provider.dim();
  for (const auto& [id, label] : classes) {
    if (qs.find_id(id) != nullptr)
      throw std::invalid_argument("build_query_set: duplicate class id");
    QuerySetEntry e;
    e.class_id = id;
    e.label = label;
    e.embedding = provider.anchor(id, modality);
    qs.entries.push_back(std::move(e));
  }
  return qs;
}

namespace detail {

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& is, const char* where) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(std::string(where) + ": truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

inline void put_f32_le(std::ostream& os, float f) {
  std::uint32_t u;
  static_assert(sizeof(u) == sizeof(f));
  std::memcpy(&u, &f, 4);
  put_u32_le(os, u);
}

inline float read_f32_le(std::istream& is, const char* where) {
  const std::uint32_t u = read_u32_le(is, where);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

constexpr char kQuerySetMagic[] = "QSEPQSET";
constexpr std::uint32_t kQuerySetVersion = 1;

inline void save_query_set(const QuerySet& qs, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_query_set: cannot open " + path);
  os.write(kQuerySetMagic, 8);
  detail::put_u32_le(os, kQuerySetVersion);
  detail::put_u32_le(os, static_cast<std::uint32_t>(qs.embedding_dim));
  detail::put_u32_le(os, static_cast<std::uint32_t>(qs.entries.size()));
  for (const auto& e : qs.entries) {
    detail::put_u32_le(os, e.class_id);
    detail::put_u32_le(os, static_cast<std::uint32_t>(e.label.size()));
    os.write(e.label.data(), static_cast<std::streamsize>(e.label.size()));
    for (double x : e.embedding.vector)
      detail::put_f32_le(os, static_cast<float>(x));
  }
  if (!os) throw std::runtime_error("save_query_set: write failed: " + path);
}

inline QuerySet load_query_set(const std::string& path,
                               Modality modality = Modality::text) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_query_set: cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kQuerySetMagic, 8) != 0)
    throw std::runtime_error("load_query_set: bad magic in " + path);
  const std::uint32_t version = detail::read_u32_le(is, "load_query_set");
  if (version != kQuerySetVersion)
    throw std::runtime_error("load_query_set: unsupported version " +
                             std::to_string(version));
  QuerySet qs;
  qs.embedding_dim = detail::read_u32_le(is, "load_query_set");
  const std::uint32_t count = detail::read_u32_le(is, "load_query_set");
  for (std::uint32_t i = 0; i < count; ++i) {
    QuerySetEntry e;
    e.class_id = detail::read_u32_le(is, "load_query_set");
    const std::uint32_t len = detail::read_u32_le(is, "load_query_set");
    e.label.resize(len);
    if (!is.read(e.label.data(), len))
      throw std::runtime_error("load_query_set: truncated label");
    e.embedding.modality = modality;
    e.embedding.vector.resize(qs.embedding_dim);
    for (auto& x : e.embedding.vector)
      x = static_cast<double>(detail::read_f32_le(is, "load_query_set"));
    if (qs.find_id(e.class_id) != nullptr)
      throw std::runtime_error("load_query_set: duplicate class id");
    qs.entries.push_back(std::move(e));
  }
  return qs;
}

}  // namespace qsep
