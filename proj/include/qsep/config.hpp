#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsep/embedding.hpp"
#include "qsep/sepnet.hpp"
#include "qsep/synthdata.hpp"
#include "qsep/training.hpp"

namespace qsep {

// Every knob of an experiment, addressable by dotted key. Unknown keys
// are rejected by name so typos fail loudly instead of silently keeping
// a default.
struct ExperimentConfig {
  // dataset
  std::uint64_t dataset_seed = 42;
  int sample_rate = 8000;
  double duration = 0.48;
  // analysis front end
  int fft_size = 512;
  int hop = 128;
  int window_size = 512;
  // embedding space
  std::uint64_t space_seed = 5;
  int embed_dim = 64;
  double offset_norm = 0.5;
  double instance_sigma = 0.05;
  bool normalize_embeddings = false;
  // model
  int depth = 5;
  int k = 8;
  int base_width = 8;
  // training
  int steps = 3000;
  int batch = 8;
  double lr = 2e-3;
  int warmup = 200;
  double clip = 5.0;
  std::uint64_t train_seed = 7;
  bool mixup = true;
  std::string modalities = "text";  // used when mixup is off
  // evaluation
  int eval_mixtures = 100;
  std::uint64_t eval_seed = 99;
  double query_sigma = 0.0;
  int audio_samples = 5;
  double ood_magnitude = 0.3;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    // stoull would wrap a negative value around instead of failing
    if (v.find('-') != std::string::npos) throw std::invalid_argument("");
    std::size_t pos = 0;
    const std::uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config: bad unsigned value for " + key +
                                ": '" + v + "'");
  }
}

inline int parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long r = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return static_cast<int>(r);
  } catch (...) {
    throw std::invalid_argument("config: bad integer value for " + key +
                                ": '" + v + "'");
  }
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + v +
                                "'");
  }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + v +
                              "' (use true/false)");
}

}  // namespace detail

// Applies one `dotted.key=value` override.
inline void apply_override(ExperimentConfig& c, const std::string& key,
                           const std::string& value) {
  using namespace detail;
  if (key == "dataset.seed") c.dataset_seed = parse_u64(value, key);
  else if (key == "dataset.sample_rate") c.sample_rate = parse_int(value, key);
  else if (key == "dataset.duration") c.duration = parse_double(value, key);
  else if (key == "stft.fft_size") c.fft_size = parse_int(value, key);
  else if (key == "stft.hop") c.hop = parse_int(value, key);
  else if (key == "stft.window") c.window_size = parse_int(value, key);
  else if (key == "space.seed") c.space_seed = parse_u64(value, key);
  else if (key == "space.dim") c.embed_dim = parse_int(value, key);
  else if (key == "space.offset_norm") c.offset_norm = parse_double(value, key);
  else if (key == "space.instance_sigma")
    c.instance_sigma = parse_double(value, key);
  else if (key == "space.normalize")
    c.normalize_embeddings = parse_bool(value, key);
  else if (key == "model.depth") c.depth = parse_int(value, key);
  else if (key == "model.k") c.k = parse_int(value, key);
  else if (key == "model.base_width") c.base_width = parse_int(value, key);
  else if (key == "train.steps") c.steps = parse_int(value, key);
  else if (key == "train.batch") c.batch = parse_int(value, key);
  else if (key == "train.lr") c.lr = parse_double(value, key);
  else if (key == "train.warmup") c.warmup = parse_int(value, key);
  else if (key == "train.clip") c.clip = parse_double(value, key);
  else if (key == "train.seed") c.train_seed = parse_u64(value, key);
  else if (key == "train.mixup") c.mixup = parse_bool(value, key);
  else if (key == "train.modalities") c.modalities = value;
  else if (key == "eval.mixtures") c.eval_mixtures = parse_int(value, key);
  else if (key == "eval.seed") c.eval_seed = parse_u64(value, key);
  else if (key == "eval.query_sigma") c.query_sigma = parse_double(value, key);
  else if (key == "eval.audio_samples")
    c.audio_samples = parse_int(value, key);
  else if (key == "eval.ood_magnitude")
    c.ood_magnitude = parse_double(value, key);
  else
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

// Parses a `key=value` pair as given on a command line.
inline void apply_override_pair(ExperimentConfig& c, const std::string& kv) {
  const std::size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("config: expected key=value, got '" + kv +
                                "'");
  apply_override(c, detail::trim(kv.substr(0, eq)),
                 detail::trim(kv.substr(eq + 1)));
}

// `key = value` lines; '#' starts a comment; blank lines ignored.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_config: cannot open " + path);
  ExperimentConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("load_config: " + path + ":" +
                               std::to_string(lineno) +
                               ": expected key = value");
    apply_override(c, detail::trim(t.substr(0, eq)),
                   detail::trim(t.substr(eq + 1)));
  }
  return c;
}

inline std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "dataset.seed = " << c.dataset_seed << "\n";
  os << "dataset.sample_rate = " << c.sample_rate << "\n";
  os << "dataset.duration = " << num(c.duration) << "\n";
  os << "stft.fft_size = " << c.fft_size << "\n";
  os << "stft.hop = " << c.hop << "\n";
  os << "stft.window = " << c.window_size << "\n";
  os << "space.seed = " << c.space_seed << "\n";
  os << "space.dim = " << c.embed_dim << "\n";
  os << "space.offset_norm = " << num(c.offset_norm) << "\n";
  os << "space.instance_sigma = " << num(c.instance_sigma) << "\n";
  os << "space.normalize = " << (c.normalize_embeddings ? "true" : "false")
     << "\n";
  os << "model.depth = " << c.depth << "\n";
  os << "model.k = " << c.k << "\n";
  os << "model.base_width = " << c.base_width << "\n";
  os << "train.steps = " << c.steps << "\n";
  os << "train.batch = " << c.batch << "\n";
  os << "train.lr = " << num(c.lr) << "\n";
  os << "train.warmup = " << c.warmup << "\n";
  os << "train.clip = " << num(c.clip) << "\n";
  os << "train.seed = " << c.train_seed << "\n";
  os << "train.mixup = " << (c.mixup ? "true" : "false") << "\n";
  os << "train.modalities = " << c.modalities << "\n";
  os << "eval.mixtures = " << c.eval_mixtures << "\n";
  os << "eval.seed = " << c.eval_seed << "\n";
  os << "eval.query_sigma = " << num(c.query_sigma) << "\n";
  os << "eval.audio_samples = " << c.audio_samples << "\n";
  os << "eval.ood_magnitude = " << num(c.ood_magnitude) << "\n";
  return os.str();
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_config: cannot open " + path);
  os << config_to_text(c);
}

// ---- derived objects --------------------------------------------------------

inline SpectralParams spectral_params(const ExperimentConfig& c) {
  SpectralParams sp;
  sp.fft_size = c.fft_size;
  sp.hop = c.hop;
  sp.window_size = c.window_size;
  sp.sample_rate = c.sample_rate;
  return sp;
}

inline ModelHyper model_hyper(const ExperimentConfig& c) {
  ModelHyper hy;
  hy.depth = c.depth;
  hy.k = c.k;
  hy.embed_dim = c.embed_dim;
  hy.base_width = c.base_width;
  return hy;
}

inline SyntheticSpaceConfig space_config(const ExperimentConfig& c,
                                         std::size_t n_classes) {
  SyntheticSpaceConfig sc;
  sc.dim = static_cast<std::size_t>(c.embed_dim);
  sc.n_classes = n_classes;
  sc.seed = c.space_seed;
  sc.modality_offset_norm = c.offset_norm;
  sc.instance_sigma = c.instance_sigma;
  sc.normalize = c.normalize_embeddings;
  return sc;
}

inline std::vector<Modality> parse_modality_list(const std::string& csv) {
  std::vector<Modality> out;
  std::string cur;
  std::istringstream is(csv);
  while (std::getline(is, cur, ',')) {
    const std::string t = detail::trim(cur);
    if (t.empty()) continue;
    out.push_back(parse_modality(t));
  }
  if (out.empty())
    throw std::invalid_argument("config: empty modality list '" + csv + "'");
  return out;
}

inline TrainConfig train_config(const ExperimentConfig& c) {
  TrainConfig tc;
  tc.steps = c.steps;
  tc.batch_size = c.batch;
  tc.peak_lr = c.lr;
  tc.warmup_steps = c.warmup;
  tc.clip_norm = c.clip;
  tc.seed = c.train_seed;
  tc.use_mixup = c.mixup;
  tc.modality_subset = parse_modality_list(c.modalities);
  return tc;
}

}  // namespace qsep
