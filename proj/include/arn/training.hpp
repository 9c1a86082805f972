#pragma once

// End-to-end weakly supervised optimization: single-image steps, Adam with
// a stepwise-decayed learning rate, deterministic seeded shuffling,
// checkpointing, and a line-delimited metrics log.

#include "arn/eval.hpp"
#include "arn/gradient_check.hpp"
#include "arn/model.hpp"
#include "arn/scene.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace arn {

struct TrainConfig {
  // Loss composition.
  double alpha = 0.01;
  double beta = 1.0;
  double gamma = 5.0;
  double lambda = 1.0;
  // Optimizer schedule.
  double lr0 = 4e-4;
  int decay_every = 8000;
  double decay_factor = 0.1;
  int max_iters = 30000;
  double grad_clip = 0.0;  // 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Model dimensions (the query feature dimension equals d_e).
  int d_e = 512;
  int d_h = 512;
  int d_s = 512;
  int att_hidden = 512;
  int dec_hidden = 512;
  bool context_enabled = true;
  std::uint64_t seed = 0;
  // Bookkeeping cadence.
  int log_every = 50;
  int eval_every = 1000;
  int checkpoint_every = 10000;

  /// Loss-weight defaults per context mode.
  static TrainConfig defaults(bool context_on) {
    TrainConfig cfg;
    cfg.context_enabled = context_on;
    if (!context_on) {
      cfg.alpha = 0.001;
      cfg.gamma = 30.0;
    }
    return cfg;
  }

  LossWeights loss_weights() const { return {alpha, beta, gamma, lambda}; }

  void validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0 || lambda < 0) {
      throw std::invalid_argument("TrainConfig: loss weights must be >= 0");
    }
    if (lr0 <= 0 || decay_every <= 0 || max_iters < 0) {
      throw std::invalid_argument("TrainConfig: bad schedule values");
    }
    if (decay_factor <= 0 || decay_factor > 1) {
      throw std::invalid_argument("TrainConfig: decay_factor must be in (0, 1]");
    }
    if (d_e <= 0 || d_h <= 0 || d_s <= 0 || att_hidden <= 0 || dec_hidden <= 0) {
      throw std::invalid_argument("TrainConfig: dimensions must be positive");
    }
  }

  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("TrainConfig: cannot write " + path);
    out << to_text();
  }

  static TrainConfig load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("TrainConfig: cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
  }
};

namespace config_detail {

template <typename Fn>
void for_each_field(TrainConfig& c, Fn&& fn) {
  fn("alpha", c.alpha);
  fn("beta", c.beta);
  fn("gamma", c.gamma);
  fn("lambda", c.lambda);
  fn("lr0", c.lr0);
  fn("decay_every", c.decay_every);
  fn("decay_factor", c.decay_factor);
  fn("max_iters", c.max_iters);
  fn("grad_clip", c.grad_clip);
  fn("adam_beta1", c.adam_beta1);
  fn("adam_beta2", c.adam_beta2);
  fn("adam_eps", c.adam_eps);
  fn("d_e", c.d_e);
  fn("d_h", c.d_h);
  fn("d_s", c.d_s);
  fn("att_hidden", c.att_hidden);
  fn("dec_hidden", c.dec_hidden);
  fn("context_enabled", c.context_enabled);
  fn("seed", c.seed);
  fn("log_every", c.log_every);
  fn("eval_every", c.eval_every);
  fn("checkpoint_every", c.checkpoint_every);
}

inline std::string field_to_string(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}
inline std::string field_to_string(int v) { return std::to_string(v); }
inline std::string field_to_string(std::uint64_t v) { return std::to_string(v); }
inline std::string field_to_string(bool v) { return v ? "true" : "false"; }

inline void field_from_string(const std::string& s, double& v) { v = std::stod(s); }
inline void field_from_string(const std::string& s, int& v) { v = std::stoi(s); }
inline void field_from_string(const std::string& s, std::uint64_t& v) { v = std::stoull(s); }
inline void field_from_string(const std::string& s, bool& v) {
  if (s == "true" || s == "1") {
    v = true;
  } else if (s == "false" || s == "0") {
    v = false;
  } else {
    throw std::invalid_argument("expected boolean, got '" + s + "'");
  }
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

}  // namespace config_detail

inline std::string TrainConfig::to_text() const {
  std::ostringstream out;
  TrainConfig copy = *this;
  config_detail::for_each_field(copy, [&out](const char* name, auto& value) {
    out << name << " = " << config_detail::field_to_string(value) << '\n';
  });
  return out.str();
}

inline TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = config_detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("TrainConfig: line " + std::to_string(line_no) +
                               ": expected 'key = value'");
    }
    const std::string key = config_detail::trim(stripped.substr(0, eq));
    const std::string value = config_detail::trim(stripped.substr(eq + 1));
    bool known = false;
    config_detail::for_each_field(cfg, [&](const char* name, auto& field) {
      if (key == name) {
        config_detail::field_from_string(value, field);
        known = true;
      }
    });
    if (!known) {
      throw std::runtime_error("TrainConfig: line " + std::to_string(line_no) +
                               ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

/// Stepwise schedule: lr0 * decay_factor^floor(iteration / decay_every).
inline double lr_at(std::int64_t iteration, const TrainConfig& cfg) {
  if (iteration < 0) throw std::invalid_argument("lr_at: negative iteration");
  const auto drops = static_cast<double>(iteration / cfg.decay_every);
  return cfg.lr0 * std::pow(cfg.decay_factor, drops);
}

inline ModelDims make_dims(const TrainConfig& cfg, int vocab, int d_v, int n_attr) {
  ModelDims d;
  d.vocab = vocab;
  d.d_e = cfg.d_e;
  d.d_h = cfg.d_h;
  d.d_s = cfg.d_s;
  d.att_hidden = cfg.att_hidden;
  d.dec_hidden = cfg.dec_hidden;
  d.d_v = d_v;
  d.n_attr = n_attr;
  d.context_enabled = cfg.context_enabled;
  return d;
}

template <typename T>
struct AdamState {
  ArnParams<T> m;
  ArnParams<T> v;
  std::int64_t step = 0;

  static AdamState init(const ArnParams<T>& params) {
    return {zeros_like(params), zeros_like(params), 0};
  }
};

template <typename T>
void adam_update(ArnParams<T>& params, ArnParams<T>& grads, AdamState<T>& state,
                 double lr, const TrainConfig& cfg) {
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (auto& g : collect_blocks(grads)) {
      for (Eigen::Index k = 0; k < g.size(); ++k) {
        sq += static_cast<double>(g.data[k]) * static_cast<double>(g.data[k]);
      }
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      const T scale = static_cast<T>(cfg.grad_clip / norm);
      for (auto& g : collect_blocks(grads)) {
        for (Eigen::Index k = 0; k < g.size(); ++k) g.data[k] *= scale;
      }
    }
  }
  state.step += 1;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  auto p_blocks = collect_blocks(params);
  auto g_blocks = collect_blocks(grads);
  auto m_blocks = collect_blocks(state.m);
  auto v_blocks = collect_blocks(state.v);
  for (std::size_t b = 0; b < p_blocks.size(); ++b) {
    T* p = p_blocks[b].data;
    const T* g = g_blocks[b].data;
    T* m = m_blocks[b].data;
    T* v = v_blocks[b].data;
    for (Eigen::Index k = 0; k < p_blocks[b].size(); ++k) {
      m[k] = static_cast<T>(b1) * m[k] + static_cast<T>(1.0 - b1) * g[k];
      v[k] = static_cast<T>(b2) * v[k] + static_cast<T>(1.0 - b2) * g[k] * g[k];
      const double mhat = static_cast<double>(m[k]) / corr1;
      const double vhat = static_cast<double>(v[k]) / corr2;
      p[k] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
}

struct TrainStepResult {
  LossBreakdown mean;
  int queries = 0;
  bool skipped = false;
};

/// One image = one optimization step; per-query losses and gradients are
/// averaged over the scene's query set. Scenes without queries are
/// skipped. Queries lacking attribute labels simply bypass the attribute
/// branch.
template <typename T>
TrainStepResult train_step(ArnParams<T>& params, AdamState<T>& adam,
                           const Scene& scene, const Vec<T>& attr_class_weights,
                           const TrainConfig& cfg, std::int64_t iteration) {
  TrainStepResult result;
  if (scene.queries.empty()) {
    result.skipped = true;
    return result;
  }
  const LossWeights w = cfg.loss_weights();
  const SceneEncoding<T> enc =
      encode_proposals(scene, params.proposal, params.dims.context_enabled);
  ArnParams<T> grads = zeros_like(params);
  const int n_queries = static_cast<int>(scene.queries.size());
  const T mult = T(1) / static_cast<T>(n_queries);

  double avis = 0, alan = 0, lan = 0, att_sum = 0;
  bool any_att = false;
  for (const auto& query : scene.queries) {
    const auto trace =
        query_loss_forward(params, enc, query.token_ids, query.attribute_ids,
                           attr_class_weights, w);
    query_loss_backward(params, enc, trace, query.attribute_ids,
                        attr_class_weights, w, mult, grads);
    avis += trace.breakdown.avis;
    alan += trace.breakdown.alan;
    lan += trace.breakdown.lan;
    if (trace.breakdown.att) {
      any_att = true;
      att_sum += *trace.breakdown.att;
    }
  }
  avis /= n_queries;
  alan /= n_queries;
  lan /= n_queries;
  std::optional<double> att;
  if (any_att) att = att_sum / n_queries;
  result.mean = collaborative_loss(avis, alan, lan, att, w);
  result.queries = n_queries;

  if (!std::isfinite(result.mean.total)) {
    throw std::runtime_error("train_step: non-finite loss at iteration " +
                             std::to_string(iteration));
  }
  adam_update(params, grads, adam, lr_at(iteration, cfg), cfg);
  return result;
}

template <typename T>
struct TrainRun {
  ArnParams<T> params;
  std::vector<std::string> metrics;  // JSONL lines
  std::uint64_t iterations = 0;
  std::uint64_t skipped_scenes = 0;
  std::string rng_state;
  double final_val_accuracy = -1.0;
};

/// Seeded-shuffle epoch order over scenes, one scene per iteration.
/// `checkpoint_cb(params, iteration, rng_state)`, when given, fires every
/// checkpoint_every iterations and at the end.
template <typename T>
TrainRun<T> run_training(
    const std::vector<Scene>& train, const std::vector<Scene>& val,
    const Vec<T>& attr_class_weights, const ModelDims& dims,
    const TrainConfig& cfg,
    const std::function<void(const ArnParams<T>&, std::uint64_t,
                             const std::string&)>& checkpoint_cb = {}) {
  cfg.validate();
  if (train.empty()) {
    throw std::invalid_argument("run_training: empty training set");
  }
  std::mt19937_64 rng(cfg.seed);
  TrainRun<T> run;
  run.params.init(dims, rng);
  AdamState<T> adam = AdamState<T>::init(run.params);

  auto emit = [&run](const nlohmann::json& j) {
    run.metrics.push_back(j.dump());
  };
  auto rng_state_string = [&rng] {
    std::ostringstream ss;
    ss << rng;
    return ss.str();
  };

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // trigger shuffle on first use

  for (std::int64_t it = 0; it < cfg.max_iters; ++it) {
    if (cursor >= order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const Scene& scene = train[order[cursor++]];
    const TrainStepResult step =
        train_step(run.params, adam, scene, attr_class_weights, cfg, it);
    if (step.skipped) {
      ++run.skipped_scenes;
      continue;
    }
    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.max_iters)) {
      nlohmann::json j;
      j["iteration"] = it;
      j["avis"] = step.mean.avis;
      j["alan"] = step.mean.alan;
      j["adp"] = step.mean.adp;
      j["lan"] = step.mean.lan;
      if (step.mean.att) {
        j["att"] = *step.mean.att;
      } else {
        j["att"] = nullptr;
      }
      j["total"] = step.mean.total;
      j["lr"] = lr_at(it, cfg);
      j["skipped_scenes"] = run.skipped_scenes;
      emit(j);
    }
    if (!val.empty() && cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0) {
      const EvalReport report = evaluate(val, run.params);
      run.final_val_accuracy = report.accuracy;
      nlohmann::json j;
      j["iteration"] = it;
      j["val_accuracy"] = report.accuracy;
      j["val_queries"] = report.total;
      emit(j);
    }
    if (checkpoint_cb && cfg.checkpoint_every > 0 &&
        (it + 1) % cfg.checkpoint_every == 0 &&
        it + 1 != cfg.max_iters) {
      checkpoint_cb(run.params, static_cast<std::uint64_t>(it + 1),
                    rng_state_string());
    }
  }
  run.iterations = static_cast<std::uint64_t>(cfg.max_iters);
  run.rng_state = rng_state_string();
  if (!val.empty()) {
    const EvalReport report = evaluate(val, run.params);
    run.final_val_accuracy = report.accuracy;
    nlohmann::json j;
    j["iteration"] = cfg.max_iters;
    j["val_accuracy"] = report.accuracy;
    j["val_queries"] = report.total;
    emit(j);
  }
  if (checkpoint_cb) {
    checkpoint_cb(run.params, run.iterations, run.rng_state);
  }
  return run;
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic "ARNC", u32 version, u64 iteration, config
// snapshot text, RNG state text, then named float32 blocks with shapes.
// All integers and floats little-endian.

inline constexpr char kCheckpointMagic[4] = {'A', 'R', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const ArnParams<T>& params,
                     const TrainConfig& cfg, std::uint64_t iteration,
                     const std::string& rng_state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  auto put_u32 = [&out](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  auto put_u64 = [&out](std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  };
  auto put_blob = [&](const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  };
  out.write(kCheckpointMagic, 4);
  put_u32(kCheckpointVersion);
  put_u64(iteration);
  put_blob(cfg.to_text());
  put_blob(rng_state);

  auto blocks = collect_blocks(const_cast<ArnParams<T>&>(params));
  put_u32(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    const std::uint16_t name_len = static_cast<std::uint16_t>(b.name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 2);
    out.write(b.name.data(), name_len);
    put_u32(static_cast<std::uint32_t>(b.rows));
    put_u32(static_cast<std::uint32_t>(b.cols));
    for (Eigen::Index k = 0; k < b.size(); ++k) {
      const float v = static_cast<float>(b.data[k]);
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
}

template <typename T>
struct Checkpoint {
  ArnParams<T> params;
  TrainConfig config;
  std::uint64_t iteration = 0;
  std::string rng_state;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  auto fail = [&path](const std::string& why) {
    throw std::runtime_error("load_checkpoint: " + path + ": " + why);
  };
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) fail("bad magic");
  auto get_u32 = [&] {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) fail("truncated");
    return v;
  };
  auto get_u64 = [&] {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) fail("truncated");
    return v;
  };
  auto get_blob = [&] {
    const std::uint32_t len = get_u32();
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) fail("truncated");
    return s;
  };
  if (get_u32() != kCheckpointVersion) fail("unsupported version");

  Checkpoint<T> ckpt;
  ckpt.iteration = get_u64();
  ckpt.config = TrainConfig::from_text(get_blob());
  ckpt.rng_state = get_blob();

  struct RawBlock {
    std::uint32_t rows, cols;
    std::vector<float> values;
  };
  std::map<std::string, RawBlock> raw;
  const std::uint32_t n_blocks = get_u32();
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    std::uint16_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 2);
    if (!in) fail("truncated");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    RawBlock block;
    block.rows = get_u32();
    block.cols = get_u32();
    block.values.resize(static_cast<std::size_t>(block.rows) * block.cols);
    in.read(reinterpret_cast<char*>(block.values.data()),
            static_cast<std::streamsize>(block.values.size() * 4));
    if (!in) fail("truncated");
    raw.emplace(std::move(name), std::move(block));
  }

  // Data-dependent dimensions come from the stored shapes.
  const auto embed_it = raw.find("encoder.embedding");
  const auto proj_it = raw.find("proposal.subject_proj.weight");
  if (embed_it == raw.end() || proj_it == raw.end()) fail("missing core blocks");
  const int vocab = static_cast<int>(embed_it->second.rows);
  const int d_v = static_cast<int>(proj_it->second.cols);
  const auto attr_it = raw.find("recon.attribute.weight");
  const int n_attr = attr_it == raw.end() ? 0 : static_cast<int>(attr_it->second.rows);

  std::mt19937_64 scratch_rng(0);
  ckpt.params.init(make_dims(ckpt.config, vocab, d_v, n_attr), scratch_rng);
  auto blocks = collect_blocks(ckpt.params);
  if (blocks.size() != raw.size()) fail("block count mismatch");
  for (auto& b : blocks) {
    const auto it = raw.find(b.name);
    if (it == raw.end()) fail("missing block " + b.name);
    if (static_cast<Eigen::Index>(it->second.rows) != b.rows ||
        static_cast<Eigen::Index>(it->second.cols) != b.cols) {
      fail("shape mismatch for block " + b.name);
    }
    for (Eigen::Index k = 0; k < b.size(); ++k) {
      b.data[k] = static_cast<T>(it->second.values[static_cast<std::size_t>(k)]);
    }
  }
  return ckpt;
}

}  // namespace arn
