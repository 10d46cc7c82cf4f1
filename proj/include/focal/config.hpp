#pragma once

// Plain-text pipeline configuration: one key=value per line. Every key maps
// onto a field of the library configs; unknown keys are rejected.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "focal/clustering.hpp"
#include "focal/contrastive_loss.hpp"
#include "focal/error.hpp"
#include "focal/io.hpp"
#include "focal/synthetic.hpp"
#include "focal/train.hpp"

namespace focal {

struct PipelineConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  TrainConfig train;
  ClusterParams cluster;
  ClusterAlgo algo = ClusterAlgo::kHdbscan;
  std::size_t eval_count = 50;
  std::size_t pristine_count = 50;
  std::string data;
  std::string params;
  std::string out;

  /// Pushes the root seed and shared sizes into the nested configs.
  void sync() {
    synth.seed = seed;
    train.seed = seed;
    cluster.seed = seed;
    train.shape.patch = synth.patch;
  }

  void validate() const {
    synth.validate();
    train.validate();
    cluster.validate();
    if (train.shape.patch != synth.patch) throw ConfigError("extractor patch differs from synthetic patch");
  }
};

inline const char* loss_name(LossVariant v) {
  switch (v) {
    case LossVariant::kImageByImage: return "image";
    case LossVariant::kBatchMerged: return "batch";
    case LossVariant::kVanilla: return "vanilla";
  }
  return "?";
}

inline LossVariant parse_loss_variant(const std::string& s) {
  if (s == "image") return LossVariant::kImageByImage;
  if (s == "batch") return LossVariant::kBatchMerged;
  if (s == "vanilla") return LossVariant::kVanilla;
  throw ConfigError("loss must be one of image, batch, vanilla (got '" + s + "')");
}

inline const char* algo_name(ClusterAlgo a) { return a == ClusterAlgo::kHdbscan ? "hdbscan" : "kmeans"; }

inline ClusterAlgo parse_algo(const std::string& s) {
  if (s == "hdbscan") return ClusterAlgo::kHdbscan;
  if (s == "kmeans") return ClusterAlgo::kKmeans;
  throw ConfigError("algo must be hdbscan or kmeans (got '" + s + "')");
}

namespace detail {

template <typename Int>
Int parse_config_int(const std::string& key, const std::string& text) {
  Int v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

inline double parse_config_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v))
    throw ConfigError(key + ": expected a finite number, got '" + text + "'");
  return v;
}

inline bool parse_config_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline std::string bool_text(bool b) { return b ? "true" : "false"; }

struct ConfigKey {
  const char* name;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename Field>
ConfigKey size_key(const char* name, Field field) {
  return {name, [=](PipelineConfig& c, const std::string& v) { field(c) = parse_config_int<std::size_t>(name, v); },
          [=](const PipelineConfig& c) { return std::to_string(field(const_cast<PipelineConfig&>(c))); }};
}

template <typename Field>
ConfigKey seed_key(const char* name, Field field) {
  return {name, [=](PipelineConfig& c, const std::string& v) { field(c) = parse_config_int<std::uint64_t>(name, v); },
          [=](const PipelineConfig& c) { return std::to_string(field(const_cast<PipelineConfig&>(c))); }};
}

template <typename Field>
ConfigKey real_key(const char* name, Field field) {
  return {name, [=](PipelineConfig& c, const std::string& v) { field(c) = parse_config_real(name, v); },
          [=](const PipelineConfig& c) { return format_number(field(const_cast<PipelineConfig&>(c))); }};
}

template <typename Field>
ConfigKey bool_key(const char* name, Field field) {
  return {name, [=](PipelineConfig& c, const std::string& v) { field(c) = parse_config_bool(name, v); },
          [=](const PipelineConfig& c) { return bool_text(field(const_cast<PipelineConfig&>(c))); }};
}

template <typename Field>
ConfigKey text_key(const char* name, Field field) {
  return {name, [=](PipelineConfig& c, const std::string& v) { field(c) = v; },
          [=](const PipelineConfig& c) { return field(const_cast<PipelineConfig&>(c)); }};
}

inline const std::vector<ConfigKey>& config_keys() {
  using C = PipelineConfig;
  static const std::vector<ConfigKey> keys = {
      seed_key("seed", [](C& c) -> auto& { return c.seed; }),
      size_key("height", [](C& c) -> auto& { return c.synth.height; }),
      size_key("width", [](C& c) -> auto& { return c.synth.width; }),
      size_key("patch", [](C& c) -> auto& { return c.synth.patch; }),
      real_key("min_fraction", [](C& c) -> auto& { return c.synth.min_fraction; }),
      real_key("max_fraction", [](C& c) -> auto& { return c.synth.max_fraction; }),
      real_key("fingerprint_amplitude", [](C& c) -> auto& { return c.synth.fingerprint_amplitude; }),
      real_key("content_amplitude", [](C& c) -> auto& { return c.synth.content_amplitude; }),
      size_key("count", [](C& c) -> auto& { return c.synth.count; }),
      bool_key("conflict_pair", [](C& c) -> auto& { return c.synth.conflict_pair; }),
      bool_key("pristine", [](C& c) -> auto& { return c.synth.pristine; }),
      size_key("fingerprint_pool", [](C& c) -> auto& { return c.synth.fingerprint_pool; }),
      seed_key("fingerprint_seed", [](C& c) -> auto& { return c.synth.fingerprint_seed; }),
      bool_key("same_scene", [](C& c) -> auto& { return c.synth.same_scene; }),
      real_key("tau", [](C& c) -> auto& { return c.train.loss.tau; }),
      ConfigKey{"query_subsample",
                [](C& c, const std::string& v) {
                  const auto n = parse_config_int<std::size_t>("query_subsample", v);
                  c.train.loss.query_subsample = n == 0 ? std::nullopt : std::optional<std::size_t>(n);
                },
                [](const C& c) { return std::to_string(c.train.loss.query_subsample.value_or(0)); }},
      ConfigKey{"loss", [](C& c, const std::string& v) { c.train.variant = parse_loss_variant(v); },
                [](const C& c) { return std::string(loss_name(c.train.variant)); }},
      size_key("steps", [](C& c) -> auto& { return c.train.steps; }),
      size_key("batch_size", [](C& c) -> auto& { return c.train.batch_size; }),
      real_key("lr", [](C& c) -> auto& { return c.train.lr; }),
      size_key("hidden", [](C& c) -> auto& { return c.train.shape.hidden; }),
      size_key("embed", [](C& c) -> auto& { return c.train.shape.embed; }),
      ConfigKey{"algo", [](C& c, const std::string& v) { c.algo = parse_algo(v); },
                [](const C& c) { return std::string(algo_name(c.algo)); }},
      size_key("min_cluster_size", [](C& c) -> auto& { return c.cluster.min_cluster_size; }),
      size_key("min_samples", [](C& c) -> auto& { return c.cluster.min_samples; }),
      size_key("stride", [](C& c) -> auto& { return c.cluster.stride; }),
      size_key("eval_count", [](C& c) -> auto& { return c.eval_count; }),
      size_key("pristine_count", [](C& c) -> auto& { return c.pristine_count; }),
      text_key("data", [](C& c) -> auto& { return c.data; }),
      text_key("params", [](C& c) -> auto& { return c.params; }),
      text_key("out", [](C& c) -> auto& { return c.out; }),
  };
  return keys;
}

}  // namespace detail

/// Applies every entry of `kv` on top of `cfg`.
inline void apply_config(PipelineConfig& cfg, const KeyValueFile& kv) {
  for (const auto& key : kv.keys()) {
    const auto& keys = detail::config_keys();
    auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return key == k.name; });
    if (it == keys.end()) throw ConfigError("unknown config key '" + key + "'");
    it->set(cfg, kv.get(key));
  }
  cfg.sync();
}

inline PipelineConfig make_config(const KeyValueFile& kv) {
  PipelineConfig cfg;
  apply_config(cfg, kv);
  return cfg;
}

/// Every key with its effective value, in canonical order.
inline KeyValueFile config_to_kv(const PipelineConfig& cfg) {
  KeyValueFile kv;
  for (const auto& k : detail::config_keys()) kv.set(k.name, k.get(cfg));
  return kv;
}

}  // namespace focal
