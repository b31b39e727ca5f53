#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "stnl/losses.hpp"
#include "stnl/model.hpp"
#include "stnl/optim.hpp"
#include "stnl/sampler.hpp"

namespace stnl {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& msg)
      : std::runtime_error("config error at " + path + ": " + msg), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Everything one training run needs, resolvable to a single JSON document.
struct RunConfig {
  std::uint64_t seed = 42;
  long steps = 300;
  ModelConfig model = default_model_config();
  SamplerConfig sampler{4, 2, 4, 8};
  Schedule schedule;
  LossConfig loss;
  AdamConfig optimizer;
  SyntheticSpec data;
};

namespace config_detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline void check_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "(root)" : path, "expected an object");
}

/// Unknown keys are rejected so configs cannot silently misspell an option.
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& path) {
  check_object(j, path);
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError(join_path(path, item.key()), "unknown key");
    }
  }
}

template <typename T>
T get_number(const json& j, const std::string& key, T fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(join_path(path, key), "expected a number");
  return v.get<T>();
}

inline std::size_t get_size(const json& j, const std::string& key, std::size_t fallback,
                            const std::string& path) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(join_path(path, key), "expected a nonnegative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace config_detail

inline json model_config_to_json(const ModelConfig& m) {
  json stages = json::array();
  for (const StageConfig& st : m.stages) {
    stages.push_back({{"blocks", st.n_blocks},
                      {"channels", st.channels},
                      {"temporal_kernel", st.temporal_kernel},
                      {"spatial_kernel", st.spatial_kernel},
                      {"spatial_stride", st.spatial_stride},
                      {"nonlocal_after", st.nonlocal_after}});
  }
  return {{"in_channels", m.in_channels},
          {"stem_channels", m.stem_channels},
          {"stem_temporal_kernel", m.stem_temporal_kernel},
          {"stem_spatial_kernel", m.stem_spatial_kernel},
          {"stem_spatial_stride", m.stem_spatial_stride},
          {"stages", stages},
          {"embedding_dim", m.embedding_dim},
          {"n_identities", m.n_identities},
          {"leaky_relu_alpha", m.leaky_relu_alpha},
          {"dropout", m.dropout_rate},
          {"bn_momentum", m.bn_momentum},
          {"bn_epsilon", m.bn_epsilon}};
}

inline ModelConfig model_config_from_json(const json& j, const std::string& path) {
  using namespace config_detail;
  check_keys(j,
             {"in_channels", "stem_channels", "stem_temporal_kernel", "stem_spatial_kernel",
              "stem_spatial_stride", "stages", "embedding_dim", "n_identities", "leaky_relu_alpha",
              "dropout", "bn_momentum", "bn_epsilon"},
             path);
  ModelConfig m = default_model_config();
  m.in_channels = get_size(j, "in_channels", m.in_channels, path);
  m.stem_channels = get_size(j, "stem_channels", m.stem_channels, path);
  m.stem_temporal_kernel = get_size(j, "stem_temporal_kernel", m.stem_temporal_kernel, path);
  m.stem_spatial_kernel = get_size(j, "stem_spatial_kernel", m.stem_spatial_kernel, path);
  m.stem_spatial_stride = get_size(j, "stem_spatial_stride", m.stem_spatial_stride, path);
  m.embedding_dim = get_size(j, "embedding_dim", m.embedding_dim, path);
  m.n_identities = get_size(j, "n_identities", m.n_identities, path);
  m.leaky_relu_alpha = get_number<double>(j, "leaky_relu_alpha", m.leaky_relu_alpha, path);
  m.dropout_rate = get_number<double>(j, "dropout", m.dropout_rate, path);
  m.bn_momentum = get_number<double>(j, "bn_momentum", m.bn_momentum, path);
  m.bn_epsilon = get_number<double>(j, "bn_epsilon", m.bn_epsilon, path);

  if (j.contains("stages")) {
    const json& stages = j.at("stages");
    if (!stages.is_array()) throw ConfigError(join_path(path, "stages"), "expected an array");
    m.stages.clear();
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string sp = join_path(path, "stages[" + std::to_string(i) + "]");
      const json& sj = stages.at(i);
      check_keys(sj, {"blocks", "channels", "temporal_kernel", "spatial_kernel", "spatial_stride",
                      "nonlocal_after"},
                 sp);
      StageConfig st;
      st.n_blocks = get_size(sj, "blocks", st.n_blocks, sp);
      st.channels = get_size(sj, "channels", st.channels, sp);
      st.temporal_kernel = get_size(sj, "temporal_kernel", st.temporal_kernel, sp);
      st.spatial_kernel = get_size(sj, "spatial_kernel", st.spatial_kernel, sp);
      st.spatial_stride = get_size(sj, "spatial_stride", st.spatial_stride, sp);
      st.nonlocal_after.clear();
      if (sj.contains("nonlocal_after")) {
        const json& nl = sj.at("nonlocal_after");
        if (!nl.is_array()) throw ConfigError(join_path(sp, "nonlocal_after"), "expected an array");
        for (const json& v : nl) {
          if (!v.is_number_integer() || v.get<long long>() < 0) {
            throw ConfigError(join_path(sp, "nonlocal_after"), "expected nonnegative integers");
          }
          st.nonlocal_after.push_back(v.get<std::size_t>());
        }
      }
      m.stages.push_back(std::move(st));
    }
  }
  try {
    validate_model_config(m);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path.empty() ? "model" : path, e.what());
  }
  return m;
}

inline json run_config_to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"steps", c.steps},
          {"model", model_config_to_json(c.model)},
          {"sampler",
           {{"p", c.sampler.p},
            {"k", c.sampler.k},
            {"track_len", c.sampler.track_len},
            {"crop_window", c.sampler.crop_window},
            {"spatial_jitter", c.sampler.spatial_jitter}}},
          {"schedule",
           {{"lr0", c.schedule.lr0},
            {"decay_start_epoch", c.schedule.decay_start_epoch},
            {"total_epochs", c.schedule.total_epochs},
            {"decay_rate", c.schedule.decay_rate}}},
          {"loss",
           {{"margin", c.loss.margin},
            {"epsilon", c.loss.epsilon},
            {"triplet_reduction",
             c.loss.triplet_reduction == TripletReduction::Mean ? "mean" : "sum"}}},
          {"optimizer",
           {{"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps},
            {"weight_decay", c.optimizer.weight_decay}}},
          {"data",
           {{"synthetic",
             {{"n_ids", c.data.n_ids},
              {"seqs_per_id", c.data.seqs_per_id},
              {"seq_len", c.data.seq_len},
              {"channels", c.data.channels},
              {"height", c.data.height},
              {"width", c.data.width},
              {"noise_sigma", c.data.noise_sigma}}}}}};
}

inline RunConfig parse_run_config(const json& doc) {
  using namespace config_detail;
  check_keys(doc, {"seed", "steps", "model", "sampler", "schedule", "loss", "optimizer", "data"}, "");
  RunConfig c;
  if (doc.contains("seed")) {
    const json& s = doc.at("seed");
    if (!s.is_number_integer() || s.get<long long>() < 0)
      throw ConfigError("seed", "expected a nonnegative integer");
    c.seed = s.get<std::uint64_t>();
  }
  c.steps = static_cast<long>(get_size(doc, "steps", static_cast<std::size_t>(c.steps), ""));

  if (doc.contains("model")) c.model = model_config_from_json(doc.at("model"), "model");

  if (doc.contains("sampler")) {
    const json& sj = doc.at("sampler");
    check_keys(sj, {"p", "k", "track_len", "crop_window", "spatial_jitter"}, "sampler");
    c.sampler.p = get_size(sj, "p", c.sampler.p, "sampler");
    c.sampler.k = get_size(sj, "k", c.sampler.k, "sampler");
    c.sampler.track_len = get_size(sj, "track_len", c.sampler.track_len, "sampler");
    c.sampler.crop_window = get_size(sj, "crop_window", c.sampler.crop_window, "sampler");
    c.sampler.spatial_jitter = get_size(sj, "spatial_jitter", c.sampler.spatial_jitter, "sampler");
    try {
      validate_sampler_config(c.sampler);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("sampler", e.what());
    }
  }

  if (doc.contains("schedule")) {
    const json& sj = doc.at("schedule");
    check_keys(sj, {"lr0", "decay_start_epoch", "total_epochs", "decay_rate"}, "schedule");
    c.schedule.lr0 = get_number<double>(sj, "lr0", c.schedule.lr0, "schedule");
    c.schedule.decay_start_epoch = static_cast<long>(
        get_size(sj, "decay_start_epoch", static_cast<std::size_t>(c.schedule.decay_start_epoch), "schedule"));
    c.schedule.total_epochs = static_cast<long>(
        get_size(sj, "total_epochs", static_cast<std::size_t>(c.schedule.total_epochs), "schedule"));
    if (c.schedule.lr0 <= 0) throw ConfigError("schedule.lr0", "must be positive");
    c.schedule.decay_rate = get_number<double>(sj, "decay_rate", c.schedule.decay_rate, "schedule");
    if (!(c.schedule.decay_rate > 0 && c.schedule.decay_rate <= 1))
      throw ConfigError("schedule.decay_rate", "must be in (0, 1]");
    if (c.schedule.decay_start_epoch >= c.schedule.total_epochs)
      throw ConfigError("schedule.decay_start_epoch", "must be below total_epochs");
  }

  if (doc.contains("loss")) {
    const json& lj = doc.at("loss");
    check_keys(lj, {"margin", "epsilon", "triplet_reduction"}, "loss");
    c.loss.margin = get_number<double>(lj, "margin", c.loss.margin, "loss");
    c.loss.epsilon = get_number<double>(lj, "epsilon", c.loss.epsilon, "loss");
    if (c.loss.margin < 0) throw ConfigError("loss.margin", "must be >= 0");
    if (!(c.loss.epsilon >= 0 && c.loss.epsilon < 1)) throw ConfigError("loss.epsilon", "must be in [0, 1)");
    if (lj.contains("triplet_reduction")) {
      const json& r = lj.at("triplet_reduction");
      if (r == "mean") c.loss.triplet_reduction = TripletReduction::Mean;
      else if (r == "sum") c.loss.triplet_reduction = TripletReduction::Sum;
      else throw ConfigError("loss.triplet_reduction", "expected \"mean\" or \"sum\"");
    }
  }

  if (doc.contains("optimizer")) {
    const json& oj = doc.at("optimizer");
    check_keys(oj, {"beta1", "beta2", "eps", "weight_decay"}, "optimizer");
    c.optimizer.beta1 = get_number<double>(oj, "beta1", c.optimizer.beta1, "optimizer");
    c.optimizer.beta2 = get_number<double>(oj, "beta2", c.optimizer.beta2, "optimizer");
    c.optimizer.eps = get_number<double>(oj, "eps", c.optimizer.eps, "optimizer");
    c.optimizer.weight_decay = get_number<double>(oj, "weight_decay", c.optimizer.weight_decay, "optimizer");
  }

  if (doc.contains("data")) {
    const json& dj = doc.at("data");
    check_keys(dj, {"synthetic"}, "data");
    if (dj.contains("synthetic")) {
      const json& sj = dj.at("synthetic");
      check_keys(sj, {"n_ids", "seqs_per_id", "seq_len", "channels", "height", "width", "noise_sigma"},
                 "data.synthetic");
      c.data.n_ids = get_size(sj, "n_ids", c.data.n_ids, "data.synthetic");
      c.data.seqs_per_id = get_size(sj, "seqs_per_id", c.data.seqs_per_id, "data.synthetic");
      c.data.seq_len = get_size(sj, "seq_len", c.data.seq_len, "data.synthetic");
      c.data.channels = get_size(sj, "channels", c.data.channels, "data.synthetic");
      c.data.height = get_size(sj, "height", c.data.height, "data.synthetic");
      c.data.width = get_size(sj, "width", c.data.width, "data.synthetic");
      c.data.noise_sigma = get_number<double>(sj, "noise_sigma", c.data.noise_sigma, "data.synthetic");
      if (c.data.noise_sigma < 0) throw ConfigError("data.synthetic.noise_sigma", "must be >= 0");
    }
  }

  // Cross-field checks.
  if (c.data.n_ids != c.model.n_identities) {
    throw ConfigError("model.n_identities", "must equal data.synthetic.n_ids (" +
                                                std::to_string(c.data.n_ids) + ")");
  }
  if (c.data.channels != c.model.in_channels) {
    throw ConfigError("model.in_channels", "must equal data.synthetic.channels (" +
                                               std::to_string(c.data.channels) + ")");
  }
  if (c.data.seq_len < c.sampler.track_len) {
    throw ConfigError("data.synthetic.seq_len", "must be >= sampler.track_len");
  }
  if (c.sampler.p > c.data.n_ids) {
    throw ConfigError("sampler.p", "must be <= data.synthetic.n_ids");
  }
  return c;
}

inline RunConfig parse_run_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("(root)", std::string("invalid JSON: ") + e.what());
  }
  return parse_run_config(doc);
}

/// FNV-1a over the canonical (sorted-key, compact) model-config JSON.
inline std::uint64_t config_digest(const ModelConfig& m) {
  const std::string canon = model_config_to_json(m).dump();
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace stnl
