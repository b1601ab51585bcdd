#ifndef PEST_CONFIG_HPP_
#define PEST_CONFIG_HPP_

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "pest/error.hpp"
#include "pest/pretrain.hpp"
#include "pest/selftrain.hpp"
#include "pest/synthbench.hpp"

namespace pest {

struct RunSpec {
  std::string name;
  AdaptConfig config;
};

/// One experiment: a task (generated or loaded), a pretraining recipe and a list
/// of adaptation runs that all start from the same pretrained encoders.
struct ExperimentPlan {
  TaskSpec task;
  std::optional<std::filesystem::path> task_file;
  PretrainConfig pretrain;
  AdaptConfig adapt;  // defaults shared by every run
  std::vector<RunSpec> runs;

  void validate() const {
    task.validate();
    pretrain.validate();
    adapt.validate();
    std::set<std::string> names;
    for (const auto& r : runs) {
      require(!r.name.empty(), ErrorCode::ConfigError, "run name must not be empty");
      require(r.name.find_first_of("/\\,\n") == std::string::npos, ErrorCode::ConfigError,
              "run name '" + r.name + "' contains a path or CSV separator");
      require(names.insert(r.name).second, ErrorCode::ConfigError,
              "duplicate run name '" + r.name + "'");
      r.config.validate();
    }
  }
};

/// Adaptation settings used by the desk-scale experiments. The library defaults
/// keep lr = 1e-5 and tau = 0.01; the synthetic task needs a larger step and a
/// softer temperature to move within 20 epochs.
inline AdaptConfig desk_adapt_defaults() {
  AdaptConfig c;
  c.base_lr = 1e-3;
  c.tau = 0.1;
  c.epochs = 20;
  return c;
}

inline ExperimentPlan default_plan() {
  ExperimentPlan plan;
  plan.adapt = desk_adapt_defaults();
  for (AdaptMode m : {AdaptMode::zero_shot, AdaptMode::st, AdaptMode::pest}) {
    AdaptConfig c = plan.adapt;
    c.mode = m;
    plan.runs.push_back({std::string(to_string(m)), c});
  }
  return plan;
}

/// Applies one seed to every consumer (task generation, pretraining, adaptation).
inline void apply_seed(ExperimentPlan& plan, std::uint64_t seed) {
  plan.task.seed = seed;
  plan.pretrain.seed = seed;
  plan.adapt.seed = seed;
  for (auto& r : plan.runs) r.config.seed = seed;
}

namespace detail {

using nlohmann::json;

/// Reads keys out of a JSON object and rejects any key nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(ErrorCode::ConfigError, where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::ConfigError, where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        fail(ErrorCode::ConfigError, "unknown key '" + it.key() + "' in " + where_);
      }
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_task(const json& j, TaskSpec& s) {
  StrictObject o(j, "task");
  o.get("num_classes", s.num_classes);
  o.get("concept_dim", s.concept_dim);
  o.get("input_dim", s.input_dim);
  o.get("source_pairs_per_class", s.source_pairs_per_class);
  o.get("target_images_per_class", s.target_images_per_class);
  o.get("k_text_prompts", s.k_text_prompts);
  o.get("text_noise_sigma", s.text_noise_sigma);
  o.get("image_noise_sigma", s.image_noise_sigma);
  o.get("shift_strength", s.shift_strength);
  o.get("prompt_failure_rate", s.prompt_failure_rate);
  o.get("seed", s.seed);
  o.finish();
}

inline void read_pretrain(const json& j, PretrainConfig& c) {
  StrictObject o(j, "pretrain");
  o.get("epochs", c.epochs);
  o.get("batch_size", c.batch_size);
  o.get("embed_dim", c.embed_dim);
  o.get("base_lr", c.base_lr);
  o.get("weight_decay", c.weight_decay);
  o.get("tau", c.tau);
  o.get("seed", c.seed);
  o.finish();
}

inline void read_adapt_fields(StrictObject& o, AdaptConfig& c) {
  std::string mode(to_string(c.mode));
  o.get("mode", mode);
  c.mode = parse_mode(mode);
  o.get("tau", c.tau);
  o.get("lambda", c.lambda);
  o.get("momentum", c.momentum);
  o.get("epochs", c.epochs);
  o.get("batch_size", c.batch_size);
  o.get("k_views", c.k_views);
  o.get("base_lr", c.base_lr);
  o.get("weight_decay", c.weight_decay);
  o.get("view_scale_lo", c.views.scale_lo);
  o.get("view_scale_hi", c.views.scale_hi);
  o.get("view_mask_fraction", c.views.mask_fraction);
  o.get("view_jitter_sigma", c.views.jitter_sigma);
  o.get("eq4_raw_weights", c.eq4_raw_weights);
  o.get("eq7_raw_product", c.eq7_raw_product);
  o.get("seed", c.seed);
}

}  // namespace detail

/// Parses a plan. Keys mirror the TaskSpec / PretrainConfig / AdaptConfig field
/// names; unknown keys are errors. Runs inherit "adapt" and may override any
/// of its fields. Without a "runs" key the default run list is used.
inline ExperimentPlan parse_plan(const nlohmann::json& j) {
  ExperimentPlan plan = default_plan();
  detail::StrictObject top(j, "config");
  if (const auto* t = top.child("task")) detail::read_task(*t, plan.task);
  std::string task_file;
  top.get("task_file", task_file);
  if (!task_file.empty()) plan.task_file = task_file;
  if (const auto* p = top.child("pretrain")) detail::read_pretrain(*p, plan.pretrain);
  if (const auto* a = top.child("adapt")) {
    detail::StrictObject o(*a, "adapt");
    detail::read_adapt_fields(o, plan.adapt);
    o.finish();
  }
  if (const auto* runs = top.child("runs")) {
    if (!runs->is_array()) fail(ErrorCode::ConfigError, "runs must be an array");
    plan.runs.clear();
    for (std::size_t i = 0; i < runs->size(); ++i) {
      const auto& rj = (*runs)[i];
      detail::StrictObject o(rj, "runs[" + std::to_string(i) + "]");
      RunSpec run{"", plan.adapt};
      o.get("name", run.name);
      detail::read_adapt_fields(o, run.config);
      o.finish();
      if (run.name.empty()) run.name = std::string(to_string(run.config.mode));
      plan.runs.push_back(std::move(run));
    }
  } else {
    for (auto& r : plan.runs) {
      const AdaptMode mode = r.config.mode;
      r.config = plan.adapt;
      r.config.mode = mode;
    }
  }
  top.finish();
  plan.validate();
  return plan;
}

inline ExperimentPlan load_plan(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::ConfigError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  ExperimentPlan plan = parse_plan(j);
  if (plan.task_file && plan.task_file->is_relative()) {
    plan.task_file = path.parent_path() / *plan.task_file;
  }
  return plan;
}

}  // namespace pest

#endif  // PEST_CONFIG_HPP_
