#ifndef PEST_HARNESS_HPP_
#define PEST_HARNESS_HPP_

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "pest/config.hpp"
#include "pest/encoder.hpp"
#include "pest/error.hpp"
#include "pest/pretrain.hpp"
#include "pest/selftrain.hpp"
#include "pest/synthbench.hpp"

namespace pest {

/// Shortest round-trip decimal form; identical inputs give identical bytes.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string metrics_csv(const RunMetrics& metrics) {
  std::string out = "epoch,mode,target_accuracy,pseudo_label_accuracy,mean_loss,lr\n";
  const std::string mode(to_string(metrics.mode));
  for (const auto& r : metrics.rows) {
    out += std::to_string(r.epoch) + ',' + mode + ',' + format_double(r.target_accuracy) + ',' +
           format_double(r.pseudo_label_accuracy) + ',' + format_double(r.mean_loss) + ',' +
           format_double(r.lr) + '\n';
  }
  return out;
}

inline std::string pretrain_csv(const std::vector<PretrainRow>& rows) {
  std::string out = "epoch,loss,source_zero_shot_acc\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + ',' + format_double(r.loss) + ',' +
           format_double(r.source_zero_shot_acc) + '\n';
  }
  return out;
}

struct SummaryRow {
  std::string run;
  std::string mode;
  std::optional<double> lambda;
  bool vision = false;
  bool language = false;
  bool temporal = false;
  double final_target_accuracy = 0.0;
  std::optional<double> final_pseudo_label_accuracy;
};

inline constexpr const char* kSummaryHeader =
    "run,mode,lambda,vision_prompt_ensemble,language_prompt_ensemble,temporal_prompt_ensemble,"
    "final_target_accuracy,final_pseudo_label_accuracy";

/// Summary CSV. `spread`, when given, is appended as a trailing column on every row.
inline std::string summary_csv(const std::vector<SummaryRow>& rows,
                               std::optional<double> spread = std::nullopt) {
  std::string out = kSummaryHeader;
  if (spread) out += ",spread";
  out += '\n';
  for (const auto& r : rows) {
    out += r.run + ',' + r.mode + ',' + (r.lambda ? format_double(*r.lambda) : "") + ',' +
           (r.vision ? "1" : "0") + ',' + (r.language ? "1" : "0") + ',' +
           (r.temporal ? "1" : "0") + ',' + format_double(r.final_target_accuracy) + ',' +
           (r.final_pseudo_label_accuracy ? format_double(*r.final_pseudo_label_accuracy) : "");
    if (spread) out += ',' + format_double(*spread);
    out += '\n';
  }
  return out;
}

/// A file to be written, held in memory until the whole experiment succeeds.
struct OutputFile {
  std::filesystem::path relative_path;
  std::string contents;
};

struct RunOutcome {
  RunSpec spec;
  AdaptResult result;
};

struct ExperimentOutput {
  PretrainResult pretrained;
  double pretrained_target_zero_shot = 0.0;
  std::vector<RunOutcome> runs;
  std::vector<SummaryRow> summary;
  std::vector<OutputFile> files;
};

inline SyntheticTask resolve_task(const ExperimentPlan& plan) {
  return plan.task_file ? load_task(*plan.task_file) : generate_task(plan.task);
}

inline SummaryRow summarize(const RunSpec& spec, const RunMetrics& metrics) {
  const ModeTraits t = traits(spec.config.mode);
  SummaryRow row;
  row.run = spec.name;
  row.mode = std::string(to_string(spec.config.mode));
  if (t.temporal) row.lambda = spec.config.lambda;
  row.vision = t.vision_ensemble;
  row.language = t.text == TextSource::language_ensemble;
  row.temporal = t.temporal;
  row.final_target_accuracy = metrics.final_row().target_accuracy;
  row.final_pseudo_label_accuracy = metrics.final_row().pseudo_label_accuracy;
  return row;
}

/// Pretrains once, then runs every adaptation run. Pure computation: results
/// are returned as in-memory files and nothing touches the filesystem except
/// loading a task file named by the plan.
inline ExperimentOutput run_plan(const ExperimentPlan& plan) {
  plan.validate();
  const SyntheticTask task = resolve_task(plan);
  ExperimentOutput out;
  out.pretrained = pretrain_vlm(task, plan.pretrain);
  out.pretrained_target_zero_shot =
      zero_shot_accuracy(out.pretrained.image, out.pretrained.text, task.target_images,
                         task.target_labels, task.class_names);

  out.files.push_back({"pretrain_metrics.csv", pretrain_csv(out.pretrained.rows)});
  out.files.push_back({"encoders/pretrained_image.bin", encoder_bytes(out.pretrained.image)});
  out.files.push_back({"encoders/pretrained_text.bin", encoder_bytes(out.pretrained.text)});

  SummaryRow pre;
  pre.run = "pretrain";
  pre.mode = "pretrain";
  pre.final_target_accuracy = out.pretrained_target_zero_shot;
  out.summary.push_back(pre);

  const AccuracyProbe probe(task.target_labels);
  const UnlabelledTarget target = unlabelled_view(task);
  for (const auto& run : plan.runs) {
    AdaptResult result = adapt(target, out.pretrained.image, out.pretrained.text, run.config, probe);
    result.metrics.run_name = run.name;
    out.files.push_back({"runs/" + run.name + ".csv", metrics_csv(result.metrics)});
    out.files.push_back({"encoders/" + run.name + "_image.bin", encoder_bytes(result.image)});
    out.summary.push_back(summarize(run, result.metrics));
    out.runs.push_back({run, std::move(result)});
  }
  out.files.push_back({"summary.csv", summary_csv(out.summary)});
  return out;
}

/// Writes every file under `dir`. On failure, files already written by this
/// call are removed again before the error propagates.
inline void write_outputs(const std::vector<OutputFile>& files, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> written;
  std::vector<fs::path> created_dirs;
  auto rollback = [&] {
    std::error_code ec;
    for (auto it = written.rbegin(); it != written.rend(); ++it) fs::remove(*it, ec);
    for (auto it = created_dirs.rbegin(); it != created_dirs.rend(); ++it) fs::remove(*it, ec);
  };
  auto make_dir = [&](const fs::path& p) {
    std::vector<fs::path> missing;
    for (fs::path cur = p; !cur.empty() && !fs::exists(cur); cur = cur.parent_path()) {
      missing.push_back(cur);
      if (cur == cur.parent_path()) break;
    }
    for (auto it = missing.rbegin(); it != missing.rend(); ++it) {
      std::error_code ec;
      if (!fs::create_directory(*it, ec) || ec) {
        fail(ErrorCode::IoError, "cannot create directory " + it->string());
      }
      created_dirs.push_back(*it);
    }
  };
  try {
    make_dir(dir);
    for (const auto& f : files) {
      const fs::path target = dir / f.relative_path;
      make_dir(target.parent_path());
      std::ofstream os(target, std::ios::binary | std::ios::trunc);
      if (!os) fail(ErrorCode::IoError, "cannot write " + target.string());
      written.push_back(target);
      os.write(f.contents.data(), static_cast<std::streamsize>(f.contents.size()));
      os.close();
      if (!os) fail(ErrorCode::IoError, "failed writing " + target.string());
    }
  } catch (...) {
    rollback();
    throw;
  }
}

inline std::vector<OutputFile> with_summary(std::vector<OutputFile> files,
                                            const std::string& contents) {
  for (auto& f : files) {
    if (f.relative_path == "summary.csv") {
      f.contents = contents;
      return files;
    }
  }
  files.push_back({"summary.csv", contents});
  return files;
}

// Experiment drivers. Each builds a run list on top of the plan's shared
// adaptation settings.

inline constexpr AdaptMode kAblationModes[] = {AdaptMode::zero_shot, AdaptMode::st,
                                               AdaptMode::st_vpe,    AdaptMode::st_lpe,
                                               AdaptMode::st_vpe_lpe, AdaptMode::pest};

inline constexpr AdaptMode kBaselineModes[] = {AdaptMode::baseline_uniform,
                                               AdaptMode::baseline_weighted,
                                               AdaptMode::baseline_vote, AdaptMode::pest};

inline constexpr double kLambdaSweep[] = {0.9, 0.99, 0.999, 0.9999};

inline ExperimentPlan with_modes(ExperimentPlan plan, std::span<const AdaptMode> modes) {
  plan.runs.clear();
  for (AdaptMode m : modes) {
    AdaptConfig c = plan.adapt;
    c.mode = m;
    plan.runs.push_back({std::string(to_string(m)), c});
  }
  return plan;
}

inline ExperimentPlan ablation_plan(ExperimentPlan base) {
  return with_modes(std::move(base), kAblationModes);
}

inline ExperimentPlan baselines_plan(ExperimentPlan base) {
  return with_modes(std::move(base), kBaselineModes);
}

inline ExperimentPlan lambda_sweep_plan(ExperimentPlan base, std::span<const double> lambdas) {
  base.runs.clear();
  for (double lambda : lambdas) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      fail(ErrorCode::ConfigError, "lambda " + format_double(lambda) + " outside [0, 1]");
    }
    AdaptConfig c = base.adapt;
    c.mode = AdaptMode::pest;
    c.lambda = lambda;
    base.runs.push_back({"pest_lambda_" + format_double(lambda), c});
  }
  return base;
}

inline ExperimentOutput run_ablation(const ExperimentPlan& base) {
  return run_plan(ablation_plan(base));
}

inline ExperimentOutput run_baselines(const ExperimentPlan& base) {
  return run_plan(baselines_plan(base));
}

/// max - min final target accuracy over the adaptation runs (pretrain row excluded).
inline double accuracy_spread(const std::vector<SummaryRow>& rows) {
  double lo = 1.0, hi = 0.0;
  for (const auto& r : rows) {
    if (r.mode == "pretrain") continue;
    lo = std::min(lo, r.final_target_accuracy);
    hi = std::max(hi, r.final_target_accuracy);
  }
  return hi >= lo ? hi - lo : 0.0;
}

inline ExperimentOutput run_lambda_sweep(const ExperimentPlan& base,
                                         std::span<const double> lambdas = kLambdaSweep) {
  ExperimentOutput out = run_plan(lambda_sweep_plan(base, lambdas));
  out.files = with_summary(std::move(out.files),
                           summary_csv(out.summary, accuracy_spread(out.summary)));
  return out;
}

}  // namespace pest

#endif  // PEST_HARNESS_HPP_
