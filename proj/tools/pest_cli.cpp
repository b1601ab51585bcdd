// pest: synthetic open-vocabulary domain adaptation experiments.
//
//   pest gen-task     --out DIR                 write DIR/task.bin
//   pest pretrain     --out DIR [--task FILE]   pretrain encoders
//   pest adapt        --out DIR --image-encoder F --text-encoder F --mode M
//   pest run          --out DIR [--config FILE]
//   pest ablation     --out DIR
//   pest lambda-sweep --out DIR [--lambdas 0.9,0.99,...]
//   pest baselines    --out DIR
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime numeric error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pest/config.hpp"
#include "pest/harness.hpp"

namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::string task;
  bool eq4_raw_weights = false;
  bool eq7_raw_product = false;
};

pest::ExperimentPlan build_plan(const GlobalOptions& g) {
  pest::ExperimentPlan plan = g.config.empty() ? pest::default_plan() : pest::load_plan(g.config);
  if (g.seed) pest::apply_seed(plan, *g.seed);
  if (!g.task.empty()) plan.task_file = g.task;
  auto flags = [&](pest::AdaptConfig& c) {
    c.eq4_raw_weights = c.eq4_raw_weights || g.eq4_raw_weights;
    c.eq7_raw_product = c.eq7_raw_product || g.eq7_raw_product;
  };
  flags(plan.adapt);
  for (auto& r : plan.runs) flags(r.config);
  plan.validate();
  return plan;
}

void print_summary(const std::vector<pest::SummaryRow>& rows) {
  for (const auto& r : rows) {
    std::printf("%-24s %-18s %.4f\n", r.run.c_str(), r.mode.c_str(), r.final_target_accuracy);
  }
}

int exit_code_for(pest::ErrorCode code) {
  switch (code) {
    case pest::ErrorCode::ConfigError:
    case pest::ErrorCode::SpecError:
    case pest::ErrorCode::IoError:
    case pest::ErrorCode::FormatVersionMismatch:
    case pest::ErrorCode::CorruptFile:
    case pest::ErrorCode::ResampleExhausted:
      return 1;
    default:
      return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-ensemble self-training on synthetic vision-language tasks", "pest"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Seed for task generation, pretraining and adaptation");
  app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory")->required();
  app.add_option("--task", g.task, "Task file to use instead of generating one");
  app.add_flag("--eq4-raw-weights", g.eq4_raw_weights,
               "Use signed prompt weights in the language ensemble");
  app.add_flag("--eq7-raw-product", g.eq7_raw_product,
               "Multiply signed similarities when pseudo-labelling");

  auto* gen = app.add_subcommand("gen-task", "Generate a synthetic task file");
  auto* pre = app.add_subcommand("pretrain", "Contrastive pretraining of the toy VLM");
  auto* ada = app.add_subcommand("adapt", "Adapt a pretrained image encoder to the target");
  auto* run = app.add_subcommand("run", "Pretrain, then every run in the plan");
  auto* abl = app.add_subcommand("ablation", "zero_shot / st / st_vpe / st_lpe / st_vpe_lpe / pest");
  auto* sweep = app.add_subcommand("lambda-sweep", "pest over temporal-ensemble lambdas");
  auto* base = app.add_subcommand("baselines", "Multi-prompt baselines against pest");

  std::string image_path, text_path, mode = "pest";
  ada->add_option("--image-encoder", image_path, "Pretrained image encoder")
      ->required()
      ->check(CLI::ExistingFile);
  ada->add_option("--text-encoder", text_path, "Pretrained text encoder")
      ->required()
      ->check(CLI::ExistingFile);
  ada->add_option("--mode", mode, "Adaptation mode");

  std::vector<double> lambdas(std::begin(pest::kLambdaSweep), std::end(pest::kLambdaSweep));
  sweep->add_option("--lambdas", lambdas, "Comma-separated lambda values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const fs::path out = g.out;
    pest::ExperimentPlan plan = build_plan(g);

    if (gen->parsed()) {
      const auto task = pest::generate_task(plan.task);
      const auto bytes = pest::serialize_task(task);
      pest::write_outputs({{"task.bin", std::string(bytes.begin(), bytes.end())}}, out);
    } else if (pre->parsed()) {
      const auto task = pest::resolve_task(plan);
      const auto result = pest::pretrain_vlm(task, plan.pretrain);
      pest::write_outputs({{"pretrain_metrics.csv", pest::pretrain_csv(result.rows)},
                           {"encoders/pretrained_image.bin", pest::encoder_bytes(result.image)},
                           {"encoders/pretrained_text.bin", pest::encoder_bytes(result.text)}},
                          out);
      std::printf("source zero-shot accuracy %.4f\n", result.rows.back().source_zero_shot_acc);
    } else if (ada->parsed()) {
      const auto task = pest::resolve_task(plan);
      const auto image = pest::load_encoder(image_path);
      const auto text = pest::load_encoder(text_path);
      if (image.role != pest::EncoderRole::image || text.role != pest::EncoderRole::text) {
        pest::fail(pest::ErrorCode::ConfigError, "encoder checkpoints have the wrong roles");
      }
      pest::AdaptConfig cfg = plan.adapt;
      cfg.mode = pest::parse_mode(mode);
      const pest::AccuracyProbe probe(task.target_labels);
      auto result = pest::adapt(pest::unlabelled_view(task), image, text, cfg, probe);
      result.metrics.run_name = mode;
      const pest::RunSpec spec{mode, cfg};
      pest::write_outputs({{"runs/" + mode + ".csv", pest::metrics_csv(result.metrics)},
                           {"encoders/" + mode + "_image.bin", pest::encoder_bytes(result.image)},
                           {"summary.csv", pest::summary_csv({pest::summarize(spec, result.metrics)})}},
                          out);
      print_summary({pest::summarize(spec, result.metrics)});
    } else {
      pest::ExperimentOutput result;
      if (run->parsed()) {
        result = pest::run_plan(plan);
      } else if (abl->parsed()) {
        result = pest::run_ablation(plan);
      } else if (sweep->parsed()) {
        result = pest::run_lambda_sweep(plan, lambdas);
      } else if (base->parsed()) {
        result = pest::run_baselines(plan);
      }
      pest::write_outputs(result.files, out);
      print_summary(result.summary);
    }
  } catch (const pest::Error& e) {
    std::cerr << "pest: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "pest: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
