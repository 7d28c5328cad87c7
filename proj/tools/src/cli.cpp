#include "pixcon/tools/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "pixcon/config.hpp"
#include "pixcon/data.hpp"
#include "pixcon/errors.hpp"
#include "pixcon/model.hpp"
#include "pixcon/sampling.hpp"
#include "pixcon/tools/fnr_bench.hpp"
#include "pixcon/tools/grad_check.hpp"
#include "pixcon/tools/plot_data.hpp"
#include "pixcon/trainer.hpp"

namespace pixcon::tools {
namespace {

const std::vector<std::string> kStrategyNames{"uniform", "diff", "pseudo", "diff+pseudo",
                                              "oracle"};

// Training flags shared by train and ablate. Values start at TrainConfig
// defaults; only flags given on the command line override the config file.
class TrainFlags {
 public:
  void add(CLI::App& app) {
    const TrainConfig d;
    lambda1_ = d.lambda_contrast;
    lambda2_ = d.lambda_consistency;
    tau_ = d.temperature;
    num_negatives_ = d.num_negatives;
    strategy_ = std::string(to_string(d.strategy));
    labeled_fraction_ = d.labeled_fraction;
    delay_steps_ = d.delay_steps;
    total_steps_ = d.total_steps;
    feature_stage_ = d.feature_stage;

    app.add_option("--config", config_path_, "key=value config file")->check(CLI::ExistingFile);
    track(app.add_option("--labeled-fraction", labeled_fraction_, "fraction of labeled images"),
          "labeled_fraction", labeled_fraction_);
    track(app.add_option("--lambda1", lambda1_, "feature-space loss weight"), "lambda1",
          lambda1_);
    track(app.add_option("--lambda2", lambda2_, "label-space consistency weight"), "lambda2",
          lambda2_);
    track(app.add_option("--tau", tau_, "contrastive temperature"), "tau", tau_);
    track(app.add_option("--num-negatives", num_negatives_, "negatives per anchor (0: off)"),
          "num_negatives", num_negatives_);
    auto* strategy = app.add_option("--strategy", strategy_, "negative sampling strategy")
                         ->check(CLI::IsMember(kStrategyNames));
    strategy->capture_default_str();
    given_.push_back({strategy, [this](TrainConfig& c) { c.set("strategy", strategy_); }});
    track(app.add_option("--delay-steps", delay_steps_, "steps before unlabeled losses start"),
          "delay_steps", delay_steps_);
    track(app.add_option("--total-steps", total_steps_, "training steps"), "total_steps",
          total_steps_);
    track(app.add_option("--feature-stage", feature_stage_, "encoder stage for features"),
          "feature_stage", feature_stage_);
    shared_ = app.add_flag("--shared-projection", "one projection head for both branches");
    sharpen_ = d.sharpen_temperature;
    track(app.add_option("--sharpen-temperature", sharpen_, "pseudo-label sharpening"),
          "sharpen_temperature", sharpen_);
  }

  TrainConfig resolve(std::uint64_t seed) const {
    TrainConfig c = config_path_.empty() ? TrainConfig{} : load_config(config_path_);
    c.seed = seed;
    for (const auto& g : given_) {
      if (g.option->count() > 0) g.apply(c);
    }
    if (shared_->count() > 0) c.shared_projection = true;
    c.validate();
    return c;
  }

 private:
  struct Given {
    CLI::Option* option;
    std::function<void(TrainConfig&)> apply;
  };

  template <typename T>
  void track(CLI::Option* option, const char* key, T& value) {
    option->capture_default_str();
    given_.push_back({option, [key, &value](TrainConfig& c) {
                        std::ostringstream os;
                        os << std::setprecision(17) << value;
                        c.set(key, os.str());
                      }});
  }

  std::string config_path_;
  double lambda1_ = 0, lambda2_ = 0, tau_ = 0, labeled_fraction_ = 0, sharpen_ = 0;
  int num_negatives_ = 0, delay_steps_ = 0, total_steps_ = 0, feature_stage_ = 0;
  std::string strategy_;
  CLI::Option* shared_ = nullptr;
  std::vector<Given> given_;
};

struct DataFlags {
  std::string train_path;
  std::string eval_path;
  std::size_t train_count = 1024;
  std::size_t eval_count = 256;

  void add(CLI::App& app, bool with_train) {
    if (with_train) {
      app.add_option("--data", train_path, "training dataset file (default: generated)");
      app.add_option("--train-count", train_count, "generated training images")
          ->capture_default_str();
    }
    app.add_option("--eval-data", eval_path, "evaluation dataset file (default: generated)");
    app.add_option("--eval-count", eval_count, "generated evaluation images")
        ->capture_default_str();
  }

  // Generated sets use disjoint seed streams derived from --seed.
  Dataset train(std::uint64_t seed) const {
    if (!train_path.empty()) return load_dataset(train_path);
    return generate_dataset(train_count, mix_seed(seed, 11), GeneratorConfig{});
  }
  Dataset eval(std::uint64_t seed) const {
    if (!eval_path.empty()) return load_dataset(eval_path);
    return generate_dataset(eval_count, mix_seed(seed, 12), GeneratorConfig{});
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"pixcon: semi-supervised pixel-contrastive segmentation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every command");

  std::uint64_t seed = 42;
  auto seed_flag = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "random seed")->capture_default_str();
  };

  // generate-data
  auto* gen_cmd = app.add_subcommand("generate-data", "write a synthetic segmentation dataset");
  GeneratorConfig gen;
  std::size_t gen_count = 1024;
  std::string gen_out;
  seed_flag(gen_cmd);
  gen_cmd->add_option("--count", gen_count, "number of images")->capture_default_str();
  gen_cmd->add_option("--height", gen.height, "image height")->capture_default_str();
  gen_cmd->add_option("--width", gen.width, "image width")->capture_default_str();
  gen_cmd->add_option("--classes", gen.num_classes, "classes including background")
      ->capture_default_str();
  gen_cmd->add_option("--shapes", gen.shapes_per_image, "max shapes per image")
      ->capture_default_str();
  gen_cmd->add_option("--noise", gen.pixel_noise, "per-pixel noise std")->capture_default_str();
  gen_cmd->add_option("--jitter", gen.color_jitter, "per-image color cast")
      ->capture_default_str();
  gen_cmd->add_option("--out", gen_out, "output file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train the toy network");
  TrainFlags train_flags;
  DataFlags train_data;
  std::string train_out;
  seed_flag(train_cmd);
  train_flags.add(*train_cmd);
  train_data.add(*train_cmd, true);
  train_cmd->add_option("--out", train_out, "run directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_checkpoint;
  DataFlags eval_data;
  seed_flag(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  eval_data.add(*eval_cmd, false);

  // fnr-bench
  auto* fnr_cmd = app.add_subcommand("fnr-bench", "false-negative rate per sampling strategy");
  FnrBenchConfig fnr;
  std::string fnr_strategy = "all";
  std::string fnr_out;
  seed_flag(fnr_cmd);
  std::vector<std::string> fnr_choices = kStrategyNames;
  fnr_choices.push_back("all");
  fnr_cmd->add_option("--strategy", fnr_strategy, "strategy or 'all'")
      ->check(CLI::IsMember(fnr_choices))
      ->capture_default_str();
  fnr_cmd->add_option("--trials", fnr.trials, "independent pools")->capture_default_str();
  fnr_cmd->add_option("--num-negatives", fnr.num_negatives, "negatives per anchor")
      ->capture_default_str();
  fnr_cmd->add_option("--images", fnr.batch_images, "images per pool")->capture_default_str();
  fnr_cmd->add_option("--image-size", fnr.image_size, "image side")->capture_default_str();
  fnr_cmd->add_option("--pseudo-noise", fnr.pseudo_noise, "pseudo-label logit noise")
      ->capture_default_str();
  fnr_cmd->add_option("--out", fnr_out, "CSV file (default: stdout)");

  // grad-check
  auto* grad_cmd = app.add_subcommand("grad-check", "finite-difference gradient check");
  int grad_seeds = 100;
  bool grad_skip_network = false;
  seed_flag(grad_cmd);
  grad_cmd->add_option("--seeds", grad_seeds, "random instances per loss")
      ->capture_default_str();
  grad_cmd->add_flag("--skip-network", grad_skip_network, "only check the loss gradients");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
  TrainFlags ablate_flags;
  DataFlags ablate_data;
  std::string ablate_axis;
  std::string ablate_grid;
  std::string ablate_out;
  int ablate_jobs = 1;
  bool derive_seeds = false;
  seed_flag(ablate_cmd);
  ablate_flags.add(*ablate_cmd);
  ablate_data.add(*ablate_cmd, true);
  auto* axis_opt = ablate_cmd
                       ->add_option("--axis", ablate_axis,
                                    "preset: strategy|negatives|coefficients|feature-stage|"
                                    "loss-variants|delay|projection");
  auto* grid_opt = ablate_cmd->add_option("--grid", ablate_grid,
                                          "grid file: '<name> key=value ...' per line")
                       ->check(CLI::ExistingFile);
  axis_opt->excludes(grid_opt);
  ablate_cmd->add_option("--jobs", ablate_jobs, "worker threads")->capture_default_str();
  ablate_cmd->add_flag("--derive-seeds", derive_seeds,
                       "give cell i the seed base+i instead of the shared seed");
  ablate_cmd->add_option("--out", ablate_out, "CSV file (default: stdout)");

  // opcount
  auto* op_cmd = app.add_subcommand("opcount", "multiply-add counts of negative selection");
  std::uint64_t op_m = 4356, op_n = 200, op_d = 128, op_c = 20;
  op_cmd->add_option("--m", op_m, "candidate pixels")->capture_default_str();
  op_cmd->add_option("--n", op_n, "sampled negatives")->capture_default_str();
  op_cmd->add_option("--d", op_d, "feature dimension")->capture_default_str();
  op_cmd->add_option("--c", op_c, "classes")->capture_default_str();

  // plot-data
  auto* plot_cmd = app.add_subcommand("plot-data", "split a metrics CSV into TSV series");
  std::string plot_metrics;
  std::string plot_out;
  plot_cmd->add_option("--metrics", plot_metrics, "metrics.csv")
      ->required()
      ->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", plot_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) {
      save_dataset(gen_out, generate_dataset(gen_count, seed, gen));
      out << "wrote " << gen_count << " samples to " << gen_out << '\n';
    } else if (train_cmd->parsed()) {
      const TrainConfig config = train_flags.resolve(seed);
      const Dataset train = train_data.train(seed);
      const Dataset eval = train_data.eval(seed);
      const TrainingResult r = run_training(config, train, eval, RunOutputs{train_out});
      out << "final_miou " << fmt(r.final_miou) << '\n'
          << "mean_fnr " << fmt(r.mean_fnr) << '\n';
      if (r.diagnostics.empty_densities > 0 || r.diagnostics.shortfalls > 0) {
        err << "warning: " << r.diagnostics.empty_densities << " anchors without negatives, "
            << r.diagnostics.shortfalls << " anchors short of N negatives (of "
            << r.diagnostics.anchors << ")\n";
      }
    } else if (eval_cmd->parsed()) {
      const LoadedCheckpoint ck = load_checkpoint(eval_checkpoint);
      const Dataset eval = eval_data.eval(seed);
      const MiouResult m = evaluate_miou(ck.net, eval);
      for (std::size_t c = 0; c < m.per_class.size(); ++c) {
        out << "iou_class_" << c << ' ' << fmt(m.per_class[c]) << '\n';
      }
      out << "miou " << fmt(m.mean) << '\n';
    } else if (fnr_cmd->parsed()) {
      fnr.seed = seed;
      std::vector<FnrBenchRow> rows;
      if (fnr_strategy == "all") {
        for (StrategyKind k : kAllStrategies) rows.push_back(fnr_bench(k, fnr));
      } else {
        rows.push_back(fnr_bench(parse_strategy(fnr_strategy), fnr));
      }
      if (fnr_out.empty()) {
        write_fnr_csv(out, rows);
      } else {
        std::ofstream f(fnr_out);
        if (!f) throw IoError("cannot open " + fnr_out + " for writing");
        write_fnr_csv(f, rows);
      }
    } else if (grad_cmd->parsed()) {
      const GradCheckReport r = grad_check(grad_seeds, seed, !grad_skip_network);
      out << std::scientific << std::setprecision(3)
          << "contrastive_max_rel_error " << r.contrastive << '\n'
          << "consistency_max_rel_error " << r.consistency << '\n';
      if (r.network_checked) out << "network_rel_error " << r.network << '\n';
      out << "max_rel_error " << r.core_max() << '\n' << std::defaultfloat;
      const bool ok = r.core_max() < 1e-4 && (!r.network_checked || r.network < 1e-3);
      out << (ok ? "PASS" : "FAIL") << '\n';
      return ok ? kExitOk : kExitFailure;
    } else if (ablate_cmd->parsed()) {
      if (ablate_axis.empty() && ablate_grid.empty()) {
        err << "ablate: one of --axis or --grid is required\n";
        return kExitUsage;
      }
      const TrainConfig base = ablate_flags.resolve(seed);
      std::vector<AblationCell> cells;
      if (!ablate_axis.empty()) {
        cells = preset_grid(ablate_axis, base);
      } else {
        std::ifstream in(ablate_grid);
        if (!in) throw IoError("cannot open grid file " + ablate_grid);
        cells = parse_grid(in, base);
      }
      if (derive_seeds) {
        for (std::size_t i = 0; i < cells.size(); ++i) cells[i].config.seed = seed + i;
      }
      const auto results =
          run_ablation(cells, ablate_data.train(seed), ablate_data.eval(seed), ablate_jobs);
      if (ablate_out.empty()) {
        write_ablation_csv(out, results);
      } else {
        std::ofstream f(ablate_out);
        if (!f) throw IoError("cannot open " + ablate_out + " for writing");
        write_ablation_csv(f, results);
      }
    } else if (op_cmd->parsed()) {
      const OpCountReport r = op_count_report(op_m, op_n, op_d, op_c);
      out << "all_pairs " << r.all_pairs << '\n'
          << "sampled_similarity " << r.sampled_similarity << '\n'
          << "pseudo_label_compare " << r.pseudo_label_compare << '\n'
          << "sampled_total " << r.sampled_total << '\n'
          << "reduction " << fmt(r.reduction) << '\n';
    } else if (plot_cmd->parsed()) {
      std::ifstream in(plot_metrics);
      if (!in) throw IoError("cannot open " + plot_metrics);
      for (const auto& p : emit_plot_data(read_metrics_csv(in), plot_out)) {
        out << p << '\n';
      }
    }
  } catch (const InvalidParameter& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace pixcon::tools
