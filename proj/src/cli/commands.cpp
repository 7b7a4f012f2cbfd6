#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "rfv/cli/experiment.hpp"
#include "rfv/core/checkpoint.hpp"
#include "rfv/eval/plots.hpp"

namespace rfv::cli {

namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool deterministic = false;
};

struct CommandOptions {
  std::string config;
  std::string regime;
  std::string checkpoint;
  std::vector<std::string> attacks;
  bool attacks_given = false;
  std::string reports;
  std::string out;
};

void write_json(const fs::path &path, const nlohmann::json &j) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os)
    throw ConfigError("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

nlohmann::json read_json(const fs::path &path) {
  std::ifstream is(path);
  if (!is)
    throw ConfigError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ExperimentConfig prepare(const CommandOptions &opt, const GlobalOptions &global) {
  if (opt.config.empty())
    throw ConfigError("--config is required");
  ExperimentConfig cfg = load_experiment(opt.config);
  if (!opt.regime.empty())
    cfg.train.regime = train::regime_from_string(opt.regime);
  if (global.seed) {
    cfg.train.seed = *global.seed;
    cfg.eval.seed = *global.seed;
  }
  if (!opt.out.empty())
    cfg.output_dir = opt.out;
  if (opt.attacks_given) {
    cfg.attacks.clear();
    for (const auto &a : opt.attacks)
      cfg.attacks.push_back({a, nlohmann::json::object()});
  }
  if (global.jobs < 1)
    throw ConfigError("--jobs must be >= 1");
  cfg.validate();
  return cfg;
}

EmbeddingModel load_model(const ExperimentConfig &cfg, const std::string &checkpoint, const synth::Dataset &dataset) {
  const fs::path path = checkpoint.empty() ? cfg.output_dir / "best.json" : fs::path(checkpoint);
  if (!fs::exists(path))
    throw ConfigError("checkpoint not found: " + path.string());
  EmbeddingModel model = model_from(load_checkpoint(path));
  if (!(model.architecture().input == dataset.shape()))
    throw ConfigError("checkpoint expects " + model.architecture().input.to_string() + " images, dataset has " +
                      dataset.shape().to_string());
  return model;
}

eval::SuiteContext suite_context(const ExperimentConfig &cfg, const synth::Dataset &dataset,
                                 const gen::DisentangledGenerator *generator, const GlobalOptions &global) {
  eval::SuiteContext ctx;
  ctx.dataset = &dataset;
  ctx.generator = generator;
  ctx.geometry = cfg.geometry(dataset.shape());
  ctx.seed = cfg.eval.seed;
  ctx.jobs = global.jobs;
  ctx.store_mirrored_target = cfg.eval.store_mirrored_target;
  return ctx;
}

std::string report_file(const std::string &descriptor) { return eval::file_stem(descriptor) + ".json"; }

int cmd_train(const CommandOptions &opt, const GlobalOptions &global) {
  const ExperimentConfig cfg = prepare(opt, global);
  const synth::Dataset dataset = build_dataset(cfg);
  std::unique_ptr<gen::DisentangledGenerator> generator;
  if (cfg.train.regime == train::Regime::proposed)
    generator = build_generator(cfg, dataset);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(cfg));
  write_json(dir / "seeds.json",
             {{"dataset", cfg.dataset.synthetic ? nlohmann::json(cfg.dataset.synthetic->seed) : nlohmann::json(nullptr)},
              {"train", cfg.train.seed},
              {"eval", cfg.eval.seed}});
  write_json(dir / "manifest.json", synth::manifest(dataset, to_json(cfg).at("dataset")));
  train::TrainOptions options;
  options.run_dir = dir;
  options.include_wall_time = !global.deterministic;
  options.on_record = [](const train::RunRecord &r) {
    std::cout << "step " << r.step << " train " << r.train_loss << " val " << r.val_loss << " test " << r.test_loss
              << " val_auroc " << r.val_auroc << (r.diverged ? " diverged" : "") << std::endl;
  };
  try {
    const auto out = train::train(cfg.train, dataset, generator.get(), options);
    write_json(dir / "summary.json", {{"best_step", out.best_step},
                                      {"diverged", out.diverged},
                                      {"steps", out.log.empty() ? 0 : out.log.records.back().step}});
    std::cout << "run directory: " << dir.string() << "\n";
  } catch (const train::TrainingAborted &e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    if (e.diagnostic_checkpoint)
      std::cerr << "diagnostic checkpoint: " << e.diagnostic_checkpoint->string() << "\n";
    return kExitAborted;
  }
  return kExitOk;
}

int cmd_attack(const CommandOptions &opt, const GlobalOptions &global) {
  const ExperimentConfig cfg = prepare(opt, global);
  const synth::Dataset dataset = build_dataset(cfg);
  const EmbeddingModel model = load_model(cfg, opt.checkpoint, dataset);
  const auto specs = cfg.attack_specs();
  std::unique_ptr<gen::DisentangledGenerator> generator;
  if (std::any_of(specs.begin(), specs.end(), [](const auto &s) { return s.type == "indirect_anchor"; }))
    generator = build_generator(cfg, dataset);
  const auto ctx = suite_context(cfg, dataset, generator.get(), global);
  const auto plan = build_plan(cfg, dataset);
  const fs::path dir = opt.reports.empty() ? cfg.output_dir / "attacks" : fs::path(opt.reports);
  fs::create_directories(dir);
  const auto outcomes = eval::run_attacks(model, ctx, plan, specs, cfg.eval.tta);
  nlohmann::json index = nlohmann::json::array();
  for (const auto &spec : specs) {
    const auto &list = outcomes.at(spec.descriptor);
    nlohmann::json items = nlohmann::json::array();
    for (const auto &o : list)
      items.push_back(eval::to_json(o));
    write_json(dir / report_file(spec.descriptor), {{"attack", spec.descriptor}, {"outcomes", items}});
    index.push_back({{"attack", spec.descriptor}, {"file", report_file(spec.descriptor)}, {"count", list.size()}});
    if (spec.type == "square_patch")
      eval::write_heatmap(eval::location_histogram(list, ctx.geometry, dataset.shape()),
                          dir / (eval::file_stem(spec.descriptor) + "_locations.csv"),
                          dir / (eval::file_stem(spec.descriptor) + "_locations.svg"));
    std::cout << spec.descriptor << ": " << list.size() << " attacked candidates\n";
  }
  write_json(dir / "index.json", index);
  return kExitOk;
}

std::map<std::string, std::vector<eval::AttackOutcome>> load_reports(const fs::path &dir) {
  std::map<std::string, std::vector<eval::AttackOutcome>> out;
  if (!fs::exists(dir / "index.json"))
    throw ConfigError("no attack reports in " + dir.string() + " (run the attack command first)");
  for (const auto &entry : read_json(dir / "index.json")) {
    const auto name = entry.at("attack").get<std::string>();
    const auto report = read_json(dir / entry.at("file").get<std::string>());
    auto &list = out[name];
    for (const auto &o : report.at("outcomes"))
      list.push_back(eval::outcome_from_json(o));
  }
  return out;
}

int cmd_evaluate(const CommandOptions &opt, const GlobalOptions &global) {
  const ExperimentConfig cfg = prepare(opt, global);
  const synth::Dataset dataset = build_dataset(cfg);
  const EmbeddingModel model = load_model(cfg, opt.checkpoint, dataset);
  const auto ctx = suite_context(cfg, dataset, nullptr, global);
  const auto plan = build_plan(cfg, dataset);
  const fs::path reports = opt.reports.empty() ? cfg.output_dir / "attacks" : fs::path(opt.reports);
  std::map<std::string, std::vector<eval::AttackOutcome>> outcomes;
  if (!cfg.attacks.empty() || fs::exists(reports / "index.json"))
    outcomes = load_reports(reports);
  eval::ScoreOptions so;
  so.ttas = cfg.eval.tta;
  so.fpr = cfg.eval.fpr;
  so.per_target_calibration = cfg.eval.per_target_calibration;
  const auto validation = build_plan(cfg, dataset, true);
  for (const auto &t : so.ttas)
    so.calibration[t.name()] = eval::genuine_scores(model, dataset, validation, t);
  const auto report = eval::score_suite(model, ctx, plan, outcomes, so);
  const fs::path dir = opt.out.empty() ? cfg.output_dir : fs::path(opt.out);
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "metrics.csv");
    os << eval::to_csv(report);
  }
  write_json(dir / "metrics.json", eval::to_json(report));
  eval::emit_plots(report, dir / "plots");
  std::cout << eval::to_csv(report);
  return kExitOk;
}

int cmd_plot(const CommandOptions &opt, const GlobalOptions &global) {
  const ExperimentConfig cfg = prepare(opt, global);
  const fs::path dir = cfg.output_dir;
  const fs::path plots = opt.out.empty() ? dir / "plots" : fs::path(opt.out);
  int written = 0;
  if (fs::exists(dir / "runlog.csv")) {
    const auto log = train::read_runlog_csv(dir / "runlog.csv");
    if (!log.empty()) {
      eval::emit_plots(log, plots);
      ++written;
    }
  }
  const fs::path reports = opt.reports.empty() ? dir / "attacks" : fs::path(opt.reports);
  if (fs::exists(reports / "index.json")) {
    const synth::Dataset dataset = build_dataset(cfg);
    const auto geometry = cfg.geometry(dataset.shape());
    for (const auto &[name, list] : load_reports(reports)) {
      const auto spec = eval::parse_attack(name);
      if (spec.type == "square_patch") {
        eval::emit_plots(eval::location_histogram(list, geometry, dataset.shape()), plots / eval::file_stem(name));
        ++written;
      } else if (!list.empty()) {
        std::vector<LabeledImage> images;
        for (std::size_t i = 0; i < list.size() && i < 32; ++i)
          images.push_back(eval::rebuild(dataset, list[i]));
        eval::write_image_grid(images, 8, plots / (eval::file_stem(name) + "_grid.png"), 2);
        ++written;
      }
    }
  }
  if (written == 0)
    throw ConfigError("nothing to plot in " + dir.string());
  std::cout << "plots written to " << plots.string() << "\n";
  return kExitOk;
}

int cmd_dataset_gen(const CommandOptions &opt, const GlobalOptions &global) {
  CommandOptions o = opt;
  o.out.clear();
  const ExperimentConfig cfg = prepare(o, global);
  const synth::Dataset dataset = build_dataset(cfg);
  const fs::path root = opt.out.empty() ? cfg.output_dir / "dataset" : fs::path(opt.out);
  export_dataset(dataset, root, to_json(cfg).at("dataset"));
  std::cout << dataset.size() << " images written to " << root.string() << "\n";
  return kExitOk;
}

} // namespace

int run(int argc, const char *const *argv) {
  CLI::App app{"Patch-robust face verification: training, attacks and evaluation"};
  app.require_subcommand(1);
  GlobalOptions global;
  std::uint64_t seed = 0;
  auto *seed_opt = app.add_option("--seed", seed, "Override the training and evaluation seeds");
  app.add_option("--jobs", global.jobs, "Worker threads for attack fan-out")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", global.deterministic, "Omit wall-clock fields so reruns are byte-identical");

  CommandOptions opt;
  auto add_common = [&](CLI::App *sub) {
    sub->add_option("--config", opt.config, "Experiment config (JSON)")->required();
  };
  auto *train_cmd = app.add_subcommand("train", "Train an embedding network");
  add_common(train_cmd);
  train_cmd->add_option("--regime", opt.regime, "proposed, weak_at or doa");
  train_cmd->add_option("--out", opt.out, "Run directory (defaults to output_dir)");

  auto *attack_cmd = app.add_subcommand("attack", "Run attacks against a checkpoint");
  add_common(attack_cmd);
  attack_cmd->add_option("--checkpoint", opt.checkpoint, "Checkpoint (defaults to <output_dir>/best.json)");
  auto *attack_list = attack_cmd->add_option("--attack", opt.attacks, "Attack descriptor, repeatable");
  attack_cmd->add_option("--reports", opt.reports, "Report directory (defaults to <output_dir>/attacks)");

  auto *eval_cmd = app.add_subcommand("evaluate", "Score clean and attacked trials");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", opt.checkpoint, "Checkpoint (defaults to <output_dir>/best.json)");
  eval_cmd->add_option("--reports", opt.reports, "Attack report directory");
  eval_cmd->add_option("--out", opt.out, "Output directory for metrics and plots");

  auto *plot_cmd = app.add_subcommand("plot", "Plot run logs and attack reports");
  add_common(plot_cmd);
  plot_cmd->add_option("--reports", opt.reports, "Attack report directory");
  plot_cmd->add_option("--out", opt.out, "Plot directory");

  auto *data_cmd = app.add_subcommand("dataset-gen", "Render the configured dataset to image folders");
  add_common(data_cmd);
  data_cmd->add_option("--out", opt.out, "Output root (defaults to <output_dir>/dataset)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (seed_opt->count() > 0)
    global.seed = seed;
  opt.attacks_given = attack_list->count() > 0;

  try {
    if (train_cmd->parsed())
      return cmd_train(opt, global);
    if (attack_cmd->parsed())
      return cmd_attack(opt, global);
    if (eval_cmd->parsed())
      return cmd_evaluate(opt, global);
    if (plot_cmd->parsed())
      return cmd_plot(opt, global);
    return cmd_dataset_gen(opt, global);
  } catch (const ConfigError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

} // namespace rfv::cli
