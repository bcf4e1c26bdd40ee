#include "advcast/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "advcast/config.hpp"
#include "advcast/errors.hpp"
#include "advcast/eval.hpp"
#include "advcast/game.hpp"
#include "advcast/util.hpp"

namespace advcast {

namespace {

using nlohmann::json;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string checkpoint;
  std::string summary;
};

ExperimentConfig resolve_config(const Options& o) {
  if (o.config.empty()) throw Error(ErrorCode::ConfigInvalid, "--config is required");
  ExperimentConfig c = load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.workers) {
    if (*o.workers < 1) throw Error(ErrorCode::ConfigInvalid, "--workers must be >= 1");
    c.workers = *o.workers;
  }
  return c;
}

std::filesystem::path out_dir(const Options& o) {
  if (o.out.empty()) throw Error(ErrorCode::ConfigInvalid, "--out is required");
  std::error_code ec;
  std::filesystem::create_directories(o.out, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + o.out + ": " + ec.message());
  return o.out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingInput, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

PipelineConfig pipeline_config(const ExperimentConfig& c, const Dataset& train) {
  PipelineConfig pc;
  pc.dims = {train.dims.p_in, train.dims.p_out, train.dims.history, train.dims.horizon};
  pc.forecaster_hidden = c.forecaster_hidden;
  pc.adversary_hidden = c.adversary_hidden;
  pc.mpc = experiment_mpc(c);
  pc.lambda_f = c.lambda_f;
  pc.lambda_a = c.lambda_a;
  pc.seed = c.seed;
  if (c.experiment == Experiment::arima) {
    pc.adversary_mask = {true};
    pc.output_channels = {0};
  } else {
    pc.adversary_mask = {false, false, false, false, true, true, true, true};
    pc.output_channels = {0, 1, 2, 3};
  }
  return pc;
}

void save_checkpoint(const std::filesystem::path& path, const GamePipeline& p, const std::string& hash, int round) {
  json doc;
  doc["format"] = "advcast-checkpoint-1";
  doc["config_hash"] = hash;
  doc["round"] = round;
  doc["pipeline"] = pipeline_to_json(p);
  write_text(path, doc.dump(2) + "\n");
}

GamePipeline load_checkpoint(const std::string& path, const ExperimentConfig& c, int* round = nullptr) {
  const json doc = read_json(path);
  if (!doc.contains("config_hash") || doc.at("config_hash") != config_hash(c)) {
    throw Error(ErrorCode::ConfigInvalid, path + ": checkpoint was written under a different config");
  }
  if (round != nullptr) *round = doc.value("round", 0);
  return pipeline_from_json(doc.at("pipeline"), std::make_shared<const Controller>(experiment_mpc(c)));
}

GamePipeline pretrained_pipeline(const ExperimentConfig& c, const ExperimentData& data, PretrainResult* out) {
  GamePipeline p = make_pipeline(pipeline_config(c, data.train), normalize_stats(data.train));
  PretrainResult pr = pretrain_forecaster(p, data.train, c.pretrain_epochs, c.pretrain_lr, c.workers);
  p.forecaster = pr.forecaster;
  if (out != nullptr) *out = std::move(pr);
  return p;
}

int cmd_gen_data(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  const auto dir = out_dir(o);
  ExperimentData d = make_experiment_data(c);
  const std::string hash = config_hash(c);
  for (Dataset* ds : {&d.train, &d.test, &d.ood}) ds->meta["config_hash"] = hash;
  save_dataset(d.train, (dir / "train.csv").string());
  save_dataset(d.test, (dir / "test.csv").string());
  save_dataset(d.ood, (dir / "ood.csv").string());
  return 0;
}

int cmd_pretrain(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  const auto dir = out_dir(o);
  const ExperimentData d = make_experiment_data(c);
  PretrainResult pr;
  const GamePipeline p = pretrained_pipeline(c, d, &pr);
  std::string curve = "epoch,mse\n";
  for (std::size_t e = 0; e < pr.loss_curve.size(); ++e) curve += std::to_string(e) + "," + format_decimal(pr.loss_curve[e]) + "\n";
  write_text(dir / "pretrain_history.csv", curve);
  save_checkpoint(dir / "checkpoint.json", p, config_hash(c), 0);
  return 0;
}

int cmd_train(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  const auto dir = out_dir(o);
  const ExperimentData d = make_experiment_data(c);
  int start_round = 0;
  const GamePipeline start = o.checkpoint.empty() ? pretrained_pipeline(c, d, nullptr)
                                                  : load_checkpoint(o.checkpoint, c, &start_round);
  GameConfig gc;
  gc.max_rounds = c.game_rounds;
  gc.lr_f = c.game_lr_f;
  gc.lr_a = c.game_lr_a;
  gc.lr_final_scale = c.game_lr_final_scale;
  gc.rel_change_tol = c.rel_change_tol;
  gc.patience = c.patience;
  gc.workers = c.workers;
  const RobustResult rr = train_robust(start, d.train, gc);
  write_text(dir / "history.csv", history_to_csv(rr.history));
  save_checkpoint(dir / "checkpoint.json", rr.pipeline, config_hash(c),
                  start_round + static_cast<int>(rr.history.rounds.size()));
  return 0;
}

int cmd_eval(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  if (o.checkpoint.empty()) throw Error(ErrorCode::ConfigInvalid, "eval needs --checkpoint");
  const auto dir = out_dir(o);
  const GamePipeline p = load_checkpoint(o.checkpoint, c);
  const ExperimentData d = make_experiment_data(c);
  ReportBundle b;
  for (Kind k : c.conditions) {
    const Dataset ds = k == Kind::orig ? d.test : k == Kind::ood ? d.ood : make_adversarial_testset(d.test, p);
    EvalResult r = evaluate(p, ds, c.lambda_f, c.workers);
    r.condition = k;
    r.scheme = Scheme::robust;
    b.results.push_back(std::move(r));
  }
  write_text(dir / "eval.csv", costs_csv(b));
  return 0;
}

int cmd_verify_lne(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  if (o.checkpoint.empty()) throw Error(ErrorCode::ConfigInvalid, "verify-lne needs --checkpoint");
  const auto dir = out_dir(o);
  const GamePipeline p = load_checkpoint(o.checkpoint, c);
  const ExperimentData d = make_experiment_data(c);
  LneOptions lo;
  lo.fd_step = c.lne_fd_step;
  lo.max_params = c.lne_max_params;
  lo.workers = c.workers;
  ReportBundle b;
  b.lne = verify_lne(p, d.train, lo);
  write_text(dir / "lne.csv", lne_csv(b));
  return 0;
}

int cmd_experiment(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  const auto dir = out_dir(o);
  ExperimentArtifacts art;
  try {
    art = run_experiment_full(c);
  } catch (...) {
    write_text(dir / "FAILED", "experiment aborted; see stderr\n");
    throw;
  }
  write_report(art.bundle, dir.string());
  write_text(dir / "history.csv", history_to_csv(art.robust_history));
  if (art.robust) save_checkpoint(dir / "checkpoint.json", *art.robust, config_hash(c), static_cast<int>(art.robust_history.rounds.size()));
  return 0;
}

int cmd_report(const Options& o) {
  if (o.summary.empty()) throw Error(ErrorCode::ConfigInvalid, "report needs --summary");
  const ReportBundle b = load_report(o.summary);
  if (!o.config.empty() && config_hash(resolve_config(o)) != b.config_hash) {
    throw Error(ErrorCode::ConfigInvalid, o.summary + ": report was produced under a different config");
  }
  write_report(b, out_dir(o).string());
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"Forecaster/adversary game training through a differentiable MPC controller", "advcast"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool checkpoint) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "override the configured master seed");
    sub->add_option("--workers", o.workers, "worker threads (results do not depend on this)");
    if (checkpoint) sub->add_option("--checkpoint", o.checkpoint, "pipeline checkpoint JSON");
  };
  struct Command {
    const char* name;
    const char* help;
    bool checkpoint;
    int (*run)(const Options&);
  };
  const Command commands[] = {
      {"gen-data", "write train/test/ood dataset CSVs", false, cmd_gen_data},
      {"pretrain", "MSE-pretrain the forecaster; writes a checkpoint", false, cmd_pretrain},
      {"train", "run the robust game; writes checkpoint and history", true, cmd_train},
      {"eval", "evaluate a checkpoint on the test conditions", true, cmd_eval},
      {"verify-lne", "check local Nash conditions for a checkpoint", true, cmd_verify_lne},
      {"experiment", "full scheme comparison; writes the report", false, cmd_experiment},
      {"report", "re-render report files from a summary.json", false, cmd_report},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, c.checkpoint);
    if (std::string(c.name) == "report") sub->add_option("--summary", o.summary, "summary.json to re-render");
    subs.emplace_back(sub, &c);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    for (const auto& [sub, cmd] : subs) {
      if (sub->parsed()) return cmd->run(o);
    }
    return 1;
  } catch (const Error& e) {
    std::cerr << "advcast: " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::ConfigInvalid:
      case ErrorCode::MissingInput:
        return 1;
      default:
        return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "advcast: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace advcast
