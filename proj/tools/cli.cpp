// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "dagger/checkpoint.hpp"
#include "dagger/error.hpp"
#include "dagger/flops.hpp"
#include "dagger/kvconfig.hpp"
#include "dagger/pruner.hpp"
#include "dagger/report.hpp"
#include "dagger/training.hpp"

namespace dagger {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunConfig {
  std::string command;
  std::string net;
  std::string data = "synthetic";
  std::string test_data;
  int data_limit = 0;
  std::string out = "runs";
  std::string run_name;
  std::string checkpoint;
  std::uint64_t seed = 0;

  // train
  int epochs = 5;
  double lr = 0.05;
  int save_every = 0;

  // prune
  double budget_flops = 0.0;
  double accel = 0.0;
  double lambda = 8.0;
  double prune_ratio = 0.006;
  int gate_iters = 100;
  int finetune_iters = 100;
  double gate_lr = 0.001;
  double weight_lr = 0.001;
  int final_epochs = 0;
  double final_lr = 0.01;
  std::string baseline = "none";
  int trials = 1;
  int batch_size = 64;

  // report
  std::string feature_layer;
};

// ---------------------------------------------------------------------------
// Data specs: synthetic[:k=v,...] | cifar10:PATH | idx:IMAGES,LABELS

Shape parse_shape(const std::string& s) {
  Shape shape;
  for (const std::string& d : kv_split(s, 'x')) shape.push_back(kv_to_int(d, "shape"));
  if (shape.size() != 3) throw ConfigError("synthetic shape must be CxHxW, got '" + s + "'");
  return shape;
}

Dataset load_data(const std::string& spec, const NetworkGraph& graph, bool test, int limit) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "synthetic") {
    SyntheticSpec s;
    s.image_shape = graph.input_shape();
    s.classes = graph.num_classes();
    if (!rest.empty()) {
      for (const std::string& kv : kv_split(rest, ',')) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("synthetic data option '" + kv + "' is not key=value");
        const std::string key = trim(kv.substr(0, eq)), value = trim(kv.substr(eq + 1));
        if (key == "classes") {
          s.classes = kv_to_int(value, key);
        } else if (key == "per_class") {
          s.per_class = kv_to_int(value, key);
        } else if (key == "noise") {
          s.noise = kv_to_double(value, key);
        } else if (key == "smooth") {
          s.smooth = kv_to_int(value, key);
        } else if (key == "seed") {
          s.seed = static_cast<std::uint64_t>(kv_to_int(value, key));
        } else if (key == "shape") {
          s.image_shape = parse_shape(value);
        } else {
          throw ConfigError("unknown synthetic data option '" + key + "'");
        }
      }
    }
    return synthetic_dataset(s, test ? 1 : 0);
  }
  if (kind == "cifar10") {
    if (rest.empty()) throw ConfigError("cifar10 data needs a path: cifar10:PATH");
    return load_cifar10_binary(rest, test ? "test" : "train", limit);
  }
  if (kind == "idx") {
    const auto parts = kv_split(rest, ',');
    if (parts.size() != 2) throw ConfigError("idx data needs two files: idx:IMAGES,LABELS");
    return load_idx_dataset(parts[0], parts[1]);
  }
  throw ConfigError("unknown data source '" + kind + "' (expected synthetic, cifar10 or idx)");
}

Dataset train_split(const RunConfig& c, const NetworkGraph& g) { return load_data(c.data, g, false, c.data_limit); }

Dataset test_split(const RunConfig& c, const NetworkGraph& g) {
  if (!c.test_data.empty()) return load_data(c.test_data, g, false, c.data_limit);
  return load_data(c.data, g, true, c.data_limit);
}

void check_compatible(const Dataset& d, const NetworkGraph& g) {
  if (d.images.shape().size() != 4 || Shape(d.images.shape().begin() + 1, d.images.shape().end()) != g.input_shape()) {
    throw DataError("data sample shape does not match the network input");
  }
  if (d.classes > g.num_classes()) {
    throw DataError("data has " + std::to_string(d.classes) + " classes but the network has " +
                    std::to_string(g.num_classes()) + " outputs");
  }
}

// ---------------------------------------------------------------------------

NetworkGraph load_model(const RunConfig& c, bool allow_net) {
  if (!c.checkpoint.empty()) return checkpoint_graph(load_checkpoint(c.checkpoint));
  if (allow_net && !c.net.empty()) return build_graph(load_network_config(c.net), c.seed);
  throw ConfigError(allow_net ? "need --checkpoint or --net" : "need --checkpoint");
}

SgdOptions sgd(double lr) { return SgdOptions{lr, 0.9, true, 1e-4}; }

json eval_json(const EvalResult& r, int classes) {
  json j{{"top1", r.top1}, {"loss", r.loss}, {"samples", r.samples}};
  if (classes >= 5) j["top5"] = r.top5;
  return j;
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v << "%";
  return s.str();
}

int cmd_train(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  NetworkGraph g = load_model(c, true);
  const Dataset d = train_split(c, g);
  check_compatible(d, g);
  if (c.epochs < 0) throw ConfigError("--epochs must be >= 0");
  TrainOptions t;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.sgd = sgd(c.lr);
  t.seed = c.seed;
  std::string log = "epoch,lr,train_loss\n";
  double last_loss = 0.0;
  train(g, d, t, [&](const EpochStats& e) {
    std::ostringstream row;
    row << e.epoch + 1 << ',' << std::setprecision(17) << e.lr << ',' << e.train_loss << '\n';
    log += row.str();
    last_loss = e.train_loss;
    out << "epoch " << e.epoch + 1 << "/" << c.epochs << "  loss " << e.train_loss << "\n";
    if (c.save_every > 0 && (e.epoch + 1) % c.save_every == 0) {
      save_checkpoint(make_checkpoint(g, nullptr, {{"epoch", e.epoch + 1}}),
                      (dir / ("epoch_" + std::to_string(e.epoch + 1) + ".dgpr")).string());
    }
  });
  const EvalResult acc = evaluate(g, d);
  json metrics{{"epochs", c.epochs}, {"seed", c.seed}, {"final_loss", last_loss}, {"train", eval_json(acc, d.classes)}};
  save_checkpoint(make_checkpoint(g, nullptr, metrics), (dir / "model.dgpr").string());
  write_text_file((dir / "train_log.csv").string(), log);
  write_text_file((dir / "metrics.json").string(), metrics.dump(2) + "\n");
  out << "train accuracy " << pct(acc.top1) << "\n";
  return kExitOk;
}

PruneState state_from_keep(const NetworkGraph& g, const GateValues& keep) {
  PruneState s;
  for (std::size_t gi = 0; gi < keep.size(); ++gi)
    for (std::size_t f = 0; f < keep[gi].size(); ++f) {
      const GateId id{g.gated_layers()[gi], static_cast<int>(f)};
      (keep[gi][f] != 0.0 ? s.one_gates : s.zero_gates).insert(id);
    }
  s.current_flops = total_flops_exact(g, keep);
  return s;
}

NetworkGraph decided_from_keep(const NetworkGraph& g, const GateValues& keep) {
  NetworkGraph d = g;
  for (std::size_t gi = 0; gi < keep.size(); ++gi)
    for (std::size_t f = 0; f < keep[gi].size(); ++f) {
      if (keep[gi][f] != 0.0) {
        d.gates()[gi].retain(static_cast<int>(f));
      } else {
        d.gates()[gi].prune(static_cast<int>(f));
      }
    }
  return d;
}

// Final finetune of a materialized network, then reports and checkpoint.
json finish_pruned(NetworkGraph& pruned, const PruneState& state, const NetworkGraph& decided, const Dataset& train,
                   const Dataset& test, const PruneConfig& pc, const fs::path& dir, json extra, std::ostream& out) {
  const EvalResult before = evaluate(pruned, test);
  const auto history = final_finetune(pruned, train, pc, &test);
  const EvalResult after = history.empty() ? before : history.back();
  json metrics = std::move(extra);
  metrics["before_finetune"] = eval_json(before, test.classes);
  metrics["test"] = eval_json(after, test.classes);
  fs::create_directories(dir);
  write_report(state, decided, metrics, dir.string());
  write_text_file((dir / "flops.csv").string(), flops_table_csv(flops_table(pruned, pruned.gate_values())));
  save_checkpoint(make_checkpoint(pruned, nullptr, metrics), (dir / "pruned.dgpr").string());
  out << "  flops " << state.current_flops << "  params " << pruned.parameter_count() << "  test " << pct(after.top1)
      << "\n";
  return metrics;
}

int cmd_prune(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  NetworkGraph g = load_model(c, false);
  const Dataset train = train_split(c, g), test = test_split(c, g);
  check_compatible(train, g);
  check_compatible(test, g);
  const Macs c0 = architecture_flops(g);
  PruneConfig pc;
  if (c.budget_flops != 0.0 && c.accel != 0.0) throw ConfigError("--budget-flops and --accel are mutually exclusive");
  if (c.budget_flops != 0.0) {
    pc.budget = budget_from_target(c0, c.budget_flops);
  } else if (c.accel != 0.0) {
    pc.budget = budget_from_acceleration(c0, c.accel);
  } else {
    throw ConfigError("prune needs --budget-flops or --accel");
  }
  pc.lambda = c.lambda;
  pc.prune_ratio = c.prune_ratio;
  pc.gate_iters = c.gate_iters;
  pc.finetune_iters = c.finetune_iters;
  pc.batch_size = c.batch_size;
  pc.gate_lr = c.gate_lr;
  pc.weight_lr = c.weight_lr;
  pc.final_finetune_epochs = c.final_epochs;
  pc.final_lr = c.final_lr;
  pc.seed = c.seed;
  pc.validate();
  out << "C0 " << c0 << " MACs, budget " << pc.budget.target << " MACs\n";

  if (c.baseline == "none") {
    DaggerBank bank = dagger_init(g, c.seed);
    PruneResult r = prune_loop(g, bank, train, pc, [&](const PruneEvent& e) {
      out << "round " << e.round << "  pruned " << e.pruned.size() << "  flops " << e.flops_before << " -> "
          << e.flops_after << "\n";
    });
    finish_pruned(r.pruned, r.state, g, train, test, pc, dir, {{"method", "dagger"}}, out);
    return kExitOk;
  }
  if (c.baseline == "uniform") {
    BaselineResult b = uniform_baseline(g, pc.budget.target);
    json extra{{"method", "uniform"}, {"scale", b.scale}, {"counts", b.counts}};
    finish_pruned(b.pruned, state_from_keep(g, b.keep), decided_from_keep(g, b.keep), train, test, pc, dir, extra,
                  out);
    return kExitOk;
  }
  if (c.baseline == "random") {
    auto trials = random_baseline(g, pc.budget.target, c.trials, c.seed);
    json all = json::array();
    double mean = 0.0;
    for (std::size_t t = 0; t < trials.size(); ++t) {
      BaselineResult& b = trials[t];
      std::ostringstream name;
      name << "trial_" << std::setw(2) << std::setfill('0') << t;
      out << name.str() << "\n";
      json extra{{"method", "random"}, {"trial", t}, {"counts", b.counts}, {"perturbed", b.perturbed}};
      const json m = finish_pruned(b.pruned, state_from_keep(g, b.keep), decided_from_keep(g, b.keep), train, test,
                                   pc, dir / name.str(), extra, out);
      mean += m["test"]["top1"].get<double>() / static_cast<double>(trials.size());
      all.push_back({{"trial", t}, {"flops", b.flops}, {"top1", m["test"]["top1"]}});
    }
    json summary{{"method", "random"}, {"trials", all}, {"mean_top1", mean}};
    write_text_file((dir / "summary.json").string(), summary.dump(2) + "\n");
    out << "random baseline mean test " << pct(mean) << "\n";
    return kExitOk;
  }
  throw ConfigError("unknown --baseline '" + c.baseline + "'");
}

int cmd_eval(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  NetworkGraph g = load_model(c, false);
  const Dataset test = test_split(c, g);
  check_compatible(test, g);
  const EvalResult r = evaluate(g, test);
  json j = eval_json(r, test.classes);
  j["checkpoint"] = c.checkpoint;
  write_text_file((dir / "eval.json").string(), j.dump(2) + "\n");
  out << "top1 " << pct(r.top1);
  if (test.classes >= 5) out << "  top5 " << pct(r.top5);
  out << "  samples " << r.samples << "\n";
  return kExitOk;
}

int cmd_flops(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const NetworkGraph g = load_model(c, true);
  const std::string csv = flops_table_csv(flops_table(g, g.gate_values()));
  write_text_file((dir / "flops.csv").string(), csv);
  out << csv;
  out << "architecture_macs " << architecture_flops(g) << "\n";
  return kExitOk;
}

int cmd_report(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  NetworkGraph g = load_model(c, true);
  const auto counts = layer_counts(g);
  write_text_file((dir / "layers.csv").string(), layer_counts_csv(counts));
  write_text_file((dir / "flops.csv").string(), flops_table_csv(flops_table(g, g.gate_values())));
  json layers = json::array();
  for (const LayerCount& lc : counts) {
    layers.push_back({{"layer_id", lc.layer_id}, {"filters", lc.filters}, {"retained", lc.retained}, {"pruned", lc.pruned}});
  }
  json summary{{"flops", total_flops_exact(g)}, {"params", g.parameter_count()}, {"layers", layers}};
  write_text_file((dir / "summary.json").string(), summary.dump(2) + "\n");
  out << layer_counts_csv(counts);
  if (!c.feature_layer.empty()) {
    const Dataset test = test_split(c, g);
    check_compatible(test, g);
    Tensor one;
    std::vector<int> label;
    const int first = 0;
    gather_batch(test, std::span<const int>(&first, 1), one, label);
    const auto files = dump_feature_maps(g, one, c.feature_layer, (dir / "feature_maps").string());
    out << "wrote " << files.size() << " feature maps\n";
  }
  return kExitOk;
}

void add_options(CLI::App& app, RunConfig& c) {
  app.set_config("--config", "", "Key-value config file; command-line flags win");
  app.config_formatter(std::make_shared<CLI::ConfigINI>());
  app.add_option("--net", c.net, "Network description file");
  app.add_option("--data", c.data, "synthetic[:k=v,...] | cifar10:PATH | idx:IMAGES,LABELS")->capture_default_str();
  app.add_option("--test-data", c.test_data, "Evaluation data (default: test split of --data)");
  app.add_option("--data-limit", c.data_limit, "Cap on CIFAR-10 records per split (0 = all)")->capture_default_str();
  app.add_option("--out", c.out, "Output root")->capture_default_str();
  app.add_option("--run-name", c.run_name, "Run directory under --out (default: the command name)");
  app.add_option("--checkpoint", c.checkpoint, "Input checkpoint");
  app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app.add_option("--batch-size", c.batch_size)->capture_default_str()->check(CLI::PositiveNumber);

  app.add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  app.add_option("--lr", c.lr, "Training learning rate")->capture_default_str();
  app.add_option("--save-every", c.save_every, "Write a checkpoint every N epochs (0 = final only)")
      ->capture_default_str();

  // Mutual exclusion is checked by prune so a resolved config can be replayed.
  app.add_option("--budget-flops", c.budget_flops, "Target MACs (0 = unset)")->capture_default_str();
  app.add_option("--accel", c.accel, "Acceleration ratio r, budget C0 / r (0 = unset)")->capture_default_str();
  app.add_option("--lambda", c.lambda, "FLOPs regularization weight")->capture_default_str();
  app.add_option("--prune-ratio", c.prune_ratio, "Fraction of gates pruned per round")->capture_default_str();
  app.add_option("--gate-iters", c.gate_iters)->capture_default_str();
  app.add_option("--finetune-iters", c.finetune_iters)->capture_default_str();
  app.add_option("--gate-lr", c.gate_lr)->capture_default_str();
  app.add_option("--weight-lr", c.weight_lr)->capture_default_str();
  app.add_option("--final-epochs", c.final_epochs, "Finetune epochs after pruning")->capture_default_str();
  app.add_option("--final-lr", c.final_lr)->capture_default_str();
  app.add_option("--baseline", c.baseline)
      ->capture_default_str()
      ->check(CLI::IsMember({"none", "uniform", "random"}));
  app.add_option("--trials", c.trials, "Random baseline trials")->capture_default_str()->check(CLI::PositiveNumber);

  app.add_option("--feature-layer", c.feature_layer, "report: dump this layer's feature maps as PGM");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Budgeted filter pruning with Dagger gates", "dagger_prune"};
  RunConfig c;
  add_options(app, c);
  app.require_subcommand(1, 1);
  const std::pair<const char*, const char*> commands[] = {
      {"train", "Train a network from scratch"},
      {"prune", "Prune a checkpoint to a FLOPs budget"},
      {"eval", "Evaluate a checkpoint on the test split"},
      {"flops", "Per-layer MAC table"},
      {"report", "Per-layer filter counts, FLOPs and optional feature maps"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  c.command = app.get_subcommands().front()->get_name();

  try {
    const fs::path dir = fs::path(c.out) / (c.run_name.empty() ? c.command : c.run_name);
    fs::create_directories(dir);
    write_text_file((dir / "config.ini").string(), "# " + c.command + "\n" + app.config_to_str(true, false));
    if (c.command == "train") return cmd_train(c, dir, out);
    if (c.command == "prune") return cmd_prune(c, dir, out);
    if (c.command == "eval") return cmd_eval(c, dir, out);
    if (c.command == "flops") return cmd_flops(c, dir, out);
    return cmd_report(c, dir, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const BudgetError& e) {
    err << "budget error: " << e.what() << "\n";
    return kExitBudget;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
}

}  // namespace dagger
