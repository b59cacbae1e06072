// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "dagger/checkpoint.hpp"
#include "dagger/flops.hpp"
#include "dagger/kvconfig.hpp"
#include "oracles.hpp"

namespace dagger {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::string kChain = std::string(DAGGER_CONFIG_DIR) + "/chain2.net";
const std::string kEasy = "synthetic:per_class=40,noise=0.3";

struct CliRun {
  int code = 0;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root = fs::temp_directory_path() / ("dagger_cli_" + std::string(info->name()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }

  CliRun run(std::vector<std::string> args) {
    args.insert(args.begin(), "dagger_prune");
    args.push_back("--out");
    args.push_back(root.string());
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
  }

  json read_json(const fs::path& p) { return json::parse(read_text_file(p.string())); }

  std::string trained(int epochs = 3, const std::string& name = "pre") {
    const CliRun r = run({"train", "--net", kChain, "--data", kEasy, "--epochs", std::to_string(epochs), "--run-name",
                       name});
    EXPECT_EQ(r.code, 0) << r.err;
    return (root / name / "model.dgpr").string();
  }

  fs::path root;
};

TEST_F(Cli, TrainZeroEpochsSavesInitialWeights) {
  const std::string ckpt = trained(0);
  const NetworkGraph fresh = build_graph(load_network_config(kChain), 0);
  const NetworkGraph rounded = checkpoint_graph(deserialize_checkpoint(serialize_checkpoint(make_checkpoint(fresh))));
  EXPECT_EQ(checkpoint_graph(load_checkpoint(ckpt)).weights_checksum(), rounded.weights_checksum());
}

TEST_F(Cli, TrainIsDeterministic) {
  trained(2, "a");
  trained(2, "b");
  EXPECT_EQ(read_json(root / "a" / "metrics.json")["final_loss"], read_json(root / "b" / "metrics.json")["final_loss"]);
  EXPECT_EQ(read_text_file((root / "a" / "model.dgpr").string()), read_text_file((root / "b" / "model.dgpr").string()));
}

TEST_F(Cli, TrainLearnsSeparableData) {
  const CliRun r = run({"train", "--net", kChain, "--data", "synthetic:noise=0.3", "--epochs", "5", "--batch-size",
                        "16", "--save-every", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GT(read_json(root / "train" / "metrics.json")["train"]["top1"].get<double>(), 0.9);
  EXPECT_TRUE(fs::exists(root / "train" / "epoch_2.dgpr"));
  EXPECT_TRUE(fs::exists(root / "train" / "epoch_4.dgpr"));
  EXPECT_FALSE(fs::exists(root / "train" / "epoch_5.dgpr"));
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 6);
}

TEST_F(Cli, PruneMeetsAccelerationBudget) {
  const std::string ckpt = trained();
  const CliRun r = run({"prune", "--checkpoint", ckpt, "--data", kEasy, "--accel", "2", "--prune-ratio", "0.1",
                     "--gate-iters", "10", "--finetune-iters", "5", "--final-epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path dir = root / "prune";
  for (const char* f : {"events.csv", "layers.csv", "summary.json", "flops.csv", "pruned.dgpr", "config.ini"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const json s = read_json(dir / "summary.json");
  EXPECT_LE(s["final_flops"].get<double>(), 11682.0 / 2.0);
  EXPECT_GE(s["rounds"].get<int>(), 1);
  const NetworkGraph pruned = checkpoint_graph(load_checkpoint((dir / "pruned.dgpr").string()));
  EXPECT_EQ(total_flops_exact(pruned), s["final_flops"].get<Macs>());
}

TEST_F(Cli, BudgetAtC0PassesThrough) {
  const std::string ckpt = trained();
  const CliRun r = run({"prune", "--checkpoint", ckpt, "--data", kEasy, "--budget-flops", "11682"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = read_json(root / "prune" / "summary.json");
  EXPECT_EQ(s["rounds"], 0);
  EXPECT_EQ(s["final_flops"], 11682);
  EXPECT_EQ(read_text_file((root / "prune" / "events.csv").string()),
            "round,pruned_count,flops_before,flops_after,task_loss,gate_loss\n");
}

TEST_F(Cli, Baselines) {
  const std::string ckpt = trained();
  CliRun r = run({"prune", "--checkpoint", ckpt, "--data", kEasy, "--accel", "2", "--baseline", "uniform"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(root / "prune" / "summary.json")["metrics"]["method"], "uniform");
  EXPECT_TRUE(fs::exists(root / "prune" / "pruned.dgpr"));
  r = run({"prune", "--checkpoint", ckpt, "--data", kEasy, "--accel", "2", "--baseline", "random", "--trials", "3",
           "--run-name", "rand"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = read_json(root / "rand" / "summary.json");
  EXPECT_EQ(s["trials"].size(), 3u);
  for (const char* t : {"trial_00", "trial_01", "trial_02"}) {
    EXPECT_TRUE(fs::exists(root / "rand" / t / "pruned.dgpr")) << t;
    EXPECT_LE(read_json(root / "rand" / t / "summary.json")["final_flops"].get<double>(), 11682.0 / 2.0);
  }
}

TEST_F(Cli, EvalMemorizedSetIsPerfect) {
  const std::string data = "synthetic:per_class=20,noise=0.01";
  ASSERT_EQ(run({"train", "--net", kChain, "--data", data, "--epochs", "20", "--lr", "0.1"}).code, 0);
  const CliRun r = run({"eval", "--checkpoint", (root / "train" / "model.dgpr").string(), "--data", data});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(root / "eval" / "eval.json")["top1"], 1.0);
}

TEST_F(Cli, EvalRandomWeightsNearChance) {
  const fs::path net = root / "ten.net";
  std::ofstream(net) << read_text_file(kChain).replace(read_text_file(kChain).rfind("filters = 3"), 11, "filters = 10");
  ASSERT_EQ(run({"train", "--net", net.string(), "--epochs", "0", "--seed", "5"}).code, 0);
  const std::string ckpt = (root / "train" / "model.dgpr").string();
  const CliRun r = run({"eval", "--checkpoint", ckpt, "--data", "synthetic:per_class=100"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json e = read_json(root / "eval" / "eval.json");
  EXPECT_EQ(e["samples"], 1000);
  EXPECT_NEAR(e["top1"].get<double>(), 0.1, 0.05);
  EXPECT_TRUE(e.contains("top5"));
  ASSERT_EQ(run({"eval", "--checkpoint", ckpt, "--data", "synthetic:per_class=100", "--run-name", "again"}).code, 0);
  EXPECT_EQ(read_json(root / "again" / "eval.json")["top1"], e["top1"]);
  EXPECT_EQ(read_json(root / "again" / "eval.json")["loss"], e["loss"]);
}

TEST_F(Cli, FlopsTable) {
  CliRun r = run({"flops", "--net", kChain});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("total,,,,11682,11682\n"), std::string::npos);

  const std::string ckpt = trained(1);
  ASSERT_EQ(run({"prune", "--checkpoint", ckpt, "--data", kEasy, "--accel", "3", "--prune-ratio", "0.1",
                 "--gate-iters", "5", "--finetune-iters", "2"})
                .code,
            0);
  const std::string pruned = (root / "prune" / "pruned.dgpr").string();
  r = run({"flops", "--checkpoint", pruned, "--run-name", "pf"});
  ASSERT_EQ(r.code, 0) << r.err;
  const NetworkGraph g = checkpoint_graph(load_checkpoint(pruned));
  const Macs oracle = testing::enumerate_macs(g, g.gate_values());
  std::istringstream csv(read_text_file((root / "pf" / "flops.csv").string()));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::istringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 6u);
    EXPECT_EQ(std::stod(cells[4]), std::stod(cells[5])) << line;
    if (cells[0] == "total") EXPECT_EQ(std::stoull(cells[4]), oracle);
  }
}

TEST_F(Cli, ReportWritesCountsAndFeatureMaps) {
  const CliRun r = run({"report", "--net", kChain, "--feature-layer", "conv1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(root / "report" / "summary.json")["flops"], 11682);
  EXPECT_TRUE(fs::exists(root / "report" / "layers.csv"));
  int maps = 0;
  for (const auto& e : fs::directory_iterator(root / "report" / "feature_maps")) maps += e.path().extension() == ".pgm";
  EXPECT_EQ(maps, 4);
}

TEST_F(Cli, ConfigFileFlagsWin) {
  const fs::path cfg = root / "run.ini";
  std::ofstream(cfg) << "# experiment\nnet = " << kChain << "\nepochs = 1\nlr = 0.2\n; comment\nseed = 9\n";
  CliRun r = run({"train", "--config", cfg.string(), "--epochs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string resolved = read_text_file((root / "train" / "config.ini").string());
  EXPECT_NE(resolved.find("epochs=2"), std::string::npos) << resolved;
  EXPECT_NE(resolved.find("lr=0.2"), std::string::npos) << resolved;
  EXPECT_NE(resolved.find("seed=9"), std::string::npos) << resolved;
  // The resolved config reproduces the run.
  r = run({"train", "--config", (root / "train" / "config.ini").string(), "--run-name", "replay"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text_file((root / "train" / "model.dgpr").string()),
            read_text_file((root / "replay" / "model.dgpr").string()));
}

TEST_F(Cli, ExitCodes) {
  const std::string ckpt = trained(0);
  EXPECT_EQ(run({}).code, kExitConfig);
  EXPECT_EQ(run({"train", "--bogus"}).code, kExitConfig);
  EXPECT_EQ(run({"prune", "--checkpoint", ckpt, "--accel", "2", "--budget-flops", "100"}).code, kExitConfig);
  EXPECT_EQ(run({"prune", "--checkpoint", ckpt}).code, kExitConfig);
  EXPECT_EQ(run({"prune", "--checkpoint", ckpt, "--accel", "2", "--baseline", "best"}).code, kExitConfig);
  EXPECT_EQ(run({"prune", "--checkpoint", ckpt, "--accel", "0.5"}).code, kExitConfig);
  EXPECT_EQ(run({"train", "--net", kChain, "--data", "imagenet:/x"}).code, kExitConfig);
  EXPECT_EQ(run({"train"}).code, kExitConfig);
  EXPECT_EQ(run({"eval", "--checkpoint", (root / "missing.dgpr").string()}).code, kExitData);
  EXPECT_EQ(run({"eval", "--checkpoint", ckpt, "--data", "idx:/nope,/nope"}).code, kExitData);
  EXPECT_EQ(run({"eval", "--checkpoint", ckpt, "--data", "synthetic:shape=3x5x5"}).code, kExitData);
  const CliRun b = run({"prune", "--checkpoint", ckpt, "--budget-flops", "100"});
  EXPECT_EQ(b.code, kExitBudget);
  EXPECT_NE(b.err.find("budget"), std::string::npos);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

}  // namespace
}  // namespace dagger
