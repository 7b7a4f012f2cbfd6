#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "rfv/adversary/geometry.hpp"
#include "rfv/cli/experiment.hpp"

namespace fs = std::filesystem;
using namespace rfv;
using namespace rfv::cli;

namespace {

nlohmann::json tiny_config(const fs::path &out) {
  return nlohmann::json{
      {"dataset",
       {{"synthetic",
         {{"image_size", {32, 32, 3}},
          {"train_identities", 6},
          {"validation_identities", 4},
          {"test_identities", 4},
          {"samples_per_identity", 5},
          {"seed", 3}}}}},
      {"generator", {{"kind", "toy"}, {"options", {{"background_noise", 0.3}}}}},
      {"train",
       {{"batch_size", 8},
        {"total_steps", 4},
        {"validation_interval", 2},
        {"validation_pairs", 16},
        {"conv_blocks", 2},
        {"embedding_dim", 8}}},
      {"attacks", nlohmann::json::array()},
      {"eval",
       {{"tta", {"none"}}, {"targets", 2}, {"intruders_per_target", 3}, {"patch_intruders", 4}, {"min_target_samples", 5}}},
      {"output_dir", out.string()}};
}

fs::path fresh(const std::string &name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path &dir, const nlohmann::json &j, const std::string &name = "config.json") {
  const auto p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "rfv");
  std::vector<const char *> argv;
  for (const auto &a : args)
    argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string &s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

} // namespace

TEST_CASE("config errors exit with code 2") {
  const auto dir = fresh("rfv_cli_errors");
  auto j = tiny_config(dir / "run");
  j["train"]["learning_rat"] = 0.1;
  CHECK(invoke({"train", "--config", write_config(dir, j).string()}) == kExitConfig);
  j = tiny_config(dir / "run");
  j["extra"] = 1;
  CHECK(invoke({"train", "--config", write_config(dir, j).string()}) == kExitConfig);
  j = tiny_config(dir / "run");
  j["attacks"] = {"lasers"};
  CHECK(invoke({"attack", "--config", write_config(dir, j).string()}) == kExitConfig);
  CHECK(invoke({"train", "--config", (dir / "missing.json").string()}) == kExitConfig);
  CHECK(invoke({"train"}) == kExitConfig);
  CHECK(invoke({"--help"}) == kExitOk);
  CHECK(invoke({"train", "--config", write_config(dir, tiny_config(dir / "run")).string(), "--regime", "strong"}) ==
        kExitConfig);
}

TEST_CASE("config round trip") {
  const auto dir = fresh("rfv_cli_roundtrip");
  const auto cfg = experiment_from_json(tiny_config(dir / "run"));
  const auto again = experiment_from_json(to_json(cfg));
  CHECK(to_json(again) == to_json(cfg));
  CHECK(cfg.train.total_steps == 4);
  CHECK(cfg.dataset.synthetic->factors.image.height == 32);
}

TEST_CASE("shipped profiles load") {
  for (const char *name : {"paper_defaults.json", "toy.json"}) {
    const fs::path p = fs::path(RFV_SOURCE_DIR) / "configs" / name;
    REQUIRE(fs::exists(p));
    CHECK_NOTHROW(load_experiment(p));
  }
  const auto defaults = load_experiment(fs::path(RFV_SOURCE_DIR) / "configs" / "paper_defaults.json");
  CHECK(defaults.train.batch_size == 128);
  CHECK(defaults.train.total_steps == 20000);
  CHECK(defaults.train.loss.margin == 10.0);
  CHECK(defaults.train.attack.steps == 10);
  CHECK(defaults.train.attack.step_size == doctest::Approx(16.0 / 255.0));
  CHECK(defaults.train.mining_n == 2);
}

TEST_CASE("train, attack, evaluate and plot") {
  const auto dir = fresh("rfv_cli_pipeline");
  const auto run_dir = dir / "run";
  const auto config = write_config(dir, tiny_config(run_dir)).string();

  REQUIRE(invoke({"--deterministic", "train", "--config", config, "--regime", "proposed"}) == kExitOk);
  for (const char *f : {"config.json", "seeds.json", "manifest.json", "runlog.csv", "summary.json"})
    CHECK(fs::exists(run_dir / f));
  CHECK(fs::is_symlink(run_dir / "best.json"));
  const auto log1 = slurp(run_dir / "runlog.csv");

  // the snapshot reproduces the run
  REQUIRE(invoke({"--deterministic", "train", "--config", (run_dir / "config.json").string(), "--out",
                  (dir / "rerun").string()}) == kExitOk);
  CHECK(slurp(dir / "rerun" / "runlog.csv") == log1);

  SUBCASE("clean-only evaluation") {
    REQUIRE(invoke({"evaluate", "--config", config}) == kExitOk);
    const auto csv = slurp(run_dir / "metrics.csv");
    CHECK(count_lines(csv) == 2);
    CHECK(csv.rfind("attack,tta,au_roc,au_pr,detection_rate\n", 0) == 0);
    REQUIRE(invoke({"evaluate", "--config", config, "--checkpoint", (run_dir / "best.json").string(), "--out",
                    (dir / "again").string()}) == kExitOk);
    CHECK(slurp(dir / "again" / "metrics.csv") == csv);
  }
  SUBCASE("empty attack list") {
    REQUIRE(invoke({"attack", "--config", config}) == kExitOk);
    const auto index = nlohmann::json::parse(slurp(run_dir / "attacks" / "index.json"));
    CHECK(index.empty());
  }
  SUBCASE("square patch reports") {
    auto j = tiny_config(run_dir);
    j["attacks"] = nlohmann::json::array(
        {{{"descriptor", "square_patch"}, {"options", {{"steps", 3}, {"probe_steps", 2}, {"restarts", 1}}}},
         {{"descriptor", "random_noise"}, {"options", {{"patterns", 4}}}}});
    const auto cfg2 = write_config(dir, j, "attack.json").string();
    REQUIRE(invoke({"--jobs", "2", "attack", "--config", cfg2}) == kExitOk);
    const auto index = nlohmann::json::parse(slurp(run_dir / "attacks" / "index.json"));
    REQUIRE(index.size() == 2);
    const auto report = nlohmann::json::parse(slurp(run_dir / "attacks" / "square_patch.json"));
    CHECK(report.at("outcomes").size() == 2 * 3);
    const auto g = adv::MaskGeometry::scaled_for(ImageShape{32, 32, 3});
    const auto offsets = adv::grid_offsets(32, g.square_size, g.square_stride);
    for (const auto &o : report.at("outcomes")) {
      const auto rect = o.at("mask").at("rect");
      CHECK(std::find(offsets.begin(), offsets.end(), rect[0].get<int>()) != offsets.end());
      CHECK(std::find(offsets.begin(), offsets.end(), rect[1].get<int>()) != offsets.end());
      CHECK(rect[2] == g.square_size);
    }
    CHECK(fs::exists(run_dir / "attacks" / "square_patch_locations.csv"));

    REQUIRE(invoke({"evaluate", "--config", cfg2}) == kExitOk);
    const auto csv = slurp(run_dir / "metrics.csv");
    CHECK(count_lines(csv) == 4);
    REQUIRE(invoke({"plot", "--config", cfg2}) == kExitOk);
    CHECK(fs::exists(run_dir / "plots" / "runlog.svg"));
    CHECK(fs::exists(run_dir / "plots" / "square_patch" / "locations.svg"));
    CHECK(fs::exists(run_dir / "plots" / "random_noise_grid.png"));
  }
  SUBCASE("missing checkpoint") {
    CHECK(invoke({"attack", "--config", config, "--checkpoint", (dir / "nope.json").string()}) == kExitConfig);
    CHECK(invoke({"evaluate", "--config", config, "--checkpoint", (dir / "nope.json").string()}) == kExitConfig);
  }
}

TEST_CASE("weak AT run logs the divergence marker") {
  const auto dir = fresh("rfv_cli_weak");
  const auto config = write_config(dir, tiny_config(dir / "run")).string();
  REQUIRE(invoke({"train", "--config", config, "--regime", "weak_at"}) == kExitOk);
  const auto header = slurp(dir / "run" / "runlog.csv").substr(0, slurp(dir / "run" / "runlog.csv").find('\n'));
  CHECK(header.find("diverged") != std::string::npos);
}

TEST_CASE("training abort exits with code 3") {
  const auto dir = fresh("rfv_cli_abort");
  auto j = tiny_config(dir / "run");
  j["train"]["total_steps"] = 50;
  j["train"]["optimizer"] = {{"learning_rate", 1e30}};
  CHECK(invoke({"train", "--config", write_config(dir, j).string()}) == kExitAborted);
}

TEST_CASE("dataset export") {
  const auto dir = fresh("rfv_cli_dataset");
  const auto config = write_config(dir, tiny_config(dir / "run")).string();
  REQUIRE(invoke({"dataset-gen", "--config", config, "--out", (dir / "faces").string()}) == kExitOk);
  CHECK(fs::exists(dir / "faces" / "manifest.json"));
  std::size_t pngs = 0;
  for (const auto &e : fs::recursive_directory_iterator(dir / "faces"))
    if (e.path().extension() == ".png")
      ++pngs;
  CHECK(pngs == 14 * 5);

  // the exported folder ingests back with the same identity count
  auto j = tiny_config(dir / "run2");
  j["dataset"] = {{"ingest", {{"path", (dir / "faces").string()}, {"image_size", {32, 32, 3}}}}};
  const auto cfg = experiment_from_json(j);
  CHECK(build_dataset(cfg).identity_count() == 14);
}
