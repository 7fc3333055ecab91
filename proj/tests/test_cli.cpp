#include <doctest.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "heba/cli_app.hpp"
#include "heba/harness.hpp"
#include "test_util.hpp"

using namespace heba;

#ifndef HEBA_CLI_PATH
#define HEBA_CLI_PATH "heba"
#endif
#ifndef HEBA_TABLES_CSV
#define HEBA_TABLES_CSV "data/tables_paper.csv"
#endif

namespace {

int run_cli_process(const std::string& args, const std::string& stdout_file = "") {
  std::string cmd = std::string(HEBA_CLI_PATH) + " " + args + " 2>/dev/null";
  if (!stdout_file.empty()) cmd += " > " + stdout_file;
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cli reflection: every registered flag is documented in --help") {
  auto app = heba::cli::build_app();
  const std::vector<CLI::App*> apps = [&] {
    std::vector<CLI::App*> all{app.get()};
    for (auto* sub : app->get_subcommands({})) all.push_back(sub);
    return all;
  }();
  CHECK(app->get_subcommands({}).size() == 8);
  for (CLI::App* node : apps) {
    const std::string help = node->help();
    for (const CLI::Option* opt : node->get_options()) {
      INFO(node->get_name(), " option ", opt->get_name());
      CHECK_FALSE(opt->get_group().empty());  // empty group would hide it from help
      CHECK(help.find(opt->get_name()) != std::string::npos);
      CHECK_FALSE(opt->get_description().empty());
    }
  }
  // top-level help names every subcommand
  const std::string top = app->help();
  for (const char* name : {"gen-data", "train", "eval", "ablate", "sweep-alpha", "gradcheck",
                           "audit-hm", "report"}) {
    CHECK(top.find(name) != std::string::npos);
  }
}

TEST_CASE("cli: usage and io error exit codes") {
  CHECK(run_cli_process("--help") == 0);
  CHECK(run_cli_process("definitely-not-a-command") == 2);
  CHECK(run_cli_process("eval --split base") == 2);           // missing required --ckpt
  CHECK(run_cli_process("gen-data --bogus-flag 1 --out x") == 2);
  CHECK(run_cli_process("audit-hm --tables /nonexistent.csv") == 3);
  CHECK(run_cli_process("eval --ckpt /nonexistent.json --split base") == 3);
}

TEST_CASE("cli: audit-hm passes on the bundled transcription") {
  const std::string dir = testutil::temp_dir("cli_audit");
  CHECK(run_cli_process(std::string("audit-hm --tables ") + HEBA_TABLES_CSV,
                        dir + "/out.txt") == 0);
  const std::string out = read_text(dir + "/out.txt");
  CHECK(out.find("0 mismatches") != std::string::npos);
}

TEST_CASE("cli: gen-data is idempotent byte for byte") {
  const std::string dir = testutil::temp_dir("cli_gendata");
  const std::string args = "gen-data --classes 8 --per-class 6 --shots 2 --seed 3 --out ";
  CHECK(run_cli_process(args + dir + "/d1") == 0);
  CHECK(run_cli_process(args + dir + "/d2") == 0);
  for (const char* f : {"/images.bin", "/labels.bin", "/manifest.json"}) {
    CHECK(testutil::same_file_bytes(dir + "/d1" + f, dir + "/d2" + f));
  }
}

TEST_CASE("cli: train/eval/sweep round trip with flag overrides") {
  const std::string dir = testutil::temp_dir("cli_train");
  RunConfig cfg = testutil::small_run_config(dir);
  {
    std::ofstream out(dir + "/config.json");
    out << run_config_to_json(cfg).dump(2) << "\n";
  }

  const std::string train_args = "train --config " + dir + "/config.json --seed 1 --out " + dir +
                                 "/run --epochs 1";
  CHECK(run_cli_process(train_args, dir + "/train1.json") == 0);
  CHECK(run_cli_process(train_args, dir + "/train2.json") == 0);
  CHECK(read_text(dir + "/train1.json") == read_text(dir + "/train2.json"));

  const auto result = nlohmann::json::parse(read_text(dir + "/train1.json"));
  const std::string ckpt = result.at("checkpoint").get<std::string>();
  CHECK(result.at("steps").get<int>() == 1);  // --epochs override won

  CHECK(run_cli_process("eval --ckpt " + ckpt + " --split base", dir + "/acc.txt") == 0);
  const double acc = std::stod(read_text(dir + "/acc.txt"));
  CHECK(acc >= 0.0);
  CHECK(acc <= 100.0);

  CHECK(run_cli_process("eval --ckpt " + ckpt + " --split base --alpha 0", dir + "/a0.txt") == 0);
  CHECK(run_cli_process("eval --ckpt " + ckpt + " --split novel --alpha 0", dir + "/a1.txt") == 0);

  // at alpha 0, any checkpoint reproduces the untrained (epochs 0) baseline
  CHECK(run_cli_process("train --config " + dir + "/config.json --seed 1 --out " + dir +
                            "/run0 --epochs 0",
                        dir + "/train0.json") == 0);
  const auto untrained = nlohmann::json::parse(read_text(dir + "/train0.json"));
  const std::string ckpt0 = untrained.at("checkpoint").get<std::string>();
  CHECK(untrained.at("steps").get<int>() == 0);
  CHECK(run_cli_process("eval --ckpt " + ckpt0 + " --split base --alpha 0", dir + "/b0.txt") ==
        0);
  CHECK(read_text(dir + "/a0.txt") == read_text(dir + "/b0.txt"));

  CHECK(run_cli_process("sweep-alpha --ckpt " + ckpt + " --alphas 0.05,0.025",
                        dir + "/sweep.csv") == 0);
  const std::string sweep = read_text(dir + "/sweep.csv");
  CHECK(sweep.find("alpha_base,alpha_novel,base_acc,novel_acc") == 0);

  // no --alphas: falls back to the config's four-point sweep
  CHECK(run_cli_process("sweep-alpha --ckpt " + ckpt, dir + "/sweep_default.csv") == 0);
  Index rows = 0;
  std::istringstream sweep_default(read_text(dir + "/sweep_default.csv"));
  std::string line;
  while (std::getline(sweep_default, line)) ++rows;
  CHECK(rows == 5);  // header + 4 alphas
}

TEST_CASE("cli: ablate results are identical under HEBA_THREADS parallelism") {
  const std::string dir = testutil::temp_dir("cli_threads");
  RunConfig cfg = testutil::small_run_config(dir);
  cfg.optim.epochs = 1;
  {
    std::ofstream out(dir + "/config.json");
    out << run_config_to_json(cfg).dump(2) << "\n";
  }
  const std::string base_args = "ablate --config " + dir + "/config.json --seeds 1,2 --out ";
  CHECK(run_cli_process(base_args + dir + "/serial") == 0);
  const int status = std::system(("HEBA_THREADS=4 " + std::string(HEBA_CLI_PATH) + " " +
                                  base_args + dir + "/parallel >/dev/null 2>&1")
                                     .c_str());
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(testutil::same_file_bytes(dir + "/serial/results.csv", dir + "/parallel/results.csv"));
  CHECK(testutil::same_file_bytes(dir + "/serial/results.json", dir + "/parallel/results.json"));
}

TEST_CASE("cli: ablate + report produce the results files") {
  const std::string dir = testutil::temp_dir("cli_ablate");
  RunConfig cfg = testutil::small_run_config(dir);
  cfg.optim.epochs = 1;
  {
    std::ofstream out(dir + "/config.json");
    out << run_config_to_json(cfg).dump(2) << "\n";
  }
  CHECK(run_cli_process("ablate --config " + dir + "/config.json --seeds 1 --out " + dir +
                        "/grid") == 0);
  CHECK(std::filesystem::exists(dir + "/grid/results.csv"));
  CHECK(std::filesystem::exists(dir + "/grid/results.json"));
  CHECK(run_cli_process("report --in " + dir + "/grid", dir + "/report.txt") == 0);
  const std::string report = read_text(dir + "/report.txt");
  CHECK(report.find("no_spatial_1d") != std::string::npos);
  CHECK(report.find("aggregates") != std::string::npos);
}
