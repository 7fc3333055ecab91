#include "heba/cli_app.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "heba/data.hpp"
#include "heba/errors.hpp"
#include "heba/gradcheck.hpp"
#include "heba/harness.hpp"
#include "heba/serialize.hpp"

namespace heba::cli {

namespace {

using nlohmann::json;

constexpr const char* kExitCodeNote =
    "Exit codes: 0 ok, 2 usage error, 3 I/O error, 4 invariant violation, "
    "5 numerical failure (NaN).";

int env_threads() {
  const char* env = std::getenv("HEBA_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

struct State {
  // gen-data
  struct {
    Index classes = 8;
    Index per_class = 40;
    std::uint64_t seed = 7;
    std::string out;
    double noise = 0.05;
    double jitter = 0.25;
    double base_fraction = 0.5;
    Index shots = 16;
    Index text_len = 8;
    Index vocab_size = 64;
  } gen;

  // train (optional fields override the config file when passed)
  struct {
    std::string config;
    std::uint64_t seed = 1;
    std::string out = "runs";
    std::string data;
    std::string variant;
    std::string init_mode;
    Index epochs = 0;
    double lr = 0.0;
    Index batch_size = 0;
    double alpha_base = 0.0;
    double alpha_novel = 0.0;
    double epsilon = 0.0;
    Index negative_ratio = 0;
    CLI::Option* epochs_opt = nullptr;
    CLI::Option* lr_opt = nullptr;
    CLI::Option* batch_opt = nullptr;
    CLI::Option* alpha_base_opt = nullptr;
    CLI::Option* alpha_novel_opt = nullptr;
    CLI::Option* epsilon_opt = nullptr;
    CLI::Option* negative_ratio_opt = nullptr;
  } train;

  // eval
  struct {
    std::string ckpt;
    std::string split;
    std::string data;
    double alpha = 0.0;
    CLI::Option* alpha_opt = nullptr;
  } eval;

  // ablate
  struct {
    std::string config;
    std::vector<std::uint64_t> seeds;
    std::string out = "runs";
  } ablate;

  // sweep-alpha
  struct {
    std::string ckpt;
    std::vector<double> alphas;
  } sweep;

  // gradcheck
  struct {
    double tol = 1e-4;
    std::uint64_t seed = 20240817;
  } gradcheck;

  // audit-hm
  struct {
    std::string tables;
    double tol = 0.02;
  } audit;

  // report
  struct {
    std::string in;
  } report;
};

RunConfig train_config_with_overrides(const State& st) {
  RunConfig cfg = load_run_config(st.train.config);
  if (!st.train.data.empty()) cfg.dataset_dir = st.train.data;
  if (!st.train.variant.empty()) cfg.variant = variant_from_string(st.train.variant);
  if (!st.train.init_mode.empty()) {
    cfg.adapter.init_mode = st.train.init_mode == "zero" ? InitMode::zero : InitMode::kaiming;
  }
  if (st.train.epochs_opt && st.train.epochs_opt->count()) cfg.optim.epochs = st.train.epochs;
  if (st.train.lr_opt && st.train.lr_opt->count()) cfg.optim.lr = st.train.lr;
  if (st.train.batch_opt && st.train.batch_opt->count()) {
    cfg.optim.batch_size = st.train.batch_size;
  }
  if (st.train.alpha_base_opt && st.train.alpha_base_opt->count()) {
    cfg.adapter.alpha_base = st.train.alpha_base;
  }
  if (st.train.alpha_novel_opt && st.train.alpha_novel_opt->count()) {
    cfg.adapter.alpha_novel = st.train.alpha_novel;
  }
  if (st.train.epsilon_opt && st.train.epsilon_opt->count()) {
    cfg.loss.epsilon = st.train.epsilon;
  }
  if (st.train.negative_ratio_opt && st.train.negative_ratio_opt->count()) {
    cfg.loss.negative_ratio = st.train.negative_ratio;
  }
  return cfg;
}

void run_gen_data(const State& st) {
  DataConfig cfg;
  cfg.num_classes = st.gen.classes;
  cfg.images_per_class = st.gen.per_class;
  cfg.seed = st.gen.seed;
  cfg.noise_sigma = st.gen.noise;
  cfg.phase_jitter = st.gen.jitter;
  cfg.base_fraction = st.gen.base_fraction;
  cfg.shots = st.gen.shots;
  cfg.text_len = st.gen.text_len;
  cfg.vocab_size = st.gen.vocab_size;
  Dataset ds = generate_dataset(cfg);
  save_dataset(ds, st.gen.out);
  std::cerr << "[gen-data] wrote " << ds.num_images() << " images for " << cfg.num_classes
            << " classes to " << st.gen.out << "\n";
  std::cout << st.gen.out << "/manifest.json " << hash_hex(ds.content_hash()) << "\n";
}

void run_train(const State& st) {
  RunConfig cfg = train_config_with_overrides(st);
  TrainResult result = train_run(cfg, st.train.seed, st.train.out);
  std::cerr << "[train] " << result.steps << " steps in " << result.wall_seconds << "s\n";
  json out = {{"checkpoint", result.checkpoint_json},
              {"curves", result.curves_csv},
              {"steps", result.steps},
              {"final_loss", result.final_loss}};
  std::cout << out.dump() << "\n";
}

void run_eval(const State& st) {
  std::optional<double> alpha;
  if (st.eval.alpha_opt && st.eval.alpha_opt->count()) alpha = st.eval.alpha;
  const double acc =
      evaluate(st.eval.ckpt, split_from_string(st.eval.split), alpha, st.eval.data);
  std::cout << format_double(acc) << "\n";
}

void run_ablate(const State& st) {
  RunConfig cfg = load_run_config(st.ablate.config);
  if (!st.ablate.seeds.empty()) cfg.seeds = st.ablate.seeds;
  run_ablation_grid(cfg, st.ablate.out, env_threads());
  std::cout << st.ablate.out << "/results.csv\n" << st.ablate.out << "/results.json\n";
}

void run_sweep(const State& st) {
  LoadedModel model = load_model(st.sweep.ckpt);
  const std::vector<double>& alphas =
      st.sweep.alphas.empty() ? model.cfg.alpha_eval_sweep : st.sweep.alphas;
  const auto rows = sweep_alpha(st.sweep.ckpt, alphas);
  std::cout << "alpha_base,alpha_novel,base_acc,novel_acc\n";
  for (const auto& row : rows) {
    std::cout << format_double(model.cfg.adapter.alpha_base) << ','
              << format_double(row.alpha_novel) << ',' << format_double(row.base_acc) << ','
              << format_double(row.novel_acc) << "\n";
  }
}

void run_gradcheck(const State& st) {
  const auto reports = run_gradient_suite(st.gradcheck.tol, st.gradcheck.seed);
  bool all_pass = true;
  for (const auto& r : reports) {
    std::cout << r.op << " max_rel_err=" << format_double(r.max_rel_err) << " coords="
              << r.coords_checked << " trials=" << r.trials << (r.pass ? " PASS" : " FAIL")
              << "\n";
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) {
    throw InvariantError("gradient check failed at tolerance " +
                         format_double(st.gradcheck.tol));
  }
}

void run_audit(const State& st) {
  const auto rows = audit_hm_file(st.audit.tables, st.audit.tol);
  std::size_t bad = 0;
  for (const auto& row : rows) {
    if (!row.ok) {
      ++bad;
      std::cout << "MISMATCH " << row.table << ' ' << row.method << ' ' << row.dataset
                << " printed=" << format_double(row.hm)
                << " recomputed=" << format_double(row.recomputed) << "\n";
    }
  }
  std::cout << "audited " << rows.size() << " HM cells, " << bad << " mismatches beyond +/-"
            << format_double(st.audit.tol) << "\n";
  if (bad > 0) throw InvariantError("HM audit found inconsistent cells");
}

void run_report(const State& st) {
  const auto bytes = read_file_bytes(st.report.in + "/results.json");
  json results;
  try {
    results = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw IoError("cannot parse " + st.report.in + "/results.json: " + e.what());
  }
  std::cout << "ablation results (" << st.report.in << ")\n";
  std::cout << "variant          seed   base%    novel%   hm%\n";
  for (const auto& cell : results.at("cells")) {
    std::printf("%-16s %-6llu %-8.2f %-8.2f %-8.2f\n",
                cell.at("variant").get<std::string>().c_str(),
                static_cast<unsigned long long>(cell.at("seed").get<std::uint64_t>()),
                cell.at("base_acc").get<double>(), cell.at("novel_acc").get<double>(),
                cell.at("hm").get<double>());
  }
  std::cout << "aggregates (mean +/- std over seeds)\n";
  for (const auto& [variant, agg] : results.at("aggregates").items()) {
    std::printf("%-16s base %.2f+/-%.2f novel %.2f+/-%.2f hm %.2f+/-%.2f\n", variant.c_str(),
                agg.at("base_mean").get<double>(), agg.at("base_std").get<double>(),
                agg.at("novel_mean").get<double>(), agg.at("novel_std").get<double>(),
                agg.at("hm_mean").get<double>(), agg.at("hm_std").get<double>());
  }
}

}  // namespace

std::unique_ptr<CLI::App> build_app() {
  auto state = std::make_shared<State>();
  auto app = std::make_unique<CLI::App>("heba: bottleneck-adapter few-shot workbench");
  app->require_subcommand(1);
  app->footer(kExitCodeNote);

  auto* gen = app->add_subcommand("gen-data", "Generate a synthetic texture dataset");
  gen->add_option("--classes", state->gen.classes, "Number of texture classes")
      ->capture_default_str();
  gen->add_option("--per-class", state->gen.per_class, "Images per class")
      ->capture_default_str();
  gen->add_option("--seed", state->gen.seed, "Generation seed")->capture_default_str();
  gen->add_option("--out", state->gen.out, "Output dataset directory")->required();
  gen->add_option("--noise", state->gen.noise, "Pixel noise sigma")->capture_default_str();
  gen->add_option("--jitter", state->gen.jitter, "Phase jitter in radians")
      ->capture_default_str();
  gen->add_option("--base-fraction", state->gen.base_fraction, "Fraction of classes in base")
      ->capture_default_str();
  gen->add_option("--shots", state->gen.shots, "Training shots per base class")
      ->capture_default_str();
  gen->add_option("--text-len", state->gen.text_len, "Prompt token count per class")
      ->capture_default_str();
  gen->add_option("--vocab-size", state->gen.vocab_size, "Prompt vocabulary size")
      ->capture_default_str();
  gen->callback([state]() { run_gen_data(*state); });

  auto* train = app->add_subcommand("train", "Train adapters on the base split");
  train->add_option("--config", state->train.config, "Run config JSON file")->required();
  train->add_option("--seed", state->train.seed, "Run seed")->capture_default_str();
  train->add_option("--out", state->train.out, "Output directory")->capture_default_str();
  train->add_option("--data", state->train.data, "Dataset directory (overrides config)");
  train->add_option("--variant", state->train.variant, "Ablation variant (overrides config)")
      ->check(CLI::IsMember({"full", "zero_init", "no_spatial_1d", "no_dwconv"}));
  train->add_option("--init-mode", state->train.init_mode, "Adapter init mode (overrides config)")
      ->check(CLI::IsMember({"kaiming", "zero"}));
  state->train.epochs_opt =
      train->add_option("--epochs", state->train.epochs, "Epochs (overrides config)");
  state->train.lr_opt = train->add_option("--lr", state->train.lr, "Learning rate (overrides)");
  state->train.batch_opt =
      train->add_option("--batch-size", state->train.batch_size, "Batch size (overrides)");
  state->train.alpha_base_opt =
      train->add_option("--alpha-base", state->train.alpha_base, "Residual scale (overrides)");
  state->train.alpha_novel_opt = train->add_option("--alpha-novel", state->train.alpha_novel,
                                                   "Novel-eval residual scale (overrides)");
  state->train.epsilon_opt =
      train->add_option("--epsilon", state->train.epsilon, "Label smoothing (overrides)");
  state->train.negative_ratio_opt = train->add_option(
      "--negative-ratio", state->train.negative_ratio, "Negative sampling ratio (overrides)");
  train->callback([state]() { run_train(*state); });

  auto* eval = app->add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--ckpt", state->eval.ckpt, "Checkpoint manifest (.json)")->required();
  eval->add_option("--split", state->eval.split, "Split to evaluate")
      ->required()
      ->check(CLI::IsMember({"base", "novel"}));
  state->eval.alpha_opt =
      eval->add_option("--alpha", state->eval.alpha, "Residual scale override");
  eval->add_option("--data", state->eval.data, "Dataset directory override");
  eval->callback([state]() { run_eval(*state); });

  auto* ablate = app->add_subcommand("ablate", "Run the 4-variant ablation grid");
  ablate->add_option("--config", state->ablate.config, "Run config JSON file")->required();
  ablate->add_option("--seeds", state->ablate.seeds, "Run seeds, e.g. 1,2,3")->delimiter(',');
  ablate->add_option("--out", state->ablate.out, "Output directory")->capture_default_str();
  ablate->callback([state]() { run_ablate(*state); });

  auto* sweep = app->add_subcommand("sweep-alpha", "Inference-time residual scale sweep");
  sweep->add_option("--ckpt", state->sweep.ckpt, "Checkpoint manifest (.json)")->required();
  sweep
      ->add_option("--alphas", state->sweep.alphas,
                   "Scales, e.g. 0.075,0.05,0.025 (default: the config's sweep list)")
      ->delimiter(',');
  sweep->callback([state]() { run_sweep(*state); });

  auto* gradcheck = app->add_subcommand(
      "gradcheck", "Check every analytic gradient against central finite differences");
  gradcheck->add_option("--tol", state->gradcheck.tol, "Relative error tolerance")
      ->capture_default_str();
  gradcheck->add_option("--seed", state->gradcheck.seed, "Random input seed")
      ->capture_default_str();
  gradcheck->callback([state]() { run_gradcheck(*state); });

  auto* audit = app->add_subcommand("audit-hm", "Recompute HM cells of a results transcription");
  audit->add_option("--tables", state->audit.tables, "CSV with base/novel/hm columns")
      ->required();
  audit->add_option("--tol", state->audit.tol, "Allowed rounding deviation")
      ->capture_default_str();
  audit->callback([state]() { run_audit(*state); });

  auto* report = app->add_subcommand("report", "Summarize ablation results");
  report->add_option("--in", state->report.in, "Directory holding results.json")->required();
  report->callback([state]() { run_report(*state); });

  return app;
}

int run(int argc, const char* const* argv) {
  auto app = build_app();
  try {
    app->parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app->exit(e);  // prints help, exit 0
  } catch (const CLI::CallForAllHelp& e) {
    return app->exit(e);
  } catch (const CLI::ParseError& e) {
    app->exit(e);
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error (io): " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error (numeric): " << e.what() << "\n";
    return 5;
  } catch (const Error& e) {
    std::cerr << "error (invariant): " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}

}  // namespace heba::cli
