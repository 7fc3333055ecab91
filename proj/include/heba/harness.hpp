#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "heba/adapters.hpp"
#include "heba/backbone.hpp"
#include "heba/data.hpp"
#include "heba/optim.hpp"
#include "heba/tensor.hpp"

namespace heba {

enum class Split { base, novel };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct RunConfig {
  BackboneConfig backbone;
  std::uint64_t backbone_seed = 50;  // frozen weights are shared across run seeds
  AdapterConfig adapter;
  LossConfig loss;
  OptimConfig optim;
  std::string dataset_dir;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  Variant variant = Variant::full;
  std::vector<double> alpha_eval_sweep{0.075, 0.05, 0.025, 0.0125};

  void validate() const;
  std::uint64_t config_hash() const;
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);  // missing keys keep defaults
RunConfig load_run_config(const std::string& path);

// 2ab/(a+b) of two accuracy percentages; both must be positive.
double harmonic_mean(double base_pct, double novel_pct);

struct TrainResult {
  std::string checkpoint_json;
  std::string curves_csv;
  Index steps = 0;
  double final_loss = 0.0;
  double wall_seconds = 0.0;  // logged to stderr only, never written to outputs
};

// Trains adapters on the base-class shots and writes
// checkpoint_<variant>_seed<seed>.{json,bin} plus curves/<run_id>.csv under
// out_dir. Deterministic per (config, seed): byte-identical outputs.
TrainResult train_run(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir);

// Loads a checkpoint, verifies the backbone and dataset hashes, and returns
// accuracy (percent) on the split's own class universe. alpha_override
// replaces the per-split default residual scale.
double evaluate(const std::string& ckpt_json, Split split,
                std::optional<double> alpha_override = std::nullopt,
                const std::string& dataset_dir_override = "");

struct LoadedModel {
  RunConfig cfg;
  std::uint64_t seed = 0;
  ToyBackbone backbone;
  ModelAdapters adapters;
};
LoadedModel load_model(const std::string& ckpt_json);

// Eval-mode logits for the split's test images against the split's class
// prompts; adapters may be null for the raw frozen baseline.
Tensor split_logits(const ToyBackbone& bb, const ModelAdapters* adapters, const Dataset& ds,
                    Split split, double alpha);
std::vector<Index> split_targets(const Dataset& ds, Split split);
std::vector<Index> split_image_indices(const Dataset& ds, Split split);

// Argmax accuracy (percent); ties resolve to the lowest class index.
double accuracy_from_logits(const Tensor& logits, const std::vector<Index>& targets);
double evaluate_model(const ToyBackbone& bb, const ModelAdapters* adapters, const Dataset& ds,
                      Split split, double alpha);

struct AblationCell {
  Variant variant;
  std::uint64_t seed = 0;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  double hm = 0.0;
};

struct AblationReport {
  RunConfig cfg;
  std::vector<AblationCell> cells;
};

// All four ablation variants x cfg.seeds. Writes results.csv, results.json
// and per-run curves under out_dir; a failing sub-run aborts the grid after
// flushing the cells finished so far. max_threads > 1 runs independent
// (variant, seed) jobs concurrently.
AblationReport run_ablation_grid(const RunConfig& cfg, const std::string& out_dir,
                                 int max_threads = 1);
void write_ablation_outputs(const AblationReport& report, const std::string& out_dir);

struct AlphaSweepRow {
  double alpha_novel = 0.0;
  double base_acc = 0.0;   // at the trained alpha_base
  double novel_acc = 0.0;  // at alpha_novel
};
std::vector<AlphaSweepRow> sweep_alpha(const std::string& ckpt_json,
                                       const std::vector<double>& alphas);

struct HmAuditRow {
  std::string table;
  std::string method;
  std::string dataset;
  double base = 0.0;
  double novel = 0.0;
  double hm = 0.0;
  double recomputed = 0.0;
  bool ok = false;
};
// Recomputes every HM cell of a base/novel/hm transcription CSV
// (columns: table,method,dataset,base,novel,hm).
std::vector<HmAuditRow> audit_hm_file(const std::string& csv_path, double tol = 0.02);

// %.17g formatting; round-trips doubles exactly so repeated runs emit
// byte-identical text outputs.
std::string format_double(double v);

}  // namespace heba
