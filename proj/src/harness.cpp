#include "heba/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "heba/errors.hpp"
#include "heba/ops.hpp"
#include "heba/rng.hpp"
#include "heba/serialize.hpp"

namespace heba {

namespace {

using nlohmann::json;

// Sub-stream tags so the init/data/scale/negative-sampling draws stay
// independent of each other under one run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kDataStream = 2;
constexpr std::uint64_t kScaleStream = 3;
constexpr std::uint64_t kNegStream = 4;

std::string run_id(Variant variant, std::uint64_t seed) {
  return to_string(variant) + "_seed" + std::to_string(seed);
}

Index position_of(const std::vector<Index>& classes, Index cls) {
  auto it = std::find(classes.begin(), classes.end(), cls);
  if (it == classes.end()) {
    throw InvariantError("class " + std::to_string(cls) + " not in split universe");
  }
  return static_cast<Index>(it - classes.begin());
}

}  // namespace

std::string to_string(Split s) { return s == Split::base ? "base" : "novel"; }

Split split_from_string(const std::string& s) {
  if (s == "base") return Split::base;
  if (s == "novel") return Split::novel;
  throw InvariantError("unknown split: " + s);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void RunConfig::validate() const {
  backbone.validate();
  adapter.validate();
  loss.validate();
  optim.validate();
  if (adapter.embed_dim != backbone.embed_dim) {
    throw InvariantError("run config: adapter embed_dim must match backbone embed_dim");
  }
  if (adapter.grid_side != backbone.patches_per_side()) {
    throw InvariantError("run config: adapter grid_side " + std::to_string(adapter.grid_side) +
                         " does not match backbone patch grid " +
                         std::to_string(backbone.patches_per_side()));
  }
  if (dataset_dir.empty()) throw InvariantError("run config: dataset_dir is required");
  if (seeds.empty()) throw InvariantError("run config: at least one seed is required");
}

json run_config_to_json(const RunConfig& cfg) {
  return json{
      {"backbone",
       {{"embed_dim", cfg.backbone.embed_dim},
        {"depth", cfg.backbone.depth},
        {"heads", cfg.backbone.heads},
        {"image_size", cfg.backbone.image_size},
        {"patch_size", cfg.backbone.patch_size},
        {"text_len", cfg.backbone.text_len},
        {"vocab_size", cfg.backbone.vocab_size},
        {"logit_temperature", cfg.backbone.logit_temperature}}},
      {"backbone_seed", cfg.backbone_seed},
      {"adapter",
       {{"embed_dim", cfg.adapter.embed_dim},
        {"reduction", cfg.adapter.reduction},
        {"kernel", cfg.adapter.kernel},
        {"alpha_base", cfg.adapter.alpha_base},
        {"alpha_novel", cfg.adapter.alpha_novel},
        {"fast_multiplier", cfg.adapter.fast_multiplier},
        {"fast_prob", cfg.adapter.fast_prob},
        {"init_mode", cfg.adapter.init_mode == InitMode::zero ? "zero" : "kaiming"},
        {"grid_side", cfg.adapter.grid_side}}},
      {"loss", {{"epsilon", cfg.loss.epsilon}, {"negative_ratio", cfg.loss.negative_ratio}}},
      {"optim",
       {{"lr", cfg.optim.lr},
        {"momentum", cfg.optim.momentum},
        {"weight_decay", cfg.optim.weight_decay},
        {"epochs", cfg.optim.epochs},
        {"batch_size", cfg.optim.batch_size}}},
      {"dataset_dir", cfg.dataset_dir},
      {"seeds", cfg.seeds},
      {"variant", to_string(cfg.variant)},
      {"alpha_eval_sweep", cfg.alpha_eval_sweep},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    cfg.backbone.embed_dim = b.value("embed_dim", cfg.backbone.embed_dim);
    cfg.backbone.depth = b.value("depth", cfg.backbone.depth);
    cfg.backbone.heads = b.value("heads", cfg.backbone.heads);
    cfg.backbone.image_size = b.value("image_size", cfg.backbone.image_size);
    cfg.backbone.patch_size = b.value("patch_size", cfg.backbone.patch_size);
    cfg.backbone.text_len = b.value("text_len", cfg.backbone.text_len);
    cfg.backbone.vocab_size = b.value("vocab_size", cfg.backbone.vocab_size);
    cfg.backbone.logit_temperature = b.value("logit_temperature", cfg.backbone.logit_temperature);
  }
  cfg.backbone_seed = j.value("backbone_seed", cfg.backbone_seed);
  if (j.contains("adapter")) {
    const auto& a = j.at("adapter");
    cfg.adapter.embed_dim = a.value("embed_dim", cfg.adapter.embed_dim);
    cfg.adapter.reduction = a.value("reduction", cfg.adapter.reduction);
    cfg.adapter.kernel = a.value("kernel", cfg.adapter.kernel);
    cfg.adapter.alpha_base = a.value("alpha_base", cfg.adapter.alpha_base);
    cfg.adapter.alpha_novel = a.value("alpha_novel", cfg.adapter.alpha_novel);
    cfg.adapter.fast_multiplier = a.value("fast_multiplier", cfg.adapter.fast_multiplier);
    cfg.adapter.fast_prob = a.value("fast_prob", cfg.adapter.fast_prob);
    if (a.contains("init_mode")) {
      const std::string mode = a.at("init_mode").get<std::string>();
      if (mode == "zero") {
        cfg.adapter.init_mode = InitMode::zero;
      } else if (mode == "kaiming") {
        cfg.adapter.init_mode = InitMode::kaiming;
      } else {
        throw InvariantError("run config: unknown init_mode " + mode);
      }
    }
    cfg.adapter.grid_side = a.value("grid_side", cfg.adapter.grid_side);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    cfg.loss.epsilon = l.value("epsilon", cfg.loss.epsilon);
    cfg.loss.negative_ratio = l.value("negative_ratio", cfg.loss.negative_ratio);
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    cfg.optim.lr = o.value("lr", cfg.optim.lr);
    cfg.optim.momentum = o.value("momentum", cfg.optim.momentum);
    cfg.optim.weight_decay = o.value("weight_decay", cfg.optim.weight_decay);
    cfg.optim.epochs = o.value("epochs", cfg.optim.epochs);
    cfg.optim.batch_size = o.value("batch_size", cfg.optim.batch_size);
  }
  cfg.dataset_dir = j.value("dataset_dir", cfg.dataset_dir);
  cfg.seeds = j.value("seeds", cfg.seeds);
  if (j.contains("variant")) cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  cfg.alpha_eval_sweep = j.value("alpha_eval_sweep", cfg.alpha_eval_sweep);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  const auto text = read_file_bytes(path);
  try {
    return run_config_from_json(json::parse(text.begin(), text.end()));
  } catch (const json::exception& e) {
    throw IoError("cannot parse run config " + path + ": " + e.what());
  }
}

std::uint64_t RunConfig::config_hash() const {
  const std::string dump = run_config_to_json(*this).dump();
  return fnv1a64(dump.data(), dump.size());
}

double harmonic_mean(double base_pct, double novel_pct) {
  if (base_pct <= 0.0 || novel_pct <= 0.0) {
    throw InvariantError("harmonic_mean: inputs must be positive, got " +
                         std::to_string(base_pct) + " and " + std::to_string(novel_pct));
  }
  return 2.0 * base_pct * novel_pct / (base_pct + novel_pct);
}

std::vector<Index> split_image_indices(const Dataset& ds, Split split) {
  const auto& classes =
      split == Split::base ? ds.split.base_classes : ds.split.novel_classes;
  std::vector<Index> indices;
  for (Index c : classes) {
    auto it = ds.split.test_indices.find(c);
    if (it == ds.split.test_indices.end() || it->second.empty()) {
      throw InvariantError("split " + to_string(split) + " has no test images for class " +
                           std::to_string(c));
    }
    indices.insert(indices.end(), it->second.begin(), it->second.end());
  }
  if (indices.empty()) throw InvariantError("empty " + to_string(split) + " split");
  return indices;
}

std::vector<Index> split_targets(const Dataset& ds, Split split) {
  const auto& classes =
      split == Split::base ? ds.split.base_classes : ds.split.novel_classes;
  std::vector<Index> targets;
  for (Index img : split_image_indices(ds, split)) {
    targets.push_back(position_of(classes, static_cast<Index>(ds.labels[img])));
  }
  return targets;
}

Tensor split_logits(const ToyBackbone& bb, const ModelAdapters* adapters, const Dataset& ds,
                    Split split, double alpha) {
  const auto& classes =
      split == Split::base ? ds.split.base_classes : ds.split.novel_classes;
  Tensor images = images_tensor(ds, split_image_indices(ds, split));
  Tensor img_feats = encode_image(bb, images, adapters, alpha);
  Tensor txt_feats = encode_text(bb, prompt_ids(ds, classes),
                                 static_cast<Index>(classes.size()), adapters, alpha);
  return class_logits(img_feats, txt_feats, bb.cfg.logit_temperature);
}

double accuracy_from_logits(const Tensor& logits, const std::vector<Index>& targets) {
  const Index b = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(targets.size()) != b) {
    throw InvariantError("accuracy: target count does not match logits batch");
  }
  Index correct = 0;
  for (Index i = 0; i < b; ++i) {
    Index best = 0;
    double best_v = logits.values()[i * k];
    for (Index j = 1; j < k; ++j) {
      const double v = logits.values()[i * k + j];
      if (v > best_v) {  // strict: ties keep the lowest class index
        best_v = v;
        best = j;
      }
    }
    if (best == targets[static_cast<std::size_t>(i)]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(b);
}

double evaluate_model(const ToyBackbone& bb, const ModelAdapters* adapters, const Dataset& ds,
                      Split split, double alpha) {
  return accuracy_from_logits(split_logits(bb, adapters, ds, split, alpha),
                              split_targets(ds, split));
}

TrainResult train_run(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Dataset ds = load_dataset(cfg.dataset_dir);
  if (ds.cfg.text_len != cfg.backbone.text_len || ds.cfg.vocab_size != cfg.backbone.vocab_size ||
      ds.cfg.image_size != cfg.backbone.image_size) {
    throw InvariantError("train_run: dataset geometry does not match backbone config");
  }

  Rng bb_rng(cfg.backbone_seed);
  ToyBackbone bb = init_backbone(cfg.backbone, bb_rng);

  Rng seed_rng(seed);
  Rng init_rng = seed_rng.fork(kInitStream);
  Rng data_rng = seed_rng.fork(kDataStream);
  Rng scale_rng = seed_rng.fork(kScaleStream);
  Rng neg_rng = seed_rng.fork(kNegStream);

  ModelAdapters adapters =
      ModelAdapters::init(cfg.adapter, cfg.variant, cfg.backbone.depth, init_rng);
  std::vector<ParamRef> params = trainable_params(adapters);
  SgdState state = SgdState::init(params);

  const auto& base_classes = ds.split.base_classes;
  const Index num_base = static_cast<Index>(base_classes.size());
  if (cfg.loss.negative_ratio > num_base - 1) {
    throw InvariantError("train_run: negative_ratio " + std::to_string(cfg.loss.negative_ratio) +
                         " exceeds base-class negatives " + std::to_string(num_base - 1));
  }
  const std::vector<Index> prompts = prompt_ids(ds, base_classes);

  std::vector<Index> train_images;
  std::vector<Index> train_targets;
  for (Index c : base_classes) {
    for (Index img : ds.split.train_indices.at(c)) {
      train_images.push_back(img);
      train_targets.push_back(position_of(base_classes, c));
    }
  }
  const Index n_train = static_cast<Index>(train_images.size());
  const Index batches_per_epoch = (n_train + cfg.optim.batch_size - 1) / cfg.optim.batch_size;
  const Index total_steps = cfg.optim.epochs * batches_per_epoch;

  std::filesystem::create_directories(out_dir + "/curves");
  const std::string id = run_id(cfg.variant, seed);
  const std::string curves_path = out_dir + "/curves/" + id + ".csv";
  std::ofstream curves(curves_path, std::ios::trunc);
  if (!curves) throw IoError("cannot open " + curves_path);
  curves << "step,lr,loss,fast_flag\n";

  ScaleSchedule sched{cfg.adapter.alpha_base, cfg.adapter.fast_multiplier, cfg.adapter.fast_prob,
                      ScaleMode::train};

  std::vector<Index> order(static_cast<std::size_t>(n_train));
  for (Index i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;

  Index step = 0;
  double last_loss = 0.0;
  for (Index epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    data_rng.shuffle(order);
    for (Index start = 0; start < n_train; start += cfg.optim.batch_size) {
      const Index bsz = std::min(cfg.optim.batch_size, n_train - start);
      std::vector<Index> batch_images(static_cast<std::size_t>(bsz));
      std::vector<Index> batch_targets(static_cast<std::size_t>(bsz));
      for (Index i = 0; i < bsz; ++i) {
        const Index pick = order[static_cast<std::size_t>(start + i)];
        batch_images[i] = train_images[pick];
        batch_targets[i] = train_targets[pick];
      }

      const double s = sample_scale(sched, scale_rng);
      const bool fast = s > sched.base_scale;

      Tensor img_feats = encode_image(bb, images_tensor(ds, batch_images), &adapters, s);
      Tensor txt_feats =
          encode_text(bb, prompts, num_base, &adapters, s);
      Tensor logits = class_logits(img_feats, txt_feats, cfg.backbone.logit_temperature);

      Tensor loss;
      if (cfg.loss.negative_ratio > 0) {
        const Index k_sub = cfg.loss.negative_ratio + 1;
        std::vector<Index> gather;
        std::vector<Index> sub_targets;
        gather.reserve(static_cast<std::size_t>(bsz * k_sub));
        for (Index i = 0; i < bsz; ++i) {
          const auto subset =
              subsample_negatives(num_base, batch_targets[i], cfg.loss.negative_ratio, neg_rng);
          sub_targets.push_back(position_of(subset, batch_targets[i]));
          gather.insert(gather.end(), subset.begin(), subset.end());
        }
        loss = lsce_loss(take_per_row(logits, gather, k_sub), sub_targets, cfg.loss.epsilon);
      } else {
        loss = lsce_loss(logits, batch_targets, cfg.loss.epsilon);
      }

      last_loss = loss.item();
      if (!std::isfinite(last_loss)) {
        throw NumericError("train_run: non-finite loss at step " + std::to_string(step));
      }
      backward(loss);
      const double lr_t = sgd_step(params, state, cfg.optim, step, total_steps);
      for (auto& p : params) p.tensor.zero_grad();

      curves << step << ',' << format_double(lr_t) << ',' << format_double(last_loss) << ','
             << (fast ? 1 : 0) << '\n';
      ++step;
    }
  }
  curves.close();

  // Checkpoint: frozen backbone, adapters, optimizer state, hashes.
  std::vector<NamedTensor> tensors = bb.named_tensors();
  const auto adapter_tensors = adapter_named_tensors(adapters);
  tensors.insert(tensors.end(), adapter_tensors.begin(), adapter_tensors.end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({"optim." + params[i].name + ".v",
                       Tensor::from_array({static_cast<Index>(state.velocity[i].size())},
                                          state.velocity[i])});
  }
  json extra = {
      {"kind", "run-checkpoint"},
      {"seed", seed},
      {"variant", to_string(cfg.variant)},
      {"backbone_hash", hash_hex(bb.weight_hash())},
      {"dataset_hash", hash_hex(ds.content_hash())},
      {"total_steps", total_steps},
      {"config_hash", hash_hex(cfg.config_hash())},
      {"run_config", run_config_to_json(cfg)},
  };
  const std::string ckpt_path = out_dir + "/checkpoint_" + id + ".json";
  save_checkpoint(ckpt_path, tensors, extra);

  TrainResult result;
  result.checkpoint_json = ckpt_path;
  result.curves_csv = curves_path;
  result.steps = step;
  result.final_loss = last_loss;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

LoadedModel load_model(const std::string& ckpt_json) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_json);
  if (ckpt.manifest.value("kind", "") != "run-checkpoint") {
    throw IoError("not a run checkpoint: " + ckpt_json);
  }
  LoadedModel model;
  model.cfg = run_config_from_json(ckpt.manifest.at("run_config"));
  model.seed = ckpt.manifest.value("seed", std::uint64_t{0});
  model.backbone = backbone_from_tensors(model.cfg.backbone, ckpt.by_name);

  const std::string recorded = ckpt.manifest.at("backbone_hash").get<std::string>();
  const std::string actual = hash_hex(model.backbone.weight_hash());
  if (recorded != actual) {
    throw InvariantError("backbone hash mismatch: checkpoint records " + recorded +
                         " but tensors hash to " + actual);
  }
  const Variant variant = variant_from_string(ckpt.manifest.at("variant").get<std::string>());
  model.adapters = adapters_from_tensors(model.cfg.adapter, variant,
                                         model.cfg.backbone.depth, ckpt.by_name);
  return model;
}

double evaluate(const std::string& ckpt_json, Split split, std::optional<double> alpha_override,
                const std::string& dataset_dir_override) {
  LoadedModel model = load_model(ckpt_json);
  const std::string dataset_dir =
      dataset_dir_override.empty() ? model.cfg.dataset_dir : dataset_dir_override;
  Dataset ds = load_dataset(dataset_dir);

  LoadedCheckpoint ckpt = load_checkpoint(ckpt_json);
  const std::string recorded = ckpt.manifest.at("dataset_hash").get<std::string>();
  if (recorded != hash_hex(ds.content_hash())) {
    throw InvariantError("dataset hash mismatch: checkpoint was trained against " + recorded);
  }
  const double alpha = alpha_override.has_value()
                           ? *alpha_override
                           : (split == Split::base ? model.cfg.adapter.alpha_base
                                                   : model.cfg.adapter.alpha_novel);
  return evaluate_model(model.backbone, &model.adapters, ds, split, alpha);
}

void write_ablation_outputs(const AblationReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string csv_path = out_dir + "/results.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open " + csv_path);
  csv << "variant,seed,split,alpha,accuracy,hm\n";
  for (const auto& cell : report.cells) {
    const double hm = harmonic_mean(cell.base_acc, cell.novel_acc);
    csv << to_string(cell.variant) << ',' << cell.seed << ",base,"
        << format_double(report.cfg.adapter.alpha_base) << ',' << format_double(cell.base_acc)
        << ',' << format_double(hm) << '\n';
    csv << to_string(cell.variant) << ',' << cell.seed << ",novel,"
        << format_double(report.cfg.adapter.alpha_novel) << ',' << format_double(cell.novel_acc)
        << ',' << format_double(hm) << '\n';
  }
  csv.close();

  json cells = json::array();
  for (const auto& cell : report.cells) {
    cells.push_back({{"variant", to_string(cell.variant)},
                     {"seed", cell.seed},
                     {"base_acc", cell.base_acc},
                     {"novel_acc", cell.novel_acc},
                     {"hm", cell.hm}});
  }
  json aggregates = json::object();
  for (Variant v :
       {Variant::full, Variant::zero_init, Variant::no_spatial_1d, Variant::no_dwconv}) {
    std::vector<double> base, novel, hm;
    for (const auto& cell : report.cells) {
      if (cell.variant != v) continue;
      base.push_back(cell.base_acc);
      novel.push_back(cell.novel_acc);
      hm.push_back(cell.hm);
    }
    if (base.empty()) continue;
    auto mean_of = [](const std::vector<double>& xs) {
      double s = 0.0;
      for (double x : xs) s += x;
      return s / static_cast<double>(xs.size());
    };
    auto std_of = [&](const std::vector<double>& xs) {
      if (xs.size() < 2) return 0.0;
      const double m = mean_of(xs);
      double s = 0.0;
      for (double x : xs) s += (x - m) * (x - m);
      return std::sqrt(s / static_cast<double>(xs.size() - 1));
    };
    aggregates[to_string(v)] = {
        {"base_mean", mean_of(base)},   {"base_std", std_of(base)},
        {"novel_mean", mean_of(novel)}, {"novel_std", std_of(novel)},
        {"hm_mean", mean_of(hm)},       {"hm_std", std_of(hm)},
        {"runs", base.size()},
    };
  }
  json out = {{"config", run_config_to_json(report.cfg)},
              {"config_hash", hash_hex(report.cfg.config_hash())},
              {"cells", cells},
              {"aggregates", aggregates}};
  const std::string text = out.dump(2) + "\n";
  write_file_bytes(out_dir + "/results.json", text.data(), text.size());
}

AblationReport run_ablation_grid(const RunConfig& cfg, const std::string& out_dir,
                                 int max_threads) {
  cfg.validate();
  const Variant variants[] = {Variant::full, Variant::zero_init, Variant::no_spatial_1d,
                              Variant::no_dwconv};
  struct Job {
    Variant variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Variant v : variants) {
    for (std::uint64_t seed : cfg.seeds) jobs.push_back({v, seed});
  }

  AblationReport report;
  report.cfg = cfg;
  report.cells.resize(jobs.size());
  std::vector<char> done(jobs.size(), 0);

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto worker = [&]() {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        RunConfig job_cfg = cfg;
        job_cfg.variant = jobs[i].variant;
        TrainResult trained = train_run(job_cfg, jobs[i].seed, out_dir);
        AblationCell cell;
        cell.variant = jobs[i].variant;
        cell.seed = jobs[i].seed;
        cell.base_acc = evaluate(trained.checkpoint_json, Split::base);
        cell.novel_acc = evaluate(trained.checkpoint_json, Split::novel);
        cell.hm = harmonic_mean(cell.base_acc, cell.novel_acc);
        report.cells[i] = cell;
        done[i] = 1;
        std::cerr << "[ablate] " << run_id(jobs[i].variant, jobs[i].seed) << " base "
                  << cell.base_acc << "% novel " << cell.novel_acc << "% hm " << cell.hm
                  << "% (" << trained.wall_seconds << "s)\n";
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  const int n_threads = std::max(1, std::min<int>(max_threads, static_cast<int>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  if (first_error) {
    // Preserve the cells that finished before the failure.
    AblationReport partial;
    partial.cfg = cfg;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (done[i]) partial.cells.push_back(report.cells[i]);
    }
    write_ablation_outputs(partial, out_dir);
    std::rethrow_exception(first_error);
  }
  write_ablation_outputs(report, out_dir);
  return report;
}

std::vector<AlphaSweepRow> sweep_alpha(const std::string& ckpt_json,
                                       const std::vector<double>& alphas) {
  if (alphas.empty()) throw InvariantError("sweep_alpha: need at least one alpha");
  LoadedModel model = load_model(ckpt_json);
  Dataset ds = load_dataset(model.cfg.dataset_dir);
  const double base_acc =
      evaluate_model(model.backbone, &model.adapters, ds, Split::base,
                     model.cfg.adapter.alpha_base);
  std::vector<AlphaSweepRow> rows;
  for (double alpha : alphas) {
    AlphaSweepRow row;
    row.alpha_novel = alpha;
    row.base_acc = base_acc;
    row.novel_acc = evaluate_model(model.backbone, &model.adapters, ds, Split::novel, alpha);
    rows.push_back(row);
  }
  return rows;
}

std::vector<HmAuditRow> audit_hm_file(const std::string& csv_path, double tol) {
  const auto bytes = read_file_bytes(csv_path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty HM table: " + csv_path);
  if (line != "table,method,dataset,base,novel,hm") {
    throw IoError("unexpected HM table header in " + csv_path + ": " + line);
  }
  std::vector<HmAuditRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    HmAuditRow row;
    std::string base_s, novel_s, hm_s;
    if (!std::getline(fields, row.table, ',') || !std::getline(fields, row.method, ',') ||
        !std::getline(fields, row.dataset, ',') || !std::getline(fields, base_s, ',') ||
        !std::getline(fields, novel_s, ',') || !std::getline(fields, hm_s)) {
      throw IoError("malformed HM table row at line " + std::to_string(line_no));
    }
    row.base = std::stod(base_s);
    row.novel = std::stod(novel_s);
    row.hm = std::stod(hm_s);
    row.recomputed = harmonic_mean(row.base, row.novel);
    row.ok = std::abs(row.recomputed - row.hm) <= tol;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace heba
