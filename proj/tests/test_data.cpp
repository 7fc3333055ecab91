#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <set>

#include "heba/data.hpp"
#include "heba/errors.hpp"
#include "heba/rng.hpp"
#include "test_util.hpp"

using namespace heba;

TEST_CASE("generate_dataset: bounds, determinism, labels") {
  DataConfig cfg;
  cfg.num_classes = 8;
  cfg.images_per_class = 10;
  cfg.shots = 4;
  cfg.seed = 123;
  Dataset a = generate_dataset(cfg);
  Dataset b = generate_dataset(cfg);
  CHECK(a.num_images() == 80);
  CHECK(a.content_hash() == b.content_hash());
  for (double v : a.images) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    CHECK(a.labels[i] == static_cast<std::uint32_t>(i / 10));
  }
  for (const auto& tc : a.classes) {
    CHECK(tc.frequency >= 2.0);
    CHECK(tc.frequency <= 8.0);
    CHECK(tc.orientation >= 0.0);
    CHECK(tc.orientation < 3.1416);
    for (Index t : tc.prompt_tokens) {
      CHECK(t >= 0);
      CHECK(t < a.cfg.vocab_size);
    }
  }
  cfg.seed = 124;
  Dataset c = generate_dataset(cfg);
  CHECK(a.content_hash() != c.content_hash());
}

TEST_CASE("generate_dataset: noiseless, jitterless classes repeat the same image") {
  DataConfig cfg;
  cfg.num_classes = 4;
  cfg.images_per_class = 5;
  cfg.shots = 2;
  cfg.noise_sigma = 0.0;
  cfg.phase_jitter = 0.0;
  Dataset ds = generate_dataset(cfg);
  const Index n = ds.pixels_per_image();
  for (Index c = 0; c < 4; ++c) {
    const double* first = ds.image_ptr(c * 5);
    for (Index i = 1; i < 5; ++i) {
      const double* other = ds.image_ptr(c * 5 + i);
      for (Index p = 0; p < n; ++p) CHECK(first[p] == other[p]);
    }
  }
}

TEST_CASE("generate_dataset: config validation") {
  CHECK_THROWS_AS(generate_dataset(3, 10, 1), InvariantError);   // too few classes
  CHECK_THROWS_AS(generate_dataset(8, 16, 1), InvariantError);   // no held-out test images
  CHECK_THROWS_AS(generate_dataset(40, 20, 1), InvariantError);  // separation unsatisfiable
}

TEST_CASE("texture classes keep the separation guarantee") {
  DataConfig cfg;
  cfg.num_classes = 12;
  auto classes = make_texture_classes(cfg);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      const double fgap = std::abs(classes[i].frequency - classes[j].frequency);
      double agap = std::abs(classes[i].orientation - classes[j].orientation);
      agap = std::min(agap, 3.14159265358979 - agap);
      CHECK((fgap >= 1.0 || agap >= 3.14159265358979 / 12.0));
    }
  }
}

TEST_CASE("prompt tokens are a pure function of class id") {
  auto a = class_prompt_tokens(3, 8, 64);
  auto b = class_prompt_tokens(3, 8, 64);
  auto c = class_prompt_tokens(4, 8, 64);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.size() == 8);
}

TEST_CASE("split_base_novel: arithmetic, determinism, partition property") {
  FewShotSplit s = split_base_novel(8, 40, 0.5, 16, 99);
  CHECK(s.base_classes.size() == 4);
  CHECK(s.novel_classes.size() == 4);

  FewShotSplit again = split_base_novel(8, 40, 0.5, 16, 99);
  CHECK(s.base_classes == again.base_classes);
  CHECK(s.train_indices == again.train_indices);

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    FewShotSplit sp = split_base_novel(10, 20, 0.5, 4, seed);
    std::set<Index> all(sp.base_classes.begin(), sp.base_classes.end());
    for (Index c : sp.novel_classes) {
      CHECK(all.count(c) == 0);  // disjoint
      all.insert(c);
    }
    CHECK(all.size() == 10);  // full coverage
    for (Index c : sp.base_classes) {
      CHECK(sp.train_indices.at(c).size() == 4);
      CHECK(sp.test_indices.at(c).size() == 16);
      std::set<Index> train(sp.train_indices.at(c).begin(), sp.train_indices.at(c).end());
      for (Index t : sp.test_indices.at(c)) CHECK(train.count(t) == 0);
    }
    for (Index c : sp.novel_classes) {
      CHECK(sp.train_indices.count(c) == 0);
      CHECK(sp.test_indices.at(c).size() == 20);
    }
  }

  CHECK_THROWS_AS(split_base_novel(4, 10, 0.25, 2, 1), InvariantError);  // 1 base class
}

TEST_CASE("dataset files: save/load round trip and byte identity per seed") {
  const std::string dir1 = testutil::temp_dir("ds_bytes_1");
  const std::string dir2 = testutil::temp_dir("ds_bytes_2");
  DataConfig cfg;
  cfg.num_classes = 8;
  cfg.images_per_class = 6;
  cfg.shots = 2;
  cfg.seed = 2024;
  Dataset ds = generate_dataset(cfg);
  save_dataset(ds, dir1);
  save_dataset(generate_dataset(cfg), dir2);
  for (const char* f : {"/images.bin", "/labels.bin", "/manifest.json"}) {
    CHECK(testutil::same_file_bytes(dir1 + f, dir2 + f));
  }

  Dataset loaded = load_dataset(dir1);
  CHECK(loaded.content_hash() == ds.content_hash());
  CHECK(loaded.split.base_classes == ds.split.base_classes);
  CHECK(loaded.classes.size() == ds.classes.size());
  CHECK(loaded.cfg.images_per_class == 6);
  CHECK(loaded.split.shots == 2);

  CHECK_THROWS_AS(load_dataset(dir1 + "/nope"), IoError);
}

TEST_CASE("images_tensor and prompt_ids pull the right slices") {
  DataConfig icfg;
  icfg.num_classes = 8;
  icfg.images_per_class = 6;
  icfg.shots = 2;
  icfg.seed = 77;
  Dataset ds = generate_dataset(icfg);
  Tensor batch = images_tensor(ds, {0, 13});
  CHECK(batch.shape() == Shape{2, 1, 28, 28});
  for (Index p = 0; p < 784; ++p) {
    CHECK(batch.values()[p] == ds.image_ptr(0)[p]);
    CHECK(batch.values()[784 + p] == ds.image_ptr(13)[p]);
  }
  CHECK_THROWS_AS(images_tensor(ds, {48 * 100}), InvariantError);

  auto ids = prompt_ids(ds, {2, 5});
  CHECK(ids.size() == 16);
  for (Index i = 0; i < 8; ++i) CHECK(ids[i] == ds.classes[2].prompt_tokens[i]);
}

// Structure-not-intensity oracle: ridge regression on raw pixels separates
// two well-separated classes, while the same model on pixel histograms
// (intensity only) cannot.
TEST_CASE("baseline classifiers: raw pixels >= 95%, histograms <= 70%") {
  DataConfig cfg;
  cfg.num_classes = 8;
  cfg.images_per_class = 40;
  cfg.seed = 7;
  Dataset ds = generate_dataset(cfg);

  // classes 0 and 2: frequency 3 vs 7 and orientations 0 vs pi/4
  const Index class_a = 0, class_b = 2;
  const Index train_per_class = 20;

  auto ridge_accuracy = [&](auto&& featurize, Index feat_dim) {
    using Mat = Eigen::MatrixXd;
    using Vec = Eigen::VectorXd;
    const Index n_train = 2 * train_per_class;
    Mat x(n_train, feat_dim + 1);
    Vec y(n_train);
    Index row = 0;
    for (Index cls : {class_a, class_b}) {
      for (Index i = 0; i < train_per_class; ++i) {
        Vec f = featurize(ds.image_ptr(cls * cfg.images_per_class + i));
        x.row(row).head(feat_dim) = f.transpose();
        x(row, feat_dim) = 1.0;
        y(row) = cls == class_a ? 1.0 : -1.0;
        ++row;
      }
    }
    Mat gram = x.transpose() * x + 1e-3 * Mat::Identity(feat_dim + 1, feat_dim + 1);
    Vec w = gram.ldlt().solve(x.transpose() * y);

    Index correct = 0, total = 0;
    for (Index cls : {class_a, class_b}) {
      for (Index i = train_per_class; i < cfg.images_per_class; ++i) {
        Vec f = featurize(ds.image_ptr(cls * cfg.images_per_class + i));
        const double score = f.dot(w.head(feat_dim)) + w(feat_dim);
        const bool predicted_a = score > 0.0;
        if (predicted_a == (cls == class_a)) ++correct;
        ++total;
      }
    }
    return 100.0 * correct / total;
  };

  auto raw_pixels = [&](const double* img) {
    Eigen::VectorXd f(784);
    for (Index p = 0; p < 784; ++p) f(p) = img[p];
    return f;
  };
  auto histogram = [&](const double* img) {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(16);
    for (Index p = 0; p < 784; ++p) {
      const int bin = std::min(15, static_cast<int>(img[p] * 16.0));
      f(bin) += 1.0 / 784.0;
    }
    return f;
  };

  const double pixel_acc = ridge_accuracy(raw_pixels, 784);
  const double hist_acc = ridge_accuracy(histogram, 16);
  INFO("pixel accuracy ", pixel_acc, "%, histogram accuracy ", hist_acc, "%");
  CHECK(pixel_acc >= 95.0);
  CHECK(hist_acc <= 70.0);
}
