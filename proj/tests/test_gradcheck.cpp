#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "snpkit/model.hpp"
#include "snpkit/rng.hpp"
#include "snpkit/train.hpp"

using namespace snpkit;

TEST_CASE("lsce gradient matches finite differences on raw logits") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> logits(5);
    for (auto& v : logits) v = rng.normal();
    const int label = static_cast<int>(rng.below(5));
    const double eps_smooth = t % 2 ? 0.1 : 0.0;

    std::vector<double> dl;
    lsce_loss(logits, label, eps_smooth, &dl);

    const double h = 1e-6;
    for (int j = 0; j < 5; ++j) {
      auto up = logits, dn = logits;
      up[j] += h;
      dn[j] -= h;
      const double fd = (lsce_loss(up, label, eps_smooth, nullptr) -
                         lsce_loss(dn, label, eps_smooth, nullptr)) /
                        (2 * h);
      CHECK(dl[j] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("small smooth model agrees to well below the acceptance bar") {
  const ModelConfig cfg = ModelConfig::toy(8, 2, 1, 3, 1, 8, 8);
  Model m(cfg, 11);
  Dataset ds = synth_dataset(3, 4, 1, 8, 8, 2.0, 6);

  std::vector<const double*> images;
  std::vector<int> labels;
  for (auto i : ds.indices(Split::train)) {
    images.push_back(ds.images[i].data());
    labels.push_back(ds.labels[i]);
  }
  images.resize(4);
  labels.resize(4);

  const GradCheckResult r = grad_check(m, images, labels, 1e-5, 25, 3, 0.1);
  CHECK(r.max_rel_err < 1e-4);
  CHECK(!r.worst_param.empty());
}

TEST_CASE("full backprop through a 1-encoder 2-head model") {
  const ModelConfig cfg = ModelConfig::toy(16, 2, 1, 4, 1, 8, 8);
  Model m(cfg, 21);
  Dataset ds = synth_dataset(4, 3, 1, 8, 8, 2.0, 7);

  std::vector<const double*> images;
  std::vector<int> labels;
  for (auto i : ds.indices(Split::train)) {
    images.push_back(ds.images[i].data());
    labels.push_back(ds.labels[i]);
  }
  images.resize(3);
  labels.resize(3);

  const GradCheckResult r = grad_check(m, images, labels, 1e-5, 40, 5, 0.1);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("two encoders with a 2-stage tokenizer") {
  ModelConfig cfg = ModelConfig::toy(8, 2, 2, 3, 1, 16, 16);
  cfg.tokenizer_kernels = {3, 3};
  Model m(cfg, 33);
  Dataset ds = synth_dataset(3, 2, 1, 16, 16, 2.0, 8);

  std::vector<const double*> images{ds.images[0].data(), ds.images[1].data()};
  std::vector<int> labels{ds.labels[0], ds.labels[1]};

  const GradCheckResult r = grad_check(m, images, labels, 1e-5, 20, 9, 0.0);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("no positional embedding variant") {
  ModelConfig cfg = ModelConfig::toy(8, 2, 1, 3, 1, 8, 8);
  cfg.positional_embedding = false;
  Model m(cfg, 13);
  Dataset ds = synth_dataset(3, 2, 1, 8, 8, 2.0, 9);
  std::vector<const double*> images{ds.images[0].data()};
  std::vector<int> labels{ds.labels[0]};
  const GradCheckResult r = grad_check(m, images, labels, 1e-5, 20, 2, 0.1);
  CHECK(r.max_rel_err < 1e-3);
}
