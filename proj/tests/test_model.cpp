#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "snpkit/model.hpp"
#include "snpkit/rng.hpp"
#include "snpkit/train.hpp"

using namespace snpkit;
namespace fs = std::filesystem;

TEST_CASE("config validation") {
  ModelConfig cfg = ModelConfig::toy(8, 2, 1, 4, 1, 8, 8);
  CHECK_NOTHROW(cfg.validate());

  ModelConfig bad = cfg;
  bad.embed_dim = 9;  // not divisible by 2 heads
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.tokenizer_kernels = {4};  // even kernel breaks same-padding
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.num_labels = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("presets") {
  const ModelConfig c3 = ModelConfig::cct7_3x1();
  CHECK(c3.embed_dim == 256);
  CHECK(c3.num_heads == 4);
  CHECK(c3.num_encoders == 7);
  CHECK(c3.num_labels == 100);
  CHECK(c3.tokenizer_kernels == std::vector<int>{3});
  CHECK(c3.in_height == 32);

  const ModelConfig c7 = ModelConfig::cct7_7x2();
  CHECK(c7.tokenizer_kernels == std::vector<int>{7, 3});
  CHECK(c7.num_labels == 102);
  CHECK(c7.in_height == 224);

  // parameter count close to the published ~3.7M
  Model m(c3, 0);
  CHECK(m.param_count() > 3.7e6 * 0.9);
  CHECK(m.param_count() < 3.7e6 * 1.1);
  CHECK(m.tokens() == 256);  // 32x32 -> one 3x3/2 pool -> 16x16
  CHECK(m.token_rows() == 16);
}

TEST_CASE("tap widths") {
  const ModelConfig cfg = ModelConfig::cct7_3x1();
  auto w = [&](TapSite s) { return TapPoint{3, s, true}.width(cfg); };
  CHECK(w(TapSite::layernorm_out) == 256);
  CHECK(w(TapSite::qkv_out) == 768);
  CHECK(w(TapSite::attention_out) == 256);
  CHECK(w(TapSite::projection_out) == 256);
  CHECK(w(TapSite::linear1_out) == 512);
  CHECK(w(TapSite::linear2_out) == 256);
  CHECK(w(TapSite::block_out) == 256);

  CHECK_THROWS(TapPoint{8, TapSite::block_out, true}.validate(cfg));
  CHECK_THROWS(TapPoint{0, TapSite::block_out, true}.validate(cfg));
  CHECK_NOTHROW(TapPoint{7, TapSite::block_out, true}.validate(cfg));

  CHECK(TapPoint{2, TapSite::projection_out, false}.name() ==
        "enc2.projection_out.noskip");
  CHECK(TapPoint{2, TapSite::projection_out, true}.name() ==
        "enc2.projection_out");
  CHECK(tap_site_from_string("qkv_out") == TapSite::qkv_out);
  CHECK_THROWS(tap_site_from_string("nope"));
}

TEST_CASE("seeded init is deterministic") {
  const ModelConfig cfg = ModelConfig::toy(8, 2, 2, 3, 1, 8, 8);
  Model a(cfg, 42), b(cfg, 42), c(cfg, 43);
  CHECK(a.params().w == b.params().w);
  CHECK(a.params().w != c.params().w);

  Dataset ds = synth_dataset(3, 4, 1, 8, 8, 2.0, 1);
  const auto la = a.forward(ds.images[0].data());
  const auto lb = b.forward(ds.images[0].data());
  CHECK(la == lb);
  REQUIRE(la.size() == 3);
  for (double v : la) CHECK(std::isfinite(v));
}

TEST_CASE("forward taps have the declared shapes") {
  const ModelConfig cfg = ModelConfig::toy(8, 2, 2, 3, 1, 8, 8);
  Model m(cfg, 7);
  Dataset ds = synth_dataset(3, 2, 1, 8, 8, 2.0, 2);

  std::vector<TapPoint> taps{{1, TapSite::layernorm_out, true},
                             {1, TapSite::qkv_out, true},
                             {2, TapSite::attention_out, true},
                             {2, TapSite::linear1_out, true},
                             {2, TapSite::block_out, true}};
  std::vector<Matrix> captured;
  m.forward(ds.images[0].data(), taps, &captured);
  REQUIRE(captured.size() == taps.size());
  for (std::size_t t = 0; t < taps.size(); ++t) {
    CHECK(captured[t].rows() == static_cast<std::size_t>(m.tokens()));
    CHECK(captured[t].cols() == static_cast<std::size_t>(taps[t].width(cfg)));
  }
  CHECK(captured[1].cols() == 24);  // qkv = 3d

  // skip inclusion changes the projection_out field
  const Matrix with = m.tap_features(ds.images[0].data(),
                                     {2, TapSite::projection_out, true});
  const Matrix without = m.tap_features(ds.images[0].data(),
                                        {2, TapSite::projection_out, false});
  CHECK(with.storage() != without.storage());
}

TEST_CASE("attention maps cover the token grid") {
  const ModelConfig cfg = ModelConfig::toy(8, 4, 2, 3, 1, 8, 8);
  Model m(cfg, 3);
  Dataset ds = synth_dataset(3, 2, 1, 8, 8, 2.0, 3);
  const auto maps = m.attention_maps(ds.images[0].data(), 2);
  REQUIRE(maps.size() == 5);  // H per-head maps + all-head mean
  for (const auto& map : maps) {
    CHECK(map.rows() == static_cast<std::size_t>(m.token_rows()));
    CHECK(map.cols() == static_cast<std::size_t>(m.token_cols()));
  }
  // last map is the mean of the per-head maps
  for (std::size_t r = 0; r < maps[0].rows(); ++r)
    for (std::size_t c = 0; c < maps[0].cols(); ++c) {
      double acc = 0.0;
      for (int h = 0; h < 4; ++h) acc += maps[h](r, c);
      CHECK(maps[4](r, c) == doctest::Approx(acc / 4).epsilon(1e-12));
    }
}

TEST_CASE("classifier head basics") {
  ClassifierHead h = ClassifierHead::init(6, 3, 11);
  CHECK(h.width == 6);
  CHECK(h.n_labels == 3);
  for (double b : h.fc_b) CHECK(b == 0.0);
  const double bound = 1.0 / std::sqrt(6.0);
  for (double w : h.fc_w.storage()) {
    CHECK(w >= -bound);
    CHECK(w <= bound);
  }

  // zeroed weights: logits collapse to the bias
  ClassifierHead zero = h;
  zero.fc_w.fill(0.0);
  zero.fc_b = {0.5, -1.0, 2.0};
  Matrix feats(4, 6);
  Rng rng(2);
  for (auto& v : feats.storage()) v = rng.normal();
  const auto logits = zero.forward(feats);
  CHECK(logits[0] == doctest::Approx(0.5));
  CHECK(logits[1] == doctest::Approx(-1.0));
  CHECK(logits[2] == doctest::Approx(2.0));

  // pooling weights are a softmax over tokens: pooled value of a constant
  // feature column equals that constant
  Matrix const_feats(5, 6);
  for (std::size_t t = 0; t < 5; ++t) const_feats(t, 2) = 3.5;
  const auto pooled = h.pooled(const_feats);
  CHECK(pooled[2] == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("label-smoothing cross entropy") {
  const std::vector<double> logits{1.0, -0.5, 0.25};
  std::vector<double> dl;

  // epsilon 0 degenerates to plain cross entropy
  const double l0 = lsce_loss(logits, 1, 0.0, &dl);
  const auto p = softmax(logits);
  CHECK(l0 == doctest::Approx(-std::log(p[1])).epsilon(1e-12));
  CHECK(dl[1] == doctest::Approx(p[1] - 1.0).epsilon(1e-12));
  CHECK(dl[0] == doctest::Approx(p[0]).epsilon(1e-12));

  // smoothed target: eps/n + (1-eps) on the label
  const double eps = 0.3;
  const double ls = lsce_loss(logits, 1, eps, &dl);
  double want = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double target = eps / 3 + (j == 1 ? 1.0 - eps : 0.0);
    want -= target * std::log(p[j]);
  }
  CHECK(ls == doctest::Approx(want).epsilon(1e-12));
  // gradients sum to zero
  CHECK(dl[0] + dl[1] + dl[2] == doctest::Approx(0.0).epsilon(1e-12));

  // shift invariance
  std::vector<double> shifted{1001.0, 999.5, 1000.25};
  CHECK(lsce_loss(shifted, 1, eps, &dl) == doctest::Approx(ls).epsilon(1e-9));
}

TEST_CASE("learning-rate schedule") {
  Hyper h;
  h.lr = 3e-4;
  h.decay_q = 0.8;
  h.decay_interval = 10;
  CHECK(h.lr_at_epoch(1) == doctest::Approx(3e-4));
  CHECK(h.lr_at_epoch(10) == doctest::Approx(3e-4));
  CHECK(h.lr_at_epoch(11) == doctest::Approx(3e-4 * 0.8));
  CHECK(h.lr_at_epoch(25) == doctest::Approx(1.92e-4).epsilon(1e-12));
  CHECK(h.lr_at_epoch(31) == doctest::Approx(3e-4 * 0.8 * 0.8 * 0.8));

  Hyper flat;
  flat.decay_q = 1.0;
  CHECK(flat.lr_at_epoch(100) == doctest::Approx(flat.lr));

  Hyper bad;
  bad.lr = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("divergence raises with epoch and batch") {
  const ModelConfig cfg = ModelConfig::toy(8, 2, 1, 3, 1, 8, 8);
  Model m(cfg, 1);
  Dataset ds = synth_dataset(3, 10, 1, 8, 8, 2.0, 4);
  Hyper h;
  h.lr = 1e18;  // guaranteed blow-up
  h.epochs = 2;
  h.batch_size = 5;
  try {
    train(m, ds, h);
    FAIL("expected divergence");
  } catch (const TrainDiverged& e) {
    CHECK(e.epoch >= 1);
    CHECK(e.batch >= 1);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("save/load round trip preserves weights and behaviour") {
  const fs::path dir = fs::temp_directory_path() / "snpkit_model_test";
  fs::remove_all(dir);

  const ModelConfig cfg = ModelConfig::toy(8, 2, 2, 3, 1, 8, 8);
  Model m(cfg, 9);
  m.save(dir.string());
  Model r = Model::load(dir.string());
  CHECK(r.params().w == m.params().w);
  CHECK(r.config().embed_dim == cfg.embed_dim);
  CHECK(r.config().tokenizer_kernels == cfg.tokenizer_kernels);

  Dataset ds = synth_dataset(3, 2, 1, 8, 8, 2.0, 5);
  CHECK(r.forward(ds.images[0].data()) == m.forward(ds.images[0].data()));
  fs::remove_all(dir);
}

TEST_CASE("classifier head round trip through the model") {
  const ModelConfig cfg = ModelConfig::toy(8, 2, 1, 3, 1, 8, 8);
  Model m(cfg, 9);
  ClassifierHead h = m.classifier_head();
  CHECK(h.width == 8);
  CHECK(h.n_labels == 3);
  for (auto& v : h.fc_w.storage()) v *= 2.0;
  m.set_classifier_head(h);
  CHECK(m.classifier_head().fc_w == h.fc_w);
}
