#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "modrobe/checkpoint.hpp"
#include "modrobe/data.hpp"
#include "modrobe/errors.hpp"
#include "modrobe/model.hpp"
#include "modrobe/rng.hpp"
#include "modrobe/scores.hpp"
#include "modrobe/train.hpp"

using namespace modrobe;
using testutil::TempDir;
using testutil::tiny_bundle;
using testutil::tiny_train;

namespace {

ModalitySet m0() { return ModalitySet::single(0); }
ModalitySet m1() { return ModalitySet::single(1); }
ModalitySet both() { return m0().unite(m1()); }

bool equal_on(const ModelCheckpoint& a, const ModelCheckpoint& b,
              const std::set<std::string>& names) {
  for (const auto& n : names)
    if (!(a.param(n) == b.param(n))) return false;
  return true;
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from),
                         v.begin() + static_cast<std::ptrdiff_t>(to), 0.0) /
         static_cast<double>(to - from);
}

}  // namespace

TEST_CASE("config: every invalid field is named") {
  auto broken = [](auto&& poke) {
    TrainConfig cfg = tiny_train();
    poke(cfg);
    return cfg;
  };
  using doctest::Contains;
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.pretrain_method = "simclr"; }).validate(2),
      "pretrain_method must be 'contrastive' or 'mae', got 'simclr'",
      config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.pretrain_epochs = -1; }).validate(2),
      "pretrain_epochs must be nonnegative", config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.downstream_epochs = -2; }).validate(2),
      "downstream_epochs must be nonnegative", config_error);
  CHECK_THROWS_WITH_AS(broken([](TrainConfig& c) { c.batch = 0; }).validate(2),
                       "batch must be positive", config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.lr_probe = 0.0; }).validate(2),
      "learning rates must be positive", config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.warmup_frac = 1.5; }).validate(2),
      "warmup_frac must be in [0, 1]", config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.contrastive.temperature = 0.0; })
          .validate(2),
      "temperature must be positive", config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.masd.lambda = -0.1; }).validate(2),
      "lambda must be nonnegative", config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.masd.distill_temperature = -1.0; })
          .validate(2),
      "distill_temperature must be positive", config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.wiseft_alpha = 1.01; }).validate(2),
      "wiseft_alpha must be in [0, 1]", config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.precision = "f16"; }).validate(2),
      "precision must be 'f32' or 'f64', got 'f16'", config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.embed_dim = 0; }).validate(2),
      "embed_dim and hidden_dim must be positive", config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.mask_ratios = {0.5, 0.5, 0.5}; })
          .validate(2),
      "mask_ratios must list one entry per modality (3 given for 2 "
      "modalities)",
      config_error);
  CHECK_THROWS_WITH_AS(
      broken([](TrainConfig& c) { c.mask_ratios = {0.5, 1.0}; }).validate(2),
      "mask_ratios entries must be in [0, 1)", config_error);
  CHECK_NOTHROW(tiny_train().validate(2));
}

TEST_CASE("config: mask ratios default to one half per modality") {
  TrainConfig cfg = tiny_train();
  CHECK(cfg.effective_mask_ratios(3) == std::vector<double>{0.5, 0.5, 0.5});
  cfg.mask_ratios = {0.2, 0.8};
  CHECK(cfg.effective_mask_ratios(2) == std::vector<double>{0.2, 0.8});
}

TEST_CASE("pretrain: zero epochs returns the quantized seeded initialization") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  cfg.pretrain_epochs = 0;
  ModelCheckpoint a = pretrain(b, cfg, 5);
  CHECK(a.params == pretrain(b, cfg, 5).params);
  CHECK(a.meta.seed == 5);
  CHECK(a.meta.precision == "f32");
  CHECK(last_loss_history().empty());

  ModelDims dims = ModelDims::from_bundle(b, cfg.embed_dim, cfg.hidden_dim,
                                          /*mae=*/false);
  ModelCheckpoint ref = init_model(dims, mix_seed(5, "init"), "contrastive");
  for (const auto& [name, t] : ref.params) {
    // f32 working precision rides along even before the first step
    CHECK(a.param(name) == t.cast<float>().cast<double>());
  }

  cfg.precision = "f64";
  ModelCheckpoint a64 = pretrain(b, cfg, 5);
  for (const auto& [name, t] : ref.params) CHECK(a64.param(name) == t);
}

TEST_CASE("pretrain: the same seed reproduces the weights bit for bit") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  ModelCheckpoint a = pretrain(b, cfg, 11);
  std::vector<double> hist = last_loss_history();
  ModelCheckpoint c = pretrain(b, cfg, 11);
  CHECK(a.params == c.params);
  CHECK(hist == last_loss_history());
  CHECK(a.params != pretrain(b, cfg, 12).params);
}

TEST_CASE("pretrain: the contrastive loss comes down") {
  DatasetBundle b = tiny_bundle();
  ModelCheckpoint ckpt = pretrain(b, tiny_train(), 11);
  const std::vector<double>& h = last_loss_history();
  REQUIRE(h.size() == 10);  // ceil(160/32) steps, 2 epochs
  CHECK(mean_of(h, 5, 10) < mean_of(h, 0, 5));
}

TEST_CASE("pretrain: masked reconstruction trains and its loss comes down") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  cfg.pretrain_method = "mae";
  ModelCheckpoint ckpt = pretrain(b, cfg, 19);
  CHECK(ckpt.meta.pretrain_method == "mae");
  CHECK(ckpt.has_param("shared.w"));
  const std::vector<double>& h = last_loss_history();
  REQUIRE(h.size() == 10);
  CHECK(mean_of(h, 5, 10) < mean_of(h, 0, 5));
  CHECK(ckpt.params == pretrain(b, cfg, 19).params);
}

TEST_CASE("pretrain: degenerate mask ratios are rejected") {
  DatasetBundle b = tiny_bundle();  // 3 tokens per modality
  TrainConfig cfg = tiny_train();
  cfg.pretrain_method = "mae";
  cfg.mask_ratios = {0.9, 0.5};  // ceil(2.7) = 3 of 3 masked
  CHECK_THROWS_WITH_AS(
      pretrain(b, cfg, 1),
      "mask ratio 0.900000 leaves no visible tokens for modality m0",
      config_error);
  cfg.mask_ratios = {0.0, 0.0};
  CHECK_THROWS_WITH_AS(pretrain(b, cfg, 1),
                       "mask ratios mask no tokens in any modality",
                       config_error);
}

TEST_CASE("pretrain: contrastive needs contrast") {
  GenConfig gc;
  gc.modalities = {"solo"};
  gc.latent_dim = 4;
  gc.token_dim = 6;
  gc.tokens_per_modality = {3};
  gc.sigma = {0.1};
  gc.num_classes = 4;
  gc.sizes.pretrain = 32;
  gc.sizes.train = 16;
  gc.sizes.eval = 16;
  gc.sizes.selfdist = 8;
  DatasetBundle b = generate(gc, 3);
  CHECK_THROWS_WITH_AS(pretrain(b, tiny_train(), 1),
                       "contrastive pretraining needs at least 2 modalities",
                       config_error);
  TrainConfig cfg = tiny_train();
  cfg.pretrain_method = "mae";  // single-modality reconstruction is fine
  CHECK_NOTHROW(pretrain(b, cfg, 1));
}

TEST_CASE("pretrain: every example must carry every modality") {
  DatasetBundle b = tiny_bundle();
  b.pretrain = restrict_dataset(b.pretrain, m0());
  CHECK_THROWS_WITH_AS(pretrain(b, tiny_train(), 1),
                       "pretrain: example 0 is missing a modality",
                       std::runtime_error);
}

TEST_CASE("probe: encoders come through untouched, statistics get frozen") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  ModelCheckpoint bb = pretrain(b, cfg, 11);
  ModelCheckpoint pr = linear_probe(bb, b.train, both(), cfg, 12);

  ModelDims dims = ModelDims::from_meta(bb.meta);
  CHECK(equal_on(pr, bb, encoder_param_names(dims, both())));
  CHECK_FALSE(pr.param("head.w") == bb.param("head.w"));
  CHECK(pr.meta.downstream == "probe");
  CHECK(pr.meta.train_set == "m0+m1");
  CHECK(pr.meta.seed == 12);

  // the frozen statistics are the population moments of the frozen features
  Tensor<double> feats = precompute_features(bb, b.train, both());
  const Tensor<double>&bn_mean = pr.param("head.bn_mean"),
        &bn_var = pr.param("head.bn_var");
  std::size_t n = feats.rows(), d = feats.cols();
  REQUIRE(bn_mean.shape() == Shape{d});
  REQUIRE(bn_var.shape() == Shape{d});
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += feats.at(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      double c = feats.at(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    CHECK(bn_mean.data()[j] == doctest::Approx(mean).epsilon(1e-6));
    CHECK(bn_var.data()[j] == doctest::Approx(var).epsilon(1e-6));
  }
}

TEST_CASE("probe: loss comes down and beats chance on held-out data") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  ModelCheckpoint bb = pretrain(b, cfg, 11);
  ModelCheckpoint pr = linear_probe(bb, b.train, both(), cfg, 12);
  const std::vector<double>& h = last_loss_history();
  REQUIRE(h.size() == 9);  // ceil(96/32) steps, 3 epochs
  CHECK(h.back() < h.front());

  double trained = evaluate(pr, b.eval, both());
  TrainConfig cfg0 = cfg;
  cfg0.pretrain_epochs = 0;
  double untrained = evaluate(pretrain(b, cfg0, 31), b.eval, both());
  CHECK(trained > 0.45);         // four balanced classes: chance is 0.25
  CHECK(untrained < 0.35);
  CHECK(trained - untrained > 0.15);
}

TEST_CASE("probe: zero downstream epochs keep the head at its seeded value") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  ModelCheckpoint bb = pretrain(b, cfg, 11);
  cfg.downstream_epochs = 0;
  ModelCheckpoint pr = linear_probe(bb, b.train, both(), cfg, 12);
  CHECK(pr.param("head.w") == bb.param("head.w"));
  CHECK(pr.param("head.b") == bb.param("head.b"));
  CHECK(pr.has_param("head.bn_mean"));
  CHECK(pr.has_param("head.bn_var"));
}

TEST_CASE("finetune: only the chosen encoders move") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  ModelCheckpoint bb = pretrain(b, cfg, 11);
  ModelCheckpoint pr = linear_probe(bb, b.train, m0(), cfg, 12);
  ModelCheckpoint ft = finetune(bb, pr, b.train, m0(), cfg, 13);

  ModelDims dims = ModelDims::from_meta(bb.meta);
  CHECK(equal_on(ft, bb, encoder_param_names(dims, m1())));
  for (const auto& n : encoder_param_names(dims, m0()))
    CHECK_FALSE(ft.param(n) == bb.param(n));
  CHECK(ft.param("head.bn_mean") == pr.param("head.bn_mean"));
  CHECK(ft.param("head.bn_var") == pr.param("head.bn_var"));
  CHECK_FALSE(ft.param("head.w") == pr.param("head.w"));
  CHECK(ft.meta.downstream == "finetune");
  CHECK(ft.meta.train_set == "m0");
  CHECK(ft.params == finetune(bb, pr, b.train, m0(), cfg, 13).params);
}

TEST_CASE("finetune: a masked-autoencoding backbone trains its trunk but "
          "leaves the decoders alone") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  cfg.pretrain_method = "mae";
  ModelCheckpoint bb = pretrain(b, cfg, 19);
  ModelCheckpoint pr = linear_probe(bb, b.train, m0(), cfg, 20);
  ModelCheckpoint ft = finetune(bb, pr, b.train, m0(), cfg, 21);
  ModelDims dims = ModelDims::from_meta(bb.meta);
  CHECK_FALSE(ft.param("shared.w") == bb.param("shared.w"));
  CHECK(equal_on(ft, bb, decoder_param_names(dims)));
}

TEST_CASE("finetune: mismatched inputs are refused") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  ModelCheckpoint bb = pretrain(b, cfg, 11);
  ModelCheckpoint pr = linear_probe(bb, b.train, m0(), cfg, 12);

  CHECK_THROWS_WITH_AS(finetune(bb, pr, b.train, ModalitySet{}, cfg, 1),
                       "finetune: bad training modality set", config_error);
  // the backbone itself has no frozen statistics yet
  CHECK_THROWS_WITH_AS(finetune(bb, bb, b.train, m0(), cfg, 1),
                       "finetune: probe checkpoint lacks head.bn_mean",
                       std::runtime_error);
  ModelCheckpoint other = pr;
  other.meta.pretrain_method = "mae";
  CHECK_THROWS_WITH_AS(finetune(bb, other, b.train, m0(), cfg, 1),
                       "finetune: checkpoints come from different models",
                       std::runtime_error);
}

TEST_CASE("masd: an inactive distillation term reproduces fine-tuning "
          "exactly") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  ModelCheckpoint bb = pretrain(b, cfg, 11);
  ModelCheckpoint pr = linear_probe(bb, b.train, m0(), cfg, 12);

  TrainConfig off = cfg;
  off.masd.lambda = 0.0;
  ModelCheckpoint ft = finetune(bb, pr, b.train, m0(), off, 13);
  std::vector<double> ft_hist = last_loss_history();
  ModelCheckpoint md = masd_train(bb, pr, b.train, m0(), b.selfdist, off, 13);
  CHECK(md.params == ft.params);
  CHECK(last_loss_history() == ft_hist);
  CHECK(md.meta.downstream == "masd");

  // nothing left to distill into when the teacher already sees everything
  ModelCheckpoint prF = linear_probe(bb, b.train, both(), cfg, 14);
  ModelCheckpoint ftF = finetune(bb, prF, b.train, both(), cfg, 15);
  ft_hist = last_loss_history();
  ModelCheckpoint mdF =
      masd_train(bb, prF, b.train, both(), b.selfdist, cfg, 15);
  CHECK(mdF.params == ftF.params);
  CHECK(last_loss_history() == ft_hist);
}

TEST_CASE("masd: with distillation every encoder may move") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  ModelCheckpoint bb = pretrain(b, cfg, 11);
  ModelCheckpoint pr = linear_probe(bb, b.train, m0(), cfg, 12);
  ModelCheckpoint md = masd_train(bb, pr, b.train, m0(), b.selfdist, cfg, 13);

  ModelDims dims = ModelDims::from_meta(bb.meta);
  for (const auto& n : encoder_param_names(dims, both()))
    CHECK_FALSE(md.param(n) == bb.param(n));
  CHECK_FALSE(md.params ==
              finetune(bb, pr, b.train, m0(), cfg, 13).params);
  CHECK(md.params ==
        masd_train(bb, pr, b.train, m0(), b.selfdist, cfg, 13).params);
}

TEST_CASE("wiseft: endpoint checkpoints are copied, midpoints interpolated") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  ModelCheckpoint bb = pretrain(b, cfg, 11);
  ModelCheckpoint pr = linear_probe(bb, b.train, m0(), cfg, 12);
  ModelCheckpoint md = masd_train(bb, pr, b.train, m0(), b.selfdist, cfg, 13);

  ModelCheckpoint w1 = wiseft_assemble(md, pr, 1.0);
  CHECK(w1.params == md.params);
  CHECK(w1.meta.downstream == "wiseft");
  CHECK(w1.meta.extra.at("alpha") == "1.000000");
  ModelCheckpoint w0 = wiseft_assemble(md, pr, 0.0);
  CHECK(w0.params == pr.params);

  ModelCheckpoint w = wiseft_assemble(md, pr, 0.75);
  CHECK(w.params == interpolate(md, pr, 0.75).params);
  CHECK(w.meta.extra.at("alpha") == "0.750000");
}

TEST_CASE("precision: what a checkpoint holds is exactly what its file holds") {
  DatasetBundle b = tiny_bundle();
  TempDir dir("precision");
  for (const char* prec : {"f32", "f64"}) {
    TrainConfig cfg = tiny_train();
    cfg.precision = prec;
    ModelCheckpoint ckpt = pretrain(b, cfg, 23);
    CHECK(ckpt.meta.precision == prec);
    save_checkpoint(ckpt, dir / "model.mmrl");
    ModelCheckpoint back = load_checkpoint(dir / "model.mmrl");
    CHECK(back.params == ckpt.params);
    CHECK(back.meta == ckpt.meta);
  }
}

TEST_CASE("features: deterministic, shaped, and defensive") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  ModelCheckpoint bb = pretrain(b, cfg, 11);
  Tensor<double> f = precompute_features(bb, b.train, both());
  CHECK(f.shape() == Shape{b.train.size(), cfg.embed_dim});
  CHECK(f == precompute_features(bb, b.train, both()));

  CHECK_THROWS_WITH_AS(precompute_features(bb, Dataset{}, both()),
                       "precompute_features: empty dataset",
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(precompute_features(bb, b.train, ModalitySet{}),
                       "precompute_features: bad modality set",
                       std::invalid_argument);
  Dataset narrow = restrict_dataset(b.train, m0());
  CHECK_THROWS_AS(precompute_features(bb, narrow, both()), std::runtime_error);
  CHECK_NOTHROW(precompute_features(bb, narrow, m0()));
}

TEST_CASE("noise-free generation makes one modality as good as all of them") {
  GenConfig gc = tiny_bundle().config;
  gc.sigma = {0.0, 0.0};
  gc.nonlinear = false;
  TrainConfig cfg = tiny_train();
  for (std::uint64_t s : {1, 2, 3}) {
    DatasetBundle b = generate(gc, 100 + s);
    ModelCheckpoint bb = pretrain(b, cfg, 200 + s);
    ModelCheckpoint p0 = linear_probe(bb, b.train, m0(), cfg, 300 + s);
    ModelCheckpoint pF = linear_probe(bb, b.train, both(), cfg, 400 + s);
    double a0 = evaluate(p0, b.eval, m0());
    double aF = evaluate(pF, b.eval, both());
    CAPTURE(s);
    CHECK(a0 > 0.4);
    CHECK(a0 >= 0.9 * aF);  // the latent is fully recoverable from either view
  }
}
