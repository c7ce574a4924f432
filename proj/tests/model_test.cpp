#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "modrobe/checkpoint.hpp"
#include "modrobe/data.hpp"
#include "modrobe/errors.hpp"
#include "modrobe/graph.hpp"
#include "modrobe/model.hpp"

using namespace modrobe;
using testutil::TempDir;
using testutil::tiny_bundle;

namespace {

ModelDims tiny_dims(bool mae = false) {
  return ModelDims::from_bundle(tiny_bundle(), 4, 6, mae);
}

std::set<std::string> key_set(const std::map<std::string, Tensor<double>>& m) {
  std::set<std::string> out;
  for (const auto& [k, v] : m) out.insert(k);
  return out;
}

std::set<std::string> unite(std::initializer_list<std::set<std::string>> sets) {
  std::set<std::string> out;
  for (const auto& s : sets) out.insert(s.begin(), s.end());
  return out;
}

}  // namespace

TEST_CASE("init: deterministic per seed, distinct across seeds") {
  ModelDims dims = tiny_dims();
  ModelCheckpoint a = init_model(dims, 11, "contrastive");
  ModelCheckpoint b = init_model(dims, 11, "contrastive");
  ModelCheckpoint c = init_model(dims, 12, "contrastive");
  CHECK(a.same_params(b));
  CHECK_FALSE(a.same_params(c));
  CHECK(a.meta == b.meta);
}

TEST_CASE("init: contrastive models hold encoders and a head, nothing else") {
  ModelDims dims = tiny_dims();
  ModelCheckpoint ckpt = init_model(dims, 3, "contrastive");
  std::set<std::string> want =
      unite({encoder_param_names(dims, dims.universe.full()),
             head_param_names()});
  CHECK(key_set(ckpt.params) == want);
  CHECK(shared_param_names(dims).empty());
  CHECK(decoder_param_names(dims).empty());
}

TEST_CASE("init: mae models add the shared layer and per-modality decoders") {
  ModelDims dims = tiny_dims(true);
  ModelCheckpoint ckpt = init_model(dims, 3, "mae");
  std::set<std::string> want =
      unite({encoder_param_names(dims, dims.universe.full()),
             shared_param_names(dims), decoder_param_names(dims),
             head_param_names()});
  CHECK(key_set(ckpt.params) == want);
  CHECK(shared_param_names(dims) ==
        std::set<std::string>{"shared.b", "shared.w"});
}

TEST_CASE("init: method and dims must agree") {
  CHECK_THROWS_AS(init_model(tiny_dims(false), 1, "mae"), std::logic_error);
  CHECK_THROWS_AS(init_model(tiny_dims(true), 1, "contrastive"),
                  std::logic_error);
  CHECK_THROWS_AS(init_model(tiny_dims(false), 1, "finetune"), config_error);
}

TEST_CASE("dims: survive the round trip through checkpoint metadata") {
  // mae_mode travels as meta.pretrain_method, which init_model stamps
  ModelDims dims = tiny_dims(true);
  ModelDims back = ModelDims::from_meta(init_model(dims, 1, "mae").meta);
  CHECK(back.universe.names() == dims.universe.names());
  CHECK(back.token_dims == dims.token_dims);
  CHECK(back.tokens_per_modality == dims.tokens_per_modality);
  CHECK(back.embed_dim == dims.embed_dim);
  CHECK(back.hidden_dim == dims.hidden_dim);
  CHECK(back.num_classes == dims.num_classes);
  CHECK(back.task == dims.task);
  CHECK(back.mae_mode == dims.mae_mode);
}

TEST_CASE("encode: duplicating every token row leaves the embedding alone") {
  DatasetBundle b = tiny_bundle();
  ModelDims dims = ModelDims::from_bundle(b, 4, 6, false);
  ModelCheckpoint ckpt = init_model(dims, 5, "contrastive");
  const Tensor<float>& tok = b.train.examples[0].tokens_for(0);

  auto encode = [&](const Tensor<double>& stacked, std::size_t block) {
    Graph<double> g;
    ModelGraph<double> mg = register_params(g, dims, ckpt.params, {}, {});
    return g.value(build_encode(mg, 0, g.constant(stacked), block));
  };

  Tensor<double> once({tok.rows(), tok.cols()});
  for (std::size_t i = 0; i < tok.rows(); ++i)
    for (std::size_t j = 0; j < tok.cols(); ++j)
      once.at(i, j) = static_cast<double>(tok.at(i, j));
  Tensor<double> twice({2 * tok.rows(), tok.cols()});
  for (std::size_t i = 0; i < 2 * tok.rows(); ++i)
    for (std::size_t j = 0; j < tok.cols(); ++j)
      twice.at(i, j) = once.at(i % tok.rows(), j);

  Tensor<double> e1 = encode(once, tok.rows());
  Tensor<double> e2 = encode(twice, 2 * tok.rows());
  REQUIRE(e1.same_shape(e2));
  for (std::size_t j = 0; j < e1.cols(); ++j)
    CHECK(e1.at(0, j) == doctest::Approx(e2.at(0, j)).epsilon(1e-12));
}

TEST_CASE("fuse: averages the present embeddings") {
  ModelDims dims = tiny_dims();
  Graph<double> g;
  ModelGraph<double> mg;
  mg.g = &g;
  mg.dims = &dims;
  std::map<std::size_t, NodeId> emb{
      {0, g.constant(Tensor<double>::matrix(1, 2, {1, 3}))},
      {1, g.constant(Tensor<double>::matrix(1, 2, {3, 1}))}};
  Tensor<double> fused = g.value(build_fuse(mg, emb));
  CHECK(fused.at(0, 0) == 2.0);
  CHECK(fused.at(0, 1) == 2.0);
}

TEST_CASE("fuse: a single modality passes through untouched") {
  ModelDims dims = tiny_dims();
  Graph<double> g;
  ModelGraph<double> mg;
  mg.g = &g;
  mg.dims = &dims;
  NodeId x = g.constant(Tensor<double>::matrix(2, 2, {1, 2, 3, 4}));
  CHECK(build_fuse(mg, {{1, x}}) == x);
  CHECK_THROWS_AS(build_fuse(mg, {}), std::invalid_argument);
}

TEST_CASE("classify: a zeroed head is indifferent to its input") {
  DatasetBundle b = tiny_bundle();
  ModelDims dims = ModelDims::from_bundle(b, 4, 6, false);
  ModelCheckpoint ckpt = init_model(dims, 6, "contrastive");
  ckpt.params.at("head.w") = Tensor<double>::zeros({4, 4});
  ckpt.params.at("head.b") = Tensor<double>::zeros({4});
  std::vector<const MultimodalExample*> batch{&b.train.examples[0],
                                              &b.train.examples[1]};
  Graph<double> g;
  ModelGraph<double> mg = register_params(g, dims, ckpt.params, {}, {});
  NodeId logits = build_forward(mg, batch, dims.universe.full());
  CHECK(g.value(logits) == Tensor<double>::zeros({2, 4}));
}

TEST_CASE("classify: probe statistics standardize the fused features") {
  ModelDims dims = tiny_dims();
  std::map<std::string, Tensor<double>> params;
  params["head.w"] = Tensor<double>::identity(4);
  params["head.b"] = Tensor<double>::zeros({4});
  params["head.bn_mean"] = Tensor<double>::vec({1, 2, 3, 4});
  params["head.bn_var"] = Tensor<double>::vec({1, 1, 4, 0.25});
  Graph<double> g;
  ModelGraph<double> mg = register_params(g, dims, params, {}, {});
  NodeId fused = g.constant(Tensor<double>::matrix(1, 4, {2, 2, 7, 3}));
  Tensor<double> logits = g.value(build_classify(mg, fused));
  CHECK(logits.at(0, 0) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(logits.at(0, 1) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(logits.at(0, 2) == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(logits.at(0, 3) == doctest::Approx(-2.0).epsilon(1e-4));
}

TEST_CASE("interpolate: endpoints return the parents verbatim") {
  ModelDims dims = tiny_dims();
  ModelCheckpoint a = init_model(dims, 7, "contrastive");
  ModelCheckpoint b = init_model(dims, 8, "contrastive");
  a.meta.downstream = "finetune";
  b.meta.downstream = "probe";
  CHECK(interpolate(a, b, 1.0).same_params(a));
  CHECK(interpolate(a, b, 1.0).meta == a.meta);
  CHECK(interpolate(a, b, 0.0).same_params(b));
  CHECK(interpolate(a, b, 0.0).meta == b.meta);
}

TEST_CASE("interpolate: convex combination with recorded provenance") {
  ModelDims dims = tiny_dims();
  ModelCheckpoint a = init_model(dims, 9, "contrastive");
  ModelCheckpoint b = a;
  for (auto& [name, t] : a.params)
    for (auto& v : t.data()) v = 4.0;
  for (auto& [name, t] : b.params)
    for (auto& v : t.data()) v = 0.0;
  a.meta.downstream = "finetune";
  b.meta.downstream = "probe";
  ModelCheckpoint mid = interpolate(a, b, 0.75);
  for (const auto& [name, t] : mid.params)
    for (double v : t.data()) CHECK(v == 3.0);
  CHECK(mid.meta.downstream == "interpolated");
  CHECK(mid.meta.extra.at("alpha") == std::to_string(0.75));
  CHECK(mid.meta.extra.at("parent_a") == "finetune");
  CHECK(mid.meta.extra.at("parent_b") == "probe");
}

TEST_CASE("interpolate: averaging a checkpoint with itself changes nothing") {
  ModelDims dims = tiny_dims();
  ModelCheckpoint a = init_model(dims, 10, "contrastive");
  CHECK(interpolate(a, a, 0.5).same_params(a));
}

TEST_CASE("interpolate: mismatched inputs are rejected") {
  ModelDims dims = tiny_dims();
  ModelCheckpoint a = init_model(dims, 11, "contrastive");
  ModelCheckpoint b = a;
  CHECK_THROWS_AS(interpolate(a, b, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(interpolate(a, b, -0.1), std::invalid_argument);

  ModelCheckpoint other_lineage = a;
  other_lineage.meta.pretrain_method = "none";
  CHECK_THROWS_AS(interpolate(a, other_lineage, 0.5), std::invalid_argument);

  ModelCheckpoint missing = a;
  missing.params.erase("head.b");
  CHECK_THROWS_AS(interpolate(a, missing, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(interpolate(missing, a, 0.5), std::invalid_argument);

  ModelCheckpoint reshaped = a;
  reshaped.params.at("head.b") = Tensor<double>::zeros({7});
  CHECK_THROWS_AS(interpolate(a, reshaped, 0.5), std::invalid_argument);
}

TEST_CASE("checkpoint io: f64 payloads round-trip bit for bit") {
  TempDir dir("ckpt64");
  ModelDims dims = tiny_dims();
  ModelCheckpoint ckpt = init_model(dims, 13, "contrastive");
  ckpt.meta.precision = "f64";
  ckpt.meta.downstream = "finetune";
  ckpt.meta.train_set = "m0";
  ckpt.meta.extra["note"] = "hello";
  save_checkpoint(ckpt, dir / "model.mmrl");
  ModelCheckpoint back = load_checkpoint(dir / "model.mmrl");
  CHECK(back.meta == ckpt.meta);
  CHECK(back.same_params(ckpt));
}

TEST_CASE("checkpoint io: f32 payloads round-trip after quantization") {
  TempDir dir("ckpt32");
  ModelDims dims = tiny_dims();
  ModelCheckpoint ckpt = init_model(dims, 14, "contrastive");
  REQUIRE(ckpt.meta.precision == "f32");
  save_checkpoint(ckpt, dir / "model.mmrl");
  ModelCheckpoint back = load_checkpoint(dir / "model.mmrl");
  CHECK(back.meta == ckpt.meta);
  for (const auto& [name, t] : ckpt.params) {
    Tensor<double> quantized = t.cast<float>().cast<double>();
    CHECK(back.param(name) == quantized);
  }
}

TEST_CASE("checkpoint io: garbage files are refused") {
  TempDir dir("ckptbad");
  std::FILE* f = std::fopen((dir / "model.mmrl").string().c_str(), "wb");
  std::fputs("not a checkpoint at all", f);
  std::fclose(f);
  CHECK_THROWS_AS(load_checkpoint(dir / "model.mmrl"), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.mmrl"), std::runtime_error);
}

TEST_CASE("checkpoint: unknown parameter lookups name the culprit") {
  ModelDims dims = tiny_dims();
  ModelCheckpoint ckpt = init_model(dims, 15, "contrastive");
  CHECK_THROWS_WITH_AS(ckpt.param("enc.m9.embed"),
                       "checkpoint: no parameter named 'enc.m9.embed'",
                       std::runtime_error);
}

TEST_CASE("checkpoint: bad precision strings are refused at save time") {
  TempDir dir("ckptprec");
  ModelDims dims = tiny_dims();
  ModelCheckpoint ckpt = init_model(dims, 16, "contrastive");
  ckpt.meta.precision = "f16";
  CHECK_THROWS_AS(save_checkpoint(ckpt, dir / "model.mmrl"), config_error);
}
