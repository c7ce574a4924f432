#include "modrobe/model.hpp"

#include <cmath>

#include "modrobe/errors.hpp"

namespace modrobe {

ModelDims ModelDims::from_bundle(const DatasetBundle& bundle,
                                 std::size_t embed_dim, std::size_t hidden_dim,
                                 bool mae_mode) {
  ModelDims d;
  d.universe = bundle.config.universe();
  d.token_dims = bundle.token_dims();
  d.tokens_per_modality = bundle.token_counts();
  d.embed_dim = embed_dim;
  d.hidden_dim = hidden_dim;
  d.num_classes = static_cast<std::size_t>(bundle.config.num_classes);
  d.task = bundle.config.task;
  d.mae_mode = mae_mode;
  return d;
}

ModelDims ModelDims::from_meta(const CheckpointMeta& meta) {
  ModelDims d;
  d.universe = ModalityUniverse(meta.modalities);
  d.token_dims = meta.token_dims;
  d.tokens_per_modality = meta.tokens_per_modality;
  d.embed_dim = meta.embed_dim;
  d.hidden_dim = meta.hidden_dim;
  d.num_classes = meta.num_classes;
  d.task = parse_task_kind(meta.task);
  d.mae_mode = meta.pretrain_method == "mae";
  return d;
}

CheckpointMeta ModelDims::to_meta() const {
  CheckpointMeta m;
  m.modalities = universe.names();
  m.token_dims = token_dims;
  bool uniform = true;
  for (std::size_t td : token_dims) uniform = uniform && td == token_dims[0];
  m.token_dim = uniform && !token_dims.empty() ? token_dims[0] : 0;
  m.tokens_per_modality = tokens_per_modality;
  m.embed_dim = embed_dim;
  m.hidden_dim = hidden_dim;
  m.num_classes = num_classes;
  m.task = task_kind_name(task);
  return m;
}

namespace {

Tensor<double> gaussian_init(Shape shape, std::size_t fan_in,
                             std::uint64_t seed) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
  rng.fill_normal(t, 0.0, std_dev);
  return t;
}

}  // namespace

ModelCheckpoint init_model(const ModelDims& dims, std::uint64_t seed,
                           const std::string& pretrain_method) {
  if (pretrain_method != "contrastive" && pretrain_method != "mae" &&
      pretrain_method != "none")
    throw config_error("pretrain method must be contrastive|mae|none, got '" +
                       pretrain_method + "'");
  bool mae = pretrain_method == "mae";
  if (mae != dims.mae_mode)
    throw std::logic_error("init_model: dims.mae_mode disagrees with method");

  ModelCheckpoint ckpt;
  ckpt.meta = dims.to_meta();
  ckpt.meta.pretrain_method = pretrain_method;
  ckpt.meta.seed = seed;

  // every parameter draws from its own (seed, name) stream, so the values
  // don't depend on construction order
  auto put = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    ckpt.params.emplace(
        name, gaussian_init(std::move(shape), fan_in, mix_seed(seed, "init/" + name)));
  };
  auto zeros = [&](const std::string& name, Shape shape) {
    ckpt.params.emplace(name, Tensor<double>::zeros(std::move(shape)));
  };

  std::size_t d = dims.embed_dim, h = dims.hidden_dim, C = dims.num_classes;
  for (std::size_t m = 0; m < dims.universe.size(); ++m) {
    const std::string base = "enc." + dims.universe.name(m) + ".";
    std::size_t td = dims.token_dims.at(m);
    put(base + "embed", {td, d}, td);
    put(base + "w1", {d, h}, d);
    zeros(base + "b1", {h});
    put(base + "w2", {h, d}, h);
    zeros(base + "b2", {d});
  }
  if (mae) {
    put("shared.w", {d, d}, d);
    zeros("shared.b", {d});
    for (std::size_t m = 0; m < dims.universe.size(); ++m) {
      const std::string base = "dec." + dims.universe.name(m) + ".";
      std::size_t out = dims.tokens_per_modality.at(m) * dims.token_dims.at(m);
      put(base + "w1", {d, h}, d);
      zeros(base + "b1", {h});
      put(base + "w2", {h, out}, h);
      zeros(base + "b2", {out});
    }
  }
  put("head.w", {d, C}, d);
  zeros("head.b", {C});
  return ckpt;
}

std::set<std::string> encoder_param_names(const ModelDims& dims,
                                          ModalitySet which) {
  std::set<std::string> out;
  for (std::size_t m : which.indices()) {
    const std::string base = "enc." + dims.universe.name(m) + ".";
    for (const char* leaf : {"embed", "w1", "b1", "w2", "b2"})
      out.insert(base + leaf);
  }
  return out;
}

std::set<std::string> shared_param_names(const ModelDims& dims) {
  if (!dims.mae_mode) return {};
  return {"shared.w", "shared.b"};
}

std::set<std::string> head_param_names() { return {"head.w", "head.b"}; }

std::set<std::string> decoder_param_names(const ModelDims& dims) {
  std::set<std::string> out;
  if (!dims.mae_mode) return out;
  for (std::size_t m = 0; m < dims.universe.size(); ++m) {
    const std::string base = "dec." + dims.universe.name(m) + ".";
    for (const char* leaf : {"w1", "b1", "w2", "b2"})
      out.insert(base + leaf);
  }
  return out;
}

}  // namespace modrobe
