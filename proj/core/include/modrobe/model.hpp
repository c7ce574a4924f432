#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "modrobe/checkpoint.hpp"
#include "modrobe/data.hpp"
#include "modrobe/graph.hpp"
#include "modrobe/modality.hpp"
#include "modrobe/rng.hpp"

namespace modrobe {

/// Static geometry of the model. Deliberately tiny: per-modality token
/// embedding -> mean pool -> 2-layer MLP, averaged across present modalities,
/// with a linear classifier head. MAE mode adds one modality-shared linear
/// layer after every encoder plus a per-modality reconstruction decoder.
struct ModelDims {
  ModalityUniverse universe;
  std::vector<std::size_t> token_dims;          // per modality
  std::vector<std::size_t> tokens_per_modality; // T_m, used by decoders
  std::size_t embed_dim = 32;                   // d
  std::size_t hidden_dim = 64;                  // h
  std::size_t num_classes = 10;
  TaskKind task = TaskKind::single_label;
  bool mae_mode = false;

  static ModelDims from_bundle(const DatasetBundle& bundle,
                               std::size_t embed_dim, std::size_t hidden_dim,
                               bool mae_mode);
  static ModelDims from_meta(const CheckpointMeta& meta);
  CheckpointMeta to_meta() const;
};

/// Parameter names:
///   enc.<modality>.{embed,w1,b1,w2,b2}
///   shared.{w,b}                      (MAE mode only)
///   dec.<modality>.{w1,b1,w2,b2}      (MAE mode only)
///   head.{w,b}  and, after probing, head.{bn_mean,bn_var}
ModelCheckpoint init_model(const ModelDims& dims, std::uint64_t seed,
                           const std::string& pretrain_method);

/// Parameter names that a given phase may update. Encoder names are strictly
/// per-modality; the MAE-mode shared layer is its own group.
std::set<std::string> encoder_param_names(const ModelDims& dims,
                                          ModalitySet which);
std::set<std::string> shared_param_names(const ModelDims& dims);
std::set<std::string> head_param_names();
std::set<std::string> decoder_param_names(const ModelDims& dims);

static constexpr double kBatchNormEps = 1e-5;

/// In-graph model builders. Parameters enter the graph as leaves (trainable
/// or constant per `trainable`); tokens/labels enter as constants. All
/// builders are pure functions of construction order, which is what makes
/// training trajectories bit-reproducible.
template <typename T>
struct ModelGraph {
  Graph<T>* g = nullptr;
  const ModelDims* dims = nullptr;
  std::map<std::string, NodeId> param_ids;

  NodeId p(const std::string& name) const {
    auto it = param_ids.find(name);
    if (it == param_ids.end())
      throw std::logic_error("model graph: parameter '" + name +
                             "' not registered");
    return it->second;
  }
  bool has(const std::string& name) const {
    return param_ids.find(name) != param_ids.end();
  }
};

template <typename T>
std::map<std::string, Tensor<T>> cast_params(
    const std::map<std::string, Tensor<double>>& params) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<T>());
  return out;
}

inline std::map<std::string, Tensor<double>> promote_params(
    const std::map<std::string, Tensor<float>>& params) {
  std::map<std::string, Tensor<double>> out;
  for (const auto& [name, t] : params) out.emplace(name, t.cast<double>());
  return out;
}

/// Registers `store` entries whose names appear in `use` (all when empty),
/// marking those in `trainable` as trainable leaves.
template <typename T>
ModelGraph<T> register_params(Graph<T>& g, const ModelDims& dims,
                              const std::map<std::string, Tensor<T>>& store,
                              const std::set<std::string>& use,
                              const std::set<std::string>& trainable) {
  ModelGraph<T> mg;
  mg.g = &g;
  mg.dims = &dims;
  for (const auto& [name, t] : store) {
    if (!use.empty() && use.find(name) == use.end()) continue;
    bool train = trainable.find(name) != trainable.end();
    mg.param_ids[name] = g.leaf(t, train, name);
  }
  return mg;
}

/// Stacked tokens (rows of all examples back to back, `block` rows each) ->
/// B x d embeddings for one modality.
template <typename T>
NodeId build_encode(const ModelGraph<T>& mg, std::size_t modality,
                    NodeId tokens, std::size_t block) {
  Graph<T>& g = *mg.g;
  const std::string base = "enc." + mg.dims->universe.name(modality) + ".";
  NodeId x = g.matmul(tokens, mg.p(base + "embed"));
  x = g.block_mean_rows(x, block);
  x = g.add_rowwise(g.matmul(x, mg.p(base + "w1")), mg.p(base + "b1"));
  x = g.tanh(x);
  x = g.add_rowwise(g.matmul(x, mg.p(base + "w2")), mg.p(base + "b2"));
  if (mg.dims->mae_mode)
    x = g.add_rowwise(g.matmul(x, mg.p("shared.w")), mg.p("shared.b"));
  return x;
}

/// Mean of per-modality embeddings, always summed in ascending modality
/// index order so the result is independent of how callers collected them.
template <typename T>
NodeId build_fuse(const ModelGraph<T>& mg,
                  const std::map<std::size_t, NodeId>& embeddings) {
  if (embeddings.empty())
    throw std::invalid_argument("fuse: no modalities present");
  Graph<T>& g = *mg.g;
  NodeId acc = 0;
  bool first = true;
  for (const auto& [idx, node] : embeddings) {  // std::map: ascending index
    acc = first ? node : g.add(acc, node);
    first = false;
  }
  if (embeddings.size() > 1)
    acc = g.scale(acc, T{1} / static_cast<T>(embeddings.size()));
  return acc;
}

/// Classifier head on fused embeddings; applies the frozen batch-norm
/// transform first when the checkpoint carries probe statistics.
template <typename T>
NodeId build_classify(const ModelGraph<T>& mg, NodeId fused) {
  Graph<T>& g = *mg.g;
  NodeId x = fused;
  if (mg.has("head.bn_mean")) {
    const Tensor<T>& mean = g.value(mg.p("head.bn_mean"));
    const Tensor<T>& var = g.value(mg.p("head.bn_var"));
    Tensor<T> inv_std({mean.size()});
    Tensor<T> shift({mean.size()});
    for (std::size_t j = 0; j < mean.size(); ++j) {
      inv_std[j] = T{1} / std::sqrt(var[j] + static_cast<T>(kBatchNormEps));
      shift[j] = -mean[j] * inv_std[j];
    }
    x = g.mul_rowwise(x, g.constant(std::move(inv_std)));
    x = g.add_rowwise(x, g.constant(std::move(shift)));
  }
  return g.add_rowwise(g.matmul(x, mg.p("head.w")), mg.p("head.b"));
}

/// MAE decoder: fused embedding -> hidden -> T_m * token_dim_m, reshaped to
/// stacked token rows matching the encoder's input layout.
template <typename T>
NodeId build_decode(const ModelGraph<T>& mg, std::size_t modality,
                    NodeId fused, std::size_t batch) {
  Graph<T>& g = *mg.g;
  const std::string base = "dec." + mg.dims->universe.name(modality) + ".";
  NodeId x = g.add_rowwise(g.matmul(fused, mg.p(base + "w1")), mg.p(base + "b1"));
  x = g.tanh(x);
  x = g.add_rowwise(g.matmul(x, mg.p(base + "w2")), mg.p(base + "b2"));
  std::size_t tm = mg.dims->tokens_per_modality.at(modality);
  std::size_t td = mg.dims->token_dims.at(modality);
  return g.reshape(x, {batch * tm, td});
}

/// Stacks the tokens of `modality` from `examples` into one constant node of
/// count*T_m rows. All examples must carry the modality (and they must agree
/// on T_m, which generated/ingested data guarantees).
template <typename T>
NodeId stack_tokens(Graph<T>& g, const std::vector<const MultimodalExample*>& batch,
                    std::size_t modality, std::size_t& block_out) {
  if (batch.empty()) throw std::invalid_argument("stack_tokens: empty batch");
  const Tensor<float>& first = batch.front()->tokens_for(modality);
  std::size_t tm = first.rows(), td = first.cols();
  Tensor<T> stacked({batch.size() * tm, td});
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const Tensor<float>& tok = batch[e]->tokens_for(modality);
    if (tok.rows() != tm || tok.cols() != td)
      throw std::runtime_error("stack_tokens: ragged token shapes in batch");
    for (std::size_t i = 0; i < tm; ++i)
      for (std::size_t j = 0; j < td; ++j)
        stacked.at(e * tm + i, j) = static_cast<T>(tok.at(i, j));
  }
  block_out = tm;
  return g.constant(std::move(stacked));
}

/// Full forward for a batch restricted to `present`: encode each modality,
/// fuse, classify. Returns the logits node.
template <typename T>
NodeId build_forward(const ModelGraph<T>& mg,
                     const std::vector<const MultimodalExample*>& batch,
                     ModalitySet present) {
  std::map<std::size_t, NodeId> embeddings;
  for (std::size_t m : present.indices()) {
    std::size_t block = 0;
    NodeId tokens = stack_tokens<T>(*mg.g, batch, m, block);
    embeddings[m] = build_encode(mg, m, tokens, block);
  }
  return build_classify(mg, build_fuse(mg, embeddings));
}

}  // namespace modrobe
