#include "modrobe/train.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>

#include "modrobe/errors.hpp"
#include "modrobe/model.hpp"
#include "modrobe/rng.hpp"
#include "modrobe/scores.hpp"

namespace modrobe {

namespace {

thread_local std::vector<double> g_loss_history;

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) {
  return (n + batch - 1) / batch;
}

/// Continuous shuffled cycling over 0..n-1, for the self-distillation pool:
/// its pace is set by the labeled split, so it just reshuffles whenever it
/// runs dry instead of having epochs of its own.
class CyclingSampler {
 public:
  CyclingSampler(std::uint64_t seed, std::size_t n) : rng_(seed), n_(n) {
    reshuffle();
  }
  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (cursor_ == n_) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  Rng rng_;
  std::size_t n_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;

  void reshuffle() {
    order_ = rng_.permutation(n_);
    cursor_ = 0;
  }
};

std::vector<const MultimodalExample*> gather_batch(
    const Dataset& d, const std::vector<std::size_t>& idx) {
  std::vector<const MultimodalExample*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&d.examples[i]);
  return out;
}

/// Moves the named entries out of `from` into a map of their own (the
/// optimizer updates exactly that map in place each step).
template <typename T>
std::map<std::string, Tensor<T>> extract_params(
    std::map<std::string, Tensor<T>>& from, const std::set<std::string>& names) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& n : names) {
    auto it = from.find(n);
    if (it == from.end())
      throw std::logic_error("trainer: checkpoint lacks parameter '" + n + "'");
    out.insert(from.extract(it));
  }
  return out;
}

template <typename T>
void merge_params(std::map<std::string, Tensor<T>>& into,
                  std::map<std::string, Tensor<T>>&& part) {
  while (!part.empty()) into.insert(part.extract(part.begin()));
}

/// Registers learn + frozen leaves in global sorted-name order — the same
/// order register_params produces for the union map, so tests can rebuild
/// identical graphs node for node.
template <typename T>
ModelGraph<T> register_split(Graph<T>& g, const ModelDims& dims,
                             const std::map<std::string, Tensor<T>>& learn,
                             const std::map<std::string, Tensor<T>>& frozen) {
  ModelGraph<T> mg;
  mg.g = &g;
  mg.dims = &dims;
  auto a = learn.begin();
  auto b = frozen.begin();
  while (a != learn.end() || b != frozen.end()) {
    bool take_a =
        b == frozen.end() || (a != learn.end() && a->first < b->first);
    if (take_a) {
      mg.param_ids[a->first] = g.leaf(a->second, true, a->first);
      ++a;
    } else {
      mg.param_ids[b->first] = g.leaf(b->second, false, b->first);
      ++b;
    }
  }
  return mg;
}

/// Round-trips a double tensor through the working precision so that what a
/// checkpoint holds in memory is exactly what its file will hold.
template <typename T>
void quantize_like(Tensor<double>& t) {
  if constexpr (std::is_same_v<T, float>)
    for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

std::map<std::string, Tensor<double>> promote_like(
    const std::map<std::string, Tensor<float>>& p) {
  return promote_params(p);
}
std::map<std::string, Tensor<double>> promote_like(
    const std::map<std::string, Tensor<double>>& p) {
  return p;
}

ScheduleConfig make_schedule(double peak, double warmup_frac,
                             std::size_t total_steps) {
  ScheduleConfig s;
  s.peak_lr = peak;
  s.total_steps = total_steps;
  s.warmup_steps = static_cast<std::size_t>(
      std::llround(warmup_frac * static_cast<double>(total_steps)));
  return s;
}

[[noreturn]] void step_abort(const char* phase, std::size_t step,
                             const std::exception& e) {
  throw std::runtime_error(std::string(phase) + " step " +
                           std::to_string(step) + ": " + e.what());
}

void check_lineage(const ModelCheckpoint& backbone, const ModelCheckpoint& head,
                   const char* phase) {
  if (backbone.meta.modalities != head.meta.modalities ||
      backbone.meta.embed_dim != head.meta.embed_dim ||
      backbone.meta.num_classes != head.meta.num_classes ||
      backbone.meta.pretrain_method != head.meta.pretrain_method)
    throw std::runtime_error(std::string(phase) +
                             ": checkpoints come from different models");
}

// ---- pretraining ----------------------------------------------------------

template <typename T>
ModelCheckpoint pretrain_impl(const DatasetBundle& bundle,
                              const TrainConfig& cfg, std::uint64_t seed) {
  bool mae = cfg.pretrain_method == "mae";
  ModelDims dims =
      ModelDims::from_bundle(bundle, cfg.embed_dim, cfg.hidden_dim, mae);
  if (!mae && dims.universe.size() < 2)
    throw config_error("contrastive pretraining needs at least 2 modalities");
  ModelCheckpoint ckpt =
      init_model(dims, mix_seed(seed, "init"), cfg.pretrain_method);
  ckpt.meta.precision = cfg.precision;
  ckpt.meta.seed = seed;
  for (auto& [name, t] : ckpt.params) quantize_like<T>(t);
  g_loss_history.clear();

  const Dataset& d = bundle.pretrain;
  if (cfg.pretrain_epochs == 0 || d.size() == 0) return ckpt;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!dims.universe.full().subset_of(d.examples[i].present))
      throw std::runtime_error("pretrain: example " + std::to_string(i) +
                               " is missing a modality");

  std::vector<double> ratios = cfg.effective_mask_ratios(dims.universe.size());
  std::vector<std::size_t> mask_counts(dims.universe.size(), 0);
  if (mae) {
    bool any_masked = false;
    for (std::size_t m = 0; m < dims.universe.size(); ++m) {
      std::size_t tm = dims.tokens_per_modality[m];
      mask_counts[m] = mask_count(ratios[m], tm);
      if (mask_counts[m] == tm)
        throw config_error("mask ratio " + std::to_string(ratios[m]) +
                           " leaves no visible tokens for modality " +
                           dims.universe.name(m));
      any_masked = any_masked || mask_counts[m] > 0;
    }
    if (!any_masked)
      throw config_error("mask ratios mask no tokens in any modality");
  }

  auto work = cast_params<T>(ckpt.params);
  std::set<std::string> trainable =
      encoder_param_names(dims, dims.universe.full());
  for (const auto& n : shared_param_names(dims)) trainable.insert(n);
  for (const auto& n : decoder_param_names(dims)) trainable.insert(n);
  auto learn = extract_params(work, trainable);
  std::map<std::string, Tensor<T>> frozen;  // nothing else enters the graph

  std::size_t batch = static_cast<std::size_t>(cfg.batch);
  std::size_t total = steps_per_epoch(d.size(), batch) *
                      static_cast<std::size_t>(cfg.pretrain_epochs);
  ScheduleConfig sched = make_schedule(cfg.lr_pretrain, cfg.warmup_frac, total);
  AdamW<T> opt(cfg.adamw);
  Rng batch_rng(mix_seed(seed, "batches"));
  Rng mask_rng(mix_seed(seed, "masks"));

  std::size_t step = 0;
  for (std::int64_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::vector<std::size_t> perm = batch_rng.permutation(d.size());
    for (std::size_t begin = 0; begin < perm.size(); begin += batch, ++step) {
      std::vector<std::size_t> idx(
          perm.begin() + static_cast<std::ptrdiff_t>(begin),
          perm.begin() + static_cast<std::ptrdiff_t>(
                             std::min(begin + batch, perm.size())));
      auto b = gather_batch(d, idx);
      try {
        Graph<T> g;
        ModelGraph<T> mg = register_split(g, dims, learn, frozen);
        NodeId loss;
        if (!mae) {
          std::vector<NodeId> zs;
          for (std::size_t m = 0; m < dims.universe.size(); ++m) {
            std::size_t block = 0;
            NodeId tokens = stack_tokens<T>(g, b, m, block);
            zs.push_back(build_encode(mg, m, tokens, block));
          }
          loss = contrastive_total(g, zs, cfg.contrastive);
        } else {
          // mask -> encode visible rows -> fuse -> decode -> error on the
          // masked rows only
          std::map<std::size_t, NodeId> embeddings;
          std::vector<NodeId> targets(dims.universe.size());
          std::vector<std::vector<std::size_t>> masked(dims.universe.size());
          for (std::size_t m = 0; m < dims.universe.size(); ++m) {
            std::size_t tm = dims.tokens_per_modality[m];
            std::size_t td = dims.token_dims[m];
            std::size_t vis = tm - mask_counts[m];
            Tensor<T> full({b.size() * tm, td});
            Tensor<T> visible({b.size() * vis, td});
            for (std::size_t e = 0; e < b.size(); ++e) {
              const Tensor<float>& tok = b[e]->tokens_for(m);
              MaskedView mv = mask_view(tok, ratios[m], mask_rng.raw());
              for (std::size_t i = 0; i < tm; ++i)
                for (std::size_t j = 0; j < td; ++j)
                  full.at(e * tm + i, j) = static_cast<T>(tok.at(i, j));
              for (std::size_t i = 0; i < vis; ++i)
                for (std::size_t j = 0; j < td; ++j)
                  visible.at(e * vis + i, j) =
                      static_cast<T>(mv.visible.at(i, j));
              for (std::size_t r : mv.masked) masked[m].push_back(e * tm + r);
            }
            targets[m] = g.constant(std::move(full));
            NodeId vis_node = g.constant(std::move(visible));
            embeddings[m] = build_encode(mg, m, vis_node, vis);
          }
          NodeId fused = build_fuse(mg, embeddings);
          std::vector<MaeModalityTerm<T>> terms;
          for (std::size_t m = 0; m < dims.universe.size(); ++m) {
            MaeModalityTerm<T> term;
            term.recon = build_decode(mg, m, fused, b.size());
            term.target = targets[m];
            term.masked_rows = std::move(masked[m]);
            terms.push_back(std::move(term));
          }
          loss = mae_loss(g, terms);
        }
        g.backward(loss);
        g_loss_history.push_back(
            static_cast<double>(g.value(loss).scalar_value()));
        auto grads = g.param_grads();
        opt.step(learn, grads, lr_at(sched, step));
      } catch (const config_error&) {
        throw;
      } catch (const std::exception& e) {
        step_abort("pretrain", step, e);
      }
    }
  }
  merge_params(work, std::move(learn));
  ckpt.params = promote_like(work);
  return ckpt;
}

// ---- linear probe ---------------------------------------------------------

template <typename T>
ModelCheckpoint probe_impl(const ModelCheckpoint& backbone, const Dataset& dt,
                           ModalitySet mt, const TrainConfig& cfg,
                           std::uint64_t seed) {
  ModelDims dims = ModelDims::from_meta(backbone.meta);
  if (mt.empty() || !mt.subset_of(dims.universe.full()))
    throw config_error("probe: bad training modality set");
  g_loss_history.clear();

  // Frozen features and batch-norm statistics (population variance, no
  // learned affine), fixed once before any head update.
  Tensor<double> feats = precompute_features(backbone, dt, mt);
  std::size_t n = feats.rows(), d = feats.cols();
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += feats.at(i, j);
  for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double c = feats.at(i, j) - mean[j];
      var[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) var[j] /= static_cast<double>(n);

  Tensor<T> standardized({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      standardized.at(i, j) = static_cast<T>(
          (feats.at(i, j) - mean[j]) / std::sqrt(var[j] + kBatchNormEps));

  ModelCheckpoint out = backbone;
  out.meta.downstream = "probe";
  out.meta.train_set = dims.universe.to_string(mt);
  out.meta.seed = seed;
  out.meta.precision = cfg.precision;
  Tensor<double> bn_mean(Shape{d}, mean), bn_var(Shape{d}, var);
  quantize_like<T>(bn_mean);
  quantize_like<T>(bn_var);
  out.params["head.bn_mean"] = std::move(bn_mean);
  out.params["head.bn_var"] = std::move(bn_var);

  auto head = cast_params<T>(out.params);
  auto learn = extract_params(head, head_param_names());
  std::map<std::string, Tensor<T>> frozen;

  std::size_t batch = static_cast<std::size_t>(cfg.batch);
  std::size_t total = steps_per_epoch(n, batch) *
                      static_cast<std::size_t>(cfg.downstream_epochs);
  ScheduleConfig sched = make_schedule(cfg.lr_probe, cfg.warmup_frac, total);
  AdamW<T> opt(cfg.adamw);
  Rng batch_rng(mix_seed(seed, "batches"));

  std::size_t step = 0;
  for (std::int64_t epoch = 0; epoch < cfg.downstream_epochs; ++epoch) {
    std::vector<std::size_t> perm = batch_rng.permutation(n);
    for (std::size_t begin = 0; begin < perm.size(); begin += batch, ++step) {
      std::vector<std::size_t> idx(
          perm.begin() + static_cast<std::ptrdiff_t>(begin),
          perm.begin() + static_cast<std::ptrdiff_t>(
                             std::min(begin + batch, perm.size())));
      auto b = gather_batch(dt, idx);
      try {
        Graph<T> g;
        ModelGraph<T> mg = register_split(g, dims, learn, frozen);
        Tensor<T> rows({idx.size(), d});
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t j = 0; j < d; ++j)
            rows.at(i, j) = standardized.at(idx[i], j);
        NodeId logits = g.add_rowwise(
            g.matmul(g.constant(std::move(rows)), mg.p("head.w")),
            mg.p("head.b"));
        NodeId loss = task_loss(g, logits, b, dims.task, dims.num_classes);
        g.backward(loss);
        g_loss_history.push_back(
            static_cast<double>(g.value(loss).scalar_value()));
        auto grads = g.param_grads();
        opt.step(learn, grads, lr_at(sched, step));
      } catch (const config_error&) {
        throw;
      } catch (const std::exception& e) {
        step_abort("probe", step, e);
      }
    }
  }
  for (const auto& [name, t] : learn) {
    Tensor<double> p = t.template cast<double>();
    out.params[name] = std::move(p);
  }
  return out;
}

// ---- fine-tuning and MASD -------------------------------------------------

void ckpt_write_back(ModelCheckpoint& out,
                     const std::map<std::string, Tensor<float>>& work) {
  for (const auto& [name, t] : work) out.params[name] = t.cast<double>();
}
void ckpt_write_back(ModelCheckpoint& out,
                     const std::map<std::string, Tensor<double>>& work) {
  for (const auto& [name, t] : work) out.params[name] = t;
}

/// Shared downstream engine. `dsd == nullptr` is plain fine-tuning; with a
/// self-distillation pool it is MASD, and the two collapse to the same
/// trajectory bit for bit whenever the distillation term is inactive.
template <typename T>
ModelCheckpoint downstream_impl(const ModelCheckpoint& backbone,
                                const ModelCheckpoint& probe, const Dataset& dt,
                                ModalitySet mt, const Dataset* dsd,
                                const TrainConfig& cfg, std::uint64_t seed,
                                const char* method) {
  ModelDims dims = ModelDims::from_meta(backbone.meta);
  ModalitySet full = dims.universe.full();
  if (mt.empty() || !mt.subset_of(full))
    throw config_error(std::string(method) + ": bad training modality set");
  check_lineage(backbone, probe, method);
  for (const char* bn : {"head.bn_mean", "head.bn_var"})
    if (!probe.has_param(bn))
      throw std::runtime_error(std::string(method) +
                               ": probe checkpoint lacks " + bn);
  g_loss_history.clear();

  MasdConfig masd_cfg = cfg.masd;
  if (dsd == nullptr) masd_cfg.lambda = 0.0;
  bool with_distill = masd_cfg.lambda > 0.0 && !full.minus(mt).empty() &&
                      dsd != nullptr && dsd->size() > 0;

  ModelCheckpoint out = backbone;
  out.meta.downstream = method;
  out.meta.train_set = dims.universe.to_string(mt);
  out.meta.seed = seed;
  out.meta.precision = cfg.precision;
  for (const char* name : {"head.w", "head.b", "head.bn_mean", "head.bn_var"})
    out.params[name] = probe.param(name);

  auto work = cast_params<T>(out.params);
  std::set<std::string> trainable =
      encoder_param_names(dims, with_distill ? full : mt);
  for (const auto& n : shared_param_names(dims)) trainable.insert(n);
  for (const auto& n : head_param_names()) trainable.insert(n);
  auto learn = extract_params(work, trainable);
  auto frozen = extract_params(
      work, std::set<std::string>{"head.bn_mean", "head.bn_var"});

  std::size_t batch = static_cast<std::size_t>(cfg.batch);
  std::size_t total = steps_per_epoch(dt.size(), batch) *
                      static_cast<std::size_t>(cfg.downstream_epochs);
  ScheduleConfig sched = make_schedule(cfg.lr_finetune, cfg.warmup_frac, total);
  AdamW<T> opt(cfg.adamw);
  Rng batch_rng(mix_seed(seed, "batches"));
  std::optional<CyclingSampler> sd_sampler;
  if (with_distill)
    sd_sampler.emplace(mix_seed(seed, "sd"), dsd->size());

  std::size_t step = 0;
  for (std::int64_t epoch = 0; epoch < cfg.downstream_epochs; ++epoch) {
    std::vector<std::size_t> perm = batch_rng.permutation(dt.size());
    for (std::size_t begin = 0; begin < perm.size(); begin += batch, ++step) {
      std::vector<std::size_t> idx(
          perm.begin() + static_cast<std::ptrdiff_t>(begin),
          perm.begin() + static_cast<std::ptrdiff_t>(
                             std::min(begin + batch, perm.size())));
      auto batch_t = gather_batch(dt, idx);
      std::vector<const MultimodalExample*> batch_sd;
      if (with_distill)
        batch_sd = gather_batch(*dsd, sd_sampler->next(batch));
      try {
        Graph<T> g;
        ModelGraph<T> mg = register_split(g, dims, learn, frozen);
        MasdLossNodes<T> nodes =
            masd_loss(mg, batch_t, batch_sd, mt, masd_cfg);
        g.backward(nodes.total);
        g_loss_history.push_back(
            static_cast<double>(g.value(nodes.total).scalar_value()));
        auto grads = g.param_grads();
        opt.step(learn, grads, lr_at(sched, step));
      } catch (const config_error&) {
        throw;
      } catch (const std::exception& e) {
        step_abort(method, step, e);
      }
    }
  }
  merge_params(work, std::move(learn));
  merge_params(work, std::move(frozen));
  ckpt_write_back(out, work);
  return out;
}

}  // namespace

// ---- config ---------------------------------------------------------------

void TrainConfig::validate(std::size_t n_modalities) const {
  if (pretrain_method != "contrastive" && pretrain_method != "mae")
    throw config_error("pretrain_method must be 'contrastive' or 'mae', got '" +
                       pretrain_method + "'");
  if (pretrain_epochs < 0)
    throw config_error("pretrain_epochs must be nonnegative");
  if (downstream_epochs < 0)
    throw config_error("downstream_epochs must be nonnegative");
  if (batch <= 0) throw config_error("batch must be positive");
  if (!(lr_pretrain > 0.0) || !(lr_probe > 0.0) || !(lr_finetune > 0.0))
    throw config_error("learning rates must be positive");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0))
    throw config_error("warmup_frac must be in [0, 1]");
  if (!(contrastive.temperature > 0.0))
    throw config_error("temperature must be positive");
  if (masd.lambda < 0.0) throw config_error("lambda must be nonnegative");
  if (!(masd.distill_temperature > 0.0))
    throw config_error("distill_temperature must be positive");
  if (!(wiseft_alpha >= 0.0 && wiseft_alpha <= 1.0))
    throw config_error("wiseft_alpha must be in [0, 1]");
  if (precision != "f32" && precision != "f64")
    throw config_error("precision must be 'f32' or 'f64', got '" + precision +
                       "'");
  if (embed_dim == 0 || hidden_dim == 0)
    throw config_error("embed_dim and hidden_dim must be positive");
  effective_mask_ratios(n_modalities);  // validates length and range
}

std::vector<double> TrainConfig::effective_mask_ratios(
    std::size_t n_modalities) const {
  std::vector<double> out = mask_ratios;
  if (out.empty()) out.assign(n_modalities, 0.5);
  if (out.size() != n_modalities)
    throw config_error("mask_ratios must list one entry per modality (" +
                       std::to_string(out.size()) + " given for " +
                       std::to_string(n_modalities) + " modalities)");
  for (double r : out)
    if (!(r >= 0.0 && r < 1.0))
      throw config_error("mask_ratios entries must be in [0, 1)");
  return out;
}

const std::vector<double>& last_loss_history() { return g_loss_history; }

// ---- public entry points --------------------------------------------------

ModelCheckpoint pretrain(const DatasetBundle& bundle, const TrainConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate(bundle.config.modalities.size());
  return cfg.precision == "f64" ? pretrain_impl<double>(bundle, cfg, seed)
                                : pretrain_impl<float>(bundle, cfg, seed);
}

ModelCheckpoint linear_probe(const ModelCheckpoint& backbone, const Dataset& dt,
                             ModalitySet mt, const TrainConfig& cfg,
                             std::uint64_t seed) {
  ModelDims dims = ModelDims::from_meta(backbone.meta);
  cfg.validate(dims.universe.size());
  return cfg.precision == "f64"
             ? probe_impl<double>(backbone, dt, mt, cfg, seed)
             : probe_impl<float>(backbone, dt, mt, cfg, seed);
}

ModelCheckpoint finetune(const ModelCheckpoint& backbone,
                         const ModelCheckpoint& probe, const Dataset& dt,
                         ModalitySet mt, const TrainConfig& cfg,
                         std::uint64_t seed) {
  ModelDims dims = ModelDims::from_meta(backbone.meta);
  cfg.validate(dims.universe.size());
  return cfg.precision == "f64"
             ? downstream_impl<double>(backbone, probe, dt, mt, nullptr, cfg,
                                       seed, "finetune")
             : downstream_impl<float>(backbone, probe, dt, mt, nullptr, cfg,
                                      seed, "finetune");
}

ModelCheckpoint masd_train(const ModelCheckpoint& backbone,
                           const ModelCheckpoint& probe, const Dataset& dt,
                           ModalitySet mt, const Dataset& dsd,
                           const TrainConfig& cfg, std::uint64_t seed) {
  ModelDims dims = ModelDims::from_meta(backbone.meta);
  cfg.validate(dims.universe.size());
  return cfg.precision == "f64"
             ? downstream_impl<double>(backbone, probe, dt, mt, &dsd, cfg, seed,
                                       "masd")
             : downstream_impl<float>(backbone, probe, dt, mt, &dsd, cfg, seed,
                                      "masd");
}

ModelCheckpoint wiseft_assemble(const ModelCheckpoint& masd,
                                const ModelCheckpoint& probe, double alpha) {
  ModelCheckpoint out = interpolate(masd, probe, alpha);
  out.meta.downstream = "wiseft";
  out.meta.extra["alpha"] = std::to_string(alpha);
  return out;
}

Tensor<double> precompute_features(const ModelCheckpoint& backbone,
                                   const Dataset& d, ModalitySet mt) {
  if (d.size() == 0)
    throw std::invalid_argument("precompute_features: empty dataset");
  ModelDims dims = ModelDims::from_meta(backbone.meta);
  if (mt.empty() || !mt.subset_of(dims.universe.full()))
    throw std::invalid_argument("precompute_features: bad modality set");
  auto params = cast_params<double>(backbone.params);
  Tensor<double> out({d.size(), dims.embed_dim});
  const std::size_t chunk = 256;  // same fixed chunking as evaluation
  for (std::size_t begin = 0; begin < d.size(); begin += chunk) {
    std::size_t end = std::min(begin + chunk, d.size());
    std::vector<const MultimodalExample*> batch;
    batch.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      if (!mt.subset_of(d.examples[i].present))
        throw std::runtime_error("precompute_features: example " +
                                 std::to_string(i) +
                                 " is missing a requested modality");
      batch.push_back(&d.examples[i]);
    }
    Graph<double> g;
    ModelGraph<double> mg = register_params(g, dims, params, {}, {});
    std::map<std::size_t, NodeId> embeddings;
    for (std::size_t m : mt.indices()) {
      std::size_t block = 0;
      NodeId tokens = stack_tokens<double>(g, batch, m, block);
      embeddings[m] = build_encode(mg, m, tokens, block);
    }
    const Tensor<double>& F = g.value(build_fuse(mg, embeddings));
    for (std::size_t i = 0; i < F.rows(); ++i)
      for (std::size_t j = 0; j < F.cols(); ++j)
        out.at(begin + i, j) = F.at(i, j);
  }
  return out;
}

}  // namespace modrobe
