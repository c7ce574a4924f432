#include "modrobe/data.hpp"

#include <algorithm>
#include <cmath>

#include "modrobe/errors.hpp"
#include "modrobe/rng.hpp"

namespace modrobe {

TaskKind parse_task_kind(const std::string& s) {
  if (s == "single_label") return TaskKind::single_label;
  if (s == "multi_label") return TaskKind::multi_label;
  throw config_error("task must be 'single_label' or 'multi_label', got '" +
                     s + "'");
}

const Tensor<float>& MultimodalExample::tokens_for(std::size_t modality) const {
  if (!present.contains(modality))
    throw std::runtime_error("modality index " + std::to_string(modality) +
                             " missing from example");
  return tokens.at(modality);
}

MultimodalExample restrict_example(const MultimodalExample& x, ModalitySet m) {
  if (m.empty())
    throw std::invalid_argument("restrict: empty modality set");
  if (!m.subset_of(x.present))
    throw std::runtime_error("restrict: modalities missing from example");
  MultimodalExample out;
  out.present = m;
  out.tokens.resize(x.tokens.size());
  for (std::size_t i : m.indices()) out.tokens[i] = x.tokens[i];
  out.label = x.label;
  return out;
}

Dataset restrict_dataset(const Dataset& d, ModalitySet m) {
  Dataset out;
  out.examples.reserve(d.size());
  for (const auto& x : d.examples) out.examples.push_back(restrict_example(x, m));
  return out;
}

void GenConfig::validate() const {
  ModalityUniverse u(modalities);  // validates names
  auto positive = [](std::int64_t v, const char* field) {
    if (v <= 0)
      throw config_error(std::string(field) + " must be positive, got " +
                         std::to_string(v));
  };
  positive(latent_dim, "latent_dim");
  positive(token_dim, "token_dim");
  positive(num_classes, "num_classes");
  if (tokens_per_modality.size() != modalities.size())
    throw config_error("tokens_per_modality must list one entry per modality");
  for (std::size_t i = 0; i < tokens_per_modality.size(); ++i)
    positive(tokens_per_modality[i], "tokens_per_modality");
  if (sigma.size() != modalities.size())
    throw config_error("sigma must list one entry per modality");
  for (double s : sigma)
    if (!(s >= 0.0)) throw config_error("sigma entries must be >= 0");
  auto nonneg = [](std::int64_t v, const char* field) {
    if (v < 0)
      throw config_error(std::string(field) + " must be nonnegative, got " +
                         std::to_string(v));
  };
  nonneg(sizes.pretrain, "sizes.pretrain");
  nonneg(sizes.train, "sizes.train");
  nonneg(sizes.eval, "sizes.eval");
  nonneg(sizes.selfdist, "sizes.selfdist");
  if (sizes.selfdist > sizes.pretrain)
    throw config_error("sizes.selfdist (" + std::to_string(sizes.selfdist) +
                       ") exceeds sizes.pretrain (" +
                       std::to_string(sizes.pretrain) + ")");
  if (task == TaskKind::single_label && num_classes < 2)
    throw config_error("num_classes must be >= 2 for single_label");
}

namespace {

struct Projections {
  // label map: num_classes x latent_dim
  Tensor<double> label_w;
  // per modality, per token: token_dim x latent_dim
  std::vector<std::vector<Tensor<double>>> token_b;
};

Projections make_projections(const GenConfig& cfg, std::uint64_t seed) {
  Projections p;
  Rng rng(mix_seed(seed, "projections"));
  auto k = static_cast<std::size_t>(cfg.latent_dim);
  p.label_w = Tensor<double>({static_cast<std::size_t>(cfg.num_classes), k});
  rng.fill_normal(p.label_w, 0.0, 1.0);
  p.token_b.resize(cfg.modalities.size());
  for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
    auto tm = static_cast<std::size_t>(cfg.tokens_per_modality[m]);
    p.token_b[m].reserve(tm);
    for (std::size_t t = 0; t < tm; ++t) {
      Tensor<double> b({static_cast<std::size_t>(cfg.token_dim), k});
      rng.fill_normal(b, 0.0, 1.0);
      p.token_b[m].push_back(std::move(b));
    }
  }
  return p;
}

Label label_from_latent(const GenConfig& cfg, const Projections& p,
                        const std::vector<double>& z) {
  auto k = z.size();
  Label lab;
  if (cfg.task == TaskKind::single_label) {
    int best = 0;
    double best_v = 0.0;
    for (std::size_t c = 0; c < p.label_w.rows(); ++c) {
      double v = 0.0;
      for (std::size_t j = 0; j < k; ++j) v += p.label_w.at(c, j) * z[j];
      if (c == 0 || v > best_v) {
        best = static_cast<int>(c);
        best_v = v;
      }
    }
    lab.cls = best;
  } else {
    lab.flags.resize(p.label_w.rows());
    for (std::size_t c = 0; c < p.label_w.rows(); ++c) {
      double v = 0.0;
      for (std::size_t j = 0; j < k; ++j) v += p.label_w.at(c, j) * z[j];
      lab.flags[c] = v > 0.0 ? 1 : 0;  // == sigmoid(v) > 0.5
    }
  }
  return lab;
}

Dataset make_split(const GenConfig& cfg, const Projections& p,
                   std::uint64_t seed, const std::string& tag,
                   std::int64_t count) {
  Dataset out;
  out.examples.reserve(static_cast<std::size_t>(count));
  Rng rng(mix_seed(seed, tag));
  auto k = static_cast<std::size_t>(cfg.latent_dim);
  auto td = static_cast<std::size_t>(cfg.token_dim);
  for (std::int64_t e = 0; e < count; ++e) {
    std::vector<double> z(k);
    for (auto& v : z) v = rng.normal();
    MultimodalExample x;
    x.present = ModalitySet::all(cfg.modalities.size());
    x.tokens.resize(cfg.modalities.size());
    for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
      auto tm = static_cast<std::size_t>(cfg.tokens_per_modality[m]);
      Tensor<float> tok({tm, td});
      for (std::size_t t = 0; t < tm; ++t) {
        const Tensor<double>& b = p.token_b[m][t];
        for (std::size_t j = 0; j < td; ++j) {
          double v = 0.0;
          for (std::size_t q = 0; q < k; ++q) v += b.at(j, q) * z[q];
          if (cfg.nonlinear) v = std::tanh(v);
          if (cfg.sigma[m] > 0.0) v += rng.normal(0.0, cfg.sigma[m]);
          tok.at(t, j) = static_cast<float>(v);
        }
      }
      x.tokens[m] = std::move(tok);
    }
    x.label = label_from_latent(cfg, p, z);
    out.examples.push_back(std::move(x));
  }
  return out;
}

}  // namespace

namespace {

const MultimodalExample* any_full_example(const DatasetBundle& b) {
  for (const Dataset* d : {&b.pretrain, &b.train, &b.eval, &b.selfdist})
    for (const auto& x : d->examples)
      if (x.present == ModalitySet::all(b.config.modalities.size())) return &x;
  return nullptr;
}

}  // namespace

std::vector<std::size_t> DatasetBundle::token_dims() const {
  std::vector<std::size_t> out;
  if (const MultimodalExample* x = any_full_example(*this)) {
    for (std::size_t m = 0; m < config.modalities.size(); ++m)
      out.push_back(x->tokens[m].cols());
  } else {
    out.assign(config.modalities.size(),
               static_cast<std::size_t>(config.token_dim));
  }
  return out;
}

std::vector<std::size_t> DatasetBundle::token_counts() const {
  std::vector<std::size_t> out;
  if (const MultimodalExample* x = any_full_example(*this)) {
    for (std::size_t m = 0; m < config.modalities.size(); ++m)
      out.push_back(x->tokens[m].rows());
  } else {
    for (auto t : config.tokens_per_modality)
      out.push_back(static_cast<std::size_t>(t));
  }
  return out;
}

DatasetBundle generate(const GenConfig& config, std::uint64_t seed) {
  config.validate();
  Projections p = make_projections(config, seed);
  DatasetBundle b;
  b.config = config;
  b.seed = seed;
  b.pretrain = make_split(config, p, seed, "split/pretrain",
                          config.sizes.pretrain);
  b.train = make_split(config, p, seed, "split/train", config.sizes.train);
  b.eval = make_split(config, p, seed, "split/eval", config.sizes.eval);
  // D_SD: drawn from D without replacement, kept in D's order
  Rng pick(mix_seed(seed, "split/selfdist"));
  std::vector<std::size_t> perm =
      pick.permutation(static_cast<std::size_t>(config.sizes.pretrain));
  perm.resize(static_cast<std::size_t>(config.sizes.selfdist));
  std::sort(perm.begin(), perm.end());
  b.selfdist.examples.reserve(perm.size());
  for (std::size_t i : perm)
    b.selfdist.examples.push_back(b.pretrain.examples[i]);
  return b;
}

std::size_t mask_count(double ratio, std::size_t rows) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw std::invalid_argument("mask ratio must be in [0, 1), got " +
                                std::to_string(ratio));
  // guard against 0.9*10 -> 9.000000000000002 -> ceil 10
  return static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(rows) - 1e-9));
}

MaskedView mask_view(const Tensor<float>& tokens, double ratio,
                     std::uint64_t seed) {
  if (tokens.rank() != 2)
    throw std::invalid_argument("mask_view: tokens must be a matrix");
  std::size_t rows = tokens.rows();
  std::size_t k = mask_count(ratio, rows);
  Rng rng(seed);
  std::vector<std::size_t> perm = rng.permutation(rows);
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  MaskedView mv;
  mv.masked = std::move(perm);
  std::size_t visible = rows - k;
  mv.visible = Tensor<float>({visible, tokens.cols()});
  std::size_t r = 0, next = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (next < mv.masked.size() && mv.masked[next] == i) {
      ++next;
      continue;
    }
    for (std::size_t j = 0; j < tokens.cols(); ++j)
      mv.visible.at(r, j) = tokens.at(i, j);
    ++r;
  }
  return mv;
}

}  // namespace modrobe
