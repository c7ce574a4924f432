#pragma once

// Shared test utilities: random tensors, the central-difference gradient
// checker, scratch directories, tiny data bundles, and a runner for the
// installed CLI binary.

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "modrobe/data.hpp"
#include "modrobe/graph.hpp"
#include "modrobe/rng.hpp"
#include "modrobe/tensor.hpp"
#include "modrobe/train.hpp"

namespace testutil {

inline modrobe::Tensor<double> randn(modrobe::Rng& rng, modrobe::Shape shape,
                                     double scale = 1.0) {
  modrobe::Tensor<double> t(std::move(shape));
  rng.fill_normal(t, 0.0, scale);
  return t;
}

/// Normal draws pushed away from zero, for kernels whose derivative is
/// undefined or wild there (relu kink, log blowup).
inline modrobe::Tensor<double> randn_away_from(modrobe::Rng& rng,
                                               modrobe::Shape shape,
                                               double margin) {
  modrobe::Tensor<double> t = randn(rng, std::move(shape));
  for (auto& v : t.data())
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  return t;
}

using ParamMap = std::map<std::string, modrobe::Tensor<double>>;
using NodeMap = std::map<std::string, modrobe::NodeId>;

/// Central finite differences against the analytic gradients, in 64-bit.
/// `build` must construct the loss from the given leaves alone so the
/// function can be re-evaluated at perturbed points; returns the worst
/// relative error over every element of every parameter.
template <typename BuildFn>
double max_grad_error(const ParamMap& params, BuildFn build, double h = 1e-6) {
  modrobe::Graph<double> g;
  NodeMap ids;
  for (const auto& [name, t] : params) ids[name] = g.leaf(t, true, name);
  modrobe::NodeId loss = build(g, ids);
  g.backward(loss);
  auto grads = g.param_grads();

  auto eval = [&](const ParamMap& p) {
    modrobe::Graph<double> gh;
    NodeMap idh;
    for (const auto& [name, t] : p) idh[name] = gh.leaf(t, true, name);
    return gh.value(build(gh, idh)).scalar_value();
  };

  double worst = 0.0;
  for (const auto& [name, t] : params) {
    const modrobe::Tensor<double>& grad = grads.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      ParamMap hi = params, lo = params;
      hi.at(name)[i] += h;
      lo.at(name)[i] -= h;
      double fd = (eval(hi) - eval(lo)) / (2.0 * h);
      double an = grad[i];
      double err = std::abs(an - fd) /
                   std::max({1.0, std::abs(an), std::abs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("modrobe_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const {
    return path_ / leaf;
  }

 private:
  std::filesystem::path path_;
};

/// Small two-modality bundle, big enough to train on but quick.
inline modrobe::DatasetBundle tiny_bundle(std::uint64_t seed = 7) {
  modrobe::GenConfig cfg;
  cfg.modalities = {"m0", "m1"};
  cfg.latent_dim = 4;
  cfg.token_dim = 6;
  cfg.tokens_per_modality = {3, 3};
  cfg.sigma = {0.1, 0.4};
  cfg.num_classes = 4;
  cfg.sizes.pretrain = 160;
  cfg.sizes.train = 96;
  cfg.sizes.eval = 120;
  cfg.sizes.selfdist = 48;
  return modrobe::generate(cfg, seed);
}

/// Train config scaled down to seconds.
inline modrobe::TrainConfig tiny_train() {
  modrobe::TrainConfig cfg;
  cfg.pretrain_epochs = 2;
  cfg.downstream_epochs = 3;
  cfg.batch = 32;
  return cfg;
}

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

/// Runs the real CLI through the shell; `prefix` can set environment
/// variables ("FOO=bar ").
inline CliResult run_cli(const std::string& args,
                         const std::string& prefix = "") {
  std::string cmd = prefix + std::string(MODROBE_CLI_PATH) + " " + args +
                    " 2>&1";
  CliResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0)
    r.output.append(buf, n);
  int status = ::pclose(pipe);
  if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  return r;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::FILE* f = std::fopen(p.string().c_str(), "rb");
  if (!f) return {};
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) out.append(buf, n);
  std::fclose(f);
  return out;
}

}  // namespace testutil
