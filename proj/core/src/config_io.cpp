#include "modrobe/config_io.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "modrobe/errors.hpp"

namespace modrobe {

namespace {

using nlohmann::json;

json parse_json(const std::string& text, const std::string& origin) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw config_error(origin + ": not valid JSON");
  if (!j.is_object())
    throw config_error(origin + ": top level must be a JSON object");
  return j;
}

/// Pulls known keys out of `j` one by one; whatever remains is unknown.
class Fields {
 public:
  Fields(json j, std::string origin)
      : j_(std::move(j)), origin_(std::move(origin)) {}

  template <typename T>
  void take(const char* key, T& into) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      into = it->template get<T>();
    } catch (const json::exception&) {
      throw config_error(origin_ + ": bad value for '" + std::string(key) +
                         "'");
    }
    j_.erase(it);
  }

  json take_object(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return json::object();
    if (!it->is_object())
      throw config_error(origin_ + ": '" + std::string(key) +
                         "' must be an object");
    json out = *it;
    j_.erase(it);
    return out;
  }

  void finish() const {
    if (j_.empty()) return;
    throw config_error(origin_ + ": unknown config key '" +
                       j_.begin().key() + "'");
  }

 private:
  json j_;
  std::string origin_;
};

GenSpec gen_spec_from_json(const json& j, const std::string& origin) {
  GenSpec spec;
  Fields f(j, origin);
  f.take("modalities", spec.config.modalities);
  f.take("latent_dim", spec.config.latent_dim);
  f.take("token_dim", spec.config.token_dim);
  f.take("tokens_per_modality", spec.config.tokens_per_modality);
  f.take("sigma", spec.config.sigma);
  f.take("num_classes", spec.config.num_classes);
  std::string task = task_kind_name(spec.config.task);
  f.take("task", task);
  spec.config.task = parse_task_kind(task);
  f.take("nonlinear", spec.config.nonlinear);
  Fields sizes(f.take_object("sizes"), origin + ": sizes");
  sizes.take("pretrain", spec.config.sizes.pretrain);
  sizes.take("train", spec.config.sizes.train);
  sizes.take("eval", spec.config.sizes.eval);
  sizes.take("selfdist", spec.config.sizes.selfdist);
  sizes.finish();
  f.take("seed", spec.seed);
  f.finish();
  return spec;
}

TrainConfig train_config_from_json(const json& j, const std::string& origin) {
  TrainConfig cfg;
  Fields f(j, origin);
  f.take("pretrain_method", cfg.pretrain_method);
  f.take("pretrain_epochs", cfg.pretrain_epochs);
  f.take("downstream_epochs", cfg.downstream_epochs);
  f.take("batch", cfg.batch);
  f.take("lr_pretrain", cfg.lr_pretrain);
  f.take("lr_probe", cfg.lr_probe);
  f.take("lr_finetune", cfg.lr_finetune);
  f.take("warmup_frac", cfg.warmup_frac);
  Fields adamw(f.take_object("adamw"), origin + ": adamw");
  adamw.take("beta1", cfg.adamw.beta1);
  adamw.take("beta2", cfg.adamw.beta2);
  adamw.take("eps", cfg.adamw.eps);
  adamw.take("weight_decay", cfg.adamw.weight_decay);
  adamw.finish();
  f.take("temperature", cfg.contrastive.temperature);
  f.take("normalize_embeddings", cfg.contrastive.normalize);
  f.take("lambda", cfg.masd.lambda);
  f.take("distill_temperature", cfg.masd.distill_temperature);
  f.take("wiseft_alpha", cfg.wiseft_alpha);
  f.take("mask_ratios", cfg.mask_ratios);
  f.take("master_seed", cfg.master_seed);
  f.take("precision", cfg.precision);
  f.take("embed_dim", cfg.embed_dim);
  f.take("hidden_dim", cfg.hidden_dim);
  f.finish();
  return cfg;
}

SweepPlan sweep_plan_from_json(const json& j, const std::string& origin) {
  SweepPlan plan;
  Fields f(j, origin);
  f.take("methods", plan.methods);
  f.take("train_sets", plan.train_sets);
  f.take("eval_sets", plan.eval_sets);
  f.finish();
  return plan;
}

}  // namespace

GenSpec parse_gen_spec(const std::string& json_text,
                       const std::string& origin) {
  return gen_spec_from_json(parse_json(json_text, origin), origin);
}

std::string render_gen_spec(const GenSpec& spec) {
  json j;
  j["modalities"] = spec.config.modalities;
  j["latent_dim"] = spec.config.latent_dim;
  j["token_dim"] = spec.config.token_dim;
  j["tokens_per_modality"] = spec.config.tokens_per_modality;
  j["sigma"] = spec.config.sigma;
  j["num_classes"] = spec.config.num_classes;
  j["task"] = task_kind_name(spec.config.task);
  j["nonlinear"] = spec.config.nonlinear;
  j["sizes"] = {{"pretrain", spec.config.sizes.pretrain},
                {"train", spec.config.sizes.train},
                {"eval", spec.config.sizes.eval},
                {"selfdist", spec.config.sizes.selfdist}};
  j["seed"] = spec.seed;
  return j.dump(2) + "\n";
}

TrainConfig parse_train_config(const std::string& json_text,
                               const std::string& origin) {
  return train_config_from_json(parse_json(json_text, origin), origin);
}

std::string render_train_config(const TrainConfig& cfg) {
  json j;
  j["pretrain_method"] = cfg.pretrain_method;
  j["pretrain_epochs"] = cfg.pretrain_epochs;
  j["downstream_epochs"] = cfg.downstream_epochs;
  j["batch"] = cfg.batch;
  j["lr_pretrain"] = cfg.lr_pretrain;
  j["lr_probe"] = cfg.lr_probe;
  j["lr_finetune"] = cfg.lr_finetune;
  j["warmup_frac"] = cfg.warmup_frac;
  j["adamw"] = {{"beta1", cfg.adamw.beta1},
                {"beta2", cfg.adamw.beta2},
                {"eps", cfg.adamw.eps},
                {"weight_decay", cfg.adamw.weight_decay}};
  j["temperature"] = cfg.contrastive.temperature;
  j["normalize_embeddings"] = cfg.contrastive.normalize;
  j["lambda"] = cfg.masd.lambda;
  j["distill_temperature"] = cfg.masd.distill_temperature;
  j["wiseft_alpha"] = cfg.wiseft_alpha;
  j["mask_ratios"] = cfg.mask_ratios;
  j["master_seed"] = cfg.master_seed;
  j["precision"] = cfg.precision;
  j["embed_dim"] = cfg.embed_dim;
  j["hidden_dim"] = cfg.hidden_dim;
  return j.dump(2) + "\n";
}

SweepPlan parse_sweep_plan(const std::string& json_text,
                           const std::string& origin) {
  return sweep_plan_from_json(parse_json(json_text, origin), origin);
}

SweepSpec parse_sweep_spec(const std::string& json_text,
                           const std::string& origin) {
  json j = parse_json(json_text, origin);
  SweepSpec spec;
  auto it = j.find("plan");
  if (it != j.end()) {
    if (!it->is_object())
      throw config_error(origin + ": 'plan' must be an object");
    spec.plan = sweep_plan_from_json(*it, origin + ": plan");
    j.erase(it);
  }
  spec.train = train_config_from_json(j, origin);
  return spec;
}

std::string apply_overrides(const std::string& json_text,
                            const std::vector<std::string>& overrides) {
  if (overrides.empty()) return json_text;
  json j = parse_json(json_text.empty() ? "{}" : json_text, "--set");
  for (const std::string& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw config_error("--set expects key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq);
    std::string raw = kv.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // unquoted strings
    json* node = &j;
    std::size_t pos = 0;
    while (true) {
      std::size_t dot = key.find('.', pos);
      std::string part = key.substr(pos, dot - pos);
      if (part.empty())
        throw config_error("--set: empty path segment in '" + key + "'");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      if (!node->is_object() && !node->is_null())
        throw config_error("--set: '" + part + "' in '" + key +
                           "' is not an object");
      pos = dot + 1;
    }
  }
  return j.dump();
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open " + path.string());
  std::string out((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  return out;
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace modrobe
