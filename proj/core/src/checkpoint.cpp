#include "modrobe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "modrobe/errors.hpp"

namespace modrobe {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'M', 'M', 'R', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string ctx;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("checkpoint load: truncated file (" + ctx + ")");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  bool eof() const { return pos == buf.size(); }
};

json meta_to_json(const CheckpointMeta& m) {
  json j;
  j["modalities"] = m.modalities;
  j["token_dim"] = m.token_dim;
  j["token_dims"] = m.token_dims;
  j["tokens_per_modality"] = m.tokens_per_modality;
  j["embed_dim"] = m.embed_dim;
  j["hidden_dim"] = m.hidden_dim;
  j["num_classes"] = m.num_classes;
  j["task"] = m.task;
  j["pretrain_method"] = m.pretrain_method;
  j["downstream"] = m.downstream;
  j["train_set"] = m.train_set;
  j["seed"] = m.seed;
  j["precision"] = m.precision;
  j["extra"] = m.extra;
  return j;
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  m.modalities = j.at("modalities").get<std::vector<std::string>>();
  m.token_dim = j.at("token_dim").get<std::size_t>();
  m.token_dims = j.at("token_dims").get<std::vector<std::size_t>>();
  m.tokens_per_modality =
      j.at("tokens_per_modality").get<std::vector<std::size_t>>();
  m.embed_dim = j.at("embed_dim").get<std::size_t>();
  m.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  m.num_classes = j.at("num_classes").get<std::size_t>();
  m.task = j.at("task").get<std::string>();
  m.pretrain_method = j.at("pretrain_method").get<std::string>();
  m.downstream = j.at("downstream").get<std::string>();
  m.train_set = j.at("train_set").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.precision = j.at("precision").get<std::string>();
  m.extra = j.at("extra").get<std::map<std::string, std::string>>();
  return m;
}

}  // namespace

const Tensor<double>& ModelCheckpoint::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end())
    throw std::runtime_error("checkpoint: no parameter named '" + name + "'");
  return it->second;
}

void save_checkpoint(const ModelCheckpoint& ckpt,
                     const std::filesystem::path& path) {
  bool f64 = ckpt.meta.precision == "f64";
  if (!f64 && ckpt.meta.precision != "f32")
    throw config_error("checkpoint precision must be 'f32' or 'f64', got '" +
                       ckpt.meta.precision + "'");
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  std::string meta = meta_to_json(ckpt.meta).dump();
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  for (const auto& [name, t] : ckpt.params) {
    if (name.size() > 0xffff)
      throw std::runtime_error("checkpoint save: parameter name too long");
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(f64 ? 1 : 0);
    out.push_back(static_cast<char>(t.rank()));
    for (std::size_t e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) {
      if (f64)
        put_u64(out, std::bit_cast<std::uint64_t>(v));
      else
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r{buf, 0, path.string()};
  if (r.bytes(4) != std::string(kMagic, 4))
    throw std::runtime_error("checkpoint load: bad magic in " + path.string());
  std::uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("checkpoint load: unsupported version " +
                             std::to_string(version) + " in " + path.string());
  std::uint32_t meta_len = r.u32();
  ModelCheckpoint ckpt;
  try {
    ckpt.meta = meta_from_json(json::parse(r.bytes(meta_len)));
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint load: bad metadata in " +
                             path.string() + ": " + e.what());
  }
  while (!r.eof()) {
    std::uint16_t name_len = r.u16();
    std::string name = r.bytes(name_len);
    std::uint8_t dtype = r.u8();
    if (dtype > 1)
      throw std::runtime_error("checkpoint load: bad dtype for '" + name + "'");
    std::uint8_t rank = r.u8();
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) shape.push_back(r.u32());
    std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (dtype == 1)
        data[i] = std::bit_cast<double>(r.u64());
      else
        data[i] = std::bit_cast<float>(r.u32());
    }
    if (!ckpt.params.emplace(name, Tensor<double>(shape, std::move(data)))
             .second)
      throw std::runtime_error("checkpoint load: duplicate parameter '" +
                               name + "'");
  }
  return ckpt;
}

ModelCheckpoint interpolate(const ModelCheckpoint& a, const ModelCheckpoint& b,
                            double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("interpolate: alpha must be in [0, 1], got " +
                                std::to_string(alpha));
  if (a.meta.modalities != b.meta.modalities ||
      a.meta.pretrain_method != b.meta.pretrain_method ||
      a.meta.embed_dim != b.meta.embed_dim ||
      a.meta.num_classes != b.meta.num_classes)
    throw std::invalid_argument(
        "interpolate: checkpoints come from different model lineages");
  for (const auto& [name, t] : a.params) {
    auto it = b.params.find(name);
    if (it == b.params.end() || !it->second.same_shape(t))
      throw std::invalid_argument(
          "interpolate: parameter mismatch at '" + name + "'");
  }
  for (const auto& [name, t] : b.params)
    if (!a.has_param(name))
      throw std::invalid_argument(
          "interpolate: parameter mismatch at '" + name + "'");

  // exact endpoints, no arithmetic
  if (alpha == 1.0) return a;
  if (alpha == 0.0) return b;

  ModelCheckpoint out;
  out.meta = a.meta;
  out.meta.downstream = "interpolated";
  out.meta.extra["alpha"] = std::to_string(alpha);
  out.meta.extra["parent_a"] = a.meta.downstream;
  out.meta.extra["parent_b"] = b.meta.downstream;
  for (const auto& [name, ta] : a.params) {
    const Tensor<double>& tb = b.params.at(name);
    Tensor<double> t(ta.shape());
    auto d = t.data();
    auto da = ta.data();
    auto db = tb.data();
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = alpha * da[i] + (1.0 - alpha) * db[i];
    out.params.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace modrobe
