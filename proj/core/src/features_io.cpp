#include "modrobe/features_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "modrobe/errors.hpp"

namespace modrobe {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'M', 'M', 'F', 'D'};
constexpr std::uint32_t kVersion = 1;

[[noreturn]] void row_error(const std::filesystem::path& path, std::size_t row,
                            const std::string& why) {
  throw std::runtime_error(path.string() + ": row " + std::to_string(row) +
                           ": " + why);
}

Label parse_label(const std::string& text, const FeatureManifest& mf,
                  const std::filesystem::path& path, std::size_t row) {
  Label lab;
  if (mf.task == TaskKind::single_label) {
    try {
      std::size_t used = 0;
      lab.cls = std::stoi(text, &used);
      if (used != text.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      row_error(path, row, "bad label '" + text + "'");
    }
    if (lab.cls < 0 || static_cast<std::size_t>(lab.cls) >= mf.num_classes)
      row_error(path, row, "label " + text + " out of range");
  } else {
    lab.flags.assign(mf.num_classes, 0);
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t next = text.find(';', pos);
      if (next == std::string::npos) next = text.size();
      std::string part = text.substr(pos, next - pos);
      if (!part.empty()) {
        int idx = -1;
        try {
          std::size_t used = 0;
          idx = std::stoi(part, &used);
          if (used != part.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
          row_error(path, row, "bad class index '" + part + "'");
        }
        if (idx < 0 || static_cast<std::size_t>(idx) >= mf.num_classes)
          row_error(path, row, "class index " + part + " out of range");
        lab.flags[static_cast<std::size_t>(idx)] = 1;
      }
      pos = next + 1;
    }
  }
  return lab;
}

std::string label_text(const Label& lab, const FeatureManifest& mf) {
  if (mf.task == TaskKind::single_label) return std::to_string(lab.cls);
  std::string out;
  for (std::size_t c = 0; c < lab.flags.size(); ++c) {
    if (!lab.flags[c]) continue;
    if (!out.empty()) out += ';';
    out += std::to_string(c);
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t next = line.find(',', pos);
    if (next == std::string::npos) next = line.size();
    out.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

}  // namespace

void FeatureManifest::validate() const {
  ModalityUniverse u(modalities);  // checks names
  if (dims.size() != modalities.size())
    throw config_error("feature manifest: dims must list one entry per "
                       "modality");
  for (std::size_t d : dims)
    if (d == 0) throw config_error("feature manifest: zero feature dim");
  if (num_classes == 0)
    throw config_error("feature manifest: num_classes must be positive");
}

Dataset ingest_feature_csv(const std::filesystem::path& path,
                           const FeatureManifest& mf) {
  mf.validate();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string expected_header = "example_id,label";
  for (std::size_t m = 0; m < mf.modalities.size(); ++m)
    for (std::size_t j = 0; j < mf.dims[m]; ++j)
      expected_header += "," + mf.modalities[m] + "_" + std::to_string(j);

  Dataset out;
  std::string line;
  std::size_t row = 0;
  bool header_seen = false;
  std::size_t total_cols = 2;
  for (std::size_t d : mf.dims) total_cols += d;
  while (std::getline(f, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != expected_header)
        row_error(path, row, "header does not match manifest (expected '" +
                                 expected_header + "')");
      header_seen = true;
      continue;
    }
    auto fields = split_csv(line);
    if (fields.size() != total_cols)
      row_error(path, row,
                "expected " + std::to_string(total_cols) + " fields, got " +
                    std::to_string(fields.size()));
    if (fields[0].empty()) row_error(path, row, "empty example_id");
    MultimodalExample x;
    x.present = ModalitySet::all(mf.modalities.size());
    x.tokens.resize(mf.modalities.size());
    x.label = parse_label(fields[1], mf, path, row);
    std::size_t col = 2;
    for (std::size_t m = 0; m < mf.modalities.size(); ++m) {
      Tensor<float> tok({1, mf.dims[m]});
      for (std::size_t j = 0; j < mf.dims[m]; ++j, ++col) {
        try {
          std::size_t used = 0;
          tok.at(0, j) = std::stof(fields[col], &used);
          if (used != fields[col].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
          row_error(path, row, "bad value '" + fields[col] + "' in column " +
                                   mf.modalities[m] + "_" + std::to_string(j));
        }
      }
      x.tokens[m] = std::move(tok);
    }
    out.examples.push_back(std::move(x));
  }
  if (!header_seen)
    throw std::runtime_error(path.string() + ": missing header row");
  return out;
}

void export_feature_csv(const Dataset& d, const FeatureManifest& mf,
                        const std::filesystem::path& path) {
  mf.validate();
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "example_id,label";
  for (std::size_t m = 0; m < mf.modalities.size(); ++m)
    for (std::size_t j = 0; j < mf.dims[m]; ++j)
      f << ',' << mf.modalities[m] << '_' << j;
  f << '\n';
  char buf[48];
  for (std::size_t i = 0; i < d.size(); ++i) {
    const MultimodalExample& x = d.examples[i];
    if (!x.label)
      throw std::runtime_error("export_feature_csv: example " +
                               std::to_string(i) + " has no label");
    f << 'e' << i << ',' << label_text(*x.label, mf);
    for (std::size_t m = 0; m < mf.modalities.size(); ++m) {
      const Tensor<float>& tok = x.tokens_for(m);
      if (tok.rows() != 1 || tok.cols() != mf.dims[m])
        throw std::runtime_error(
            "export_feature_csv: example " + std::to_string(i) +
            " is not pooled to one row of dim " + std::to_string(mf.dims[m]));
      for (std::size_t j = 0; j < mf.dims[m]; ++j) {
        std::snprintf(buf, sizeof(buf), "%.9g", tok.at(0, j));
        f << ',' << buf;
      }
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

struct BinReader {
  std::string buf;
  std::size_t pos = 0;
  std::filesystem::path path;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error(path.string() + ": truncated feature file");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(buf[pos]);
    v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1]))
         << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i]))
           << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  bool eof() const { return pos == buf.size(); }
};

}  // namespace

void export_feature_mmfd(const Dataset& d, const FeatureManifest& mf,
                         const std::filesystem::path& path) {
  mf.validate();
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(mf.modalities.size()));
  for (std::size_t m = 0; m < mf.modalities.size(); ++m) {
    put_u16(out, static_cast<std::uint16_t>(mf.modalities[m].size()));
    out += mf.modalities[m];
    put_u32(out, static_cast<std::uint32_t>(mf.dims[m]));
  }
  out.push_back(mf.task == TaskKind::single_label ? 0 : 1);
  put_u32(out, static_cast<std::uint32_t>(mf.num_classes));
  put_u32(out, static_cast<std::uint32_t>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const MultimodalExample& x = d.examples[i];
    if (!x.label)
      throw std::runtime_error("export_feature_mmfd: example " +
                               std::to_string(i) + " has no label");
    std::string rec;
    std::string id = "e" + std::to_string(i);
    put_u16(rec, static_cast<std::uint16_t>(id.size()));
    rec += id;
    if (mf.task == TaskKind::single_label) {
      put_u32(rec, static_cast<std::uint32_t>(x.label->cls));
    } else {
      if (x.label->flags.size() != mf.num_classes)
        throw std::runtime_error("export_feature_mmfd: bad label width at " +
                                 std::to_string(i));
      for (std::uint8_t flag : x.label->flags)
        rec.push_back(static_cast<char>(flag));
    }
    for (std::size_t m = 0; m < mf.modalities.size(); ++m) {
      const Tensor<float>& tok = x.tokens_for(m);
      if (tok.rows() != 1 || tok.cols() != mf.dims[m])
        throw std::runtime_error(
            "export_feature_mmfd: example " + std::to_string(i) +
            " is not pooled to one row of dim " + std::to_string(mf.dims[m]));
      for (std::size_t j = 0; j < mf.dims[m]; ++j)
        put_u32(rec, std::bit_cast<std::uint32_t>(tok.at(0, j)));
    }
    put_u32(out, static_cast<std::uint32_t>(rec.size()));
    out += rec;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

Dataset ingest_feature_mmfd(const std::filesystem::path& path,
                            const FeatureManifest& mf) {
  mf.validate();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  BinReader r;
  r.buf.assign((std::istreambuf_iterator<char>(f)),
               std::istreambuf_iterator<char>());
  r.path = path;
  if (r.bytes(4) != std::string(kMagic, 4))
    throw std::runtime_error(path.string() + ": bad magic");
  if (r.u32() != kVersion)
    throw std::runtime_error(path.string() + ": unsupported version");
  std::uint32_t n_mod = r.u32();
  if (n_mod != mf.modalities.size())
    throw std::runtime_error(path.string() + ": file has " +
                             std::to_string(n_mod) + " modalities, manifest " +
                             std::to_string(mf.modalities.size()));
  for (std::size_t m = 0; m < n_mod; ++m) {
    std::string name = r.bytes(r.u16());
    std::uint32_t dim = r.u32();
    if (name != mf.modalities[m] || dim != mf.dims[m])
      throw std::runtime_error(path.string() + ": modality " +
                               std::to_string(m) + " is (" + name + ", " +
                               std::to_string(dim) + "), manifest says (" +
                               mf.modalities[m] + ", " +
                               std::to_string(mf.dims[m]) + ")");
  }
  TaskKind task = r.u8() == 0 ? TaskKind::single_label : TaskKind::multi_label;
  std::uint32_t classes = r.u32();
  if (task != mf.task || classes != mf.num_classes)
    throw std::runtime_error(path.string() + ": task/classes disagree with "
                                             "manifest");
  std::uint32_t count = r.u32();
  Dataset out;
  out.examples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t rec_len = r.u32();
    std::size_t rec_end = r.pos + rec_len;
    r.need(rec_len);
    MultimodalExample x;
    x.present = ModalitySet::all(n_mod);
    x.tokens.resize(n_mod);
    std::string id = r.bytes(r.u16());
    if (id.empty())
      throw std::runtime_error(path.string() + ": record " +
                               std::to_string(i) + ": empty example_id");
    Label lab;
    if (task == TaskKind::single_label) {
      lab.cls = static_cast<int>(r.u32());
      if (lab.cls < 0 || static_cast<std::size_t>(lab.cls) >= classes)
        throw std::runtime_error(path.string() + ": record " +
                                 std::to_string(i) + ": label out of range");
    } else {
      lab.flags.resize(classes);
      for (auto& flag : lab.flags) flag = r.u8();
    }
    x.label = lab;
    for (std::size_t m = 0; m < n_mod; ++m) {
      Tensor<float> tok({1, mf.dims[m]});
      for (std::size_t j = 0; j < mf.dims[m]; ++j) tok.at(0, j) = r.f32();
      x.tokens[m] = std::move(tok);
    }
    if (r.pos != rec_end)
      throw std::runtime_error(path.string() + ": record " +
                               std::to_string(i) + ": length mismatch");
    out.examples.push_back(std::move(x));
  }
  if (!r.eof())
    throw std::runtime_error(path.string() + ": trailing bytes");
  return out;
}

MultimodalExample pool_example(const MultimodalExample& x) {
  MultimodalExample out;
  out.present = x.present;
  out.tokens.resize(x.tokens.size());
  out.label = x.label;
  for (std::size_t m : x.present.indices()) {
    const Tensor<float>& tok = x.tokens[m];
    Tensor<float> pooled({1, tok.cols()});
    for (std::size_t j = 0; j < tok.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < tok.rows(); ++i) acc += tok.at(i, j);
      pooled.at(0, j) =
          static_cast<float>(acc / static_cast<double>(tok.rows()));
    }
    out.tokens[m] = std::move(pooled);
  }
  return out;
}

Dataset pool_dataset(const Dataset& d) {
  Dataset out;
  out.examples.reserve(d.size());
  for (const auto& x : d.examples) out.examples.push_back(pool_example(x));
  return out;
}

DatasetBundle ingest_features(const std::filesystem::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("cannot read " + manifest_path.string());
  json j;
  try {
    j = json::parse(std::string((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>()));
  } catch (const json::exception& e) {
    throw config_error(manifest_path.string() + ": bad JSON: " + e.what());
  }
  FeatureManifest mf;
  try {
    for (const auto& m : j.at("modalities")) {
      mf.modalities.push_back(m.at("name").get<std::string>());
      mf.dims.push_back(m.at("dim").get<std::size_t>());
    }
    mf.task = parse_task_kind(j.at("task").get<std::string>());
    mf.num_classes = j.at("classes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw config_error(manifest_path.string() + ": " + e.what());
  }
  mf.validate();

  DatasetBundle b;
  b.config.modalities = mf.modalities;
  b.config.num_classes = static_cast<std::int64_t>(mf.num_classes);
  b.config.task = mf.task;
  b.config.token_dim = static_cast<std::int64_t>(mf.dims[0]);
  b.config.tokens_per_modality.assign(mf.modalities.size(), 1);
  b.config.sigma.assign(mf.modalities.size(), 0.0);

  auto ingest_one = [&](const std::string& key) -> Dataset {
    if (!j.contains("files") || !j["files"].contains(key)) return {};
    std::filesystem::path p = j["files"][key].get<std::string>();
    if (p.is_relative()) p = manifest_path.parent_path() / p;
    if (p.extension() == ".mmfd") return ingest_feature_mmfd(p, mf);
    return ingest_feature_csv(p, mf);
  };
  b.pretrain = ingest_one("pretrain");
  b.train = ingest_one("train");
  b.eval = ingest_one("eval");
  b.selfdist = ingest_one("selfdist");
  b.config.sizes.pretrain = static_cast<std::int64_t>(b.pretrain.size());
  b.config.sizes.train = static_cast<std::int64_t>(b.train.size());
  b.config.sizes.eval = static_cast<std::int64_t>(b.eval.size());
  b.config.sizes.selfdist = static_cast<std::int64_t>(b.selfdist.size());
  return b;
}

}  // namespace modrobe
