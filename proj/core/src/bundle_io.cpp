#include "modrobe/bundle_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "modrobe/config_io.hpp"
#include "modrobe/errors.hpp"
#include "modrobe/rng.hpp"

namespace modrobe {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'T', 'B'};
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

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct Reader {
  const std::string& buf;
  std::string ctx;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("bundle load: truncated file (" + ctx + ")");
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
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  bool eof() const { return pos == buf.size(); }
};

std::string read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("bundle load: cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_binary(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("bundle save: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw std::runtime_error("bundle save: write failed: " + path.string());
}

const char* kSplitFiles[4] = {"D.mmtb", "D_T.mmtb", "D_E.mmtb", "D_SD.mmtb"};

}  // namespace

std::string serialize_split(const Dataset& d, const GenConfig& config) {
  ModalityUniverse universe = config.universe();
  // Geometry header comes from the data when any example carries the
  // modality, falling back to the config for splits that never do.
  std::vector<std::size_t> counts(universe.size()), dims(universe.size());
  for (std::size_t m = 0; m < universe.size(); ++m) {
    counts[m] = static_cast<std::size_t>(config.tokens_per_modality[m]);
    dims[m] = static_cast<std::size_t>(config.token_dim);
    for (const auto& x : d.examples)
      if (x.present.contains(m)) {
        counts[m] = x.tokens_for(m).rows();
        dims[m] = x.tokens_for(m).cols();
        break;
      }
  }

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(universe.size()));
  for (std::size_t m = 0; m < universe.size(); ++m) {
    const std::string& name = universe.name(m);
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(counts[m]));
    put_u32(out, static_cast<std::uint32_t>(dims[m]));
  }
  out.push_back(config.task == TaskKind::single_label ? 0 : 1);
  put_u32(out, static_cast<std::uint32_t>(config.num_classes));
  put_u64(out, d.size());

  for (std::size_t i = 0; i < d.size(); ++i) {
    const MultimodalExample& x = d.examples[i];
    put_u32(out, x.present.bits());
    out.push_back(x.label.has_value() ? 1 : 0);
    if (x.label.has_value()) {
      if (config.task == TaskKind::single_label) {
        put_u32(out, static_cast<std::uint32_t>(x.label->cls));
      } else {
        if (x.label->flags.size() !=
            static_cast<std::size_t>(config.num_classes))
          throw std::runtime_error("bundle save: example " +
                                   std::to_string(i) + " has " +
                                   std::to_string(x.label->flags.size()) +
                                   " label flags");
        for (std::uint8_t f : x.label->flags)
          out.push_back(static_cast<char>(f));
      }
    }
    for (std::size_t m : x.present.indices()) {
      const Tensor<float>& tok = x.tokens_for(m);
      if (tok.rows() != counts[m] || tok.cols() != dims[m])
        throw std::runtime_error("bundle save: example " + std::to_string(i) +
                                 " token shape differs from the split header");
      for (float v : tok.data()) put_f32(out, v);
    }
  }
  return out;
}

void save_split(const Dataset& d, const GenConfig& config,
                const std::filesystem::path& path) {
  write_binary(path, serialize_split(d, config));
}

Dataset load_split(const std::filesystem::path& path, const GenConfig& config) {
  std::string buf = read_binary(path);
  Reader r{buf, path.filename().string()};
  if (r.bytes(4) != std::string(kMagic, 4))
    throw std::runtime_error("bundle load: " + path.string() +
                             " is not an MMTB file");
  if (std::uint32_t v = r.u32(); v != kVersion)
    throw std::runtime_error("bundle load: unsupported MMTB version " +
                             std::to_string(v));
  ModalityUniverse universe = config.universe();
  std::uint32_t n_mod = r.u32();
  if (n_mod != universe.size())
    throw std::runtime_error("bundle load: " + path.string() + " has " +
                             std::to_string(n_mod) + " modalities, config has " +
                             std::to_string(universe.size()));
  std::vector<std::size_t> counts(n_mod), dims(n_mod);
  for (std::uint32_t m = 0; m < n_mod; ++m) {
    std::string name = r.bytes(r.u16());
    if (name != universe.name(m))
      throw std::runtime_error("bundle load: modality '" + name +
                               "' does not match config ('" +
                               universe.name(m) + "')");
    counts[m] = r.u32();
    dims[m] = r.u32();
    if (counts[m] == 0 || dims[m] == 0)
      throw std::runtime_error("bundle load: zero token geometry for '" +
                               name + "'");
  }
  TaskKind task = r.u8() == 0 ? TaskKind::single_label : TaskKind::multi_label;
  if (task != config.task)
    throw std::runtime_error("bundle load: task kind mismatch in " +
                             path.string());
  std::uint32_t classes = r.u32();
  if (classes != static_cast<std::uint32_t>(config.num_classes))
    throw std::runtime_error("bundle load: class count mismatch in " +
                             path.string());
  std::uint64_t count = r.u64();

  Dataset d;
  d.examples.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    MultimodalExample& x = d.examples[i];
    std::uint32_t bits = r.u32();
    if (universe.size() < 32 && bits >> universe.size())
      throw std::runtime_error("bundle load: example " + std::to_string(i) +
                               " has presence bits outside the universe");
    x.present = ModalitySet::from_bits(bits);
    x.tokens.resize(universe.size());
    if (r.u8() != 0) {
      Label lab;
      if (task == TaskKind::single_label) {
        lab.cls = static_cast<int>(r.u32());
      } else {
        lab.flags.resize(classes);
        for (std::uint32_t c = 0; c < classes; ++c) lab.flags[c] = r.u8();
      }
      x.label = std::move(lab);
    }
    for (std::size_t m : x.present.indices()) {
      Tensor<float> tok({counts[m], dims[m]});
      for (auto& v : tok.data()) v = r.f32();
      x.tokens[m] = std::move(tok);
    }
  }
  if (!r.eof())
    throw std::runtime_error("bundle load: trailing bytes in " +
                             path.string());
  return d;
}

void save_bundle(const DatasetBundle& bundle,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  GenSpec spec{bundle.config, bundle.seed};
  write_text_file(dir / "config.json", render_gen_spec(spec));
  const Dataset* splits[4] = {&bundle.pretrain, &bundle.train, &bundle.eval,
                              &bundle.selfdist};
  for (int i = 0; i < 4; ++i)
    save_split(*splits[i], bundle.config, dir / kSplitFiles[i]);
  write_text_file(dir / "hash.txt", bundle_hash(dir) + "\n");
}

DatasetBundle load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "config.json"))
    throw config_error("no bundle at " + dir.string() +
                       " (config.json missing)");
  GenSpec spec =
      parse_gen_spec(read_text_file(dir / "config.json"), "config.json");
  spec.config.validate();
  DatasetBundle bundle;
  bundle.config = spec.config;
  bundle.seed = spec.seed;
  bundle.pretrain = load_split(dir / kSplitFiles[0], bundle.config);
  bundle.train = load_split(dir / kSplitFiles[1], bundle.config);
  bundle.eval = load_split(dir / kSplitFiles[2], bundle.config);
  bundle.selfdist = load_split(dir / kSplitFiles[3], bundle.config);
  if (std::filesystem::exists(dir / "hash.txt")) {
    std::string want = read_text_file(dir / "hash.txt");
    while (!want.empty() && (want.back() == '\n' || want.back() == '\r'))
      want.pop_back();
    std::string have = bundle_hash(dir);
    if (want != have)
      throw std::runtime_error("bundle at " + dir.string() +
                               " fails its hash check (" + have +
                               " != recorded " + want + ")");
  }
  return bundle;
}

namespace {
std::string hex64(std::uint64_t h) {
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(out, 16);
}
}  // namespace

std::string bundle_hash(const std::filesystem::path& dir) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const char* name : kSplitFiles) h = fnv1a64(read_binary(dir / name), h);
  return hex64(h);
}

std::string bundle_content_hash(const DatasetBundle& bundle) {
  const Dataset* splits[4] = {&bundle.pretrain, &bundle.train, &bundle.eval,
                              &bundle.selfdist};
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Dataset* d : splits)
    h = fnv1a64(serialize_split(*d, bundle.config), h);
  return hex64(h);
}

}  // namespace modrobe
