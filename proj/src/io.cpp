#include "asymloc/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "asymloc/errors.hpp"

namespace asymloc {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void f32s(std::span<const float> v) { bytes(v.data(), v.size() * sizeof(float)); }
  void str16(const std::string& s) {
    if (s.size() > 0xffff) throw FormatError("string too long for a u16 length prefix");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, const char* what) : in_(in), what_(what) {}
  void bytes(void* p, std::size_t n) {
    if (n > in_.size() - pos_)
      throw CorruptionError(std::string(what_) + " truncated at byte " + std::to_string(pos_));
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint16_t u16() { std::uint16_t v; bytes(&v, 2); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<float> f32s(std::size_t n) {
    if (n > (in_.size() - pos_) / sizeof(float))
      throw CorruptionError(std::string(what_) + " truncated at byte " + std::to_string(pos_));
    std::vector<float> v(n);
    bytes(v.data(), n * sizeof(float));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  const char* what_;
};

void check_magic(Reader& r, const char* magic, const char* what, std::uint32_t version) {
  char m[4];
  try {
    r.bytes(m, 4);
  } catch (const CorruptionError&) {
    throw FormatError(std::string(what) + ": file too short for magic bytes");
  }
  if (std::memcmp(m, magic, 4) != 0) throw FormatError(std::string(what) + ": bad magic, expected " + magic);
  const std::uint32_t v = r.u32();
  if (v != version)
    throw FormatError(std::string(what) + ": unsupported version " + std::to_string(v) + ", expected " +
                      std::to_string(version));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> meta = ckpt.metadata;
  for (auto& [k, v] : ckpt.model.spec.to_metadata()) meta[k] = v;
  std::string block;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw FormatError("metadata key/value contains a reserved character: " + k);
    block += k + "=" + v + "\n";
  }
  Writer w;
  w.bytes("ALOC", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(block.size()));
  w.bytes(block.data(), block.size());
  const std::size_t count = ckpt.model.tensors.size() + ckpt.extra.size();
  w.u32(static_cast<std::uint32_t>(count));
  auto put = [&](const std::string& name, const TensorF& t) {
    w.str16(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (int d : t.dims()) w.u32(static_cast<std::uint32_t>(d));
    w.u8(0);
    w.f32s(t.data());
  };
  for (std::size_t i = 0; i < ckpt.model.tensors.size(); ++i) put(ckpt.model.names[i], ckpt.model.tensors[i]);
  for (const NamedTensor& e : ckpt.extra) put(e.name, e.tensor);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "checkpoint");
  check_magic(r, "ALOC", "checkpoint", kCheckpointVersion);
  Checkpoint ckpt;
  const std::string block = r.str(r.u32());
  std::stringstream ss(block);
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CorruptionError("checkpoint metadata line without '=': " + line);
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  try {
    ckpt.model.spec = ModelSpec::from_metadata(ckpt.metadata);
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("checkpoint spec invalid: ") + e.what());
  }
  for (auto it = ckpt.metadata.begin(); it != ckpt.metadata.end();)
    it = it->first.rfind("model.", 0) == 0 ? ckpt.metadata.erase(it) : std::next(it);

  Rng unused(0);
  const Model<float> layout = build_model(ckpt.model.spec, unused);
  const std::uint32_t count = r.u32();
  if (count < layout.tensors.size())
    throw CorruptionError("checkpoint holds " + std::to_string(count) + " tensors, spec needs " +
                          std::to_string(layout.tensors.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u16());
    const int rank = r.u8();
    if (rank < 1 || rank > 8) throw CorruptionError("tensor '" + name + "' has invalid rank");
    std::vector<int> dims;
    std::size_t n = 1;
    for (int d = 0; d < rank; ++d) {
      const std::uint32_t v = r.u32();
      if (v == 0 || v > (1u << 28)) throw CorruptionError("tensor '" + name + "' has invalid dims");
      dims.push_back(static_cast<int>(v));
      n *= v;
    }
    if (r.u8() != 0) throw FormatError("tensor '" + name + "' has an unsupported dtype tag");
    TensorF t(dims, r.f32s(n));
    if (i < layout.tensors.size()) {
      if (name != layout.names[i] || !t.same_shape(layout.tensors[i]))
        throw CorruptionError("tensor '" + name + "' " + dims_to_string(dims) + " does not match spec tensor '" +
                              layout.names[i] + "' " + dims_to_string(layout.tensors[i].dims()));
      ckpt.model.names.push_back(std::move(name));
      ckpt.model.tensors.push_back(std::move(t));
    } else {
      ckpt.extra.push_back({std::move(name), std::move(t)});
    }
  }
  if (!r.done()) throw CorruptionError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::vector<std::uint8_t> encode_features(const KeypointSet& ks) {
  const std::size_t n = ks.size();
  if (ks.confidences.size() != n || ks.descriptors.size() != n * static_cast<std::size_t>(ks.dim))
    throw ShapeError("keypoint set arrays disagree in length");
  Writer w;
  w.bytes("ALFT", 4);
  w.u32(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(ks.width));
  w.u32(static_cast<std::uint32_t>(ks.height));
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(static_cast<std::uint32_t>(ks.dim));
  for (const Point2& p : ks.positions) {
    const float xy[2] = {static_cast<float>(p.x), static_cast<float>(p.y)};
    w.bytes(xy, sizeof xy);
  }
  w.f32s(ks.confidences);
  w.f32s(ks.descriptors);
  return w.take();
}

KeypointSet decode_features(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "feature file");
  check_magic(r, "ALFT", "feature file", kFeatureFileVersion);
  KeypointSet ks;
  ks.width = static_cast<int>(r.u32());
  ks.height = static_cast<int>(r.u32());
  const std::uint32_t n = r.u32();
  ks.dim = static_cast<int>(r.u32());
  if (ks.dim < 1 && n > 0) throw CorruptionError("feature file has zero descriptor dimension");
  const std::vector<float> pos = r.f32s(2 * static_cast<std::size_t>(n));
  for (std::uint32_t i = 0; i < n; ++i) ks.positions.push_back({pos[2 * i], pos[2 * i + 1]});
  ks.confidences = r.f32s(n);
  ks.descriptors = r.f32s(static_cast<std::size_t>(n) * static_cast<std::size_t>(ks.dim));
  if (!r.done()) throw CorruptionError("feature file has trailing bytes");
  return ks;
}

void save_features(const KeypointSet& ks, const std::filesystem::path& path) {
  write_file(path, encode_features(ks));
}

KeypointSet load_features(const std::filesystem::path& path) { return decode_features(read_file(path)); }

void save_map_manifest(const std::vector<MapEntry>& entries, const std::filesystem::path& path) {
  std::string text;
  for (const MapEntry& e : entries) {
    if (e.id.find_first_of("\t\n") != std::string::npos || e.feature_path.find_first_of("\t\n") != std::string::npos)
      throw FormatError("map entry contains a tab or newline: " + e.id);
    text += e.id + "\t" + e.feature_path + "\t" + std::to_string(e.width) + "\t" + std::to_string(e.height) + "\n";
  }
  write_text(path, text);
}

std::vector<MapEntry> load_map_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open map manifest " + path.string());
  std::vector<MapEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != 4) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      out.push_back({f[0], f[1], std::stoi(f[2]), std::stoi(f[3])});
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad width/height");
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace asymloc
