#include "asymloc/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "asymloc/errors.hpp"

namespace asymloc {

namespace {

struct Preset {
  const char* name;
  std::vector<int> widths;
  std::int64_t nominal;
};

const std::vector<Preset>& presets() {
  static const std::vector<Preset> table = {
      {"v13", {16, 16, 32, 32, 64, 64, 88}, 130000},
      {"v08", {16, 16, 24, 32, 48, 48, 64}, 80000},
      {"v06", {16, 16, 32, 32, 48, 56}, 60000},
      {"v04", {8, 16, 24, 32, 40, 40}, 40000},
      {"teacher", {32, 32, 64, 64, 96, 96, 112, 112}, 400000},
  };
  return table;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw ConfigError("bad integer list: " + s);
    } catch (const std::logic_error&) {
      throw ConfigError("bad integer list: " + s);
    }
  }
  return out;
}

int conv_out(int in, int k, int stride) { return (in + 2 * (k / 2) - k) / stride + 1; }

constexpr float kDetBiasInit = 1.0f;

}  // namespace

std::vector<std::string> preset_variants() {
  std::vector<std::string> out;
  for (const Preset& p : presets()) out.emplace_back(p.name);
  return out;
}

ModelSpec ModelSpec::preset(const std::string& variant, int descriptor_dim) {
  for (const Preset& p : presets()) {
    if (variant != p.name) continue;
    ModelSpec s;
    s.variant = variant;
    s.widths = p.widths;
    s.kernels.assign(p.widths.size(), 3);
    s.strides.assign(p.widths.size(), 1);
    s.strides[1] = 2;
    s.descriptor_dim = descriptor_dim;
    s.validate();
    return s;
  }
  throw ConfigError("unknown model variant '" + variant + "'");
}

ModelSpec ModelSpec::custom(std::vector<int> widths, std::vector<int> kernels, std::vector<int> strides,
                            int descriptor_dim) {
  ModelSpec s;
  s.widths = std::move(widths);
  s.kernels = std::move(kernels);
  s.strides = std::move(strides);
  s.descriptor_dim = descriptor_dim;
  s.validate();
  return s;
}

int ModelSpec::total_stride() const {
  int s = 1;
  for (int v : strides) s *= v;
  return s;
}

int ModelSpec::receptive_field() const {
  int rf = 1, jump = 1;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    rf += (kernels[i] - 1) * jump;
    jump *= strides[i];
  }
  return rf;
}

std::int64_t ModelSpec::nominal_params() const {
  for (const Preset& p : presets())
    if (variant == p.name) return p.nominal;
  return 0;
}

void ModelSpec::validate() const {
  if (widths.empty()) throw ConfigError("model spec needs at least one backbone layer");
  if (kernels.size() != widths.size() || strides.size() != widths.size())
    throw ConfigError("model spec: widths, kernels and strides must have equal length");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] < 1) throw ConfigError("model spec: widths must be positive");
    if (kernels[i] < 1 || kernels[i] % 2 == 0) throw ConfigError("model spec: kernel sizes must be odd");
    if (strides[i] < 1) throw ConfigError("model spec: strides must be positive");
  }
  if (descriptor_dim < 1) throw ConfigError("model spec: descriptor_dim must be positive");
  if (in_channels != 1) throw ConfigError("model spec: only single-channel input is supported");
  if (variant != "custom") {
    const std::int64_t nominal = nominal_params();
    if (nominal == 0) throw ConfigError("unknown model variant '" + variant + "'");
    const std::int64_t actual = count_params(*this);
    if (std::abs(static_cast<double>(actual - nominal)) > 0.1 * static_cast<double>(nominal))
      throw ConfigError("variant " + variant + " has " + std::to_string(actual) +
                        " parameters, more than 10% away from nominal " + std::to_string(nominal));
  }
}

std::map<std::string, std::string> ModelSpec::to_metadata() const {
  return {{"model.variant", variant},
          {"model.widths", join(widths)},
          {"model.kernels", join(kernels)},
          {"model.strides", join(strides)},
          {"model.descriptor_dim", std::to_string(descriptor_dim)},
          {"model.in_channels", std::to_string(in_channels)}};
}

ModelSpec ModelSpec::from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw ConfigError("model metadata missing '" + key + "'");
    return it->second;
  };
  ModelSpec s;
  s.variant = get("model.variant");
  s.widths = split_ints(get("model.widths"));
  s.kernels = split_ints(get("model.kernels"));
  s.strides = split_ints(get("model.strides"));
  try {
    s.descriptor_dim = std::stoi(get("model.descriptor_dim"));
    s.in_channels = std::stoi(get("model.in_channels"));
  } catch (const std::logic_error&) {
    throw ConfigError("model metadata has a non-integer dimension");
  }
  s.validate();
  return s;
}

std::int64_t conv_params(int c_in, int c_out, int k) {
  return static_cast<std::int64_t>(c_out) * c_in * k * k + c_out;
}

std::int64_t conv_flops(int c_in, int c_out, int k, int h_out, int w_out) {
  return 2LL * k * k * c_in * c_out * h_out * w_out;
}

std::int64_t count_params(const ModelSpec& spec) {
  std::int64_t total = 0;
  int c = spec.in_channels;
  for (std::size_t i = 0; i < spec.widths.size(); ++i) {
    total += conv_params(c, spec.widths[i], spec.kernels[i]);
    c = spec.widths[i];
  }
  return total + conv_params(c, 1, 1) + conv_params(c, spec.descriptor_dim, 1);
}

ImageSize score_map_size(const ModelSpec& spec, ImageSize input) {
  int h = input.height, w = input.width;
  for (std::size_t i = 0; i < spec.widths.size(); ++i) {
    h = conv_out(h, spec.kernels[i], spec.strides[i]);
    w = conv_out(w, spec.kernels[i], spec.strides[i]);
  }
  return {w, h};
}

std::int64_t count_flops_exact(const ModelSpec& spec, ImageSize size) {
  std::int64_t total = 0;
  int c = spec.in_channels, h = size.height, w = size.width;
  for (std::size_t i = 0; i < spec.widths.size(); ++i) {
    h = conv_out(h, spec.kernels[i], spec.strides[i]);
    w = conv_out(w, spec.kernels[i], spec.strides[i]);
    total += conv_flops(c, spec.widths[i], spec.kernels[i], h, w);
    c = spec.widths[i];
  }
  return total + conv_flops(c, 1, 1, h, w) + conv_flops(c, spec.descriptor_dim, 1, h, w);
}

double count_flops(const ModelSpec& spec, ImageSize size) {
  return static_cast<double>(count_flops_exact(spec, size)) / 1e9;
}

template <typename T>
std::int64_t Model<T>::trainable_scalars() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::int64_t>(t.size());
  return n;
}

template struct Model<float>;
template struct Model<double>;

Model<float> build_model(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  Model<float> m;
  m.spec = spec;
  auto add_conv = [&](const std::string& name, int c_in, int c_out, int k, float bias) {
    const double std_dev = std::sqrt(2.0 / (c_in * k * k));
    TensorF w({c_out, c_in, k, k});
    for (float& v : w.data()) v = static_cast<float>(std_dev * rng.normal());
    m.names.push_back(name + ".weight");
    m.tensors.push_back(std::move(w));
    m.names.push_back(name + ".bias");
    m.tensors.emplace_back(std::vector<int>{c_out}, bias);
  };
  int c = spec.in_channels;
  for (std::size_t i = 0; i < spec.widths.size(); ++i) {
    add_conv("conv" + std::to_string(i), c, spec.widths[i], spec.kernels[i], 0.0f);
    c = spec.widths[i];
  }
  add_conv("det", c, 1, 1, kDetBiasInit);
  add_conv("desc", c, spec.descriptor_dim, 1, 0.0f);
  return m;
}

template <typename T>
std::vector<Var> bind_model(Graph<T>& g, const Model<T>& model, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(model.tensors.size());
  for (const auto& t : model.tensors) vars.push_back(trainable ? g.parameter(t) : g.constant(t));
  return vars;
}

template <typename T>
DenseOutput<T> forward_dense(Graph<T>& g, const ModelSpec& spec, const std::vector<Var>& params, Var image) {
  const std::size_t layers = spec.widths.size();
  if (params.size() != 2 * layers + 4) throw ShapeError("forward: parameter count does not match spec");
  const Tensor<T>& img = g.value(image);
  if (img.rank() != 3 || img.dim(0) != spec.in_channels) throw ShapeError("forward: expected 1 x H x W input");
  const int rf = spec.receptive_field();
  if (img.dim(1) < rf || img.dim(2) < rf)
    throw ShapeError("forward: image " + dims_to_string(img.dims()) + " smaller than receptive field " +
                     std::to_string(rf));
  DenseOutput<T> out;
  Var x = image;
  for (std::size_t i = 0; i < layers; ++i) {
    x = ops::conv2d(g, x, params[2 * i], params[2 * i + 1], spec.strides[i], spec.kernels[i] / 2);
    out.pre_activations.push_back(x);
    x = ops::relu(g, x);
    out.activations.push_back(x);
  }
  out.det_logits = ops::conv2d(g, x, params[2 * layers], params[2 * layers + 1], 1, 0);
  out.desc = ops::conv2d(g, x, params[2 * layers + 2], params[2 * layers + 3], 1, 0);
  out.stride = spec.total_stride();
  return out;
}

template <typename T>
Tensor<T> image_tensor(const Image& img) {
  return Tensor<T>({1, img.height, img.width}, std::vector<T>(img.pixels.begin(), img.pixels.end()));
}

std::vector<ops::Cell> select_cells(std::span<const float> scores, int height, int width, int n,
                                    int nms_radius) {
  if (n < 1) throw ContractError("number of keypoints must be at least 1");
  if (nms_radius < 0) throw ContractError("nms radius must be non-negative");
  if (scores.size() != static_cast<std::size_t>(height) * width) throw ShapeError("score map size mismatch");
  std::vector<int> survivors;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int idx = y * width + x;
      const float s = scores[static_cast<std::size_t>(idx)];
      bool keep = true;
      for (int dy = -nms_radius; dy <= nms_radius && keep; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= height) continue;
        for (int dx = -nms_radius; dx <= nms_radius; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= width || (dx == 0 && dy == 0)) continue;
          const int j = yy * width + xx;
          const float t = scores[static_cast<std::size_t>(j)];
          if (t > s || (t == s && j < idx)) {
            keep = false;
            break;
          }
        }
      }
      if (keep) survivors.push_back(idx);
    }
  std::stable_sort(survivors.begin(), survivors.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  if (static_cast<int>(survivors.size()) > n) survivors.resize(static_cast<std::size_t>(n));
  std::vector<ops::Cell> cells;
  cells.reserve(survivors.size());
  for (int idx : survivors) cells.push_back({idx / width, idx % width});
  return cells;
}

Point2 cell_position(ops::Cell c, int stride) {
  const double off = (stride - 1) / 2.0;
  return {stride * c.x + off, stride * c.y + off};
}

template <typename T>
KeypointNodes<T> keypoints_at(Graph<T>& g, const DenseOutput<T>& dense, std::vector<ops::Cell> cells) {
  KeypointNodes<T> k;
  k.cells = std::move(cells);
  for (const ops::Cell& c : k.cells) k.positions.push_back(cell_position(c, dense.stride));
  if (k.cells.empty()) return k;
  k.confidence = ops::sigmoid(g, ops::gather_cells(g, dense.det_logits, k.cells));
  k.descriptor = ops::l2_normalize_rows(g, ops::gather_cells(g, dense.desc, k.cells), T(1e-12));
  return k;
}

template <typename T>
std::vector<ops::Cell> detect_cells(const Graph<T>& g, const DenseOutput<T>& dense, int n, int nms_radius) {
  const Tensor<T>& logits = g.value(dense.det_logits);
  std::vector<float> scores(logits.size());
  // Ranking by logit is ranking by sigmoid, without saturation ties.
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<float>(logits[i]);
  return select_cells(scores, logits.dim(1), logits.dim(2), n, nms_radius);
}

KeypointSet extract_features(const Model<float>& model, const Image& image, int n, int nms_radius) {
  Graph<float> g;
  const std::vector<Var> params = bind_model(g, model, false);
  const Var img = g.constant(image_tensor<float>(image));
  const DenseOutput<float> dense = forward_dense(g, model.spec, params, img);
  const std::vector<ops::Cell> cells = detect_cells(g, dense, n, nms_radius);

  KeypointSet ks;
  ks.width = image.width;
  ks.height = image.height;
  ks.dim = model.spec.descriptor_dim;
  const TensorF& logits = g.value(dense.det_logits);
  const TensorF& desc = g.value(dense.desc);
  const int d = ks.dim;
  constexpr float lo = std::numeric_limits<float>::min();
  const float hi = std::nextafter(1.0f, 0.0f);
  for (const ops::Cell& c : cells) {
    ks.positions.push_back(cell_position(c, dense.stride));
    const double z = logits.at(0, c.y, c.x);
    ks.confidences.push_back(std::clamp(static_cast<float>(1.0 / (1.0 + std::exp(-z))), lo, hi));
    double norm2 = 0;
    for (int ch = 0; ch < d; ++ch) norm2 += static_cast<double>(desc.at(ch, c.y, c.x)) * desc.at(ch, c.y, c.x);
    const double inv = 1.0 / std::max(std::sqrt(norm2), 1e-12);
    for (int ch = 0; ch < d; ++ch) ks.descriptors.push_back(static_cast<float>(desc.at(ch, c.y, c.x) * inv));
  }
  return ks;
}

std::uint64_t model_hash(const Model<float>& model) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [k, v] : model.spec.to_metadata()) {
    feed(k.data(), k.size());
    feed(v.data(), v.size());
  }
  for (std::size_t i = 0; i < model.tensors.size(); ++i) {
    feed(model.names[i].data(), model.names[i].size());
    feed(model.tensors[i].data().data(), model.tensors[i].size() * sizeof(float));
  }
  return h;
}

#define ASYMLOC_INSTANTIATE_FEATURES(T)                                                              \
  template std::vector<Var> bind_model<T>(Graph<T>&, const Model<T>&, bool);                         \
  template DenseOutput<T> forward_dense<T>(Graph<T>&, const ModelSpec&, const std::vector<Var>&, Var); \
  template Tensor<T> image_tensor<T>(const Image&);                                                  \
  template KeypointNodes<T> keypoints_at<T>(Graph<T>&, const DenseOutput<T>&, std::vector<ops::Cell>); \
  template std::vector<ops::Cell> detect_cells<T>(const Graph<T>&, const DenseOutput<T>&, int, int);

ASYMLOC_INSTANTIATE_FEATURES(float)
ASYMLOC_INSTANTIATE_FEATURES(double)

}  // namespace asymloc
