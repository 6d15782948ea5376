#pragma once

// Tiny fully-convolutional detector/descriptor networks, keypoint extraction
// and parameter/FLOP accounting.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "asymloc/geometry.hpp"
#include "asymloc/graph.hpp"
#include "asymloc/image.hpp"
#include "asymloc/ops.hpp"
#include "asymloc/rng.hpp"

namespace asymloc {

/// Backbone of 3x3 conv + ReLU layers followed by two 1x1 heads: detector
/// logits (1 channel) and descriptors (descriptor_dim channels).
struct ModelSpec {
  std::string variant = "custom";  ///< v13, v08, v06, v04, teacher or custom
  std::vector<int> widths;         ///< output channels per backbone layer
  std::vector<int> kernels;        ///< odd kernel size per backbone layer
  std::vector<int> strides;        ///< stride per backbone layer
  int descriptor_dim = 64;
  int in_channels = 1;

  static ModelSpec preset(const std::string& variant, int descriptor_dim = 64);
  static ModelSpec custom(std::vector<int> widths, std::vector<int> kernels, std::vector<int> strides,
                          int descriptor_dim);

  int depth() const { return static_cast<int>(widths.size()); }
  int total_stride() const;
  int receptive_field() const;
  /// 0 for custom specs.
  std::int64_t nominal_params() const;

  /// Structural checks plus the +-10% nominal-count rule for named variants.
  void validate() const;

  /// Single-line key=value encoding, stable across versions.
  std::map<std::string, std::string> to_metadata() const;
  static ModelSpec from_metadata(const std::map<std::string, std::string>& meta);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

std::vector<std::string> preset_variants();

std::int64_t conv_params(int c_in, int c_out, int k);
/// 2 k^2 C_in C_out H' W'.
std::int64_t conv_flops(int c_in, int c_out, int k, int h_out, int w_out);

std::int64_t count_params(const ModelSpec& spec);
/// Multiply-adds counted as two FLOPs; backbone plus both heads.
std::int64_t count_flops_exact(const ModelSpec& spec, ImageSize size);
double count_flops(const ModelSpec& spec, ImageSize size);  ///< GFLOPs

/// Output size of the backbone for a given input.
ImageSize score_map_size(const ModelSpec& spec, ImageSize input);

struct NamedTensor {
  std::string name;
  TensorF tensor;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Spec plus weights in a fixed order: conv{i}.weight, conv{i}.bias, ...,
/// det.weight, det.bias, desc.weight, desc.bias.
template <typename T>
struct Model {
  ModelSpec spec;
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  std::int64_t trainable_scalars() const;
  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.spec = spec;
    m.names = names;
    for (const auto& t : tensors) m.tensors.push_back(t.template cast<U>());
    return m;
  }
  friend bool operator==(const Model&, const Model&) = default;
};

/// He-normal weights (std sqrt(2 / fan_in)) and zero biases, except the
/// detector bias, which starts at 1 so initial confidences sit near 0.73.
Model<float> build_model(const ModelSpec& spec, Rng& rng);

/// Graph handles for a model's tensors, in Model::tensors order.
template <typename T>
std::vector<Var> bind_model(Graph<T>& g, const Model<T>& model, bool trainable);

template <typename T>
struct DenseOutput {
  Var det_logits;  ///< 1 x H' x W'
  Var desc;        ///< D x H' x W', not normalized
  int stride = 1;
  std::vector<Var> pre_activations;  ///< backbone conv outputs, before ReLU
  std::vector<Var> activations;      ///< the same after ReLU
};

template <typename T>
DenseOutput<T> forward_dense(Graph<T>& g, const ModelSpec& spec, const std::vector<Var>& params, Var image);

template <typename T>
Tensor<T> image_tensor(const Image& img);

/// Local-maximum suppression over a (2r+1)^2 window, then the top n by score.
/// A cell survives if no neighbour is larger and no equal neighbour precedes
/// it in row-major order. Ties in the ranking go to the earlier cell.
std::vector<ops::Cell> select_cells(std::span<const float> scores, int height, int width, int n,
                                    int nms_radius);

/// Input-pixel coordinates of a score-map cell's centre.
Point2 cell_position(ops::Cell c, int stride);

struct KeypointSet {
  int width = 0;   ///< image size the keypoints live in
  int height = 0;
  int dim = 0;
  std::vector<Point2> positions;
  std::vector<float> confidences;
  std::vector<float> descriptors;  ///< row-major N x dim

  std::size_t size() const { return positions.size(); }
  const float* descriptor(std::size_t i) const { return descriptors.data() + i * static_cast<std::size_t>(dim); }
  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

/// Differentiable keypoint features at fixed cells.
template <typename T>
struct KeypointNodes {
  std::vector<ops::Cell> cells;
  std::vector<Point2> positions;
  Var confidence;  ///< N x 1, sigmoid of the detector logits
  Var descriptor;  ///< N x D, unit rows
};

template <typename T>
KeypointNodes<T> keypoints_at(Graph<T>& g, const DenseOutput<T>& dense, std::vector<ops::Cell> cells);

/// Cells chosen from a dense output's detector map.
template <typename T>
std::vector<ops::Cell> detect_cells(const Graph<T>& g, const DenseOutput<T>& dense, int n, int nms_radius);

KeypointSet extract_features(const Model<float>& model, const Image& image, int n, int nms_radius);

struct ExtractDefaults {
  static constexpr int num_keypoints = 512;
  static constexpr int nms_radius = 2;
};

/// FNV-1a over spec metadata and raw tensor bytes.
std::uint64_t model_hash(const Model<float>& model);

}  // namespace asymloc
