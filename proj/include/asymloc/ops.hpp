#pragma once

// Differentiable operations over Graph<T>. Only what the feature networks and
// the distillation objectives need; there is no general broadcasting.

#include <utility>
#include <vector>

#include "asymloc/graph.hpp"

namespace asymloc::ops {

enum class Activation { relu, sigmoid };

/// A score-map location (row, column).
struct Cell {
  int y = 0;
  int x = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Cross-correlation with zero padding. input C_in x H x W, kernel
/// C_out x C_in x k x k (k odd), bias C_out.
template <typename T>
Var conv2d(Graph<T>& g, Var input, Var kernel, Var bias, int stride, int padding);

template <typename T>
Var activation(Graph<T>& g, Activation kind, Var x);
template <typename T>
Var relu(Graph<T>& g, Var x) { return activation(g, Activation::relu, x); }
template <typename T>
Var sigmoid(Graph<T>& g, Var x) { return activation(g, Activation::sigmoid, x); }

/// Each row divided by max(||row||_2, eps).
template <typename T>
Var l2_normalize_rows(Graph<T>& g, Var x, T eps);

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b);
template <typename T>
Var transpose(Graph<T>& g, Var a);

/// Row-wise (resp. column-wise) softmax with max subtraction.
template <typename T>
Var softmax_rows(Graph<T>& g, Var x);
template <typename T>
Var softmax_cols(Graph<T>& g, Var x);

template <typename T>
Var scale(Graph<T>& g, Var x, T factor);
/// Elementwise reciprocal-free division by a positive constant.
template <typename T>
Var divide(Graph<T>& g, Var x, T divisor);
template <typename T>
Var add(Graph<T>& g, Var a, Var b);
template <typename T>
Var mul(Graph<T>& g, Var a, Var b);
/// out_ij = x_ij * v_i, v has one entry per row.
template <typename T>
Var scale_rows(Graph<T>& g, Var x, Var v);
/// out_ij = x_ij * v_j, v has one entry per column.
template <typename T>
Var scale_cols(Graph<T>& g, Var x, Var v);

template <typename T>
Var sum(Graph<T>& g, Var x);
template <typename T>
Var mean(Graph<T>& g, Var x);
template <typename T>
Var reshape(Graph<T>& g, Var x, std::vector<int> dims);
/// Copy of the value with no gradient path.
template <typename T>
Var detach(Graph<T>& g, Var x);

/// Reads the C-vector at each cell of a C x H x W map: N x C.
template <typename T>
Var gather_cells(Graph<T>& g, Var map, const std::vector<Cell>& cells);
/// C x H x W -> (H*W) x C.
template <typename T>
Var chw_to_rows(Graph<T>& g, Var map);
/// N x D, N x D -> N x 1 of row dot products.
template <typename T>
Var rowwise_dot(Graph<T>& g, Var a, Var b);

/// -sum over (i, j) of log(x_ij + eps).
template <typename T>
Var neg_log_sum_at(Graph<T>& g, Var x, const std::vector<std::pair<int, int>>& entries, T eps);

/// sum p * (log max(p, floor) - log max(q, floor)) over all entries, with
/// 0 log 0 := 0. The gradient flows into q only.
template <typename T>
Var kl_divergence(Graph<T>& g, Var p, Var q, T floor);

/// mean of -t log p - (1 - t) log(1 - p), logs floored at log(floor).
/// Target is a constant.
template <typename T>
Var soft_bce_mean(Graph<T>& g, Var p, const Tensor<T>& target, T floor);

}  // namespace asymloc::ops
