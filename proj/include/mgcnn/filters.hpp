#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mgcnn/dense.hpp"
#include "mgcnn/errors.hpp"
#include "mgcnn/meshgraph.hpp"

namespace mgcnn {

// ---------------------------------------------------------------------------
// Filter patterns. Weight sharing over neighbor classes decides invariance:
//   pixel: every stencil offset has its own weight (no rotational symmetry)
//   plus (+): face neighbors share one weight
//   cross (X): vertex neighbors share one weight
//   ring (O): face and vertex neighbors share one weight
//   star (*): face and vertex neighbors have separate weights
// With self_weight = tied the center shares the leading neighbor weight
// (plus/tied is the standard GCN filter); independent gives it its own slot.
// hash (#) is plus with an independent self weight.
// ---------------------------------------------------------------------------

enum class PatternKind { pixel, star, hash, ring, cross, plus };
enum class SelfWeight { tied, independent };

struct FilterPattern {
  PatternKind kind = PatternKind::plus;
  SelfWeight self_weight = SelfWeight::tied;

  bool independent_self() const {
    return kind == PatternKind::hash || self_weight == SelfWeight::independent;
  }
};

inline std::string pattern_to_string(const FilterPattern& p) {
  std::string s;
  switch (p.kind) {
    case PatternKind::pixel: return "pixel";
    case PatternKind::star: s = "star"; break;
    case PatternKind::hash: return "hash";
    case PatternKind::ring: s = "ring"; break;
    case PatternKind::cross: s = "cross"; break;
    case PatternKind::plus: s = "plus"; break;
  }
  return s + (p.independent_self() ? "/independent" : "/tied");
}

inline FilterPattern pattern_from_string(std::string s) {
  FilterPattern p;
  auto slash = s.find('/');
  std::string mode;
  if (slash != std::string::npos) {
    mode = s.substr(slash + 1);
    s = s.substr(0, slash);
  }
  if (s == "pixel")
    p.kind = PatternKind::pixel;
  else if (s == "star" || s == "*")
    p.kind = PatternKind::star;
  else if (s == "hash" || s == "#")
    p.kind = PatternKind::hash;
  else if (s == "ring" || s == "O" || s == "o")
    p.kind = PatternKind::ring;
  else if (s == "cross" || s == "X" || s == "x")
    p.kind = PatternKind::cross;
  else if (s == "plus" || s == "+")
    p.kind = PatternKind::plus;
  else
    throw config_error("unknown filter pattern '" + s + "'");
  if (mode == "independent")
    p.self_weight = SelfWeight::independent;
  else if (mode == "tied" || mode.empty())
    p.self_weight = SelfWeight::tied;
  else
    throw config_error("unknown self-weight mode '" + mode + "'");
  return p;
}

// Neighbor classes merged into one weight slot.
struct SlotClasses {
  bool self = false, face = false, vertex = false;
};

// Slot layout: [self (if independent), face group, vertex group]. A tied self
// is merged into the first neighbor group.
inline std::vector<SlotClasses> pattern_slot_classes(const FilterPattern& p) {
  if (p.kind == PatternKind::pixel)
    throw config_error("pattern_slot_classes: pixel pattern uses the kernel stack");
  const bool indep = p.independent_self();
  std::vector<SlotClasses> slots;
  switch (p.kind) {
    case PatternKind::plus:
    case PatternKind::hash:
      if (indep) slots = {{true, false, false}, {false, true, false}};
      else slots = {{true, true, false}};
      break;
    case PatternKind::ring:
      if (indep) slots = {{true, false, false}, {false, true, true}};
      else slots = {{true, true, true}};
      break;
    case PatternKind::cross:
      if (indep) slots = {{true, false, false}, {false, false, true}};
      else slots = {{true, false, true}};
      break;
    case PatternKind::star:
      if (indep) slots = {{true, false, false}, {false, true, false}, {false, false, true}};
      else slots = {{true, true, false}, {false, false, true}};
      break;
    default:
      throw config_error("pattern_slot_classes: unreachable");
  }
  return slots;
}

inline int pattern_slot_count(const FilterPattern& p, int dim) {
  if (p.kind == PatternKind::pixel) {
    int total = 1;
    for (int i = 0; i < dim; ++i) total *= 3;
    return total;
  }
  return static_cast<int>(pattern_slot_classes(p).size());
}

// ---------------------------------------------------------------------------
// AdjacencyStack: the per-slot masking operators of a filter, bound to one
// complex. Graph patterns share the degree of the full neighborhood union, so
// slots of a tied pattern sum to the standard normalized operator.
// ---------------------------------------------------------------------------

struct AdjacencyStack {
  int n = 0;
  std::vector<SparseAdjacency> slots;
  std::vector<int> transpose_index;  // slot holding the transpose of slot i
  bool normalized = false;

  const SparseAdjacency& transpose_of(int i) const { return slots[transpose_index[i]]; }
};

inline AdjacencyStack build_pattern_stack(const CellComplex& cc, const FilterPattern& p) {
  AdjacencyStack st;
  st.n = cc.n_cells();
  if (p.kind == PatternKind::pixel) {
    st.slots = kernel_adjacency_stack(cc);
    const int total = static_cast<int>(st.slots.size());
    st.transpose_index.resize(total);
    for (int i = 0; i < total; ++i) st.transpose_index[i] = total - 1 - i;
    st.normalized = false;
    return st;
  }
  const auto slot_classes = pattern_slot_classes(p);
  bool use_face = false, use_vertex = false;
  for (const auto& s : slot_classes) {
    use_face |= s.face;
    use_vertex |= s.vertex;
  }
  const auto face = use_face ? build_adjacency(cc, NeighborClass::face()) : SparseAdjacency{};
  const auto vertex = use_vertex ? build_adjacency(cc, NeighborClass::vertex()) : SparseAdjacency{};

  // degree of the union neighborhood including the self-loop
  std::vector<double> deg(st.n, 1.0);
  if (use_face)
    for (int i = 0; i < st.n; ++i) deg[i] += face.row_sums()[i];
  if (use_vertex) {
    const auto vs = vertex.row_sums();
    for (int i = 0; i < st.n; ++i) deg[i] += vs[i];
  }
  std::vector<double> inv_sqrt(st.n);
  for (int i = 0; i < st.n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(deg[i]);

  for (const auto& sc : slot_classes) {
    std::vector<CooEntry> e;
    auto add_scaled = [&](const SparseAdjacency& a) {
      for (int i = 0; i < a.n; ++i)
        for (int k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k)
          e.push_back({i, a.cols[k], a.vals[k] * inv_sqrt[i] * inv_sqrt[a.cols[k]]});
    };
    if (sc.self)
      for (int i = 0; i < st.n; ++i) e.push_back({i, i, inv_sqrt[i] * inv_sqrt[i]});
    if (sc.face) add_scaled(face);
    if (sc.vertex) add_scaled(vertex);
    st.slots.push_back(from_coo(st.n, std::move(e), true));
  }
  st.transpose_index.resize(st.slots.size());
  for (size_t i = 0; i < st.slots.size(); ++i) st.transpose_index[i] = static_cast<int>(i);
  st.normalized = true;
  return st;
}

// Face-degree inefficiency guard: row_sums() above is recomputed per call;
// fine at these sizes, stacks are built once per sample.

// Block-diagonal union of per-sample stacks, used to run a batch through the
// convolutional layers jointly (batch normalization then sees batch x nodes).
inline AdjacencyStack concat_stacks(const std::vector<const AdjacencyStack*>& parts) {
  if (parts.empty()) throw shape_error("concat_stacks: empty batch");
  AdjacencyStack out;
  const size_t slots = parts[0]->slots.size();
  out.transpose_index = parts[0]->transpose_index;
  out.normalized = parts[0]->normalized;
  out.n = 0;
  for (const auto* p : parts) {
    if (p->slots.size() != slots) throw shape_error("concat_stacks: slot count mismatch");
    out.n += p->n;
  }
  out.slots.resize(slots);
  for (size_t s = 0; s < slots; ++s) {
    SparseAdjacency& dst = out.slots[s];
    dst.n = out.n;
    dst.symmetric = parts[0]->slots[s].symmetric;
    dst.row_ptr.assign(1, 0);
    int offset = 0;
    for (const auto* p : parts) {
      const auto& src = p->slots[s];
      for (int i = 0; i < src.n; ++i) {
        for (int k = src.row_ptr[i]; k < src.row_ptr[i + 1]; ++k) {
          dst.cols.push_back(src.cols[k] + offset);
          dst.vals.push_back(src.vals[k]);
        }
        dst.row_ptr.push_back(static_cast<int>(dst.cols.size()));
      }
      offset += src.n;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution layer
// ---------------------------------------------------------------------------

struct ConvParams {
  FilterPattern pattern;
  int in_channels = 0, out_channels = 0;
  std::vector<Matrix> weights;  // one (in x out) block per slot
  std::vector<double> bias;     // out

  int slot_count() const { return static_cast<int>(weights.size()); }
};

inline ConvParams make_conv(const FilterPattern& pattern, int dim, int in_ch, int out_ch) {
  ConvParams p;
  p.pattern = pattern;
  p.in_channels = in_ch;
  p.out_channels = out_ch;
  const int slots = pattern_slot_count(pattern, dim);
  p.weights.assign(slots, Matrix(in_ch, out_ch));
  p.bias.assign(out_ch, 0.0);
  return p;
}

// y_I = sum_J [ sum_K' W_K' A^(K')_IJ ] x_J + b
inline Matrix graph_conv(const Matrix& x, const ConvParams& p, const AdjacencyStack& stack) {
  if (x.cols != p.in_channels) throw shape_error("graph_conv: channel mismatch");
  if (stack.n != x.rows) throw shape_error("graph_conv: node count mismatch");
  if (static_cast<int>(stack.slots.size()) != p.slot_count())
    throw shape_error("graph_conv: slot count mismatch (unbound adjacency?)");
  Matrix y(x.rows, p.out_channels);
  Matrix z(x.rows, p.out_channels);
  for (int s = 0; s < p.slot_count(); ++s) {
    z.zero();
    matmul_accumulate(x, p.weights[s], z);
    stack.slots[s].multiply_accumulate(z, y);
  }
  for (int i = 0; i < y.rows; ++i) {
    double* yi = y.row(i);
    for (int c = 0; c < y.cols; ++c) yi[c] += p.bias[c];
  }
  return y;
}

inline void graph_conv_backward(const Matrix& x, const Matrix& dy, const ConvParams& p,
                                const AdjacencyStack& stack, ConvParams& grad, Matrix* dx) {
  if (!dy.same_shape(Matrix(x.rows, p.out_channels)) && (dy.rows != x.rows || dy.cols != p.out_channels))
    throw shape_error("graph_conv_backward: dy shape mismatch");
  Matrix u(x.rows, p.out_channels);
  for (int s = 0; s < p.slot_count(); ++s) {
    u.zero();
    stack.transpose_of(s).multiply_accumulate(dy, u);  // u = A^T dy
    // dW_s += x^T u
    Matrix& dw = grad.weights[s];
    for (int i = 0; i < x.rows; ++i) {
      const double* xi = x.row(i);
      const double* ui = u.row(i);
      for (int a = 0; a < x.cols; ++a) {
        const double xia = xi[a];
        if (xia == 0.0) continue;
        double* dwa = dw.row(a);
        for (int b = 0; b < p.out_channels; ++b) dwa[b] += xia * ui[b];
      }
    }
    if (dx) {
      // dx += u W_s^T
      const Matrix& w = p.weights[s];
      for (int i = 0; i < x.rows; ++i) {
        const double* ui = u.row(i);
        double* dxi = dx->row(i);
        for (int a = 0; a < x.cols; ++a) {
          const double* wa = w.row(a);
          double acc = 0.0;
          for (int b = 0; b < p.out_channels; ++b) acc += ui[b] * wa[b];
          dxi[a] += acc;
        }
      }
    }
  }
  for (int i = 0; i < dy.rows; ++i) {
    const double* di = dy.row(i);
    for (int c = 0; c < dy.cols; ++c) grad.bias[c] += di[c];
  }
}

// Masked form of the pixel convolution: the kernel stack supplies one mask per
// stencil offset. Agrees with pixel_conv in exact arithmetic.
inline Matrix masked_pixel_conv(const Matrix& x_flat, const std::vector<SparseAdjacency>& stack,
                                const std::vector<Matrix>& weights, const std::vector<double>& bias) {
  if (stack.size() != weights.size())
    throw shape_error("masked_pixel_conv: stack/weight count mismatch");
  if (stack.empty()) throw shape_error("masked_pixel_conv: empty stack");
  const int out = weights[0].cols;
  Matrix y(x_flat.rows, out);
  Matrix z(x_flat.rows, out);
  for (size_t s = 0; s < stack.size(); ++s) {
    if (weights[s].rows != x_flat.cols || weights[s].cols != out)
      throw shape_error("masked_pixel_conv: weight shape mismatch");
    z.zero();
    matmul_accumulate(x_flat, weights[s], z);
    stack[s].multiply_accumulate(z, y);
  }
  for (int i = 0; i < y.rows; ++i)
    for (int c = 0; c < out; ++c) y(i, c) += bias[c];
  return y;
}

// Standard zero-padded cross-correlation on the structured grid, written with
// direct index arithmetic. Serves as the independent reference for the masked
// path.
inline Matrix pixel_conv(const Matrix& x, const CellComplex& grid, const std::vector<Matrix>& kernel,
                         const std::vector<double>& bias) {
  if (grid.kind != ComplexKind::structured) throw topology_error("pixel_conv: structured grid required");
  const auto offs = stencil_offsets(grid.dim());
  if (kernel.size() != offs.size()) throw shape_error("pixel_conv: kernel slot count mismatch");
  const int out = kernel[0].cols;
  Matrix y(x.rows, out);
  std::vector<int> nb;
  for (int id = 0; id < grid.n_cells(); ++id) {
    const auto coord = grid_cell_coord(grid.dims, id);
    double* yi = y.row(id);
    for (size_t k = 0; k < offs.size(); ++k) {
      if (!offset_neighbor(grid.dims, coord, offs[k], grid.periodic, nb)) continue;
      const double* xj = x.row(grid_cell_id(grid.dims, nb));
      const Matrix& w = kernel[k];
      for (int a = 0; a < x.cols; ++a)
        for (int b = 0; b < out; ++b) yi[b] += xj[a] * w(a, b);
    }
    for (int b = 0; b < out; ++b) yi[b] += bias[b];
  }
  return y;
}

// ---------------------------------------------------------------------------
// Chebyshev filter: y = sum_k theta_k T_k(Lhat) x with Lhat = L - I and
// L = I - D^{-1/2} A D^{-1/2} built from the face adjacency (lambda_max
// approximated as 2). With the renormalization trick it evaluates the
// collapsed single-weight form on A + I instead.
// ---------------------------------------------------------------------------

inline Matrix chebyshev_conv(const Matrix& x, const CellComplex& cc, const std::vector<double>& thetas,
                             bool renormalization_trick = false) {
  if (thetas.empty()) throw config_error("chebyshev_conv: need at least theta_0 (K >= 0)");
  const auto a = build_adjacency(cc, NeighborClass::face());
  if (renormalization_trick) {
    if (thetas.size() != 2 || std::abs(thetas[1] + thetas[0]) > 1e-12)
      throw config_error("chebyshev_conv: renormalization trick needs K=1 and theta_1 = -theta_0");
    const auto norm = normalize_symmetric(add_self_loops(a));
    Matrix y(x.rows, x.cols);
    norm.multiply_accumulate(x, y, thetas[0]);
    return y;
  }
  const auto norm = normalize_symmetric(a);  // D^{-1/2} A D^{-1/2}; Lhat = -norm
  Matrix t_prev = x;  // T_0(Lhat) x
  Matrix y(x.rows, x.cols);
  for (size_t i = 0; i < y.a.size(); ++i) y.a[i] = thetas[0] * x.a[i];
  if (thetas.size() == 1) return y;
  Matrix t_cur(x.rows, x.cols);  // T_1(Lhat) x = Lhat x
  norm.multiply_accumulate(x, t_cur, -1.0);
  for (size_t i = 0; i < y.a.size(); ++i) y.a[i] += thetas[1] * t_cur.a[i];
  for (size_t k = 2; k < thetas.size(); ++k) {
    Matrix t_next(x.rows, x.cols);
    norm.multiply_accumulate(t_cur, t_next, -2.0);
    for (size_t i = 0; i < t_next.a.size(); ++i) t_next.a[i] -= t_prev.a[i];
    for (size_t i = 0; i < y.a.size(); ++i) y.a[i] += thetas[k] * t_next.a[i];
    t_prev = std::move(t_cur);
    t_cur = std::move(t_next);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Batch normalization over all nodes in the batch, per channel.
// ---------------------------------------------------------------------------

struct BatchNormParams {
  int channels = 0;
  std::vector<double> gamma, beta;
  std::vector<double> run_mean, run_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

inline BatchNormParams make_batch_norm(int channels) {
  BatchNormParams p;
  p.channels = channels;
  p.gamma.assign(channels, 1.0);
  p.beta.assign(channels, 0.0);
  p.run_mean.assign(channels, 0.0);
  p.run_var.assign(channels, 1.0);
  return p;
}

struct BatchNormCache {
  std::vector<double> mean, inv_std;
  Matrix xhat;
};

inline Matrix batch_norm(const Matrix& x, BatchNormParams& p, bool training,
                         BatchNormCache* cache = nullptr) {
  if (x.cols != p.channels) throw shape_error("batch_norm: channel mismatch");
  const int n = x.rows, c = x.cols;
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (training) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) mean[j] += x(i, j);
    for (int j = 0; j < c; ++j) mean[j] /= n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) {
        const double d = x(i, j) - mean[j];
        var[j] += d * d;
      }
    for (int j = 0; j < c; ++j) var[j] /= n;
    for (int j = 0; j < c; ++j) {
      p.run_mean[j] = (1.0 - p.momentum) * p.run_mean[j] + p.momentum * mean[j];
      p.run_var[j] = (1.0 - p.momentum) * p.run_var[j] + p.momentum * var[j];
    }
  } else {
    mean = p.run_mean;
    var = p.run_var;
  }
  Matrix y(n, c);
  std::vector<double> inv_std(c);
  for (int j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + p.eps);
  Matrix xhat(n, c);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      xhat(i, j) = (x(i, j) - mean[j]) * inv_std[j];
      y(i, j) = p.gamma[j] * xhat(i, j) + p.beta[j];
    }
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->xhat = std::move(xhat);
  }
  return y;
}

// Training-mode backward (batch statistics participate in the gradient).
inline Matrix batch_norm_backward(const Matrix& dy, const BatchNormParams& p, const BatchNormCache& cache,
                                  std::vector<double>& dgamma, std::vector<double>& dbeta) {
  const int n = dy.rows, c = dy.cols;
  Matrix dx(n, c);
  for (int j = 0; j < c; ++j) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < n; ++i) {
      sum_dy += dy(i, j);
      sum_dy_xhat += dy(i, j) * cache.xhat(i, j);
    }
    dgamma[j] += sum_dy_xhat;
    dbeta[j] += sum_dy;
    const double g = p.gamma[j] * cache.inv_std[j];
    for (int i = 0; i < n; ++i)
      dx(i, j) = g * (dy(i, j) - sum_dy / n - cache.xhat(i, j) * sum_dy_xhat / n);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Activations, pooling, dense layers
// ---------------------------------------------------------------------------

enum class Activation { relu, tanh_act, linear };

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh_act;
  if (s == "linear") return Activation::linear;
  throw config_error("unknown activation '" + s + "'");
}

inline double activate_scalar(double v, Activation f) {
  switch (f) {
    case Activation::relu: return v > 0.0 ? v : 0.0;
    case Activation::tanh_act: return std::tanh(v);
    case Activation::linear: return v;
  }
  return v;
}

// derivative as a function of the activation output
inline double activate_grad_from_output(double y, Activation f) {
  switch (f) {
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::tanh_act: return 1.0 - y * y;
    case Activation::linear: return 1.0;
  }
  return 1.0;
}

inline Matrix activate(const Matrix& x, Activation f) {
  Matrix y = x;
  for (double& v : y.a) v = activate_scalar(v, f);
  return y;
}

inline std::vector<double> global_average_pool(const Matrix& x) {
  if (x.rows < 1) throw shape_error("global_average_pool: empty graph");
  std::vector<double> out(x.cols, 0.0);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out[j] += x(i, j);
  for (double& v : out) v /= x.rows;
  return out;
}

struct DenseParams {
  int in = 0, out = 0;
  Matrix w;  // in x out
  std::vector<double> b;
  Activation activation = Activation::linear;
};

inline DenseParams make_dense(int in, int out, Activation act) {
  DenseParams p;
  p.in = in;
  p.out = out;
  p.w = Matrix(in, out);
  p.b.assign(out, 0.0);
  p.activation = act;
  return p;
}

inline std::vector<double> dense_forward(const std::vector<double>& x, const DenseParams& p) {
  if (static_cast<int>(x.size()) != p.in) throw shape_error("dense: input size mismatch");
  std::vector<double> y(p.out);
  for (int j = 0; j < p.out; ++j) {
    double acc = p.b[j];
    for (int i = 0; i < p.in; ++i) acc += x[i] * p.w(i, j);
    y[j] = activate_scalar(acc, p.activation);
  }
  return y;
}

// dy arrives as d(loss)/d(activation output); returns d(loss)/d(input)
inline std::vector<double> dense_backward(const std::vector<double>& x, const std::vector<double>& y,
                                          const std::vector<double>& dy, const DenseParams& p,
                                          DenseParams& grad) {
  std::vector<double> dpre(p.out);
  for (int j = 0; j < p.out; ++j) dpre[j] = dy[j] * activate_grad_from_output(y[j], p.activation);
  for (int j = 0; j < p.out; ++j) grad.b[j] += dpre[j];
  for (int i = 0; i < p.in; ++i)
    for (int j = 0; j < p.out; ++j) grad.w(i, j) += x[i] * dpre[j];
  std::vector<double> dx(p.in, 0.0);
  for (int i = 0; i < p.in; ++i) {
    double acc = 0.0;
    for (int j = 0; j < p.out; ++j) acc += dpre[j] * p.w(i, j);
    dx[i] = acc;
  }
  return dx;
}

}  // namespace mgcnn
