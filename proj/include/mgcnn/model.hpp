#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgcnn/filters.hpp"
#include "mgcnn/microgen.hpp"
#include "mgcnn/recurrent.hpp"

namespace mgcnn {

// ---------------------------------------------------------------------------
// Architecture description: arch{N_f}{N_c}{N_d} plus variant and pattern.
// ---------------------------------------------------------------------------

enum class Variant { cnn, dgcnn, rgcnn };

inline std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::cnn: return "cnn";
    case Variant::dgcnn: return "dgcnn";
    case Variant::rgcnn: return "rgcnn";
  }
  return "dgcnn";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "cnn") return Variant::cnn;
  if (s == "dgcnn") return Variant::dgcnn;
  if (s == "rgcnn") return Variant::rgcnn;
  throw config_error("unknown variant '" + s + "'");
}

struct ArchSpec {
  int n_filters = 0, n_conv = 0, n_dense = 0;
  Variant variant = Variant::dgcnn;
  FilterPattern pattern{PatternKind::plus, SelfWeight::tied};
  std::vector<std::string> boost_channels;

  void validate() const {
    if (n_filters < 1 || n_conv < 1 || n_dense < 1)
      throw config_error("ArchSpec: filter/conv/dense counts must be positive");
    if (variant == Variant::cnn && pattern.kind != PatternKind::pixel)
      throw config_error("ArchSpec: the cnn variant uses the pixel pattern");
    if (variant != Variant::cnn && pattern.kind == PatternKind::pixel)
      throw config_error("ArchSpec: graph variants need a graph pattern");
  }
};

// "arch{4}{2}{1}" <-> (4, 2, 1)
inline std::string format_arch(const ArchSpec& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "arch{%d}{%d}{%d}", s.n_filters, s.n_conv, s.n_dense);
  return buf;
}

inline ArchSpec parse_arch(const std::string& text) {
  ArchSpec s;
  int nf = 0, nc = 0, nd = 0;
  if (std::sscanf(text.c_str(), "arch{%d}{%d}{%d}", &nf, &nc, &nd) == 3 ||
      std::sscanf(text.c_str(), "%d-%d-%d", &nf, &nc, &nd) == 3) {
    s.n_filters = nf;
    s.n_conv = nc;
    s.n_dense = nd;
    return s;
  }
  throw config_error("parse_arch: cannot parse '" + text + "'");
}

// ---------------------------------------------------------------------------
// ModelParams: every trainable record in forward order.
// conv -> BN -> relu (xN_c) -> average pool -> dense (xN_d, last linear)
// -> LSTM over the loading history -> linear head.
// ---------------------------------------------------------------------------

struct ModelParams {
  ArchSpec spec;
  int in_channels = 0;
  int dim = 2;  // spatial dimension the pixel variant was built for
  uint64_t seed = 0;
  std::vector<ConvParams> convs;
  std::vector<BatchNormParams> bns;
  std::vector<DenseParams> dense;
  LstmParams lstm;
  DenseParams head;
};

inline ModelParams build(const ArchSpec& spec, const CellComplex& complex, int n_channels,
                         uint64_t seed) {
  spec.validate();
  if (n_channels < 1) throw config_error("build: need at least one input channel");
  if (spec.variant == Variant::cnn && complex.kind != ComplexKind::structured)
    throw topology_error("build: cnn variant requires a structured complex");
  ModelParams p;
  p.spec = spec;
  p.in_channels = n_channels;
  p.dim = complex.kind == ComplexKind::structured ? complex.dim() : 3;
  p.seed = seed;
  Rng rng(mix_seed(seed, 0xA5));
  const int nf = spec.n_filters;
  for (int l = 0; l < spec.n_conv; ++l) {
    const int in = l == 0 ? n_channels : nf;
    auto conv = make_conv(spec.pattern, p.dim, in, nf);
    const int slots = conv.slot_count();
    for (auto& w : conv.weights) glorot_fill(w, in * slots, nf * slots, rng);
    p.convs.push_back(std::move(conv));
    p.bns.push_back(make_batch_norm(nf));
  }
  for (int l = 0; l < spec.n_dense; ++l) {
    auto d = make_dense(nf, nf, l + 1 == spec.n_dense ? Activation::linear : Activation::relu);
    glorot_fill(d.w, nf, nf, rng);
    p.dense.push_back(std::move(d));
  }
  p.lstm = make_lstm(nf + 1, nf);
  for (Matrix* w : {&p.lstm.wi, &p.lstm.wf, &p.lstm.wg, &p.lstm.wo})
    glorot_fill(*w, nf + 1 + nf, nf, rng);
  std::fill(p.lstm.bf.begin(), p.lstm.bf.end(), 1.0);  // standard forget-gate start
  p.head = make_dense(nf, 1, Activation::linear);
  glorot_fill(p.head.w, nf, 1, rng);
  return p;
}

// Deterministic traversal of the trainable parameter vectors.
template <typename Fn>
inline void visit_trainable(ModelParams& p, Fn&& fn) {
  for (size_t l = 0; l < p.convs.size(); ++l) {
    for (size_t s = 0; s < p.convs[l].weights.size(); ++s)
      fn("conv" + std::to_string(l) + ".w" + std::to_string(s), p.convs[l].weights[s].a);
    fn("conv" + std::to_string(l) + ".b", p.convs[l].bias);
    fn("bn" + std::to_string(l) + ".gamma", p.bns[l].gamma);
    fn("bn" + std::to_string(l) + ".beta", p.bns[l].beta);
  }
  for (size_t l = 0; l < p.dense.size(); ++l) {
    fn("dense" + std::to_string(l) + ".w", p.dense[l].w.a);
    fn("dense" + std::to_string(l) + ".b", p.dense[l].b);
  }
  fn("lstm.wi", p.lstm.wi.a);
  fn("lstm.bi", p.lstm.bi);
  fn("lstm.wf", p.lstm.wf.a);
  fn("lstm.bf", p.lstm.bf);
  fn("lstm.wg", p.lstm.wg.a);
  fn("lstm.bg", p.lstm.bg);
  fn("lstm.wo", p.lstm.wo.a);
  fn("lstm.bo", p.lstm.bo);
  fn("head.w", p.head.w.a);
  fn("head.b", p.head.b);
}

// Trainable plus batch-norm running statistics (checkpoint payload).
template <typename Fn>
inline void visit_all(ModelParams& p, Fn&& fn) {
  visit_trainable(p, fn);
  for (size_t l = 0; l < p.bns.size(); ++l) {
    fn("bn" + std::to_string(l) + ".run_mean", p.bns[l].run_mean);
    fn("bn" + std::to_string(l) + ".run_var", p.bns[l].run_var);
  }
}

inline ModelParams zero_like(const ModelParams& p) {
  ModelParams z = p;
  visit_all(z, [](const std::string&, std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
  return z;
}

inline std::vector<double> flatten_trainable(const ModelParams& p) {
  std::vector<double> out;
  visit_trainable(const_cast<ModelParams&>(p),
                  [&](const std::string&, std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); });
  return out;
}

inline void unflatten_trainable(ModelParams& p, const std::vector<double>& flat) {
  size_t pos = 0;
  visit_trainable(p, [&](const std::string&, std::vector<double>& v) {
    std::copy(flat.begin() + pos, flat.begin() + pos + v.size(), v.begin());
    pos += v.size();
  });
  if (pos != flat.size()) throw shape_error("unflatten_trainable: size mismatch");
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ForwardCache {
  std::vector<Matrix> conv_in;    // input of each conv layer (batch-concatenated)
  std::vector<BatchNormCache> bn;
  std::vector<Matrix> relu_out;   // activation output of each conv block
  std::vector<int> segments;      // node ranges per sample, size B+1
  // per-sample tails
  std::vector<std::vector<double>> pooled;
  std::vector<std::vector<std::vector<double>>> dense_in, dense_out;
  std::vector<std::vector<double>> features;
  std::vector<std::vector<LstmStepCache>> lstm;
  std::vector<std::vector<std::vector<double>>> hidden;
  std::vector<std::vector<double>> outputs;
};

// Bind the model's pattern to one complex. dGCNN/rGCNN rebind per sample.
inline AdjacencyStack bind_stack(const ModelParams& p, const CellComplex& complex) {
  if (p.spec.variant == Variant::cnn) {
    if (complex.kind != ComplexKind::structured)
      throw topology_error("bind_stack: cnn variant requires structured samples");
    if (complex.dim() != p.dim) throw topology_error("bind_stack: grid dimension mismatch");
  }
  return build_pattern_stack(complex, p.spec.pattern);
}

// Run several samples through the convolutional unit jointly: the inputs are
// row-concatenated, the stack is block-diagonal, and batch normalization sees
// batch x nodes. Pooling and the recurrent tail stay per sample (segments).
inline std::vector<std::vector<double>> model_forward_batch(
    ModelParams& p, const AdjacencyStack& stack, const Matrix& x_cat, const std::vector<int>& segments,
    const std::vector<const std::vector<double>*>& strains, bool training,
    ForwardCache* cache = nullptr) {
  if (x_cat.cols != p.in_channels) throw shape_error("model_forward: channel mismatch");
  if (segments.size() < 2 || segments.front() != 0 || segments.back() != x_cat.rows)
    throw shape_error("model_forward: bad segment table");
  const size_t n_samples = segments.size() - 1;
  if (strains.size() != n_samples) throw shape_error("model_forward: strain count mismatch");
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.segments = segments;
  c.conv_in.clear();
  c.bn.assign(p.convs.size(), {});
  c.relu_out.clear();

  Matrix cur = x_cat;
  for (size_t l = 0; l < p.convs.size(); ++l) {
    c.conv_in.push_back(cur);
    Matrix y = graph_conv(cur, p.convs[l], stack);
    y = batch_norm(y, p.bns[l], training, &c.bn[l]);
    cur = activate(y, Activation::relu);
    c.relu_out.push_back(cur);
  }

  c.pooled.assign(n_samples, {});
  c.dense_in.assign(n_samples, {});
  c.dense_out.assign(n_samples, {});
  c.features.assign(n_samples, {});
  c.lstm.assign(n_samples, {});
  c.hidden.assign(n_samples, {});
  c.outputs.assign(n_samples, {});
  for (size_t b = 0; b < n_samples; ++b) {
    const int lo = segments[b], hi = segments[b + 1];
    if (hi <= lo) throw shape_error("model_forward: empty segment");
    std::vector<double> pooled(cur.cols, 0.0);
    for (int i = lo; i < hi; ++i)
      for (int k = 0; k < cur.cols; ++k) pooled[k] += cur(i, k);
    for (double& v : pooled) v /= (hi - lo);
    c.pooled[b] = pooled;
    std::vector<double> vec = pooled;
    for (auto& d : p.dense) {
      c.dense_in[b].push_back(vec);
      vec = dense_forward(vec, d);
      c.dense_out[b].push_back(vec);
    }
    c.features[b] = vec;
    c.hidden[b] = unroll(c.features[b], *strains[b], p.lstm, &c.lstm[b]);
    c.outputs[b] = linear_head(c.hidden[b], p.head);
  }
  return c.outputs;
}

inline std::vector<double> model_forward(ModelParams& p, const AdjacencyStack& stack, const Matrix& x,
                                         const std::vector<double>& strain, bool training,
                                         ForwardCache* cache = nullptr) {
  const std::vector<int> segments{0, x.rows};
  return model_forward_batch(p, stack, x, segments, {&strain}, training, cache)[0];
}

// d_outs holds d(loss)/d(prediction) per sample and step. Parameter gradients
// accumulate into `grad` (a zero_like(ModelParams) on first use).
inline void model_backward_batch(ModelParams& p, const AdjacencyStack& stack, const ForwardCache& c,
                                 const std::vector<std::vector<double>>& d_outs, ModelParams& grad) {
  const int nf = p.spec.n_filters;
  const size_t n_samples = c.segments.size() - 1;
  if (d_outs.size() != n_samples) throw shape_error("model_backward: gradient count mismatch");
  const int n_total = c.relu_out.back().rows;
  Matrix dnodes(n_total, nf);
  for (size_t b = 0; b < n_samples; ++b) {
    const auto& d_out = d_outs[b];
    const int steps = static_cast<int>(d_out.size());
    std::vector<std::vector<double>> dh(steps, std::vector<double>(nf, 0.0));
    for (int t = 0; t < steps; ++t) {
      grad.head.b[0] += d_out[t];
      for (int k = 0; k < nf; ++k) {
        grad.head.w(k, 0) += c.hidden[b][t][k] * d_out[t];
        dh[t][k] = p.head.w(k, 0) * d_out[t];
      }
    }
    std::vector<double> dvec = unroll_backward(c.lstm[b], dh, p.lstm, grad.lstm);
    for (int l = static_cast<int>(p.dense.size()) - 1; l >= 0; --l)
      dvec = dense_backward(c.dense_in[b][l], c.dense_out[b][l], dvec, p.dense[l], grad.dense[l]);
    // pooling spreads d/n over the sample's node range
    const int lo = c.segments[b], hi = c.segments[b + 1];
    for (int i = lo; i < hi; ++i)
      for (int k = 0; k < nf; ++k) dnodes(i, k) = dvec[k] / (hi - lo);
  }
  for (int l = static_cast<int>(p.convs.size()) - 1; l >= 0; --l) {
    Matrix drelu(dnodes.rows, dnodes.cols);
    const Matrix& out = c.relu_out[l];
    for (size_t k = 0; k < drelu.a.size(); ++k)
      drelu.a[k] = dnodes.a[k] * (out.a[k] > 0.0 ? 1.0 : 0.0);
    Matrix dbn = batch_norm_backward(drelu, p.bns[l], c.bn[l], grad.bns[l].gamma, grad.bns[l].beta);
    Matrix dx(c.conv_in[l].rows, c.conv_in[l].cols);
    graph_conv_backward(c.conv_in[l], dbn, p.convs[l], stack, grad.convs[l], l > 0 ? &dx : nullptr);
    dnodes = std::move(dx);
  }
}

inline void model_backward(ModelParams& p, const AdjacencyStack& stack, const ForwardCache& c,
                           const std::vector<double>& d_out, ModelParams& grad) {
  model_backward_batch(p, stack, c, {d_out}, grad);
}

// ---------------------------------------------------------------------------
// Parameter counting with explicit accounting choices.
// ---------------------------------------------------------------------------

enum class BnAccounting {
  affine_only,       // gamma, beta
  affine_and_stats,  // plus running mean/var on every layer
  stats_except_last  // running statistics on all but the final norm layer
};

inline std::string bn_accounting_to_string(BnAccounting b) {
  switch (b) {
    case BnAccounting::affine_only: return "affine_only";
    case BnAccounting::affine_and_stats: return "affine_and_stats";
    case BnAccounting::stats_except_last: return "stats_except_last";
  }
  return "affine_only";
}

struct CountOptions {
  BnAccounting bn = BnAccounting::stats_except_last;
  bool include_recurrent = true;
};

struct LayerCount {
  std::string name;
  std::string shape;
  long long trainable = 0;
  long long counted = 0;
};

struct CountReport {
  std::vector<LayerCount> rows;
  long long total = 0;
};

inline CountReport param_count(const ModelParams& p, const CountOptions& opts = {}) {
  CountReport rep;
  auto add = [&](const std::string& name, const std::string& shape, long long trainable,
                 long long counted) {
    rep.rows.push_back({name, shape, trainable, counted});
    rep.total += counted;
  };
  for (size_t l = 0; l < p.convs.size(); ++l) {
    const auto& cv = p.convs[l];
    const long long w = static_cast<long long>(cv.slot_count()) * cv.in_channels * cv.out_channels;
    add("conv" + std::to_string(l),
        std::to_string(cv.slot_count()) + "x" + std::to_string(cv.in_channels) + "x" +
            std::to_string(cv.out_channels) + "+" + std::to_string(cv.out_channels),
        w + cv.out_channels, w + cv.out_channels);
    const long long affine = 2LL * cv.out_channels;
    long long counted = affine;
    if (opts.bn == BnAccounting::affine_and_stats ||
        (opts.bn == BnAccounting::stats_except_last && l + 1 < p.convs.size()))
      counted = 2 * affine;
    add("bn" + std::to_string(l), std::to_string(cv.out_channels) + "ch", affine, counted);
  }
  for (size_t l = 0; l < p.dense.size(); ++l) {
    const auto& d = p.dense[l];
    add("dense" + std::to_string(l), std::to_string(d.in) + "x" + std::to_string(d.out),
        static_cast<long long>(d.in) * d.out + d.out, static_cast<long long>(d.in) * d.out + d.out);
  }
  const long long lstm_params =
      4LL * (static_cast<long long>(p.lstm.hidden_size) * (p.lstm.input_size + p.lstm.hidden_size) +
             p.lstm.hidden_size);
  add("lstm", std::to_string(p.lstm.input_size) + "->" + std::to_string(p.lstm.hidden_size),
      lstm_params, opts.include_recurrent ? lstm_params : 0);
  add("head", std::to_string(p.head.in) + "->1", p.head.in + 1,
      opts.include_recurrent ? p.head.in + 1 : 0);
  return rep;
}

inline void write_param_table_csv(const CountReport& rep, const std::string& path,
                                  const std::string& provenance) {
  std::ofstream f(path);
  if (!f) throw io_error("write_param_table_csv: cannot open " + path);
  f << "# " << provenance << "\n";
  f << "layer,shape,trainable,counted\n";
  for (const auto& r : rep.rows)
    f << r.name << "," << r.shape << "," << r.trainable << "," << r.counted << "\n";
  f << "total,," << "," << rep.total << "\n";
}

// ---------------------------------------------------------------------------
// Exact grid rotations (index remapping, no interpolation).
// ---------------------------------------------------------------------------

// Integer rotation matrices for the exact-remap group: 4 elements in 2D,
// 24 in 3D.
inline std::vector<std::vector<int>> grid_rotation_matrices(int dim) {
  std::vector<std::vector<int>> mats;
  if (dim == 2) {
    mats = {{1, 0, 0, 1}, {0, -1, 1, 0}, {-1, 0, 0, -1}, {0, 1, -1, 0}};
  } else if (dim == 3) {
    for (const auto& q : cubic_rotations()) {
      std::vector<int> m(9);
      for (int k = 0; k < 9; ++k) m[k] = static_cast<int>(std::lround(q[k]));
      mats.push_back(m);
    }
  } else {
    throw topology_error("grid_rotation_matrices: 2D or 3D only");
  }
  return mats;
}

// Permutation sending cell id to its rotated location: out[new_id] = old_id.
inline std::vector<int> grid_rotation_permutation(const std::vector<int>& dims,
                                                  const std::vector<int>& mat) {
  const int d = static_cast<int>(dims.size());
  // axis j feeds axis i when mat[i*d+j] != 0; extents must match
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (mat[i * d + j] != 0 && dims[i] != dims[j])
        throw topology_error("grid_rotation_permutation: rotation not in the exact-remap group");
  int n = 1;
  for (int e : dims) n *= e;
  std::vector<int> perm(n);
  std::vector<int> src(d), dst(d);
  for (int id = 0; id < n; ++id) {
    const auto c = grid_cell_coord(dims, id);
    for (int i = 0; i < d; ++i) {
      int v = 0;
      bool neg = false;
      for (int j = 0; j < d; ++j) {
        if (mat[i * d + j] == 0) continue;
        v = mat[i * d + j] * c[j];
        neg = mat[i * d + j] < 0;
      }
      dst[i] = neg ? v + dims[i] - 1 : v;
    }
    (void)src;
    perm[grid_cell_id(dims, dst)] = id;
  }
  return perm;
}

struct EquivarianceReport {
  std::vector<double> deviation;  // per rotation group element
  double max_deviation = 0.0;
};

// Scalar-channel invariance check: remap the grid data through every exact
// rotation, re-run the forward pass, and report output deviations.
inline EquivarianceReport check_equivariance(ModelParams& p, const CellComplex& grid, const Matrix& x,
                                             const std::vector<double>& strain) {
  if (grid.kind != ComplexKind::structured)
    throw topology_error("check_equivariance: structured sample required");
  const auto stack = bind_stack(p, grid);
  const auto base = model_forward(p, stack, x, strain, false);
  EquivarianceReport rep;
  for (const auto& mat : grid_rotation_matrices(grid.dim())) {
    const auto perm = grid_rotation_permutation(grid.dims, mat);
    Matrix xr(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i)
      for (int ch = 0; ch < x.cols; ++ch) xr(i, ch) = x(perm[i], ch);
    const auto out = model_forward(p, stack, xr, strain, false);
    double dev = 0.0;
    for (size_t t = 0; t < out.size(); ++t) dev = std::max(dev, std::abs(out[t] - base[t]));
    rep.deviation.push_back(dev);
    rep.max_deviation = std::max(rep.max_deviation, dev);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON manifest plus little-endian float64 blob in visit order.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const ModelParams& params, const std::string& prefix,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  auto& p = const_cast<ModelParams&>(params);
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["arch"] = format_arch(p.spec);
  manifest["variant"] = variant_to_string(p.spec.variant);
  manifest["pattern"] = pattern_to_string(p.spec.pattern);
  manifest["boost_channels"] = p.spec.boost_channels;
  manifest["in_channels"] = p.in_channels;
  manifest["dim"] = p.dim;
  manifest["seed"] = p.seed;
  manifest["extra"] = extra;
  std::vector<double> blob;
  nlohmann::json layers = nlohmann::json::array();
  visit_all(p, [&](const std::string& name, std::vector<double>& v) {
    layers.push_back({{"name", name}, {"offset", blob.size()}, {"count", v.size()}});
    blob.insert(blob.end(), v.begin(), v.end());
  });
  manifest["layers"] = layers;
  {
    std::ofstream f(prefix + ".json");
    if (!f) throw io_error("save_checkpoint: cannot open " + prefix + ".json");
    f << manifest.dump(2);
  }
  {
    std::ofstream f(prefix + ".bin", std::ios::binary);
    if (!f) throw io_error("save_checkpoint: cannot open " + prefix + ".bin");
    f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * 8));
  }
}

inline ModelParams load_checkpoint(const std::string& prefix, const CellComplex& complex,
                                   nlohmann::json* extra_out = nullptr) {
  std::ifstream jf(prefix + ".json");
  if (!jf) throw io_error("load_checkpoint: cannot open " + prefix + ".json");
  nlohmann::json manifest;
  jf >> manifest;
  ArchSpec spec = parse_arch(manifest.at("arch").get<std::string>());
  spec.variant = variant_from_string(manifest.at("variant").get<std::string>());
  spec.pattern = pattern_from_string(manifest.at("pattern").get<std::string>());
  spec.boost_channels = manifest.value("boost_channels", std::vector<std::string>{});
  ModelParams p = build(spec, complex, manifest.at("in_channels").get<int>(),
                        manifest.at("seed").get<uint64_t>());
  std::ifstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw io_error("load_checkpoint: cannot open " + prefix + ".bin");
  bf.seekg(0, std::ios::end);
  const auto bytes = static_cast<size_t>(bf.tellg());
  bf.seekg(0);
  std::vector<double> blob(bytes / 8);
  bf.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(bytes));
  size_t pos = 0;
  visit_all(p, [&](const std::string&, std::vector<double>& v) {
    if (pos + v.size() > blob.size()) throw io_error("load_checkpoint: blob too small");
    std::copy(blob.begin() + pos, blob.begin() + pos + v.size(), v.begin());
    pos += v.size();
  });
  if (pos != blob.size()) throw io_error("load_checkpoint: blob size mismatch");
  if (extra_out) *extra_out = manifest.value("extra", nlohmann::json::object());
  return p;
}

}  // namespace mgcnn
