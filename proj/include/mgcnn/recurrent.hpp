#pragma once

#include <cmath>
#include <vector>

#include "mgcnn/dense.hpp"
#include "mgcnn/errors.hpp"
#include "mgcnn/filters.hpp"

namespace mgcnn {

// ---------------------------------------------------------------------------
// Trajectory: paired loading history and homogenized response.
// strain is dimensionless engineering strain, stress is MPa.
// ---------------------------------------------------------------------------

struct Trajectory {
  std::vector<double> strain;
  std::vector<double> stress;

  int steps() const { return static_cast<int>(strain.size()); }

  void validate() const {
    if (steps() < 2) throw shape_error("Trajectory: need at least 2 steps");
    if (stress.size() != strain.size()) throw shape_error("Trajectory: strain/stress length mismatch");
    for (int i = 1; i < steps(); ++i)
      if (strain[i] < strain[i - 1]) throw shape_error("Trajectory: strain must be non-decreasing");
  }
};

// ---------------------------------------------------------------------------
// LSTM. Gate order i, f, g, o; sigmoid gates, tanh candidate and output.
// The step input is the pooled feature vector concatenated with the scalar
// strain for that step, so input_size = n_features + 1.
// ---------------------------------------------------------------------------

struct LstmParams {
  int input_size = 0, hidden_size = 0;
  Matrix wi, wf, wg, wo;  // (input_size + hidden_size) x hidden_size
  std::vector<double> bi, bf, bg, bo;
};

inline LstmParams make_lstm(int input_size, int hidden_size) {
  LstmParams p;
  p.input_size = input_size;
  p.hidden_size = hidden_size;
  const int rows = input_size + hidden_size;
  p.wi = Matrix(rows, hidden_size);
  p.wf = Matrix(rows, hidden_size);
  p.wg = Matrix(rows, hidden_size);
  p.wo = Matrix(rows, hidden_size);
  p.bi.assign(hidden_size, 0.0);
  p.bf.assign(hidden_size, 0.0);
  p.bg.assign(hidden_size, 0.0);
  p.bo.assign(hidden_size, 0.0);
  return p;
}

struct LstmState {
  std::vector<double> h, c;
};

inline LstmState zero_state(int hidden) { return {std::vector<double>(hidden, 0.0), std::vector<double>(hidden, 0.0)}; }

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// One-step cache for backpropagation through time.
struct LstmStepCache {
  std::vector<double> x;  // input_size
  std::vector<double> h_prev, c_prev;
  std::vector<double> gi, gf, gg, go;  // post-activation gates
  std::vector<double> c, tanh_c;
};

inline LstmState lstm_step(const LstmState& state, const std::vector<double>& x, const LstmParams& p,
                           LstmStepCache* cache = nullptr) {
  if (static_cast<int>(x.size()) != p.input_size) throw shape_error("lstm_step: input size mismatch");
  if (static_cast<int>(state.h.size()) != p.hidden_size) throw shape_error("lstm_step: state size mismatch");
  for (double v : x)
    if (!std::isfinite(v)) throw numerical_error("lstm_step: non-finite input");
  const int hid = p.hidden_size;
  LstmState next = zero_state(hid);
  std::vector<double> gi(hid), gf(hid), gg(hid), go(hid);
  auto gate_pre = [&](const Matrix& w, const std::vector<double>& b, int j) {
    double acc = b[j];
    for (int k = 0; k < p.input_size; ++k) acc += x[k] * w(k, j);
    for (int k = 0; k < hid; ++k) acc += state.h[k] * w(p.input_size + k, j);
    return acc;
  };
  for (int j = 0; j < hid; ++j) {
    gi[j] = sigmoid(gate_pre(p.wi, p.bi, j));
    gf[j] = sigmoid(gate_pre(p.wf, p.bf, j));
    gg[j] = std::tanh(gate_pre(p.wg, p.bg, j));
    go[j] = sigmoid(gate_pre(p.wo, p.bo, j));
    next.c[j] = gf[j] * state.c[j] + gi[j] * gg[j];
    next.h[j] = go[j] * std::tanh(next.c[j]);
  }
  if (cache) {
    cache->x = x;
    cache->h_prev = state.h;
    cache->c_prev = state.c;
    cache->gi = gi;
    cache->gf = gf;
    cache->gg = gg;
    cache->go = go;
    cache->c = next.c;
    cache->tanh_c.resize(hid);
    for (int j = 0; j < hid; ++j) cache->tanh_c[j] = std::tanh(next.c[j]);
  }
  return next;
}

// Evolve constant pooled features through the loading history: the features
// are concatenated with strain(t) at every step. Returns the hidden series
// (T x hidden).
inline std::vector<std::vector<double>> unroll(const std::vector<double>& features,
                                               const std::vector<double>& strain, const LstmParams& p,
                                               std::vector<LstmStepCache>* caches = nullptr) {
  if (strain.empty()) throw shape_error("unroll: empty strain series");
  if (static_cast<int>(features.size()) + 1 != p.input_size)
    throw shape_error("unroll: feature size + 1 must equal LSTM input size");
  auto state = zero_state(p.hidden_size);
  std::vector<std::vector<double>> hidden;
  hidden.reserve(strain.size());
  if (caches) caches->resize(strain.size());
  std::vector<double> x(features.size() + 1);
  std::copy(features.begin(), features.end(), x.begin());
  for (size_t t = 0; t < strain.size(); ++t) {
    x.back() = strain[t];
    state = lstm_step(state, x, p, caches ? &(*caches)[t] : nullptr);
    hidden.push_back(state.h);
  }
  return hidden;
}

// Backward through time. dh_series holds d(loss)/d(h_t). Accumulates
// parameter gradients and returns d(loss)/d(features) (summed over steps).
inline std::vector<double> unroll_backward(const std::vector<LstmStepCache>& caches,
                                           const std::vector<std::vector<double>>& dh_series,
                                           const LstmParams& p, LstmParams& grad) {
  const int hid = p.hidden_size;
  const int in = p.input_size;
  std::vector<double> dh_next(hid, 0.0), dc_next(hid, 0.0);
  std::vector<double> dfeat(in - 1, 0.0);
  std::vector<double> di(hid), df(hid), dg(hid), dor(hid);
  for (int t = static_cast<int>(caches.size()) - 1; t >= 0; --t) {
    const auto& cc = caches[t];
    std::vector<double> dh(hid), dc(hid);
    for (int j = 0; j < hid; ++j) {
      dh[j] = dh_series[t][j] + dh_next[j];
      const double dtanh = dh[j] * cc.go[j];
      dc[j] = dc_next[j] + dtanh * (1.0 - cc.tanh_c[j] * cc.tanh_c[j]);
      dor[j] = dh[j] * cc.tanh_c[j] * cc.go[j] * (1.0 - cc.go[j]);
      di[j] = dc[j] * cc.gg[j] * cc.gi[j] * (1.0 - cc.gi[j]);
      dg[j] = dc[j] * cc.gi[j] * (1.0 - cc.gg[j] * cc.gg[j]);
      df[j] = dc[j] * cc.c_prev[j] * cc.gf[j] * (1.0 - cc.gf[j]);
      dc_next[j] = dc[j] * cc.gf[j];
    }
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    auto accumulate = [&](const Matrix& w, Matrix& dw, std::vector<double>& db,
                          const std::vector<double>& dpre) {
      for (int j = 0; j < hid; ++j) {
        const double d = dpre[j];
        if (d == 0.0) continue;
        db[j] += d;
        for (int k = 0; k < in; ++k) dw(k, j) += cc.x[k] * d;
        for (int k = 0; k < hid; ++k) dw(in + k, j) += cc.h_prev[k] * d;
        for (int k = 0; k + 1 < in; ++k) dfeat[k] += w(k, j) * d;
        for (int k = 0; k < hid; ++k) dh_next[k] += w(in + k, j) * d;
      }
    };
    accumulate(p.wi, grad.wi, grad.bi, di);
    accumulate(p.wf, grad.wf, grad.bf, df);
    accumulate(p.wg, grad.wg, grad.bg, dg);
    accumulate(p.wo, grad.wo, grad.bo, dor);
  }
  return dfeat;
}

// Affine readout applied per step, no activation.
inline std::vector<double> linear_head(const std::vector<std::vector<double>>& hidden, const DenseParams& p) {
  if (p.out != 1) throw shape_error("linear_head: single output expected");
  std::vector<double> y(hidden.size());
  for (size_t t = 0; t < hidden.size(); ++t) {
    if (static_cast<int>(hidden[t].size()) != p.in) throw shape_error("linear_head: hidden size mismatch");
    double acc = p.b[0];
    for (int k = 0; k < p.in; ++k) acc += hidden[t][k] * p.w(k, 0);
    y[t] = acc;
  }
  return y;
}

}  // namespace mgcnn
