#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "mgcnn/metrics.hpp"
#include "mgcnn/model.hpp"
#include "mgcnn/oracle.hpp"

namespace mgcnn {

// ---------------------------------------------------------------------------
// Model-ready samples. The complex is shared, never copied per sample, so a
// batch-1 pass can only ever see its own adjacency.
// ---------------------------------------------------------------------------

struct ModelSample {
  std::shared_ptr<const CellComplex> complex;
  Matrix x;  // model input channels
  Trajectory traj;
};

inline ModelSample sample_from_microstructure(Microstructure&& micro, Trajectory traj) {
  ModelSample s;
  s.x = micro.model_input();
  s.complex = std::make_shared<const CellComplex>(std::move(micro.complex));
  s.traj = std::move(traj);
  return s;
}

inline ModelSample sample_from_grain_graph(GrainGraph&& gg, Trajectory traj) {
  ModelSample s;
  s.x = std::move(gg.features);
  s.complex = std::make_shared<const CellComplex>(std::move(gg.complex));
  s.traj = std::move(traj);
  return s;
}

// ---------------------------------------------------------------------------
// Data conditioning. Computed on the training split only. Inputs scale by
// per-channel max magnitude, strain by its max; targets become the deviation
// from the training mean trend divided by a scalar stress spread.
// ---------------------------------------------------------------------------

struct ConditioningStats {
  std::vector<double> input_max;   // per channel
  double strain_max = 0.0;
  std::vector<double> mean_trend;  // <sigma>(t) over the training split
  double sigma_std = 0.0;
  bool pooled_std = false;

  void validate() const {
    for (double m : input_max)
      if (!(m > 0.0)) throw numerical_error("conditioning: zero channel maximum");
    if (!(strain_max > 0.0)) throw numerical_error("conditioning: zero strain maximum");
    if (!(sigma_std > 0.0)) throw numerical_error("conditioning: zero stress spread");
  }
};

// pooled_std = false: per-realization std of sigma over time, averaged over
// the training split (one scalar). pooled_std = true: std of all deviations
// from the trend, pooled over (sample, step).
inline ConditioningStats compute_conditioning(const std::vector<ModelSample>& samples,
                                              const std::vector<int>& train_idx,
                                              bool pooled_std = false) {
  if (train_idx.empty()) throw config_error("compute_conditioning: empty training split");
  const int channels = samples[train_idx[0]].x.cols;
  const int steps = samples[train_idx[0]].traj.steps();
  ConditioningStats st;
  st.pooled_std = pooled_std;
  st.input_max.assign(channels, 0.0);
  st.mean_trend.assign(steps, 0.0);
  for (int idx : train_idx) {
    const auto& s = samples[idx];
    if (s.x.cols != channels) throw shape_error("compute_conditioning: channel count varies");
    if (s.traj.steps() != steps) throw shape_error("compute_conditioning: step count varies");
    for (int i = 0; i < s.x.rows; ++i)
      for (int c = 0; c < channels; ++c)
        st.input_max[c] = std::max(st.input_max[c], std::abs(s.x(i, c)));
    st.strain_max = std::max(st.strain_max, s.traj.strain.back());
    for (int t = 0; t < steps; ++t) st.mean_trend[t] += s.traj.stress[t];
  }
  for (double& v : st.mean_trend) v /= train_idx.size();
  double max_dev = 0.0;
  for (int idx : train_idx)
    for (int t = 0; t < steps; ++t)
      max_dev = std::max(max_dev, std::abs(samples[idx].traj.stress[t] - st.mean_trend[t]));
  if (max_dev <= 0.0)
    throw numerical_error("compute_conditioning: all trajectories identical (zero deviation)");
  if (pooled_std) {
    double acc = 0.0;
    long long n = 0;
    for (int idx : train_idx)
      for (int t = 0; t < steps; ++t) {
        const double d = samples[idx].traj.stress[t] - st.mean_trend[t];
        acc += d * d;
        ++n;
      }
    st.sigma_std = std::sqrt(acc / n);
  } else {
    double acc = 0.0;
    for (int idx : train_idx) {
      double mean = 0.0;
      for (double s : samples[idx].traj.stress) mean += s;
      mean /= steps;
      double var = 0.0;
      for (double s : samples[idx].traj.stress) var += (s - mean) * (s - mean);
      acc += std::sqrt(var / steps);
    }
    st.sigma_std = acc / train_idx.size();
  }
  st.validate();
  return st;
}

struct ConditionedSample {
  std::shared_ptr<const CellComplex> complex;
  Matrix x;
  std::vector<double> strain;  // normalized
  std::vector<double> target;  // conditioned stress deviation
};

inline ConditionedSample condition_sample(const ModelSample& s, const ConditioningStats& st) {
  ConditionedSample out;
  out.complex = s.complex;
  out.x = s.x;
  for (int i = 0; i < out.x.rows; ++i)
    for (int c = 0; c < out.x.cols; ++c) out.x(i, c) /= st.input_max[c];
  out.strain.resize(s.traj.steps());
  out.target.resize(s.traj.steps());
  for (int t = 0; t < s.traj.steps(); ++t) {
    out.strain[t] = s.traj.strain[t] / st.strain_max;
    out.target[t] = (s.traj.stress[t] - st.mean_trend[t]) / st.sigma_std;
  }
  return out;
}

inline std::vector<double> uncondition_prediction(const std::vector<double>& pred,
                                                  const ConditioningStats& st) {
  if (pred.size() != st.mean_trend.size()) throw shape_error("uncondition: length mismatch");
  std::vector<double> out(pred.size());
  for (size_t t = 0; t < pred.size(); ++t) out[t] = pred[t] * st.sigma_std + st.mean_trend[t];
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

// Mean squared error over time steps (and samples, when averaged upstream).
inline double mse_loss(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size()) throw shape_error("mse_loss: length mismatch");
  double acc = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    const double d = pred[t] - target[t];
    acc += d * d;
  }
  return acc / pred.size();
}

// Exact reverse-mode gradient of the mean batch loss. Samples are run through
// the convolutional unit jointly (normalization statistics span batch x
// nodes). Raises a diagnostic naming the offending layer when a non-finite
// value appears.
inline double compute_gradients(ModelParams& params, const std::vector<const ConditionedSample*>& batch,
                                const std::vector<const AdjacencyStack*>& stacks, ModelParams& grad,
                                bool training = true) {
  if (batch.empty()) throw shape_error("compute_gradients: empty batch");
  const AdjacencyStack* stack = stacks[0];
  AdjacencyStack joined;
  std::vector<int> segments{0};
  int total = 0;
  for (const auto* s : batch) {
    total += s->x.rows;
    segments.push_back(total);
  }
  Matrix x_cat(total, batch[0]->x.cols);
  std::vector<const std::vector<double>*> strains;
  for (size_t b = 0; b < batch.size(); ++b) {
    const auto& s = *batch[b];
    for (int i = 0; i < s.x.rows; ++i)
      for (int c = 0; c < s.x.cols; ++c) x_cat(segments[b] + i, c) = s.x(i, c);
    strains.push_back(&s.strain);
  }
  if (batch.size() > 1) {
    joined = concat_stacks(stacks);
    stack = &joined;
  }

  ForwardCache cache;
  const auto preds = model_forward_batch(params, *stack, x_cat, segments, strains, training, &cache);
  double loss = 0.0;
  std::vector<std::vector<double>> douts(batch.size());
  for (size_t b = 0; b < batch.size(); ++b) {
    const auto& s = *batch[b];
    const int steps = static_cast<int>(preds[b].size());
    douts[b].resize(steps);
    double sample_loss = 0.0;
    for (int t = 0; t < steps; ++t) {
      const double d = preds[b][t] - s.target[t];
      sample_loss += d * d;
      douts[b][t] = 2.0 * d / (steps * static_cast<double>(batch.size()));
    }
    if (!std::isfinite(sample_loss)) throw numerical_error("compute_gradients: non-finite forward output");
    loss += sample_loss / steps;
  }
  model_backward_batch(params, *stack, cache, douts, grad);
  visit_trainable(grad, [](const std::string& name, std::vector<double>& v) {
    for (double x : v)
      if (!std::isfinite(x)) throw numerical_error("compute_gradients: non-finite gradient in " + name);
  });
  return loss / batch.size();
}

// ---------------------------------------------------------------------------
// Dataset splitting
// ---------------------------------------------------------------------------

struct SplitIndices {
  std::vector<int> train, val, test;
};

inline SplitIndices split_dataset(int n, double train_ratio, double val_ratio, double test_ratio,
                                  uint64_t seed) {
  if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
    throw config_error("split_dataset: ratios must sum to 1");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, 0x5e17));
  rng.shuffle(idx);
  const int n_val = static_cast<int>(std::llround(n * val_ratio));
  const int n_test = static_cast<int>(std::llround(n * test_ratio));
  const int n_train = n - n_val - n_test;
  if ((train_ratio > 0 && n_train <= 0) || (val_ratio > 0 && n_val <= 0) ||
      (test_ratio > 0 && n_test <= 0))
    throw config_error("split_dataset: a requested split is empty");
  SplitIndices out;
  out.train.assign(idx.begin(), idx.begin() + n_train);
  out.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  out.test.assign(idx.begin() + n_train + n_val, idx.end());
  return out;
}

// ---------------------------------------------------------------------------
// Optimization: adaptive moments over the flattened trainable vector.
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int epochs = 200;
  int patience = 20;
  int batch_size = 1;
  uint64_t seed = 0;
  double train_ratio = 0.7, val_ratio = 0.1, test_ratio = 0.2;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0, val_loss = 0.0, val_corr_mean = 0.0;
};

struct FitResult {
  ModelParams params;
  std::vector<EpochStats> history;
  int best_epoch = -1;
  bool aborted_nonfinite = false;
};

struct PreparedSample {
  const ConditionedSample* sample;
  AdjacencyStack stack;
};

inline std::vector<PreparedSample> prepare_samples(const ModelParams& params,
                                                   const std::vector<ConditionedSample>& samples) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({&s, bind_stack(params, *s.complex)});
  return out;
}

inline double evaluate_loss(ModelParams& params, const std::vector<PreparedSample>& samples,
                            std::vector<double>* corr_mean_out = nullptr) {
  double loss = 0.0;
  Matrix pred(static_cast<int>(samples.size()),
              static_cast<int>(samples[0].sample->target.size()));
  Matrix truth(pred.rows, pred.cols);
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = *samples[i].sample;
    const auto y = model_forward(params, samples[i].stack, s.x, s.strain, false);
    loss += mse_loss(y, s.target);
    for (int t = 0; t < pred.cols; ++t) {
      pred(static_cast<int>(i), t) = y[t];
      truth(static_cast<int>(i), t) = s.target[t];
    }
  }
  if (corr_mean_out) *corr_mean_out = correlation_curve(pred, truth);
  return loss / samples.size();
}

inline FitResult fit(const ModelParams& init, const std::vector<ConditionedSample>& train,
                     const std::vector<ConditionedSample>& val, const TrainConfig& cfg,
                     std::vector<EpochStats>* append_history = nullptr, int epoch_offset = 0) {
  FitResult res;
  res.params = init;
  auto train_prep = prepare_samples(init, train);
  auto val_prep = val.empty() ? std::vector<PreparedSample>{} : prepare_samples(init, val);

  auto flat = flatten_trainable(res.params);
  std::vector<double> m(flat.size(), 0.0), v(flat.size(), 0.0);
  long long step_count = 0;

  ModelParams best = res.params;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1, since_best = 0;

  std::vector<int> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng shuffle_rng(mix_seed(cfg.seed, 0x0d0e));

  ModelParams grad = zero_like(res.params);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double train_loss = 0.0;
    int batches = 0;
    size_t pos = 0;
    bool nonfinite = false;
    while (pos < order.size()) {
      const size_t take = std::min<size_t>(cfg.batch_size, order.size() - pos);
      std::vector<const ConditionedSample*> batch;
      std::vector<const AdjacencyStack*> stacks;
      for (size_t k = 0; k < take; ++k) {
        batch.push_back(train_prep[order[pos + k]].sample);
        stacks.push_back(&train_prep[order[pos + k]].stack);
      }
      pos += take;
      visit_trainable(grad, [](const std::string&, std::vector<double>& g) {
        std::fill(g.begin(), g.end(), 0.0);
      });
      double batch_loss = 0.0;
      try {
        batch_loss = compute_gradients(res.params, batch, stacks, grad, true);
      } catch (const numerical_error&) {
        nonfinite = true;
        break;
      }
      train_loss += batch_loss;
      ++batches;
      // adaptive moment update
      ++step_count;
      flat = flatten_trainable(res.params);
      const auto gflat = flatten_trainable(grad);
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
      for (size_t k = 0; k < flat.size(); ++k) {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gflat[k];
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gflat[k] * gflat[k];
        flat[k] -= cfg.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps);
      }
      unflatten_trainable(res.params, flat);
    }
    if (nonfinite || batches == 0) {
      res.aborted_nonfinite = true;
      break;
    }
    EpochStats st;
    st.epoch = epoch_offset + epoch;
    st.train_loss = train_loss / batches;
    if (!val_prep.empty()) {
      std::vector<double> corr;
      st.val_loss = evaluate_loss(res.params, val_prep, &corr);
      bool any = false;
      for (double c : corr)
        if (std::isfinite(c)) any = true;
      st.val_corr_mean = any ? mean_defined(corr) : 0.0;
      if (st.val_loss < best_val - 1e-12) {
        best_val = st.val_loss;
        best = res.params;
        best_epoch = st.epoch;
        since_best = 0;
      } else if (++since_best > cfg.patience) {
        res.history.push_back(st);
        if (append_history) append_history->push_back(st);
        break;
      }
    } else {
      st.val_loss = st.train_loss;
      best = res.params;
      best_epoch = st.epoch;
    }
    res.history.push_back(st);
    if (append_history) append_history->push_back(st);
  }
  if (best_epoch >= 0) res.params = best;
  res.best_epoch = best_epoch;
  return res;
}

inline void write_history_csv(const std::vector<EpochStats>& history, const std::string& path,
                              const std::string& provenance) {
  std::ofstream f(path);
  if (!f) throw io_error("write_history_csv: cannot open " + path);
  f << "# " << provenance << "\n";
  f << "epoch,train_loss,val_loss,val_corr_mean\n";
  for (const auto& h : history)
    f << h.epoch << "," << h.train_loss << "," << h.val_loss << "," << h.val_corr_mean << "\n";
}

}  // namespace mgcnn
