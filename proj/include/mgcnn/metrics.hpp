#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgcnn/dense.hpp"
#include "mgcnn/errors.hpp"

namespace mgcnn {

// Predictions and truths are (n_samples x n_steps) matrices throughout.

// eps(t) = (1/normalizer) * sqrt( mean_a err_a(t)^2 ). The literal flag drops
// the 1/N inside the radical, reproducing the printed form that grows with
// test-set size.
inline std::vector<double> rmse_curve(const Matrix& pred, const Matrix& truth, double normalizer,
                                      bool literal_sum = false) {
  if (!pred.same_shape(truth)) throw shape_error("rmse_curve: shape mismatch");
  if (!(normalizer > 0.0)) throw config_error("rmse_curve: nonpositive normalizer");
  std::vector<double> out(pred.cols, 0.0);
  for (int t = 0; t < pred.cols; ++t) {
    double acc = 0.0;
    for (int a = 0; a < pred.rows; ++a) {
      const double d = pred(a, t) - truth(a, t);
      acc += d * d;
    }
    if (!literal_sum) acc /= pred.rows;
    out[t] = std::sqrt(acc) / normalizer;
  }
  return out;
}

// Pearson correlation across samples at each step. Zero-variance steps are
// flagged undefined (NaN), never silently zero.
inline std::vector<double> correlation_curve(const Matrix& pred, const Matrix& truth) {
  if (!pred.same_shape(truth)) throw shape_error("correlation_curve: shape mismatch");
  if (pred.rows < 2) throw shape_error("correlation_curve: need at least 2 samples");
  const int n = pred.rows;
  std::vector<double> out(pred.cols);
  for (int t = 0; t < pred.cols; ++t) {
    double mp = 0.0, mt = 0.0;
    for (int a = 0; a < n; ++a) {
      mp += pred(a, t);
      mt += truth(a, t);
    }
    mp /= n;
    mt /= n;
    double spt = 0.0, spp = 0.0, stt = 0.0;
    for (int a = 0; a < n; ++a) {
      const double dp = pred(a, t) - mp;
      const double dt = truth(a, t) - mt;
      spt += dp * dt;
      spp += dp * dp;
      stt += dt * dt;
    }
    out[t] = (spp > 0.0 && stt > 0.0) ? spt / std::sqrt(spp * stt)
                                      : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

inline double mean_defined(const std::vector<double>& v) {
  double acc = 0.0;
  int n = 0;
  for (double x : v)
    if (std::isfinite(x)) {
      acc += x;
      ++n;
    }
  if (n == 0) throw numerical_error("mean_defined: no defined entries");
  return acc / n;
}

inline double min_defined(const std::vector<double>& v) {
  double m = std::numeric_limits<double>::infinity();
  for (double x : v)
    if (std::isfinite(x)) m = std::min(m, x);
  if (!std::isfinite(m)) throw numerical_error("min_defined: no defined entries");
  return m;
}

// Empirical CDF of per-sample errors: sorted (value, fraction <= value).
inline std::vector<std::pair<double, double>> error_cdf(std::vector<double> values) {
  if (values.empty()) throw shape_error("error_cdf: empty input");
  std::sort(values.begin(), values.end());
  std::vector<std::pair<double, double>> cdf(values.size());
  for (size_t i = 0; i < values.size(); ++i)
    cdf[i] = {values[i], static_cast<double>(i + 1) / values.size()};
  return cdf;
}

struct HistogramPair {
  std::vector<double> edges;  // bins+1
  std::vector<int> count_true, count_pred;
};

// Equal-bin histograms of true and predicted values over their joint range.
inline HistogramPair pred_pdf(const std::vector<double>& truths, const std::vector<double>& preds,
                              int bins = 20) {
  if (truths.empty() || preds.empty()) throw shape_error("pred_pdf: empty input");
  double lo = truths[0], hi = truths[0];
  for (double v : truths) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : preds) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1.0;
  HistogramPair h;
  h.edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * b / bins;
  h.count_true.assign(bins, 0);
  h.count_pred.assign(bins, 0);
  auto bin_of = [&](double v) {
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    return std::clamp(b, 0, bins - 1);
  };
  for (double v : truths) h.count_true[bin_of(v)]++;
  for (double v : preds) h.count_pred[bin_of(v)]++;
  return h;
}

// ---------------------------------------------------------------------------
// EvalReport: the plot-ready outputs (CSV per curve plus a combined JSON).
// ---------------------------------------------------------------------------

struct EvalReport {
  std::vector<double> strain;
  std::vector<double> rmse;         // eps(t)
  std::vector<double> correlation;  // C(t), NaN where undefined
  std::vector<double> per_sample_rmse;
  std::vector<double> cdf_strains;
  std::vector<std::vector<std::pair<double, double>>> cdfs;
};

inline void write_curves_csv(const EvalReport& rep, const std::string& path,
                             const std::string& provenance) {
  std::ofstream f(path);
  if (!f) throw io_error("write_curves_csv: cannot open " + path);
  f << "# " << provenance << "\n";
  f << "strain,rmse,correlation\n";
  for (size_t t = 0; t < rep.strain.size(); ++t) {
    f << rep.strain[t] << "," << rep.rmse[t] << ",";
    if (std::isfinite(rep.correlation[t]))
      f << rep.correlation[t];
    else
      f << "undefined";
    f << "\n";
  }
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
  nlohmann::json j;
  j["strain"] = rep.strain;
  j["rmse"] = rep.rmse;
  nlohmann::json corr = nlohmann::json::array();
  for (double c : rep.correlation)
    corr.push_back(std::isfinite(c) ? nlohmann::json(c) : nlohmann::json(nullptr));
  j["correlation"] = corr;
  j["per_sample_rmse"] = rep.per_sample_rmse;
  j["rmse_mean"] = mean_defined(rep.rmse);
  j["correlation_mean"] = rep.correlation.empty() ? 0.0 : mean_defined(rep.correlation);
  return j;
}

}  // namespace mgcnn
