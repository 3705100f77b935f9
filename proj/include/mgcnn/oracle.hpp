#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "mgcnn/errors.hpp"
#include "mgcnn/microgen.hpp"
#include "mgcnn/recurrent.hpp"

namespace mgcnn {

// ---------------------------------------------------------------------------
// Loading programs: constant engineering strain rate tension.
// ---------------------------------------------------------------------------

struct LoadingProgram {
  double strain_rate = 1.0;  // 1/s
  double max_strain = 0.0;
  int steps = 0;

  static LoadingProgram cp2d() { return {1.0, 0.003, 31}; }
  static LoadingProgram cp3d() { return {1.0, 0.004, 51}; }
  static LoadingProgram porous() { return {1.0, 0.20, 400}; }

  void validate() const {
    if (steps < 2) throw config_error("LoadingProgram: need at least 2 steps");
    if (max_strain < 0.0 || !(strain_rate > 0.0))
      throw config_error("LoadingProgram: nonnegative strain and positive rate required");
  }

  double strain(int i) const { return max_strain * i / (steps - 1); }
  double time(int i) const { return strain(i) / strain_rate; }

  std::vector<double> strain_series() const {
    std::vector<double> s(steps);
    for (int i = 0; i < steps; ++i) s[i] = strain(i);
    return s;
  }
};

// ---------------------------------------------------------------------------
// J2 elastic-plastic cell model (tension, Voce hardening).
// ---------------------------------------------------------------------------

struct J2Params {
  double youngs_gpa = 59.2;
  double poisson = 0.33;
  double yield_mpa = 200.0;      // Y
  double hardening_mpa = 163.6;  // H
  double saturation_exp = 73.3;  // alpha

  double youngs_mpa() const { return youngs_gpa * 1000.0; }
};

// Voce law: sigma = Y - H exp(-alpha * eps_p), saturating at Y.
inline double voce_yield(double eps_p, const J2Params& p) {
  if (eps_p < 0.0) throw config_error("voce_yield: negative plastic strain");
  return p.yield_mpa - p.hardening_mpa * std::exp(-p.saturation_exp * eps_p);
}

// 1D return mapping under the monotone tension programs. yield_scale applies
// a multiplicative knockdown to the flow stress.
inline Trajectory j2_uniaxial(const LoadingProgram& program, const J2Params& params,
                              double yield_scale = 1.0) {
  program.validate();
  const double e_mod = params.youngs_mpa();
  Trajectory traj;
  traj.strain = program.strain_series();
  traj.stress.resize(program.steps);
  double eps_p = 0.0;
  for (int i = 0; i < program.steps; ++i) {
    const double eps = traj.strain[i];
    double sigma = e_mod * (eps - eps_p);
    const double flow = yield_scale * voce_yield(eps_p, params);
    if (sigma > flow) {
      // implicit consistency: E(eps - eps_p - d) = yield_scale * voce(eps_p + d)
      double d = 0.0;
      bool converged = false;
      for (int it = 0; it < 50; ++it) {
        const double expo = std::exp(-params.saturation_exp * (eps_p + d));
        const double f = e_mod * (eps - eps_p - d) -
                         yield_scale * (params.yield_mpa - params.hardening_mpa * expo);
        const double fp = -e_mod - yield_scale * params.hardening_mpa * params.saturation_exp * expo;
        const double step = f / fp;
        d -= step;
        if (d < 0.0) d = 0.0;
        if (std::abs(f) < 1e-10) {
          converged = true;
          break;
        }
      }
      if (!converged) throw numerical_error("j2_uniaxial: return mapping did not converge");
      eps_p += d;
      sigma = e_mod * (eps - eps_p);
    }
    traj.stress[i] = sigma;
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Crystal plasticity cell model: 12 fcc systems, power-law slip, single
// saturating slip resistance, per-cell uniform strain.
// ---------------------------------------------------------------------------

struct CpParams {
  double c11_gpa = 204.6, c12_gpa = 137.7, c44_gpa = 126.2;
  double gamma0_rate = 1.0;      // reference slip rate, 1/s
  double rate_exponent = 20.0;   // m
  double g0_mpa = 122.0;         // initial slip resistance
  double hardening_mpa = 355.0;  // H
  double recovery = 2.9;         // R_d
  double rate_clip = 1.2;        // cap on |tau/g| inside the power law
};

struct SlipSystem {
  Vec3 direction;  // unit s
  Vec3 normal;     // unit n
};

inline const std::vector<SlipSystem>& fcc_slip_systems() {
  static const std::vector<SlipSystem> systems = [] {
    const double n3 = 1.0 / std::sqrt(3.0), d2 = 1.0 / std::sqrt(2.0);
    std::vector<SlipSystem> out;
    const double planes[4][3] = {{1, 1, 1}, {-1, 1, 1}, {1, -1, 1}, {1, 1, -1}};
    const double dirs[4][3][3] = {
        {{1, -1, 0}, {0, 1, -1}, {-1, 0, 1}},
        {{1, 1, 0}, {1, 0, 1}, {0, 1, -1}},
        {{1, 1, 0}, {0, 1, 1}, {1, 0, -1}},
        {{1, -1, 0}, {0, 1, 1}, {1, 0, 1}},
    };
    for (int p = 0; p < 4; ++p)
      for (int s = 0; s < 3; ++s) {
        SlipSystem sys;
        for (int k = 0; k < 3; ++k) {
          sys.normal[k] = planes[p][k] * n3;
          sys.direction[k] = dirs[p][s][k] * d2;
        }
        out.push_back(sys);
      }
    return out;
  }();
  return systems;
}

// Directional Young's modulus of the rotated cubic crystal along the loading
// axis, in MPa. d is the loading direction expressed in the crystal frame.
inline double cubic_directional_modulus(const Vec3& d, const CpParams& p) {
  const double c11 = p.c11_gpa * 1000.0, c12 = p.c12_gpa * 1000.0, c44 = p.c44_gpa * 1000.0;
  const double denom = (c11 - c12) * (c11 + 2.0 * c12);
  const double s11 = (c11 + c12) / denom;
  const double s12 = -c12 / denom;
  const double s44 = 1.0 / c44;
  const double j = d[0] * d[0] * d[1] * d[1] + d[1] * d[1] * d[2] * d[2] + d[2] * d[2] * d[0] * d[0];
  return 1.0 / (s11 - 2.0 * (s11 - s12 - 0.5 * s44) * j);
}

namespace detail {

inline double int_pow(double base, int e) {
  double acc = 1.0;
  while (e > 0) {
    if (e & 1) acc *= base;
    base *= base;
    e >>= 1;
  }
  return acc;
}

inline double ratio_pow(double rho, double m) {
  const int mi = static_cast<int>(std::lround(m));
  if (std::abs(m - mi) < 1e-12 && mi >= 0) return int_pow(rho, mi);
  return std::pow(rho, m);
}

}  // namespace detail

// Integrate one cell under the tension program. The orientation enters through
// the Schmid factors and the directional modulus; g0_scale applies the yield
// knockdown. Implicit backward Euler on (sigma, g) with damped Newton and
// substep fallback.
inline Trajectory cp_cell_uniaxial(const LoadingProgram& program, const Vec3& phi, const CpParams& params,
                                   double g0_scale = 1.0) {
  program.validate();
  const Mat3 r = rotation_from_orientation(phi);
  const Mat3 rt = mat3_transpose(r);
  const Vec3 axis = mat3_apply(rt, Vec3{1.0, 0.0, 0.0});  // loading axis, crystal frame
  const auto& systems = fcc_slip_systems();
  const int ns = static_cast<int>(systems.size());
  std::vector<double> schmid(ns);
  for (int a = 0; a < ns; ++a) {
    double sd = 0.0, nd = 0.0;
    for (int k = 0; k < 3; ++k) {
      sd += axis[k] * systems[a].direction[k];
      nd += axis[k] * systems[a].normal[k];
    }
    schmid[a] = sd * nd;
  }
  const double e_mod = cubic_directional_modulus(axis, params);
  const double m = params.rate_exponent;
  const double g0 = params.g0_mpa * g0_scale;

  Trajectory traj;
  traj.strain = program.strain_series();
  traj.stress.resize(program.steps);
  traj.stress[0] = e_mod * traj.strain[0];

  double eps_p = 0.0, g = g0;

  // slip rates and their sigma/g partials at (sigma, g)
  std::vector<double> gdot(ns), dgdot_dsig(ns), dgdot_dg(ns);
  auto eval_rates = [&](double sigma, double gg) {
    for (int a = 0; a < ns; ++a) {
      const double tau = sigma * schmid[a];
      const double abs_ratio = std::abs(tau) / gg;
      const double sign = tau >= 0.0 ? 1.0 : -1.0;
      if (abs_ratio >= params.rate_clip) {
        const double clipped = detail::ratio_pow(params.rate_clip, m);
        gdot[a] = params.gamma0_rate * sign * clipped;
        dgdot_dsig[a] = 0.0;
        dgdot_dg[a] = 0.0;
      } else {
        const double rho_m1 = detail::ratio_pow(abs_ratio, m - 1.0);
        const double rho_m = rho_m1 * abs_ratio;
        gdot[a] = params.gamma0_rate * sign * rho_m;
        dgdot_dsig[a] = params.gamma0_rate * m * rho_m1 / gg * schmid[a];
        dgdot_dg[a] = -params.gamma0_rate * m * rho_m * sign / gg;
      }
    }
  };

  // one implicit step from (eps_p, g) to the state at strain eps over dt
  std::function<bool(double, double, int)> advance = [&](double eps, double dt, int depth) -> bool {
    double sigma = e_mod * (eps - eps_p);
    double gg = g;
    bool converged = false;
    for (int it = 0; it < 50; ++it) {
      eval_rates(sigma, gg);
      double plastic_rate = 0.0, abs_rate = 0.0;
      double dpr_dsig = 0.0, dpr_dg = 0.0, dar_dsig = 0.0, dar_dg = 0.0;
      for (int a = 0; a < ns; ++a) {
        plastic_rate += gdot[a] * schmid[a];
        abs_rate += std::abs(gdot[a]);
        dpr_dsig += dgdot_dsig[a] * schmid[a];
        dpr_dg += dgdot_dg[a] * schmid[a];
        const double sign = gdot[a] >= 0.0 ? 1.0 : -1.0;
        dar_dsig += sign * dgdot_dsig[a];
        dar_dg += sign * dgdot_dg[a];
      }
      const double f1 = sigma - e_mod * (eps - eps_p - dt * plastic_rate);
      const double f2 = gg - g - dt * (params.hardening_mpa - params.recovery * gg) * abs_rate;
      if (std::abs(f1) < 1e-10 && std::abs(f2) < 1e-10) {
        converged = true;
        break;
      }
      const double j11 = 1.0 + e_mod * dt * dpr_dsig;
      const double j12 = e_mod * dt * dpr_dg;
      const double j21 = -dt * (params.hardening_mpa - params.recovery * gg) * dar_dsig;
      const double j22 = 1.0 + dt * params.recovery * abs_rate -
                         dt * (params.hardening_mpa - params.recovery * gg) * dar_dg;
      const double det = j11 * j22 - j12 * j21;
      if (std::abs(det) < 1e-30) break;
      double dsig = -(f1 * j22 - f2 * j12) / det;
      double dg = -(j11 * f2 - j21 * f1) / det;
      // backtrack when the update overshoots
      double lambda = 1.0;
      const double base_norm = std::abs(f1) + std::abs(f2);
      for (int ls = 0; ls < 30; ++ls) {
        const double sig_try = sigma + lambda * dsig;
        const double g_try = gg + lambda * dg;
        if (g_try > 1e-3) {
          eval_rates(sig_try, g_try);
          double pr = 0.0, ar = 0.0;
          for (int a = 0; a < ns; ++a) {
            pr += gdot[a] * schmid[a];
            ar += std::abs(gdot[a]);
          }
          const double t1 = sig_try - e_mod * (eps - eps_p - dt * pr);
          const double t2 = g_try - g - dt * (params.hardening_mpa - params.recovery * g_try) * ar;
          if (std::abs(t1) + std::abs(t2) < base_norm) {
            sigma = sig_try;
            gg = g_try;
            break;
          }
        }
        lambda *= 0.5;
        if (ls == 29) {
          sigma += 1e-6 * dsig;  // last resort nudge
          gg += 1e-6 * dg;
        }
      }
    }
    if (!converged) {
      if (depth >= 10) return false;
      const double eps_mid = eps - 0.5 * dt * program.strain_rate;
      if (!advance(eps_mid, 0.5 * dt, depth + 1)) return false;
      return advance(eps, 0.5 * dt, depth + 1);
    }
    eval_rates(sigma, gg);
    double plastic_rate = 0.0;
    for (int a = 0; a < ns; ++a) plastic_rate += gdot[a] * schmid[a];
    eps_p += dt * plastic_rate;
    g = gg;
    return true;
  };

  for (int i = 1; i < program.steps; ++i) {
    const double dt = program.time(i) - program.time(i - 1);
    if (!advance(traj.strain[i], dt, 0))
      throw numerical_error("cp_cell_uniaxial: integrator did not converge at step " + std::to_string(i));
    traj.stress[i] = e_mod * (traj.strain[i] - eps_p);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Homogenization: volume-weighted average of cell stress histories. Cells
// absent from the mesh (voids) contribute zero stress through total_volume.
// ---------------------------------------------------------------------------

inline Trajectory homogenize(const std::vector<Trajectory>& cells, const std::vector<double>& volumes,
                             double total_volume = 0.0) {
  if (cells.empty()) throw shape_error("homogenize: no cells");
  if (cells.size() != volumes.size()) throw shape_error("homogenize: volume mismatch");
  const int steps = cells[0].steps();
  for (const auto& t : cells)
    if (t.steps() != steps) throw shape_error("homogenize: step count mismatch");
  double v_sum = 0.0;
  for (double v : volumes) v_sum += v;
  const double v_total = total_volume > 0.0 ? total_volume : v_sum;
  Trajectory out;
  out.strain = cells[0].strain;
  out.stress.assign(steps, 0.0);
  for (size_t c = 0; c < cells.size(); ++c)
    for (int i = 0; i < steps; ++i) out.stress[i] += volumes[c] * cells[c].stress[i];
  for (int i = 0; i < steps; ++i) out.stress[i] /= v_total;
  return out;
}

// ---------------------------------------------------------------------------
// Neighbor-coupling knockdown: stress near voids and grain boundaries is
// reduced by an adjacency-weighted exposure factor, which makes the labels
// sensitive to topology rather than composition alone.
// ---------------------------------------------------------------------------

struct KnockdownConfig {
  double stress_coeff = 0.0;  // scales cell stress by (1 - c * exposure)
  double yield_coeff = 0.0;   // scales flow stress / slip resistance likewise
};

// Per-cell exposure in [0, 1]. Porous: void-face count plus neighborhood
// solid deficit. Crystals: mean cubic disorientation with face neighbors.
inline std::vector<double> knockdown_exposure(const Microstructure& micro) {
  const int n = micro.n_cells();
  std::vector<double> e(n, 0.0);
  const int vf = micro.channel_index("_void_faces");
  const int sf = micro.channel_index("solid_fraction");
  if (vf >= 0) {
    for (int i = 0; i < n; ++i) {
      // fraction of this cell's original faces lost to carving
      const double faces =
          micro.channels(i, vf) + static_cast<double>(micro.complex.face_neighbors[i].size());
      double x = faces > 0.0 ? micro.channels(i, vf) / faces : 0.0;
      if (sf >= 0) x += 1.0 - micro.channels(i, sf);
      double nb = 0.0;
      int cnt = 0;
      for (int j : micro.complex.face_neighbors[i]) {
        if (sf >= 0) nb += 1.0 - micro.channels(j, sf);
        ++cnt;
      }
      if (cnt > 0) x += 0.5 * nb / cnt;
      e[i] = std::clamp(x, 0.0, 1.0);
    }
    return e;
  }
  // orientation misfit path
  const int angle = micro.channel_index("angle");
  const bool vec3 = micro.channel_index("phi_x") >= 0;
  if (angle < 0 && !vec3) return e;
  auto rot_of = [&](int i) {
    if (vec3)
      return rotation_from_orientation(
          {micro.channels(i, 0), micro.channels(i, 1), micro.channels(i, 2)});
    return rotation_about_z(micro.channels(i, angle));
  };
  const double max_angle = 62.8 * M_PI / 180.0;  // cubic disorientation bound
  for (int i = 0; i < n; ++i) {
    const auto& nbrs = micro.complex.face_neighbors[i];
    if (nbrs.empty()) continue;
    double acc = 0.0;
    for (int j : nbrs) acc += disorientation_angle(rot_of(i), rot_of(j)) / max_angle;
    e[i] = std::clamp(acc / nbrs.size(), 0.0, 1.0);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Label generation: integrate every cell, apply knockdown, homogenize.
// ---------------------------------------------------------------------------

enum class CellModel { j2, cp };

struct LabelOptions {
  CellModel model = CellModel::cp;
  J2Params j2;
  CpParams cp;
  KnockdownConfig knockdown;
  int workers = 1;
};

inline Trajectory label_microstructure(const Microstructure& micro, const LoadingProgram& program,
                                       const LabelOptions& opts) {
  const int n = micro.n_cells();
  const auto exposure = knockdown_exposure(micro);
  std::vector<Trajectory> cells(n);
  const int angle = micro.channel_index("angle");
  const bool vec3 = micro.channel_index("phi_x") >= 0;

  // orientation-identical cells with equal knockdown share one solve
  std::map<std::pair<int, long long>, Trajectory> cache;
  const bool can_cache = !micro.grain_labels.empty();
  for (int i = 0; i < n; ++i) {
    const double ys = 1.0 - opts.knockdown.yield_coeff * exposure[i];
    if (opts.model == CellModel::j2) {
      cells[i] = j2_uniaxial(program, opts.j2, ys);
    } else {
      const long long q = static_cast<long long>(std::llround(ys * 1e12));
      const int key = can_cache ? micro.grain_labels[i] : -1;
      if (can_cache) {
        auto it = cache.find({key, q});
        if (it != cache.end()) {
          cells[i] = it->second;
          const double ks = 1.0 - opts.knockdown.stress_coeff * exposure[i];
          for (double& s : cells[i].stress) s *= ks;
          continue;
        }
      }
      Vec3 phi{0.0, 0.0, 0.0};
      if (vec3)
        phi = {micro.channels(i, 0), micro.channels(i, 1), micro.channels(i, 2)};
      else if (angle >= 0)
        phi = {0.0, 0.0, micro.channels(i, angle)};
      cells[i] = cp_cell_uniaxial(program, phi, opts.cp, ys);
      if (can_cache) cache[{key, q}] = cells[i];
    }
    const double ks = 1.0 - opts.knockdown.stress_coeff * exposure[i];
    for (double& s : cells[i].stress) s *= ks;
  }
  return homogenize(cells, micro.complex.volumes,
                    micro.domain_volume > 0.0 ? micro.domain_volume : 0.0);
}

inline std::vector<Trajectory> label_dataset(const std::vector<Microstructure>& micros,
                                             const LoadingProgram& program, const LabelOptions& opts) {
  std::vector<Trajectory> out(micros.size());
  const int workers = std::max(1, opts.workers);
  if (workers == 1 || micros.size() < 2) {
    for (size_t i = 0; i < micros.size(); ++i) out[i] = label_microstructure(micros[i], program, opts);
    return out;
  }
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= micros.size()) return;
        out[i] = label_microstructure(micros[i], program, opts);
      }
    });
  for (auto& t : pool) t.join();
  return out;
}

// Per-step ensemble spread summary (mean, stddev, min, max of stress).
struct EnsembleStats {
  std::vector<double> strain, mean, stddev, min, max;
};

inline EnsembleStats ensemble_stats(const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) throw shape_error("ensemble_stats: empty ensemble");
  const int steps = trajs[0].steps();
  EnsembleStats st;
  st.strain = trajs[0].strain;
  st.mean.assign(steps, 0.0);
  st.stddev.assign(steps, 0.0);
  st.min.assign(steps, 1e300);
  st.max.assign(steps, -1e300);
  for (const auto& t : trajs)
    for (int i = 0; i < steps; ++i) {
      st.mean[i] += t.stress[i];
      st.min[i] = std::min(st.min[i], t.stress[i]);
      st.max[i] = std::max(st.max[i], t.stress[i]);
    }
  for (int i = 0; i < steps; ++i) st.mean[i] /= trajs.size();
  for (const auto& t : trajs)
    for (int i = 0; i < steps; ++i) {
      const double d = t.stress[i] - st.mean[i];
      st.stddev[i] += d * d;
    }
  for (int i = 0; i < steps; ++i) st.stddev[i] = std::sqrt(st.stddev[i] / trajs.size());
  return st;
}

}  // namespace mgcnn
