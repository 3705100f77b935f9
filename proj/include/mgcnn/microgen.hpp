#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mgcnn/dense.hpp"
#include "mgcnn/errors.hpp"
#include "mgcnn/meshgraph.hpp"

namespace mgcnn {

// ---------------------------------------------------------------------------
// 3x3 rotation utilities (row-major).
// ---------------------------------------------------------------------------

using Mat3 = std::array<double, 9>;
using Vec3 = std::array<double, 3>;

inline Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a[3 * i + k] * b[3 * k + j];
      c[3 * i + j] = acc;
    }
  return c;
}

inline Mat3 mat3_transpose(const Mat3& a) {
  return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

inline Vec3 mat3_apply(const Mat3& a, const Vec3& v) {
  return {a[0] * v[0] + a[1] * v[1] + a[2] * v[2], a[3] * v[0] + a[4] * v[1] + a[5] * v[2],
          a[6] * v[0] + a[7] * v[1] + a[8] * v[2]};
}

inline double mat3_det(const Mat3& a) {
  return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

inline double mat3_trace(const Mat3& a) { return a[0] + a[4] + a[8]; }

inline bool is_rotation(const Mat3& r, double tol = 1e-8) {
  const Mat3 rt = mat3_transpose(r);
  const Mat3 id = mat3_mul(r, rt);
  const Mat3 eye = mat3_identity();
  for (int k = 0; k < 9; ++k)
    if (std::abs(id[k] - eye[k]) > tol) return false;
  return std::abs(mat3_det(r) - 1.0) <= tol;
}

inline Mat3 rotation_about_z(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c, -s, 0, s, c, 0, 0, 0, 1};
}

// Rodrigues form from the orientation vector phi = theta * p.
inline Mat3 rotation_from_orientation(const Vec3& phi) {
  const double theta = std::sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]);
  if (theta < 1e-300) return mat3_identity();
  const Vec3 p{phi[0] / theta, phi[1] / theta, phi[2] / theta};
  const double c = std::cos(theta), s = std::sin(theta), omc = 1.0 - c;
  return {c + p[0] * p[0] * omc,        p[0] * p[1] * omc - p[2] * s, p[0] * p[2] * omc + p[1] * s,
          p[1] * p[0] * omc + p[2] * s, c + p[1] * p[1] * omc,        p[1] * p[2] * omc - p[0] * s,
          p[2] * p[0] * omc - p[1] * s, p[2] * p[1] * omc + p[0] * s, c + p[2] * p[2] * omc};
}

// phi = theta * p with R p = p, theta in [0, pi]. Quaternion extraction
// (largest-pivot form) keeps the axis accurate at every angle. At theta = pi
// the axis sign is fixed by making the first nonzero component positive.
inline Vec3 orientation_vector(const Mat3& r) {
  if (!is_rotation(r)) throw numerical_error("orientation_vector: input is not a rotation");
  const double t = mat3_trace(r);
  double w, x, y, z;
  if (t > 0.0) {
    const double s = std::sqrt(t + 1.0) * 2.0;
    w = 0.25 * s;
    x = (r[7] - r[5]) / s;
    y = (r[2] - r[6]) / s;
    z = (r[3] - r[1]) / s;
  } else if (r[0] > r[4] && r[0] > r[8]) {
    const double s = std::sqrt(1.0 + r[0] - r[4] - r[8]) * 2.0;
    w = (r[7] - r[5]) / s;
    x = 0.25 * s;
    y = (r[1] + r[3]) / s;
    z = (r[2] + r[6]) / s;
  } else if (r[4] > r[8]) {
    const double s = std::sqrt(1.0 + r[4] - r[0] - r[8]) * 2.0;
    w = (r[2] - r[6]) / s;
    x = (r[1] + r[3]) / s;
    y = 0.25 * s;
    z = (r[5] + r[7]) / s;
  } else {
    const double s = std::sqrt(1.0 + r[8] - r[0] - r[4]) * 2.0;
    w = (r[3] - r[1]) / s;
    x = (r[2] + r[6]) / s;
    y = (r[5] + r[7]) / s;
    z = 0.25 * s;
  }
  if (w < 0.0) {
    w = -w;
    x = -x;
    y = -y;
    z = -z;
  }
  const double vnorm = std::sqrt(x * x + y * y + z * z);
  if (vnorm < 1e-15) return {0.0, 0.0, 0.0};
  const double theta = 2.0 * std::atan2(vnorm, w);
  Vec3 p{x / vnorm, y / vnorm, z / vnorm};
  if (M_PI - theta < 1e-9) {
    for (int k = 0; k < 3; ++k) {
      if (std::abs(p[k]) < 1e-9) continue;
      if (p[k] < 0.0)
        for (int m = 0; m < 3; ++m) p[m] = -p[m];
      break;
    }
  }
  return {theta * p[0], theta * p[1], theta * p[2]};
}

// Uniform rotation via normalized quaternion of four normals.
inline Mat3 random_rotation(Rng& rng) {
  double q[4];
  double nrm = 0.0;
  for (double& v : q) {
    v = rng.normal();
    nrm += v * v;
  }
  nrm = std::sqrt(nrm);
  for (double& v : q) v /= nrm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

// The 24 proper rotations of the cube: signed axis permutations with det +1.
inline const std::vector<Mat3>& cubic_rotations() {
  static const std::vector<Mat3> rots = [] {
    std::vector<Mat3> out;
    const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (const auto& perm : perms)
      for (int signs = 0; signs < 8; ++signs) {
        Mat3 m{};
        for (int i = 0; i < 3; ++i) m[3 * i + perm[i]] = (signs >> i) & 1 ? -1.0 : 1.0;
        if (std::abs(mat3_det(m) - 1.0) < 1e-12) out.push_back(m);
      }
    return out;
  }();
  return rots;
}

inline double rotation_angle(const Mat3& r) {
  return std::acos(std::clamp((mat3_trace(r) - 1.0) / 2.0, -1.0, 1.0));
}

// Smallest rotation angle between two orientations under cubic symmetry.
inline double disorientation_angle(const Mat3& ra, const Mat3& rb) {
  const Mat3 m = mat3_mul(mat3_transpose(ra), rb);
  double best = M_PI;
  for (const auto& q : cubic_rotations()) best = std::min(best, rotation_angle(mat3_mul(m, q)));
  return best;
}

// ---------------------------------------------------------------------------
// Microstructure: per-cell channel data bound to a complex. Channel labels
// starting with '_' are auxiliary (label generation only, never model input).
// ---------------------------------------------------------------------------

struct Microstructure {
  CellComplex complex;
  Matrix channels;  // n_cells x n_channels
  std::vector<std::string> channel_labels;
  std::vector<int> grain_labels;  // per cell; empty when not segmented
  double domain_volume = 0.0;     // includes carved-out void volume
  double porosity = 0.0;

  int n_cells() const { return complex.n_cells(); }

  int channel_index(const std::string& label) const {
    for (size_t i = 0; i < channel_labels.size(); ++i)
      if (channel_labels[i] == label) return static_cast<int>(i);
    return -1;
  }

  // indices of channels a model may consume
  std::vector<int> model_channels() const {
    std::vector<int> idx;
    for (size_t i = 0; i < channel_labels.size(); ++i)
      if (channel_labels[i].empty() || channel_labels[i][0] != '_') idx.push_back(static_cast<int>(i));
    return idx;
  }

  Matrix model_input() const {
    const auto idx = model_channels();
    Matrix x(channels.rows, static_cast<int>(idx.size()));
    for (int i = 0; i < channels.rows; ++i)
      for (size_t j = 0; j < idx.size(); ++j) x(i, static_cast<int>(j)) = channels(i, idx[j]);
    return x;
  }
};

// ---------------------------------------------------------------------------
// Voronoi polycrystals. Sites are placed on distinct cells (jittered within
// the cell) so duplicate sites cannot occur; optional Lloyd steps tighten the
// grain size distribution for the low-variance ensembles.
// ---------------------------------------------------------------------------

struct PolycrystalOptions {
  int lloyd_steps = 0;
  int orientation_channels = 0;  // 0: default (1 in 2D, 3 in 3D)
};

inline std::vector<double> cell_center(const std::vector<int>& dims, int id) {
  const auto c = grid_cell_coord(dims, id);
  std::vector<double> x(c.size());
  for (size_t k = 0; k < c.size(); ++k) x[k] = c[k] + 0.5;
  return x;
}

inline Microstructure generate_polycrystal(const std::vector<int>& dims, int n_grains, uint64_t seed,
                                           const PolycrystalOptions& opts = {}) {
  Microstructure micro;
  micro.complex = make_grid(dims);
  const int n = micro.complex.n_cells();
  const int d = static_cast<int>(dims.size());
  if (n_grains < 1 || n_grains > n) throw config_error("generate_polycrystal: n_grains out of range");
  Rng rng(seed);

  // one site per distinct cell; jitter keeps the site inside its cell
  const auto site_cells = rng.sample_without_replacement(n, n_grains);
  std::vector<std::vector<double>> sites(n_grains);
  for (int g = 0; g < n_grains; ++g) {
    sites[g] = cell_center(dims, site_cells[g]);
    for (double& v : sites[g]) v += rng.uniform(-0.49, 0.49);
  }

  std::vector<int> labels(n);
  auto assign = [&]() {
    for (int i = 0; i < n; ++i) {
      const auto x = cell_center(dims, i);
      double best = 1e300;
      int who = 0;
      for (int g = 0; g < n_grains; ++g) {
        double dist = 0.0;
        for (int k = 0; k < d; ++k) {
          const double dd = x[k] - sites[g][k];
          dist += dd * dd;
        }
        if (dist < best - 1e-12) {
          best = dist;
          who = g;
        }
      }
      labels[i] = who;
    }
  };
  assign();
  for (int it = 0; it < opts.lloyd_steps; ++it) {
    std::vector<std::vector<double>> centroid(n_grains, std::vector<double>(d, 0.0));
    std::vector<int> count(n_grains, 0);
    for (int i = 0; i < n; ++i) {
      const auto x = cell_center(dims, i);
      for (int k = 0; k < d; ++k) centroid[labels[i]][k] += x[k];
      count[labels[i]]++;
    }
    for (int g = 0; g < n_grains; ++g)
      if (count[g] > 0)
        for (int k = 0; k < d; ++k) sites[g][k] = centroid[g][k] / count[g];
    assign();
  }

  // compact away empty grains
  std::vector<int> remap(n_grains, -1);
  int n_used = 0;
  for (int i = 0; i < n; ++i)
    if (remap[labels[i]] < 0) remap[labels[i]] = n_used++;
  for (int i = 0; i < n; ++i) labels[i] = remap[labels[i]];

  // one orientation per grain
  std::vector<Vec3> phis(n_used);
  for (int g = 0; g < n_used; ++g) {
    if (d == 2) {
      const double theta = rng.uniform(-M_PI, M_PI);
      phis[g] = orientation_vector(rotation_about_z(theta));
    } else {
      phis[g] = orientation_vector(random_rotation(rng));
    }
  }

  int ch = opts.orientation_channels;
  if (ch == 0) ch = (d == 2) ? 1 : 3;
  if (d == 2 && ch != 1 && ch != 3) throw config_error("generate_polycrystal: 2D orientation uses 1 or 3 channels");
  if (d == 3 && ch != 3) throw config_error("generate_polycrystal: 3D orientation uses 3 channels");
  micro.channels = Matrix(n, ch);
  micro.channel_labels = ch == 1 ? std::vector<std::string>{"angle"}
                                 : std::vector<std::string>{"phi_x", "phi_y", "phi_z"};
  for (int i = 0; i < n; ++i) {
    const auto& phi = phis[labels[i]];
    if (ch == 1)
      micro.channels(i, 0) = phi[2];  // in-plane rotation: signed angle about z
    else
      for (int k = 0; k < 3; ++k) micro.channels(i, k) = phi[k];
  }
  micro.grain_labels = labels;
  micro.domain_volume = micro.complex.total_volume();
  micro.porosity = 0.0;
  return micro;
}

// ---------------------------------------------------------------------------
// Porous microstructures: spherical voids carved from a jittered-volume grid
// by cell removal. The per-sample porosity follows a beta distribution; the
// carve threshold is tuned so achieved porosity tracks the draw.
// ---------------------------------------------------------------------------

struct PorositySpec {
  double mean = 0.09;
  double stddev = 0.03;
  int max_pores = 20;
  double volume_jitter = 0.1;
};

inline double sample_beta(Rng& rng, double mean, double stddev) {
  if (stddev <= 0.0) return mean;
  const double v = stddev * stddev;
  const double s = mean * (1.0 - mean) / v - 1.0;
  if (s <= 0.0) throw config_error("sample_beta: variance too large for the mean");
  const double alpha = mean * s, beta = (1.0 - mean) * s;
  // Johnk-style via two gammas (Marsaglia-Tsang for a >= 1, boost for a < 1)
  auto gamma_draw = [&](double a) {
    double boost = 1.0;
    if (a < 1.0) {
      boost = std::pow(rng.uniform(1e-12, 1.0), 1.0 / a);
      a += 1.0;
    }
    const double dd = a - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * dd);
    for (;;) {
      double x = rng.normal();
      double u = 1.0 + c * x;
      if (u <= 0.0) continue;
      u = u * u * u;
      const double r = rng.uniform(1e-300, 1.0);
      if (std::log(r) < 0.5 * x * x + dd - dd * u + dd * std::log(u)) return boost * dd * u;
    }
  };
  const double ga = gamma_draw(alpha);
  const double gb = gamma_draw(beta);
  return ga / (ga + gb);
}

struct PoreSet {
  std::vector<std::vector<double>> centers;
  std::vector<double> radii;
};

inline Microstructure generate_porous(const std::vector<int>& dims, const PorositySpec& spec,
                                      uint64_t seed) {
  const int d = static_cast<int>(dims.size());
  if (d != 2 && d != 3) throw config_error("generate_porous: 2D or 3D only");
  if (spec.max_pores < 1 || spec.max_pores > 20)
    throw config_error("generate_porous: pore count must stay in [1, 20]");
  auto grid = make_grid(dims);
  const int n = grid.n_cells();
  Rng rng(seed);
  for (double& v : grid.volumes) v *= 1.0 + rng.uniform(-spec.volume_jitter, spec.volume_jitter);
  const double total_volume = grid.total_volume();

  const double target = sample_beta(rng, spec.mean, spec.stddev);
  if (target >= 0.6) throw config_error("generate_porous: porosity target infeasible");

  // split the void volume over k pores, placed with overlap-avoiding retries
  const int k = static_cast<int>(rng.uniform_int(1, spec.max_pores));
  std::vector<double> parts(k);
  double part_sum = 0.0;
  for (double& p : parts) {
    p = -std::log(rng.uniform(1e-12, 1.0));
    part_sum += p;
  }
  PoreSet pores;
  const double void_volume = target * total_volume;
  for (int i = 0; i < k; ++i) {
    const double vol = void_volume * parts[i] / part_sum;
    const double r = (d == 2) ? std::sqrt(vol / M_PI) : std::cbrt(vol * 3.0 / (4.0 * M_PI));
    std::vector<double> c(d);
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      for (int ax = 0; ax < d; ++ax) c[ax] = rng.uniform(0.0, static_cast<double>(dims[ax]));
      placed = true;
      for (size_t j = 0; j < pores.centers.size(); ++j) {
        double dist = 0.0;
        for (int ax = 0; ax < d; ++ax) {
          const double dd = c[ax] - pores.centers[j][ax];
          dist += dd * dd;
        }
        if (std::sqrt(dist) < 0.8 * (r + pores.radii[j])) {
          placed = false;
          break;
        }
      }
    }
    pores.centers.push_back(c);
    pores.radii.push_back(r);
  }

  // signed distance of each cell center to the nearest pore surface
  std::vector<double> sdist(n);
  for (int i = 0; i < n; ++i) {
    const auto x = cell_center(dims, i);
    double best = 1e300;
    for (size_t j = 0; j < pores.centers.size(); ++j) {
      double dist = 0.0;
      for (int ax = 0; ax < d; ++ax) {
        const double dd = x[ax] - pores.centers[j][ax];
        dist += dd * dd;
      }
      best = std::min(best, std::sqrt(dist) - pores.radii[j]);
    }
    sdist[i] = best;
  }

  // pick the removal threshold that brings removed volume closest to target
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return sdist[a] < sdist[b]; });
  double removed = 0.0, best_err = target * total_volume;
  int best_m = 0;
  for (int m = 1; m <= n; ++m) {
    removed += grid.volumes[order[m - 1]];
    const double err = std::abs(removed - void_volume);
    if (err < best_err) {
      best_err = err;
      best_m = m;
    }
    if (removed > void_volume) break;
  }
  const double margin = best_m > 0 ? sdist[order[best_m - 1]] : -1e300;
  std::vector<char> removed_flag(n, 0);
  double removed_volume = 0.0;
  for (int m = 0; m < best_m; ++m) {
    removed_flag[order[m]] = 1;
    removed_volume += grid.volumes[order[m]];
  }

  // reindex kept cells; rebuild neighbor lists among survivors
  std::vector<int> new_id(n, -1);
  int kept = 0;
  for (int i = 0; i < n; ++i)
    if (!removed_flag[i]) new_id[i] = kept++;
  if (kept == 0) throw config_error("generate_porous: porosity target removed every cell");

  Microstructure micro;
  micro.complex.kind = ComplexKind::unstructured;
  micro.complex.volumes.resize(kept);
  micro.complex.face_neighbors.resize(kept);
  micro.complex.vertex_neighbors.resize(kept);
  std::vector<double> void_faces(kept, 0.0);
  for (int i = 0; i < n; ++i) {
    if (removed_flag[i]) continue;
    const int id = new_id[i];
    micro.complex.volumes[id] = grid.volumes[i];
    for (int j : grid.face_neighbors[i]) {
      if (removed_flag[j])
        void_faces[id] += 1.0;
      else
        micro.complex.face_neighbors[id].push_back(new_id[j]);
    }
    for (int j : grid.vertex_neighbors[i])
      if (!removed_flag[j]) micro.complex.vertex_neighbors[id].push_back(new_id[j]);
    std::sort(micro.complex.face_neighbors[id].begin(), micro.complex.face_neighbors[id].end());
    std::sort(micro.complex.vertex_neighbors[id].begin(), micro.complex.vertex_neighbors[id].end());
  }

  // solid fraction from a 3^d sub-sample against the margin-adjusted pores
  const auto sub = stencil_offsets(d);
  micro.channels = Matrix(kept, 3);
  micro.channel_labels = {"solid_fraction", "volume", "_void_faces"};
  for (int i = 0; i < n; ++i) {
    if (removed_flag[i]) continue;
    const int id = new_id[i];
    const auto x = cell_center(dims, i);
    int outside = 0;
    for (const auto& off : sub) {
      int inside_any = 0;
      for (size_t j = 0; j < pores.centers.size(); ++j) {
        double dist = 0.0;
        for (int ax = 0; ax < d; ++ax) {
          const double dd = x[ax] + 0.33 * off[ax] - pores.centers[j][ax];
          dist += dd * dd;
        }
        if (std::sqrt(dist) - pores.radii[j] <= margin) {
          inside_any = 1;
          break;
        }
      }
      outside += 1 - inside_any;
    }
    micro.channels(id, 0) = static_cast<double>(outside) / static_cast<double>(sub.size());
    micro.channels(id, 1) = micro.complex.volumes[id];
    micro.channels(id, 2) = void_faces[id];
  }
  micro.domain_volume = total_volume;
  micro.porosity = removed_volume / total_volume;
  return micro;
}

// ---------------------------------------------------------------------------
// Grain graph for the reduced (feature-based) network.
// ---------------------------------------------------------------------------

struct GrainGraph {
  CellComplex complex;  // one node per grain, adjacency = shared boundary
  Matrix features;
  std::vector<std::string> feature_labels;
};

// Feature sets follow the 2/3/4 ladder: {angle, volume}, +boundary area,
// +external surface area. Orientation channels pass through as the angle
// block, so a 3-channel microstructure contributes 3 angle features.
inline GrainGraph segment_to_grain_graph(const Microstructure& micro, int n_features = 2) {
  if (micro.grain_labels.empty()) throw config_error("segment_to_grain_graph: missing grain labels");
  if (n_features < 2 || n_features > 4) throw config_error("segment_to_grain_graph: feature count in [2,4]");
  const int n = micro.n_cells();
  int n_grains = 0;
  for (int g : micro.grain_labels) n_grains = std::max(n_grains, g + 1);

  const auto orient_idx = micro.model_channels();
  const int n_orient = static_cast<int>(orient_idx.size());

  std::vector<double> volume(n_grains, 0.0), boundary(n_grains, 0.0), surface(n_grains, 0.0);
  Matrix angle(n_grains, n_orient);
  std::vector<std::vector<int>> adj(n_grains);
  const int expected_faces = 2 * micro.complex.dim();
  for (int i = 0; i < n; ++i) {
    const int g = micro.grain_labels[i];
    volume[g] += micro.complex.volumes[i];
    for (int k = 0; k < n_orient; ++k) angle(g, k) = micro.channels(i, orient_idx[k]);
    if (micro.complex.kind == ComplexKind::structured)
      surface[g] += expected_faces - static_cast<int>(micro.complex.face_neighbors[i].size());
    for (int j : micro.complex.face_neighbors[i]) {
      const int gj = micro.grain_labels[j];
      if (gj == g) continue;
      boundary[g] += 1.0;  // unit face area on the reference grid
      adj[g].push_back(gj);
    }
  }
  GrainGraph gg;
  gg.complex.kind = ComplexKind::unstructured;
  gg.complex.volumes = volume;
  gg.complex.face_neighbors.resize(n_grains);
  gg.complex.vertex_neighbors.resize(n_grains);
  for (int g = 0; g < n_grains; ++g) {
    auto& v = adj[g];
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    gg.complex.face_neighbors[g] = v;
  }
  const int cols = n_orient + (n_features - 1);
  gg.features = Matrix(n_grains, cols);
  for (int k = 0; k < n_orient; ++k) gg.feature_labels.push_back("angle_" + std::to_string(k));
  gg.feature_labels.push_back("volume");
  if (n_features >= 3) gg.feature_labels.push_back("boundary_area");
  if (n_features >= 4) gg.feature_labels.push_back("surface_area");
  for (int g = 0; g < n_grains; ++g) {
    for (int k = 0; k < n_orient; ++k) gg.features(g, k) = angle(g, k);
    gg.features(g, n_orient) = volume[g];
    if (n_features >= 3) gg.features(g, n_orient + 1) = boundary[g];
    if (n_features >= 4) gg.features(g, n_orient + 2) = surface[g];
  }
  return gg;
}

// Adds a channel holding each cell's grain volume fraction.
inline Microstructure boost_volume_fraction(const Microstructure& micro) {
  if (micro.grain_labels.empty()) throw config_error("boost_volume_fraction: missing grain labels");
  int n_grains = 0;
  for (int g : micro.grain_labels) n_grains = std::max(n_grains, g + 1);
  std::vector<double> volume(n_grains, 0.0);
  for (int i = 0; i < micro.n_cells(); ++i) volume[micro.grain_labels[i]] += micro.complex.volumes[i];
  const double total = micro.complex.total_volume();
  Microstructure out = micro;
  out.channels = Matrix(micro.channels.rows, micro.channels.cols + 1);
  for (int i = 0; i < micro.channels.rows; ++i) {
    for (int j = 0; j < micro.channels.cols; ++j) out.channels(i, j) = micro.channels(i, j);
    out.channels(i, micro.channels.cols) = volume[micro.grain_labels[i]] / total;
  }
  out.channel_labels.push_back("grain_volume_fraction");
  return out;
}

}  // namespace mgcnn
