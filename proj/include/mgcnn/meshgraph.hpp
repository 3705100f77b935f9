#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgcnn/dense.hpp"
#include "mgcnn/errors.hpp"

namespace mgcnn {

// ---------------------------------------------------------------------------
// CellComplex: discretization topology. Cells carry volumes and two neighbor
// lists: face neighbors (shared face/edge in 2D) and vertex neighbors (shared
// vertex only). All graph operators derive from this.
// ---------------------------------------------------------------------------

enum class ComplexKind { structured, unstructured };

struct CellComplex {
  ComplexKind kind = ComplexKind::unstructured;
  std::vector<int> dims;  // structured only, one extent per axis
  std::vector<double> volumes;
  std::vector<std::vector<int>> face_neighbors;    // sorted cell ids
  std::vector<std::vector<int>> vertex_neighbors;  // sorted cell ids, face-disjoint
  bool periodic = false;

  int n_cells() const { return static_cast<int>(volumes.size()); }
  int dim() const { return static_cast<int>(dims.size()); }

  double total_volume() const {
    double v = 0.0;
    for (double x : volumes) v += x;
    return v;
  }

  void validate() const;
};

inline void CellComplex::validate() const {
  const int n = n_cells();
  if (static_cast<int>(face_neighbors.size()) != n || static_cast<int>(vertex_neighbors.size()) != n)
    throw shape_error("CellComplex: neighbor list count does not match cell count");
  if (kind == ComplexKind::structured) {
    long long prod = 1;
    for (int d : dims) {
      if (d <= 0) throw shape_error("CellComplex: nonpositive extent");
      prod *= d;
    }
    if (prod != n) throw shape_error("CellComplex: dims product does not match cell count");
  }
  for (int i = 0; i < n; ++i) {
    if (!(volumes[i] > 0.0)) throw shape_error("CellComplex: cell " + std::to_string(i) + " has nonpositive volume");
    for (const auto* list : {&face_neighbors[i], &vertex_neighbors[i]}) {
      int prev = -1;
      for (int j : *list) {
        if (j < 0 || j >= n) throw shape_error("CellComplex: neighbor id out of range");
        if (j == i) throw shape_error("CellComplex: cell is its own neighbor");
        if (j <= prev) throw shape_error("CellComplex: neighbor list not sorted/unique");
        prev = j;
      }
    }
    // face and vertex classes are disjoint, relations symmetric
    for (int j : face_neighbors[i]) {
      if (std::binary_search(vertex_neighbors[i].begin(), vertex_neighbors[i].end(), j))
        throw shape_error("CellComplex: face/vertex classes overlap");
      if (!std::binary_search(face_neighbors[j].begin(), face_neighbors[j].end(), i))
        throw shape_error("CellComplex: face relation not symmetric");
    }
    for (int j : vertex_neighbors[i]) {
      if (!std::binary_search(vertex_neighbors[j].begin(), vertex_neighbors[j].end(), i))
        throw shape_error("CellComplex: vertex relation not symmetric");
    }
  }
}

// ---------------------------------------------------------------------------
// Structured grid construction. Cell id is row-major with the first axis
// fastest: id = x0 + dims[0]*(x1 + dims[1]*x2).
// ---------------------------------------------------------------------------

inline int grid_cell_id(const std::vector<int>& dims, const std::vector<int>& coord) {
  int id = 0;
  for (int ax = static_cast<int>(dims.size()) - 1; ax >= 0; --ax) id = id * dims[ax] + coord[ax];
  return id;
}

inline std::vector<int> grid_cell_coord(const std::vector<int>& dims, int id) {
  std::vector<int> c(dims.size());
  for (size_t ax = 0; ax < dims.size(); ++ax) {
    c[ax] = id % dims[ax];
    id /= dims[ax];
  }
  return c;
}

// All 3^d stencil offsets in odometer order (axis 0 slowest), components in
// {-1,0,1}. Index 3^d/2 is the center; index k mirrors to 3^d-1-k.
inline std::vector<std::vector<int>> stencil_offsets(int dim) {
  int total = 1;
  for (int i = 0; i < dim; ++i) total *= 3;
  std::vector<std::vector<int>> offs(total, std::vector<int>(dim));
  for (int k = 0; k < total; ++k) {
    int v = k;
    for (int ax = dim - 1; ax >= 0; --ax) {
      offs[k][ax] = v % 3 - 1;
      v /= 3;
    }
  }
  return offs;
}

inline int mirror_offset_index(int index, int dim) {
  int total = 1;
  for (int i = 0; i < dim; ++i) total *= 3;
  return total - 1 - index;
}

// Neighbor coordinate for a stencil offset, honoring the periodic flag.
// Returns false when the offset leaves a non-periodic grid.
inline bool offset_neighbor(const std::vector<int>& dims, const std::vector<int>& coord,
                            const std::vector<int>& off, bool periodic, std::vector<int>& out) {
  out.resize(dims.size());
  for (size_t ax = 0; ax < dims.size(); ++ax) {
    int c = coord[ax] + off[ax];
    if (c < 0 || c >= dims[ax]) {
      if (!periodic) return false;
      c = (c + dims[ax]) % dims[ax];
    }
    out[ax] = c;
  }
  return true;
}

inline CellComplex make_grid(const std::vector<int>& dims, bool periodic = false) {
  CellComplex cc;
  cc.kind = ComplexKind::structured;
  cc.dims = dims;
  cc.periodic = periodic;
  int n = 1;
  for (int d : dims) {
    if (d <= 0) throw shape_error("make_grid: nonpositive extent");
    n *= d;
  }
  cc.volumes.assign(n, 1.0);
  cc.face_neighbors.resize(n);
  cc.vertex_neighbors.resize(n);
  const auto offs = stencil_offsets(static_cast<int>(dims.size()));
  std::vector<int> nb;
  for (int id = 0; id < n; ++id) {
    const auto coord = grid_cell_coord(dims, id);
    for (const auto& off : offs) {
      int nz = 0;
      for (int o : off) nz += (o != 0);
      if (nz == 0) continue;
      if (!offset_neighbor(dims, coord, off, periodic, nb)) continue;
      const int j = grid_cell_id(dims, nb);
      if (j == id) continue;  // periodic wrap onto self on extent-1/2 axes
      auto& list = (nz == 1) ? cc.face_neighbors[id] : cc.vertex_neighbors[id];
      list.push_back(j);
    }
    auto dedup = [](std::vector<int>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    dedup(cc.face_neighbors[id]);
    dedup(cc.vertex_neighbors[id]);
    // a wrap can list the same cell under both classes; face class wins
    auto& fv = cc.face_neighbors[id];
    auto& vv = cc.vertex_neighbors[id];
    vv.erase(std::remove_if(vv.begin(), vv.end(),
                            [&](int j) { return std::binary_search(fv.begin(), fv.end(), j); }),
             vv.end());
  }
  return cc;
}

// ---------------------------------------------------------------------------
// NeighborClass: which relation an adjacency operator encodes.
// ---------------------------------------------------------------------------

struct NeighborClass {
  enum class Tag { self_loop, face, vertex, kernel_offset };
  Tag tag = Tag::face;
  std::vector<int> offset;  // kernel_offset only

  static NeighborClass self_loop() { return {Tag::self_loop, {}}; }
  static NeighborClass face() { return {Tag::face, {}}; }
  static NeighborClass vertex() { return {Tag::vertex, {}}; }
  static NeighborClass kernel_offset(std::vector<int> off) { return {Tag::kernel_offset, std::move(off)}; }
};

// ---------------------------------------------------------------------------
// SparseAdjacency: CSR storage, canonical sorted row-major entry order.
// ---------------------------------------------------------------------------

struct SparseAdjacency {
  int n = 0;
  std::vector<int> row_ptr;  // size n+1
  std::vector<int> cols;
  std::vector<double> vals;
  bool symmetric = false;

  int nnz() const { return static_cast<int>(cols.size()); }

  double at(int i, int j) const {
    for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
      if (cols[k] == j) return vals[k];
    return 0.0;
  }

  // y += alpha * A x, dense x (n x c)
  void multiply_accumulate(const Matrix& x, Matrix& y, double alpha = 1.0) const {
    if (x.rows != n || !y.same_shape(x)) throw shape_error("SparseAdjacency::multiply: shape mismatch");
    const int c = x.cols;
    for (int i = 0; i < n; ++i) {
      double* yi = y.row(i);
      for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
        const double av = alpha * vals[k];
        const double* xj = x.row(cols[k]);
        for (int ch = 0; ch < c; ++ch) yi[ch] += av * xj[ch];
      }
    }
  }

  Matrix multiply(const Matrix& x) const {
    Matrix y(x.rows, x.cols);
    multiply_accumulate(x, y);
    return y;
  }

  Matrix dense() const {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i)
      for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) m(i, cols[k]) = vals[k];
    return m;
  }

  std::vector<double> row_sums() const {
    std::vector<double> d(n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) d[i] += vals[k];
    return d;
  }
};

struct CooEntry {
  int row, col;
  double val;
};

inline SparseAdjacency from_coo(int n, std::vector<CooEntry> entries, bool symmetric_hint = false) {
  std::sort(entries.begin(), entries.end(), [](const CooEntry& a, const CooEntry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  SparseAdjacency a;
  a.n = n;
  a.row_ptr.assign(n + 1, 0);
  a.cols.reserve(entries.size());
  a.vals.reserve(entries.size());
  int prev_row = -1, prev_col = -1;
  for (const auto& e : entries) {
    if (e.row < 0 || e.row >= n || e.col < 0 || e.col >= n)
      throw shape_error("from_coo: entry out of range");
    if (e.row == prev_row && e.col == prev_col)
      throw duplicate_entry_error("from_coo: duplicate entry (" + std::to_string(e.row) + "," +
                                  std::to_string(e.col) + ")");
    prev_row = e.row;
    prev_col = e.col;
    a.row_ptr[e.row + 1]++;
    a.cols.push_back(e.col);
    a.vals.push_back(e.val);
  }
  for (int i = 0; i < n; ++i) a.row_ptr[i + 1] += a.row_ptr[i];
  a.symmetric = symmetric_hint;
  return a;
}

inline SparseAdjacency identity_adjacency(int n) {
  std::vector<CooEntry> e;
  e.reserve(n);
  for (int i = 0; i < n; ++i) e.push_back({i, i, 1.0});
  return from_coo(n, std::move(e), true);
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Binary adjacency for one neighbor class. (I,J)=1 iff J is in the requested
// class relative to I. SelfLoop is the identity.
inline SparseAdjacency build_adjacency(const CellComplex& cc, const NeighborClass& cls) {
  const int n = cc.n_cells();
  switch (cls.tag) {
    case NeighborClass::Tag::self_loop:
      return identity_adjacency(n);
    case NeighborClass::Tag::face:
    case NeighborClass::Tag::vertex: {
      const auto& lists = (cls.tag == NeighborClass::Tag::face) ? cc.face_neighbors : cc.vertex_neighbors;
      std::vector<CooEntry> e;
      for (int i = 0; i < n; ++i)
        for (int j : lists[i]) e.push_back({i, j, 1.0});
      return from_coo(n, std::move(e), true);
    }
    case NeighborClass::Tag::kernel_offset: {
      if (cc.kind != ComplexKind::structured)
        throw topology_error("build_adjacency: kernel offsets need a structured grid");
      if (static_cast<int>(cls.offset.size()) != cc.dim())
        throw shape_error("build_adjacency: offset dimension mismatch");
      std::vector<CooEntry> e;
      std::vector<int> nb;
      for (int id = 0; id < n; ++id) {
        const auto coord = grid_cell_coord(cc.dims, id);
        if (offset_neighbor(cc.dims, coord, cls.offset, cc.periodic, nb))
          e.push_back({id, grid_cell_id(cc.dims, nb), 1.0});
      }
      bool zero = true;
      for (int o : cls.offset) zero = zero && o == 0;
      return from_coo(n, std::move(e), zero);
    }
  }
  throw topology_error("build_adjacency: unknown neighbor class");
}

// A~ = A + I. Input must have an empty diagonal.
inline SparseAdjacency add_self_loops(const SparseAdjacency& a) {
  std::vector<CooEntry> e;
  e.reserve(a.nnz() + a.n);
  for (int i = 0; i < a.n; ++i) {
    e.push_back({i, i, 1.0});
    for (int k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      if (a.cols[k] == i)
        throw duplicate_entry_error("add_self_loops: diagonal entry already present at row " +
                                    std::to_string(i));
      e.push_back({i, a.cols[k], a.vals[k]});
    }
  }
  auto out = from_coo(a.n, std::move(e), a.symmetric);
  return out;
}

// D^{-1/2} A~ D^{-1/2} with D the row-sum degree matrix.
inline SparseAdjacency normalize_symmetric(const SparseAdjacency& a) {
  const auto deg = a.row_sums();
  std::vector<double> inv_sqrt(a.n);
  for (int i = 0; i < a.n; ++i) {
    if (deg[i] <= 0.0)
      throw singular_degree_error("normalize_symmetric: zero-degree row " + std::to_string(i));
    inv_sqrt[i] = 1.0 / std::sqrt(deg[i]);
  }
  SparseAdjacency out = a;
  for (int i = 0; i < out.n; ++i)
    for (int k = out.row_ptr[i]; k < out.row_ptr[i + 1]; ++k)
      out.vals[k] = a.vals[k] * inv_sqrt[i] * inv_sqrt[out.cols[k]];
  return out;
}

// One binary mask per stencil offset; boundary rows omit out-of-range offsets
// (zero-padding semantics). Offset order matches stencil_offsets().
inline std::vector<SparseAdjacency> kernel_adjacency_stack(const CellComplex& cc, int kernel_width = 3) {
  if (cc.kind != ComplexKind::structured)
    throw topology_error("kernel_adjacency_stack: structured grid required");
  if (kernel_width != 3) throw config_error("kernel_adjacency_stack: kernel width must be 3");
  const auto offs = stencil_offsets(cc.dim());
  std::vector<SparseAdjacency> stack;
  stack.reserve(offs.size());
  for (const auto& off : offs)
    stack.push_back(build_adjacency(cc, NeighborClass::kernel_offset(off)));
  return stack;
}

// ---------------------------------------------------------------------------
// Mesh file format: self-describing JSON document used by every module.
// {kind, dims?, volumes[], face_neighbors[][], vertex_neighbors[][]}
// ---------------------------------------------------------------------------

inline nlohmann::json complex_to_json(const CellComplex& cc) {
  nlohmann::json j;
  j["kind"] = cc.kind == ComplexKind::structured ? "structured" : "unstructured";
  if (cc.kind == ComplexKind::structured) j["dims"] = cc.dims;
  j["volumes"] = cc.volumes;
  j["face_neighbors"] = cc.face_neighbors;
  j["vertex_neighbors"] = cc.vertex_neighbors;
  return j;
}

inline CellComplex complex_from_json(const nlohmann::json& j) {
  CellComplex cc;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "structured")
    cc.kind = ComplexKind::structured;
  else if (kind == "unstructured")
    cc.kind = ComplexKind::unstructured;
  else
    throw io_error("mesh json: unknown kind '" + kind + "'");
  if (cc.kind == ComplexKind::structured) cc.dims = j.at("dims").get<std::vector<int>>();
  cc.volumes = j.at("volumes").get<std::vector<double>>();
  cc.face_neighbors = j.at("face_neighbors").get<std::vector<std::vector<int>>>();
  cc.vertex_neighbors = j.at("vertex_neighbors").get<std::vector<std::vector<int>>>();
  cc.validate();
  return cc;
}

inline void save_complex(const CellComplex& cc, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw io_error("save_complex: cannot open " + path);
  f << complex_to_json(cc).dump();
}

inline CellComplex load_complex(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("load_complex: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return complex_from_json(j);
}

// Relabel cells by a permutation: cell i of the result is cell perm[i] of the
// input. Used by the invariance tests and the permutation property checks.
inline CellComplex permute_complex(const CellComplex& cc, const std::vector<int>& perm) {
  const int n = cc.n_cells();
  std::vector<int> inv(n);
  for (int i = 0; i < n; ++i) inv[perm[i]] = i;
  CellComplex out;
  out.kind = ComplexKind::unstructured;  // relabeling drops grid addressing
  out.periodic = cc.periodic;
  out.volumes.resize(n);
  out.face_neighbors.resize(n);
  out.vertex_neighbors.resize(n);
  for (int i = 0; i < n; ++i) {
    const int src = perm[i];
    out.volumes[i] = cc.volumes[src];
    for (int j : cc.face_neighbors[src]) out.face_neighbors[i].push_back(inv[j]);
    for (int j : cc.vertex_neighbors[src]) out.vertex_neighbors[i].push_back(inv[j]);
    std::sort(out.face_neighbors[i].begin(), out.face_neighbors[i].end());
    std::sort(out.vertex_neighbors[i].begin(), out.vertex_neighbors[i].end());
  }
  return out;
}

}  // namespace mgcnn
