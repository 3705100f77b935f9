#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mgcnn/meshgraph.hpp"

using namespace mgcnn;

TEST(BuildAdjacency, OneByTwoFacePair) {
  const auto cc = make_grid({2, 1});
  const auto a = build_adjacency(cc, NeighborClass::face());
  EXPECT_EQ(a.n, 2);
  EXPECT_EQ(a.nnz(), 2);
  EXPECT_DOUBLE_EQ(a.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(a.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(a.at(0, 0), 0.0);
}

TEST(BuildAdjacency, SelfLoopIsIdentity) {
  const auto cc = make_grid({3, 2});
  const auto a = build_adjacency(cc, NeighborClass::self_loop());
  EXPECT_EQ(a.nnz(), 6);
  for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(a.at(i, i), 1.0);
}

// 3x3 grid, enumerated by hand: corner cell 0 touches cells 1,3 by face and
// only the center cell 4 through a vertex.
TEST(BuildAdjacency, CornerVertexNeighborOfThreeByThree) {
  const auto cc = make_grid({3, 3});
  const auto v = build_adjacency(cc, NeighborClass::vertex());
  EXPECT_EQ(v.row_ptr[1] - v.row_ptr[0], 1);
  EXPECT_DOUBLE_EQ(v.at(0, 4), 1.0);
  const auto f = build_adjacency(cc, NeighborClass::face());
  EXPECT_EQ(f.row_ptr[1] - f.row_ptr[0], 2);
  EXPECT_DOUBLE_EQ(f.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(f.at(0, 3), 1.0);
}

TEST(BuildAdjacency, KernelOffsetRejectsUnstructured) {
  CellComplex cc;
  cc.kind = ComplexKind::unstructured;
  cc.volumes = {1.0, 1.0};
  cc.face_neighbors = {{1}, {0}};
  cc.vertex_neighbors = {{}, {}};
  EXPECT_THROW(build_adjacency(cc, NeighborClass::kernel_offset({1})), topology_error);
  EXPECT_THROW(kernel_adjacency_stack(cc), topology_error);
}

TEST(AddSelfLoops, TwoCliqueAndZeroMatrix) {
  const auto cc = make_grid({2, 1});
  const auto tilde = add_self_loops(build_adjacency(cc, NeighborClass::face()));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(tilde.at(i, j), 1.0);

  const auto zero = from_coo(3, {});
  const auto eye = add_self_loops(zero);
  EXPECT_EQ(eye.nnz(), 3);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(eye.at(i, i), 1.0);
}

TEST(AddSelfLoops, TwoByTwoGridRowsHaveThreeOnes) {
  const auto cc = make_grid({2, 2});
  const auto tilde = add_self_loops(build_adjacency(cc, NeighborClass::face()));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(tilde.row_ptr[i + 1] - tilde.row_ptr[i], 3);
}

TEST(AddSelfLoops, NonzeroDiagonalRejected) {
  const auto eye = identity_adjacency(2);
  EXPECT_THROW(add_self_loops(eye), duplicate_entry_error);
}

TEST(NormalizeSymmetric, TwoCliqueAndIdentity) {
  const auto cc = make_grid({2, 1});
  const auto norm = normalize_symmetric(add_self_loops(build_adjacency(cc, NeighborClass::face())));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(norm.at(i, j), 0.5, 1e-15);

  const auto eye = normalize_symmetric(identity_adjacency(5));
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(eye.at(i, i), 1.0, 1e-15);
}

// 3-node path with self-loops: degrees {2,3,2}, so entry (0,1) = 1/sqrt(6).
TEST(NormalizeSymmetric, ThreeNodePathDegrees) {
  const auto cc = make_grid({3, 1});
  const auto norm = normalize_symmetric(add_self_loops(build_adjacency(cc, NeighborClass::face())));
  EXPECT_NEAR(norm.at(0, 1), 1.0 / std::sqrt(6.0), 1e-15);
  EXPECT_NEAR(norm.at(1, 0), 1.0 / std::sqrt(6.0), 1e-15);
  EXPECT_NEAR(norm.at(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(norm.at(1, 1), 1.0 / 3.0, 1e-15);
}

TEST(NormalizeSymmetric, ZeroDegreeRowRejected) {
  const auto zero = from_coo(2, {{0, 0, 1.0}});
  EXPECT_THROW(normalize_symmetric(zero), singular_degree_error);
}

TEST(KernelStack, OneDimensionalThreeCells) {
  const auto cc = make_grid({3});
  const auto stack = kernel_adjacency_stack(cc);
  ASSERT_EQ(stack.size(), 3u);
  // center offset is the identity
  EXPECT_EQ(stack[1].nnz(), 3);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(stack[1].at(i, i), 1.0);
  // +1 offset: entries (0,1) and (1,2) only, boundary row empty
  EXPECT_EQ(stack[2].nnz(), 2);
  EXPECT_DOUBLE_EQ(stack[2].at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(stack[2].at(1, 2), 1.0);
  EXPECT_EQ(stack[2].row_ptr[3] - stack[2].row_ptr[2], 0);
}

TEST(KernelStack, RowsHaveAtMostOneEntry) {
  const auto cc = make_grid({4, 3});
  for (const auto& a : kernel_adjacency_stack(cc))
    for (int i = 0; i < a.n; ++i) EXPECT_LE(a.row_ptr[i + 1] - a.row_ptr[i], 1);
}

// Entrywise: sum of all 3^d offset masks equals Face + Vertex + Self.
TEST(KernelStack, SumEqualsFacePlusVertexPlusSelf) {
  for (const auto& dims : {std::vector<int>{4, 4}, std::vector<int>{3, 3, 3}}) {
    const auto cc = make_grid(dims);
    const auto stack = kernel_adjacency_stack(cc);
    Matrix sum(cc.n_cells(), cc.n_cells());
    for (const auto& a : stack) {
      const auto d = a.dense();
      for (size_t k = 0; k < d.a.size(); ++k) sum.a[k] += d.a[k];
    }
    Matrix ref(cc.n_cells(), cc.n_cells());
    for (const auto& cls : {NeighborClass::face(), NeighborClass::vertex(), NeighborClass::self_loop()}) {
      const auto d = build_adjacency(cc, cls).dense();
      for (size_t k = 0; k < d.a.size(); ++k) ref.a[k] += d.a[k];
    }
    for (size_t k = 0; k < ref.a.size(); ++k) EXPECT_DOUBLE_EQ(sum.a[k], ref.a[k]);
  }
}

TEST(GridTopology, InteriorRowSums) {
  {
    const auto cc = make_grid({5, 5});
    const int interior = grid_cell_id(cc.dims, {2, 2});
    EXPECT_EQ(cc.face_neighbors[interior].size(), 4u);
    EXPECT_EQ(cc.vertex_neighbors[interior].size(), 4u);
  }
  {
    const auto cc = make_grid({4, 4, 4});
    const int interior = grid_cell_id(cc.dims, {1, 2, 1});
    EXPECT_EQ(cc.face_neighbors[interior].size(), 6u);
    EXPECT_EQ(cc.vertex_neighbors[interior].size(), 20u);
  }
}

TEST(GridTopology, ValidatePasses) {
  make_grid({4, 4}).validate();
  make_grid({3, 4, 2}).validate();
  make_grid({5, 5}, /*periodic=*/true).validate();
}

TEST(GridTopology, PeriodicInteriorEverywhere) {
  const auto cc = make_grid({4, 4}, /*periodic=*/true);
  for (int i = 0; i < cc.n_cells(); ++i) {
    EXPECT_EQ(cc.face_neighbors[i].size(), 4u);
    EXPECT_EQ(cc.vertex_neighbors[i].size(), 4u);
  }
}

// build(P complex) == P build(complex) P^T for random relabelings.
TEST(Properties, PermutationEquivariance) {
  Rng rng(20240811);
  const auto cc = make_grid({4, 3});
  const int n = cc.n_cells();
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    const auto pc = permute_complex(cc, perm);
    for (const auto& cls : {NeighborClass::face(), NeighborClass::vertex()}) {
      const auto a = build_adjacency(cc, cls).dense();
      const auto pa = build_adjacency(pc, cls).dense();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) EXPECT_DOUBLE_EQ(pa(i, j), a(perm[i], perm[j]));
    }
  }
}

// Spectral radius of the normalized operator stays within [-1, 1]; checked by
// power iteration on random graphs up to 100 nodes.
TEST(Properties, NormalizedSpectrumBounded) {
  Rng rng(7);
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 10 + static_cast<int>(rng.uniform_int(0, 90));
    std::vector<CooEntry> e;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (rng.uniform() < 0.08) {
          e.push_back({i, j, 1.0});
          e.push_back({j, i, 1.0});
        }
    const auto norm = normalize_symmetric(add_self_loops(from_coo(n, std::move(e), true)));
    Matrix v(n, 1);
    for (int i = 0; i < n; ++i) v(i, 0) = rng.uniform(-1.0, 1.0);
    double lambda = 0.0;
    for (int it = 0; it < 300; ++it) {
      Matrix w(n, 1);
      norm.multiply_accumulate(v, w);
      double nrm = 0.0;
      for (int i = 0; i < n; ++i) nrm += w(i, 0) * w(i, 0);
      nrm = std::sqrt(nrm);
      if (nrm == 0.0) break;
      for (int i = 0; i < n; ++i) w(i, 0) /= nrm;
      lambda = nrm;
      v = w;
    }
    EXPECT_LE(lambda, 1.0 + 1e-9);
  }
}

TEST(MeshJson, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "mgcnn_meshjson";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "mesh.json").string();
  auto cc = make_grid({3, 2});
  cc.volumes[2] = 2.5;
  save_complex(cc, path);
  const auto back = load_complex(path);
  EXPECT_EQ(back.kind, ComplexKind::structured);
  EXPECT_EQ(back.dims, cc.dims);
  EXPECT_EQ(back.volumes, cc.volumes);
  EXPECT_EQ(back.face_neighbors, cc.face_neighbors);
  EXPECT_EQ(back.vertex_neighbors, cc.vertex_neighbors);
}
