#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "mgcnn/microgen.hpp"

using namespace mgcnn;

namespace {

double mat3_max_diff(const Mat3& a, const Mat3& b) {
  double m = 0.0;
  for (int k = 0; k < 9; ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace

TEST(OrientationVector, IdentityIsZero) {
  const auto phi = orientation_vector(mat3_identity());
  for (double v : phi) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(OrientationVector, QuarterTurnAboutZ) {
  const auto phi = orientation_vector(rotation_about_z(M_PI / 2.0));
  EXPECT_NEAR(phi[0], 0.0, 1e-12);
  EXPECT_NEAR(phi[1], 0.0, 1e-12);
  EXPECT_NEAR(phi[2], M_PI / 2.0, 1e-12);
}

TEST(OrientationVector, RejectsNonOrthogonal) {
  Mat3 bad = mat3_identity();
  bad[1] = 0.3;
  EXPECT_THROW(orientation_vector(bad), numerical_error);
}

// R -> phi -> R round trip, including draws near the pi branch.
TEST(OrientationVector, RoundTripTenThousandRotations) {
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto r = random_rotation(rng);
    const auto phi = orientation_vector(r);
    const double theta = std::sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]);
    EXPECT_LE(theta, M_PI + 1e-12);
    worst = std::max(worst, mat3_max_diff(rotation_from_orientation(phi), r));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(OrientationVector, NearPiBranch) {
  Rng rng(103);
  for (int trial = 0; trial < 200; ++trial) {
    // rotation by an angle within 1e-7 of pi about a random axis
    Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    const double nrm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    for (double& v : axis) v /= nrm;
    const double theta = M_PI - 1e-7 * rng.uniform();
    const Vec3 phi_in{theta * axis[0], theta * axis[1], theta * axis[2]};
    const auto r = rotation_from_orientation(phi_in);
    const auto phi = orientation_vector(r);
    EXPECT_LT(mat3_max_diff(rotation_from_orientation(phi), r), 1e-9);
  }
}

TEST(RandomRotation, ProperOrthogonal) {
  Rng rng(107);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto r = random_rotation(rng);
    EXPECT_TRUE(is_rotation(r, 1e-12));
  }
}

// Haar-uniform rotations average to the zero matrix.
TEST(RandomRotation, MonteCarloMeanNearZero) {
  Rng rng(109);
  Mat3 mean{};
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) {
    const auto r = random_rotation(rng);
    for (int k = 0; k < 9; ++k) mean[k] += r[k];
  }
  for (int k = 0; k < 9; ++k) EXPECT_LT(std::abs(mean[k] / draws), 0.01);
}

TEST(CubicRotations, GroupProperties) {
  const auto& rots = cubic_rotations();
  EXPECT_EQ(rots.size(), 24u);
  for (const auto& q : rots) EXPECT_TRUE(is_rotation(q, 1e-12));
}

TEST(Disorientation, SymmetryEquivalentOrientationsCoincide) {
  Rng rng(113);
  const auto r = random_rotation(rng);
  // acos near unit argument limits attainable precision to ~sqrt(eps)
  for (const auto& q : cubic_rotations())
    EXPECT_NEAR(disorientation_angle(r, mat3_mul(r, q)), 0.0, 1e-6);
}

TEST(Polycrystal, SingleGrainUniformField) {
  const auto micro = generate_polycrystal({4, 4}, 1, 42);
  for (int i = 1; i < micro.n_cells(); ++i) {
    EXPECT_EQ(micro.grain_labels[i], micro.grain_labels[0]);
    EXPECT_DOUBLE_EQ(micro.channels(i, 0), micro.channels(0, 0));
  }
}

TEST(Polycrystal, EveryCellItsOwnGrain) {
  const auto micro = generate_polycrystal({3, 3}, 9, 43);
  std::set<int> labels(micro.grain_labels.begin(), micro.grain_labels.end());
  EXPECT_EQ(labels.size(), 9u);
}

TEST(Polycrystal, RejectsTooManyGrains) {
  EXPECT_THROW(generate_polycrystal({2, 2}, 5, 1), config_error);
}

TEST(Polycrystal, ThreeDimensionalOrientationChannels) {
  const auto micro = generate_polycrystal({3, 3, 3}, 4, 44);
  EXPECT_EQ(micro.channels.cols, 3);
  // per-cell phi reconstructs a valid rotation
  for (int i = 0; i < micro.n_cells(); ++i) {
    const Vec3 phi{micro.channels(i, 0), micro.channels(i, 1), micro.channels(i, 2)};
    EXPECT_TRUE(is_rotation(rotation_from_orientation(phi), 1e-9));
  }
}

// Low vs high grain-count variance regimes stay distinguishable through the
// per-realization grain-density spread.
TEST(Polycrystal, VarianceRegimesDistinguishable) {
  Rng meta(117);
  auto density_spread = [&](int mean, int spread, uint64_t base) {
    std::vector<double> densities;
    for (int s = 0; s < 200; ++s) {
      Rng r(mix_seed(base, s));
      const int g = static_cast<int>(r.uniform_int(std::max(1, mean - spread), mean + spread));
      const auto micro = generate_polycrystal({8, 8}, g, mix_seed(base, 1000 + s));
      int n_grains = 0;
      for (int lbl : micro.grain_labels) n_grains = std::max(n_grains, lbl + 1);
      densities.push_back(1.0 / n_grains);
    }
    double m = std::accumulate(densities.begin(), densities.end(), 0.0) / densities.size();
    double v = 0.0;
    for (double x : densities) v += (x - m) * (x - m);
    return std::sqrt(v / densities.size());
  };
  (void)meta;
  const double low = density_spread(12, 2, 7001);
  const double high = density_spread(12, 9, 7002);
  EXPECT_GT(high, 2.0 * low);
}

TEST(Porous, ZeroPorosityKeepsEverything) {
  PorositySpec spec;
  spec.mean = 0.0;
  spec.stddev = 0.0;
  const auto micro = generate_porous({6, 6}, spec, 7);
  EXPECT_EQ(micro.n_cells(), 36);
  EXPECT_DOUBLE_EQ(micro.porosity, 0.0);
  const int sf = micro.channel_index("solid_fraction");
  for (int i = 0; i < micro.n_cells(); ++i) EXPECT_DOUBLE_EQ(micro.channels(i, sf), 1.0);
}

TEST(Porous, PorosityEqualsRemovedVolumeFraction) {
  PorositySpec spec;
  spec.mean = 0.12;
  spec.stddev = 0.02;
  const auto micro = generate_porous({10, 10, 10}, spec, 11);
  const double kept = micro.complex.total_volume();
  EXPECT_NEAR(micro.porosity, (micro.domain_volume - kept) / micro.domain_volume, 1e-12);
  EXPECT_GT(micro.porosity, 0.0);
  micro.complex.validate();
  // volume channel mirrors cell volumes, void-face counts are non-negative
  const int vol = micro.channel_index("volume");
  const int vf = micro.channel_index("_void_faces");
  for (int i = 0; i < micro.n_cells(); ++i) {
    EXPECT_DOUBLE_EQ(micro.channels(i, vol), micro.complex.volumes[i]);
    EXPECT_GE(micro.channels(i, vf), 0.0);
  }
  // aux channel is hidden from models
  EXPECT_EQ(micro.model_channels().size(), 2u);
}

// Ensemble porosity statistics track the configured beta distribution.
TEST(Porous, EnsembleBetaMoments) {
  PorositySpec spec;
  double sum = 0.0, sum2 = 0.0;
  const int count = 1000;
  for (int s = 0; s < count; ++s) {
    const auto micro = generate_porous({12, 12}, spec, mix_seed(500, s));
    sum += micro.porosity;
    sum2 += micro.porosity * micro.porosity;
  }
  const double mean = sum / count;
  const double stddev = std::sqrt(std::max(0.0, sum2 / count - mean * mean));
  EXPECT_NEAR(mean, 0.09, 0.01);
  EXPECT_NEAR(stddev, 0.03, 0.01);
}

TEST(GrainGraph, SingleGrain) {
  const auto micro = generate_polycrystal({4, 4}, 1, 42);
  const auto gg = segment_to_grain_graph(micro, 2);
  EXPECT_EQ(gg.complex.n_cells(), 1);
  EXPECT_DOUBLE_EQ(gg.complex.volumes[0], 16.0);
  EXPECT_TRUE(gg.complex.face_neighbors[0].empty());
}

TEST(GrainGraph, TwoHalfDomainGrains) {
  auto micro = generate_polycrystal({4, 4}, 1, 42);
  for (int i = 0; i < 16; ++i) micro.grain_labels[i] = grid_cell_coord({4, 4}, i)[0] < 2 ? 0 : 1;
  const auto gg = segment_to_grain_graph(micro, 4);
  EXPECT_EQ(gg.complex.n_cells(), 2);
  EXPECT_DOUBLE_EQ(gg.complex.volumes[0], 8.0);
  EXPECT_DOUBLE_EQ(gg.complex.volumes[1], 8.0);
  ASSERT_EQ(gg.complex.face_neighbors[0].size(), 1u);
  EXPECT_EQ(gg.complex.face_neighbors[0][0], 1);
  // boundary: 4 discordant faces per side; external surface: 3 exposed sides of 4 cells each... each
  // half-domain is 2x4: perimeter faces missing a neighbor = 2+4+4 = 10 per grain on the full boundary
  const int ia = gg.features.cols - 2, sa = gg.features.cols - 1;
  EXPECT_DOUBLE_EQ(gg.features(0, ia), 4.0);
  EXPECT_DOUBLE_EQ(gg.features(1, ia), 4.0);
  EXPECT_DOUBLE_EQ(gg.features(0, sa), 8.0);
  EXPECT_DOUBLE_EQ(gg.features(1, sa), 8.0);
}

// Boundary area agrees with a brute-force sweep over discordant faces.
TEST(GrainGraph, BoundaryAreaFaceSweepOracle) {
  const auto micro = generate_polycrystal({8, 8}, 7, 77);
  const auto gg = segment_to_grain_graph(micro, 3);
  int n_grains = gg.complex.n_cells();
  std::vector<double> sweep(n_grains, 0.0);
  for (int i = 0; i < micro.n_cells(); ++i)
    for (int j : micro.complex.face_neighbors[i])
      if (micro.grain_labels[i] != micro.grain_labels[j]) sweep[micro.grain_labels[i]] += 1.0;
  const int col = gg.features.cols - 1;
  for (int g = 0; g < n_grains; ++g) EXPECT_DOUBLE_EQ(gg.features(g, col), sweep[g]);
}

TEST(GrainGraph, VolumesPartitionDomain) {
  const auto micro = generate_polycrystal({6, 6, 6}, 12, 99);
  const auto gg = segment_to_grain_graph(micro, 2);
  double total = 0.0;
  for (double v : gg.complex.volumes) total += v;
  EXPECT_NEAR(total, micro.complex.total_volume(), 1e-9);
  gg.complex.validate();
}

TEST(GrainGraph, MissingLabelsRejected) {
  Microstructure micro;
  micro.complex = make_grid({2, 2});
  micro.channels = Matrix(4, 1);
  micro.channel_labels = {"angle"};
  EXPECT_THROW(segment_to_grain_graph(micro, 2), config_error);
  EXPECT_THROW(boost_volume_fraction(micro), config_error);
}

TEST(BoostVolumeFraction, Cases) {
  {
    const auto micro = generate_polycrystal({4, 4}, 1, 42);
    const auto boosted = boost_volume_fraction(micro);
    const int col = boosted.channel_index("grain_volume_fraction");
    for (int i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(boosted.channels(i, col), 1.0);
  }
  {
    auto micro = generate_polycrystal({4, 4}, 1, 42);
    for (int i = 0; i < 16; ++i) micro.grain_labels[i] = grid_cell_coord({4, 4}, i)[0] < 2 ? 0 : 1;
    const auto boosted = boost_volume_fraction(micro);
    const int col = boosted.channel_index("grain_volume_fraction");
    for (int i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(boosted.channels(i, col), 0.5);
  }
  {
    // counting oracle on a random labeling
    auto micro = generate_polycrystal({5, 5}, 1, 42);
    Rng rng(123);
    for (int i = 0; i < 25; ++i) micro.grain_labels[i] = static_cast<int>(rng.uniform_int(0, 2));
    const auto boosted = boost_volume_fraction(micro);
    const int col = boosted.channel_index("grain_volume_fraction");
    std::vector<double> counts(3, 0.0);
    for (int i = 0; i < 25; ++i) counts[micro.grain_labels[i]] += 1.0;
    for (int i = 0; i < 25; ++i)
      EXPECT_NEAR(boosted.channels(i, col), counts[micro.grain_labels[i]] / 25.0, 1e-12);
  }
}
