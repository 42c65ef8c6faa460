#include <algorithm>
#include <cmath>
#include <numeric>

#include "ndesc/errors.hpp"
#include "ndesc/network.hpp"
#include "test_util.hpp"

using namespace ndesc;

namespace {

PatchCloud random_patch(Rng& rng, std::size_t n = 200) {
  return sample_patch(sample_polynomial(rng, 2, 4, 1.0), n, 1.0, rng);
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.widths = {8, 8, 16, 16};
  c.out_dim = 24;
  return c;
}

}  // namespace

TEST(Encoder, DefaultShapesFollowArchitecture) {
  const EncoderConfig c;
  EXPECT_EQ(c.widths, (std::array<int, 4>{64, 64, 128, 256}));
  EXPECT_EQ(c.point_width(), 512);
  EXPECT_EQ(c.out_dim, 2048);
  const Encoder enc(c, 1);
  Rng rng(51);
  const PatchCloud patch = random_patch(rng);
  const PreparedPatch prepared = prepare_patch(patch, c.operator_k);
  EXPECT_EQ(enc.point_features(prepared).cols(), 512);
  EXPECT_EQ(enc.pooled(prepared).cols(), 1024);
  const Eigen::VectorXd d = enc.encode(patch);
  EXPECT_EQ(d.size(), 2048);
  EXPECT_TRUE(d.allFinite());
}

TEST(Encoder, PermutationInvariantBitwise) {
  Rng rng(52);
  const Encoder enc(small_config(), 2);
  const PatchCloud patch = random_patch(rng);
  std::vector<Eigen::Index> perm(patch.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  PatchCloud shuffled = patch;
  for (std::size_t i = 0; i < perm.size(); ++i)
    shuffled.points.row(static_cast<Eigen::Index>(i)) = patch.points.row(perm[i]);
  EXPECT_TRUE(enc.encode(patch) == enc.encode(shuffled));
}

TEST(Encoder, RigidMotionInvariantWithAlignment) {
  Rng rng(53);
  const Encoder enc(small_config(), 3);
  for (int trial = 0; trial < 5; ++trial) {
    const PatchCloud patch = random_patch(rng, 150);
    PatchCloud moved = patch;
    const Eigen::Matrix3d r = test::random_rotation(rng);
    moved.points = (patch.points * r.transpose()).rowwise() + Eigen::RowVector3d(1.5, -2.0, 0.7);
    const Eigen::VectorXd a = enc.encode(patch), b = enc.encode(moved);
    EXPECT_LE((a - b).norm(), 1e-5 * a.norm()) << "trial " << trial;
  }
}

TEST(Encoder, TooFewPointsIsConfigError) {
  Rng rng(54);
  const Encoder enc(small_config(), 4);
  PatchCloud patch = random_patch(rng, 16);
  EXPECT_NO_THROW(enc.encode(patch));
  patch.points.conservativeResize(15, 3);
  EXPECT_THROW(enc.encode(patch), ConfigError);
}

TEST(Encoder, SameSeedSameWeights) {
  Rng rng(55);
  const PatchCloud patch = random_patch(rng);
  EXPECT_TRUE(Encoder(small_config(), 9).encode(patch) == Encoder(small_config(), 9).encode(patch));
  EXPECT_FALSE(Encoder(small_config(), 9).encode(patch) == Encoder(small_config(), 10).encode(patch));
}

TEST(Encoder, ParametersStoredAtFloatPrecision) {
  const Encoder enc(small_config(), 5);
  for (const auto& [name, t] : enc.parameters())
    for (Eigen::Index i = 0; i < t.value().size(); ++i) {
      const double v = t.value().data()[i];
      EXPECT_EQ(v, static_cast<double>(static_cast<float>(v))) << name;
    }
}

TEST(Encoder, CenterOutputZeroesMeanDescriptor) {
  Rng rng(56);
  Encoder enc(small_config(), 6);
  std::vector<PatchCloud> patches;
  std::vector<PreparedPatch> prepared;
  for (int i = 0; i < 12; ++i) {
    patches.push_back(random_patch(rng, 120));
    prepared.push_back(prepare_patch(patches.back(), enc.config().operator_k));
  }
  enc.center_output(prepared);
  const Eigen::MatrixXd d = enc.encode_all(patches);
  // The bias is rounded to float storage, so the mean is zero to that precision.
  EXPECT_LT(d.colwise().mean().cwiseAbs().maxCoeff(), 1e-5 * d.cwiseAbs().maxCoeff());
  EXPECT_THROW(enc.center_output({}), ConfigError);
}

TEST(Encoder, InvalidConfigRejected) {
  EncoderConfig c = small_config();
  c.widths[2] = 0;
  EXPECT_THROW(Encoder(c, 1), ConfigError);
  c = small_config();
  c.out_dim = 0;
  EXPECT_THROW(Encoder(c, 1), ConfigError);
  c = small_config();
  c.operator_k = 3;
  EXPECT_THROW(Encoder(c, 1), ConfigError);
}

TEST(Head, WidthsAndBatchCentering) {
  const SimSiamHead head(24, HeadConfig{16}, 7);
  Rng rng(57);
  ad::Matrix x(5, 24);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const ad::Tensor z = head.project(ad::Tensor::constant(x));
  const ad::Tensor p = head.predict(z);
  EXPECT_EQ(z.cols(), 16);
  EXPECT_EQ(p.cols(), 16);
  EXPECT_EQ(p.rows(), 5);
  EXPECT_THROW(SimSiamHead(24, HeadConfig{2}, 1), ConfigError);
}
