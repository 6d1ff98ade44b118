#include "oracles.hpp"
#include "sparsebody/autodiff/grad_check.hpp"
#include "sparsebody/errors.hpp"
#include "sparsebody/networks.hpp"
#include "sparsebody/skinning.hpp"
#include "sparsebody/toy_model.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace sparsebody;

namespace {

NetworkShape tiny_shape() {
  NetworkShape s;
  s.landmarks = 5;
  s.joints = 3;
  s.dae_hidden = {8, 4, 8};
  s.atn_hidden = {8};
  s.psi_hidden = {8, 8};
  return s;
}

ad::Tensor random_landmarks(std::mt19937_64& rng, Index batch, Index l) {
  return oracle::random_tensor(rng, {batch, l, 3}, -0.5, 0.5);
}

bool same(const ad::Tensor& a, const ad::Tensor& b) {
  return a.shape() == b.shape() && (a.data() == b.data()).all();
}

}  // namespace

TEST_CASE("valid landmarks pass through the reconstruction merge") {
  std::mt19937_64 rng(1);
  const ad::Tensor l = random_landmarks(rng, 2, 5);
  const ad::Tensor rec = random_landmarks(rng, 2, 5);
  const ad::Tensor ones = ad::Tensor::full({2, 5, 3}, 1.0);
  CHECK(same(merge_reconstruction(l, ones, rec), l));

  ad::Array m = ad::Array::Ones(30);
  m.segment(3, 3).setZero();  // landmark 1 of frame 0 missing
  const ad::Tensor merged = merge_reconstruction(l, ad::Tensor({2, 5, 3}, m), rec);
  for (Index i = 0; i < 30; ++i) CHECK(merged[i] == (i >= 3 && i < 6 ? rec[i] : l[i]));
}

TEST_CASE("the autoencoder keeps valid landmarks and fills missing ones from its block") {
  const NetworkParams p = init_network(tiny_shape(), 0, 6);
  std::mt19937_64 rng(3);
  ad::Array m = ad::Array::Ones(30);
  m.segment(9, 3).setZero();
  m.segment(27, 3).setZero();
  const ad::Tensor mask({2, 5, 3}, m);
  const ad::Tensor l = ad::mul(mask, random_landmarks(rng, 2, 5));
  const ad::Tensor rec = dae_forward(p.dae, l, mask, DropoutContext{});
  const ad::Tensor x = ad::concatenate({ad::reshape(l, {2, 15}), ad::reshape(mask, {2, 15})}, 1);
  const ad::Tensor h = block_forward(p.dae, x, DropoutContext{}, 0);
  for (Index i = 0; i < 30; ++i) CHECK(rec[i] == (m[i] != 0 ? l[i] : h[i]));
}

TEST_CASE("eval mode is deterministic and train mode depends on the step") {
  const NetworkParams p = init_network(tiny_shape(), 1, 5);
  std::mt19937_64 rng(2);
  const ad::Tensor l = random_landmarks(rng, 4, 5);
  const ad::Tensor mask = ad::Tensor::full({4, 5, 3}, 1.0);
  DropoutContext eval;
  const auto a = pipeline_forward(p, l, mask, 1, eval);
  const auto b = pipeline_forward(p, l, mask, 1, eval);
  CHECK(same(a.reconstruction, b.reconstruction));
  CHECK(same(a.stages.back().flat, b.stages.back().flat));

  // Dropout only shows in the reconstruction of missing landmarks.
  ad::Array partial = ad::Array::Ones(60);
  partial.segment(6, 6).setZero();
  const ad::Tensor holes({4, 5, 3}, partial);
  const ad::Tensor lh = ad::mul(holes, l);
  DropoutContext train{true, 0.8, 9, 0};
  const auto t0 = pipeline_forward(p, lh, holes, 0, train);
  const auto t0again = pipeline_forward(p, lh, holes, 0, train);
  train.step = 1;
  const auto t1 = pipeline_forward(p, lh, holes, 0, train);
  CHECK(same(t0.reconstruction, t0again.reconstruction));
  CHECK_FALSE(same(t0.reconstruction, t1.reconstruction));
}

TEST_CASE("attention weights saturate and average") {
  std::mt19937_64 rng(3);
  const ad::Tensor l = random_landmarks(rng, 1, 5);
  const ad::Array& ld = l.data();

  ad::Array logits = ad::Array::Zero(5);
  logits[0] = 60.0;
  const ad::Tensor joint = ad::compose(ad::softmax(ad::Tensor({1, 1, 5}, logits), 2), l);
  CHECK((joint.data() - ld.head(3)).abs().maxCoeff() < 1e-20);

  const ad::Tensor uniform = ad::compose(ad::softmax(ad::Tensor::full({1, 1, 5}, 0.7), 2), l);
  Eigen::Array3d centroid = Eigen::Array3d::Zero();
  for (Index i = 0; i < 5; ++i) centroid += ld.segment(3 * i, 3);
  CHECK((uniform.data() - centroid / 5).abs().maxCoeff() < 1e-15);
}

TEST_CASE("attention rows are stochastic and joints are convex combinations") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const NetworkParams p = init_network(tiny_shape(), 0, 100 + trial);
    const ad::Tensor l = random_landmarks(rng, 3, 5);
    const AttentionOutput a = atn_forward(p.atn, l, 3, DropoutContext{});
    const auto w = a.weights.as_matrix(9, 5);
    CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK(w.minCoeff() >= 0.0);
    for (Index b = 0; b < 3; ++b) {
      const auto pts = l.as_matrix(15, 3).middleRows(5 * b, 5);
      const auto joints = a.joints.as_matrix(9, 3).middleRows(3 * b, 3);
      const RowMatrixXd combo = w.middleRows(3 * b, 3) * pts;
      CHECK((combo - joints).cwiseAbs().maxCoeff() < 1e-12);
      // Inside the bounding box of the landmarks, a necessary hull condition.
      for (int c = 0; c < 3; ++c) {
        CHECK(joints.col(c).minCoeff() >= pts.col(c).minCoeff() - 1e-12);
        CHECK(joints.col(c).maxCoeff() <= pts.col(c).maxCoeff() + 1e-12);
      }
    }
  }
}

TEST_CASE("root subtraction centers on the first joint") {
  std::mt19937_64 rng(5);
  const ad::Tensor j = random_landmarks(rng, 2, 3);
  const ad::Tensor pts = random_landmarks(rng, 2, 5);
  const ad::Tensor c = subtract_root(pts, j);
  for (Index b = 0; b < 2; ++b) {
    for (Index i = 0; i < 5; ++i) {
      for (Index k = 0; k < 3; ++k) CHECK(c[(b * 5 + i) * 3 + k] == doctest::Approx(pts[(b * 5 + i) * 3 + k] - j[b * 9 + k]));
    }
  }
}

TEST_CASE("zero-output cascade keeps the previous prediction") {
  NetworkParams p = init_network(tiny_shape(), 2, 6);
  std::mt19937_64 rng(6);
  const ad::Tensor l = random_landmarks(rng, 3, 5);
  const ad::Tensor mask = ad::Tensor::full({3, 5, 3}, 1.0);
  const auto out = pipeline_forward(p, l, mask, 2, DropoutContext{});
  CHECK(same(out.stages[0].flat, out.stages[1].flat));
  CHECK(same(out.stages[1].flat, out.stages[2].flat));

  // A nonzero cascade changes it.
  auto& w = p.psi[1].layers.back().weight;
  w = ad::Tensor(w.shape(), ad::Array::Constant(w.size(), 0.01));
  const auto changed = pipeline_forward(p, l, mask, 1, DropoutContext{});
  CHECK_FALSE(same(changed.stages[0].flat, changed.stages[1].flat));
}

TEST_CASE("fresh first regressor predicts a near-rest pose") {
  const NetworkParams p = init_network(NetworkShape{}, 0, 7);
  const BodyModel model = make_toy_model();
  std::mt19937_64 rng(7);
  const ad::Tensor l = random_landmarks(rng, 4, 67);
  const auto out = pipeline_forward(p, l, ad::Tensor::full({4, 67, 3}, 1.0), 0, DropoutContext{});
  const ad::Tensor r = tape_rotations(out.stages[0].quaternions);
  const auto rot = r.as_matrix(4 * 24, 9);
  double worst = 0.0;
  for (Index i = 0; i < rot.rows(); ++i) {
    const Eigen::Matrix3d m = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(rot.row(i).data());
    worst = std::max(worst, (m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 0.1);
  CHECK(out.stages[0].betas.data().abs().maxCoeff() < 0.1);
}

TEST_CASE("block shape checks and non-finite activations") {
  const NetworkParams p = init_network(tiny_shape(), 0, 8);
  CHECK_THROWS_AS(block_forward(p.dae, ad::Tensor::zeros({2, 15}), DropoutContext{}, 1), DimensionError);
  ad::Array bad = ad::Array::Zero(30);
  bad[0] = std::numeric_limits<double>::infinity();
  try {
    block_forward(p.dae, ad::Tensor({1, 30}, bad), DropoutContext{}, 1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("dae/layer0") != std::string::npos);
  }
  CHECK_THROWS_AS(pipeline_forward(p, ad::Tensor::zeros({1, 5, 3}), ad::Tensor::zeros({1, 5, 3}), 1, DropoutContext{}),
                  StagingError);
}

TEST_CASE("checkpoint round trip preserves every parameter and flag") {
  NetworkParams p = init_network(tiny_shape(), 1, 9);
  p.dae.trainable = false;
  const Archive a = checkpoint_archive(p, {{"step", "42"}});
  const auto path = std::filesystem::temp_directory_path() / "sparsebody_ckpt_test.sba";
  a.save(path);
  NetworkParams q = network_from_archive(Archive::load(path));
  std::filesystem::remove(path);
  CHECK(manifest_of(a).at("step") == "42");
  CHECK_FALSE(q.dae.trainable);
  CHECK(q.psi.size() == 2);
  CHECK(q.shape.dae_hidden == p.shape.dae_hidden);
  const auto pa = p.named_parameters();
  const auto qa = q.named_parameters();
  REQUIRE(pa.size() == qa.size());
  for (const auto& [name, t] : pa) CHECK_MESSAGE(same(*t, *qa.at(name)), name);

  Archive broken = a;
  broken.put("psi0/layer0/bias", {3}, {0.0, 0.0, 0.0});
  CHECK_THROWS_AS(network_from_archive(broken), DataError);
}

TEST_CASE("pipeline gradient through the body model matches finite differences") {
  const BodyModel model = make_toy_model();
  const ModelTensors mt(model);
  NetworkShape s;
  s.dae_hidden = {4, 2, 4};
  s.atn_hidden = {4};
  s.psi_hidden = {4};
  NetworkParams p = init_network(s, 1, 10);
  std::mt19937_64 rng(10);
  ad::Tensor& cascade_out = p.psi[1].layers.back().weight;
  cascade_out = oracle::random_tensor(rng, cascade_out.shape(), -0.05, 0.05);
  // Zero biases put exact zeros into ReLU inputs whenever a layer is fully off.
  for (Block* b : p.blocks()) {
    for (Dense& layer : b->layers) {
      layer.bias = ad::add(layer.bias, oracle::random_tensor(rng, layer.bias.shape(), 0.01, 0.05));
    }
  }
  const ad::Tensor l = random_landmarks(rng, 2, 67);
  ad::Array m = ad::Array::Ones(2 * 67 * 3);
  m.segment(30, 12).setZero();  // some missing landmarks so the DAE matters
  const ad::Tensor mask({2, 67, 3}, m);
  const ad::Tensor probe = oracle::random_tensor(rng, {2, 901, 3});

  // Differentiates with respect to the named parameter, all others constant.
  auto check = [&](const std::string& name) {
    auto f = [&](const ad::Tensor& x) {
      NetworkParams q = p;
      *q.named_parameters().at(name) = x;
      const auto out = pipeline_forward(q, l, mask, 1, DropoutContext{});
      const TapeBody body = tape_forward(out.stages.back().quaternions, out.stages.back().betas, mt);
      return ad::add(ad::mean(ad::mul(body.vertices, probe)), ad::mean(ad::abs(out.attention.joints)));
    };
    const auto report = ad::grad_check(f, *p.named_parameters().at(name));
    CHECK_MESSAGE(report.passed(), name << ": " << report.message);
  };
  check("psi1/layer1/weight");
  check("psi0/layer1/bias");
  check("atn/layer1/weight");
  check("dae/layer2/weight");
}
