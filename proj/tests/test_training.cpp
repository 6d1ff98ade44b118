#include "sparsebody/errors.hpp"
#include "sparsebody/rotation.hpp"
#include "sparsebody/toy_model.hpp"
#include "sparsebody/training.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace sparsebody;

namespace {

const BodyModel& toy() {
  static const BodyModel model = make_toy_model();
  return model;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

RowMatrixXd flatten(const Points3& p) {
  RowMatrixXd row(1, p.size());
  row.row(0) = p.reshaped<Eigen::RowMajor>().transpose();
  return row;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.max_steps = 6;
  c.stage_steps = 3;
  c.cascades = 1;
  c.validation_every = 2;
  c.validation_frames = 8;
  c.shape.dae_hidden = {8};
  c.shape.atn_hidden = {8};
  c.shape.psi_hidden = {8};
  return c;
}

Dataset tiny_data(Index frames = 32) {
  SynthConfig s;
  s.frames = frames;
  s.sequence_length = 4;
  return synth_generate(toy(), s).data;
}

}  // namespace

TEST_CASE("translation preprocessing centers valid landmarks") {
  RowMatrixXd coords(2, 9), mask(2, 3);
  coords << -1, 0, 0, 1, 0, 0, 0, 2, -2, 5, 5, 5, 7, 5, 5, 0, 0, 0;
  mask << 1, 1, 1, 1, 1, 0;
  const Preprocessed p = preprocess_translate(coords, mask);
  CHECK(p.coordinates(0, 0) == doctest::Approx(-1.0));
  CHECK(p.coordinates(0, 7) == doctest::Approx(4.0 / 3.0));
  CHECK(p.coordinates(1, 0) == doctest::Approx(-1.0));
  CHECK(p.coordinates(1, 3) == doctest::Approx(1.0));
  CHECK(p.coordinates.row(1).tail(3).isZero());
  CHECK(p.transforms[1].translation.isApprox(Eigen::Vector3d(-6, -5, -5)));

  mask.row(1).setZero();
  CHECK_THROWS_AS(preprocess_translate(coords, mask), DataError);
}

TEST_CASE("translation preprocessing is invariant to a shift and restores exactly") {
  const Dataset d = tiny_data(8);
  const Preprocessed a = preprocess_translate(d.coordinates, d.mask);
  RowMatrixXd shifted = d.coordinates;
  const Eigen::RowVector3d offset(0.3, -1.7, 2.2);
  for (Index i = 0; i < d.landmark_count(); ++i) shifted.middleCols(3 * i, 3).rowwise() += offset;
  const Preprocessed b = preprocess_translate(shifted, d.mask);
  CHECK((a.coordinates - b.coordinates).cwiseAbs().maxCoeff() < 1e-12);
  for (Index f = 0; f < d.size(); ++f) {
    const Points3 net = Eigen::Map<const Points3>(a.coordinates.row(f).data(), d.landmark_count(), 3);
    CHECK((a.transforms[static_cast<std::size_t>(f)].invert(net) - d.landmarks(f)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("procrustes recovers a known rigid motion") {
  std::mt19937_64 rng(3);
  const Points3 reference = procrustes_reference(toy());
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Matrix3d r = random_rotation(rng);
    const Eigen::Vector3d t(0.5 * trial, -0.2, 1.0);
    const Points3 moved = (reference * r.transpose()).rowwise() + t.transpose();
    Eigen::VectorXd valid = Eigen::VectorXd::Ones(reference.rows());
    if (trial % 2) {
      for (Index i = 0; i < reference.rows(); i += 3) valid[i] = 0;  // about a third missing
    }
    const RigidTransform fit = procrustes_fit(moved, valid, reference);
    CHECK((fit.rotation - r.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((fit.translation + r.transpose() * t).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(fit.rotation.determinant() == doctest::Approx(1.0));
  }
}

TEST_CASE("procrustes alignment errors") {
  const Points3 reference = procrustes_reference(toy());
  Eigen::VectorXd valid = Eigen::VectorXd::Zero(reference.rows());
  valid.head(2).setOnes();
  CHECK_THROWS_AS(procrustes_fit(reference, valid, reference), AlignmentError);
  Points3 line = Points3::Zero(reference.rows(), 3);
  line.col(0) = Eigen::VectorXd::LinSpaced(reference.rows(), 0, 1);
  CHECK_THROWS_AS(procrustes_fit(line, Eigen::VectorXd::Ones(reference.rows()), reference), AlignmentError);
}

TEST_CASE("procrustes preprocessing removes a global rigid motion") {
  const Dataset d = tiny_data(4);
  const Points3 reference = procrustes_reference(toy());
  std::mt19937_64 rng(11);
  Dataset moved = d;
  for (Index f = 0; f < d.size(); ++f) {
    const Eigen::Matrix3d r = random_rotation(rng);
    const Points3 p = (d.landmarks(f) * r.transpose()).rowwise() + Eigen::RowVector3d(1, 2, 3);
    moved.coordinates.row(f) = flatten(p);
  }
  const Preprocessed a = preprocess(d, Preprocessing::kTranslateProcrustes, reference);
  const Preprocessed b = preprocess(moved, Preprocessing::kTranslateProcrustes, reference);
  CHECK((a.coordinates - b.coordinates).cwiseAbs().maxCoeff() < 1e-9);
  for (Index f = 0; f < d.size(); ++f) {
    const Points3 net = Eigen::Map<const Points3>(b.coordinates.row(f).data(), d.landmark_count(), 3);
    CHECK((b.transforms[static_cast<std::size_t>(f)].invert(net) - moved.landmarks(f)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("missing-landmark augmentation") {
  const Dataset d = tiny_data(6);
  RowMatrixXd c = d.coordinates, m = d.mask;
  auto rng = std::mt19937_64(5);
  augment_missing(c, m, 0.0, rng);
  CHECK(c == d.coordinates);
  CHECK(m == d.mask);
  augment_missing(c, m, 0.5, rng);
  for (Index r = 0; r < m.rows(); ++r) {
    CHECK(m.row(r).sum() == 34.0);
    for (Index i = 0; i < 67; ++i) {
      if (m(r, i) == 0) CHECK(c.row(r).segment<3>(3 * i).isZero());
    }
  }
  RowMatrixXd c2 = d.coordinates, m2 = d.mask;
  auto rng2 = std::mt19937_64(5);
  augment_missing(c2, m2, 0.0, rng2);
  augment_missing(c2, m2, 0.5, rng2);
  CHECK(m2 == m);
  CHECK_THROWS_AS(augment_missing(c2, m2, 1.0, rng2), ConfigurationError);
}

TEST_CASE("adam update rule") {
  ad::Array x = ad::Array::Constant(3, 1.0), m = ad::Array::Zero(3), v = ad::Array::Zero(3);
  adam_update(x, ad::Array::Zero(3), m, v, 1, 0.1);
  CHECK(x.isApproxToConstant(1.0));
  // A constant gradient moves every step by about lr.
  for (long long t = 1; t <= 5; ++t) {
    const ad::Array before = x;
    adam_update(x, ad::Array::Constant(3, 2.5), m, v, t, 0.1);
    CHECK((before - x - 0.1).abs().maxCoeff() < 1e-6);
  }
  ad::Array y = ad::Array::Constant(1, 1.0), my = ad::Array::Zero(1), vy = ad::Array::Zero(1);
  for (long long t = 1; t <= 500; ++t) adam_update(y, 2.0 * y, my, vy, t, 0.01);
  CHECK(std::abs(y[0]) < 1e-3);
}

TEST_CASE("adam step skips frozen blocks and rejects non-finite gradients") {
  NetworkShape shape;
  shape.dae_hidden = {4};
  shape.atn_hidden = {4};
  shape.psi_hidden = {4};
  NetworkParams p = init_network(shape, 0, 1);
  p.atn.trainable = false;
  std::map<std::string, ad::Array> g;
  for (auto& [name, t] : p.named_parameters()) g[name] = ad::Array::Ones(t->size());
  const NetworkParams before = p;
  OptimizerState state;
  adam_step(p, g, state, 0.01);
  CHECK((p.atn.layers[0].weight.data() == before.atn.layers[0].weight.data()).all());
  CHECK((p.dae.layers[0].weight.data() != before.dae.layers[0].weight.data()).all());
  CHECK(state.first_moment.count("atn/layer0/weight") == 0);
  g["dae/layer0/bias"][0] = std::nan("");
  try {
    adam_step(p, g, state, 0.01);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("dae/layer0/bias") != std::string::npos);
  }
}

TEST_CASE("sequence split keeps sequences whole") {
  const Dataset d = tiny_data(40);
  const Split s = split_frames(d, 0.2, 9);
  CHECK(s.train.size() + s.validation.size() == 40);
  CHECK(s.validation.size() == 8);
  for (Index v : s.validation) {
    for (Index t : s.train) CHECK(d.sequence[static_cast<std::size_t>(v)] != d.sequence[static_cast<std::size_t>(t)]);
  }
  CHECK(split_frames(d, 0.2, 9).validation == s.validation);
}

TEST_CASE("train config round trip and validation") {
  TrainConfig c = tiny_config();
  c.preprocessing = Preprocessing::kTranslateProcrustes;
  c.weights.surface = 3.0;
  c.bounds = bounds_from_euler(toy_pose_limits(), 50, 1);
  const TrainConfig back = TrainConfig::from_config(KeyValues::parse(c.to_config().to_text()));
  CHECK(back.batch_size == 4);
  CHECK(back.preprocessing == Preprocessing::kTranslateProcrustes);
  CHECK(back.weights.surface == 3.0);
  CHECK(back.shape.psi_hidden == std::vector<Index>{8});
  REQUIRE(back.bounds);
  CHECK(back.bounds->lower.isApprox(c.bounds->lower));
  CHECK_THROWS_AS(TrainConfig::from_config(KeyValues::parse("train.learning_rate = -1\n")), ConfigurationError);
  CHECK_THROWS_AS(TrainConfig::from_config(KeyValues::parse("train.preprocessing = rotate\n")), ConfigurationError);
  CHECK_THROWS_AS(TrainConfig::from_config(KeyValues::parse("optimizer.lr = 1\n")), ConfigurationError);
}

TEST_CASE("stage ordering and frozen blocks") {
  const Dataset d = tiny_data();
  const TrainConfig c = tiny_config();
  NetworkShape shape = c.shape;
  const NetworkParams fresh = init_network(shape, 0, c.seed);
  CHECK_THROWS_AS(train_stage(1, fresh, d, toy(), c), StagingError);
  CHECK_THROWS_AS(train_stage(2, fresh, d, toy(), c), StagingError);

  const StageResult base = train_stage(0, fresh, d, toy(), c);
  CHECK(base.params.completed_stages == 1);
  const StageResult cascade = train_stage(1, base.params, d, toy(), c);
  CHECK(cascade.params.psi.size() == 2);
  const auto before = base.params.blocks();
  const auto after = cascade.params.blocks();
  for (std::size_t b = 0; b < before.size(); ++b) {
    for (std::size_t k = 0; k < before[b]->layers.size(); ++k) {
      CHECK((before[b]->layers[k].weight.data() == after[b]->layers[k].weight.data()).all());
      CHECK((before[b]->layers[k].bias.data() == after[b]->layers[k].bias.data()).all());
    }
  }
  // Step 0 validation makes the best cascade never worse than its start.
  CHECK(cascade.best_validation_loss <= cascade.log.front().validation_loss);
}

TEST_CASE("training is deterministic and logs finite non-negative components") {
  const Dataset d = tiny_data();
  TrainConfig c = tiny_config();
  c.missing_rate = 0.2;
  std::vector<std::string> lines;
  TrainingHooks hooks;
  hooks.on_row = [&](const MetricsRow& r) { lines.push_back(metrics_line(r, {})); };
  const TrainingRun a = train(d, toy(), c, hooks);
  const TrainingRun b = train(d, toy(), c);
  const auto pa = a.params.blocks(), pb = b.params.blocks();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t k = 0; k < pa[i]->layers.size(); ++k) {
      CHECK((pa[i]->layers[k].weight.data() == pb[i]->layers[k].weight.data()).all());
    }
  }
  CHECK(lines.size() == 8);
  for (const auto& stage : a.stages) {
    for (const auto& row : stage.log) {
      if (row.step == 0) continue;
      for (double w : row.weighted) {
        CHECK(std::isfinite(w));
        CHECK(w >= 0.0);
      }
    }
  }
  // The cascade loss has no denoising term.
  CHECK(a.stages[1].log.back().weighted[0] == 0.0);
}

TEST_CASE("procrustes mode output is invariant to a global rigid motion") {
  Dataset d = tiny_data(16);
  TrainConfig c = tiny_config();
  c.cascades = 0;
  c.max_steps = c.stage_steps = 2;
  c.preprocessing = Preprocessing::kTranslateProcrustes;
  Dataset moved = d;
  std::mt19937_64 rng(4);
  const Eigen::Matrix3d r = random_rotation(rng);
  for (Index f = 0; f < d.size(); ++f) {
    moved.coordinates.row(f) = flatten((d.landmarks(f) * r.transpose()).rowwise() + Eigen::RowVector3d(2, 0, -1));
  }
  const TrainingRun a = train(d, toy(), c);
  const TrainingRun b = train(moved, toy(), c);
  for (std::size_t k = 0; k < a.params.psi[0].layers.size(); ++k) {
    CHECK((a.params.psi[0].layers[k].weight.data() - b.params.psi[0].layers[k].weight.data()).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("column-mean baseline is exact on rigidly shifted copies of one frame") {
  Dataset d = tiny_data(16);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1, 1);
  for (Index r = 0; r < d.size(); ++r) {
    const Eigen::RowVector3d shift(u(rng), u(rng), u(rng));
    for (Index i = 0; i < d.landmark_count(); ++i) {
      d.coordinates.row(r).segment<3>(3 * i) = d.coordinates.row(0).segment<3>(3 * i) + shift;
    }
  }
  TrainConfig c = tiny_config();
  NetworkShape shape = c.shape;
  shape.landmarks = d.landmark_count();
  const NetworkParams p = init_network(shape, 0, 3);
  const RecoveryErrors e = masked_recovery_errors(p, d, d, 0.3, 5);
  CHECK(e.masked == 16 * static_cast<Index>(std::floor(0.3 * static_cast<double>(d.landmark_count()))));
  CHECK(e.column_mean < 1e-12);
  CHECK(e.denoiser > 0.0);
  CHECK(masked_recovery_errors(p, d, d, 0.0, 5).masked == 0);
}

TEST_CASE("denoiser training touches only the autoencoder and is deterministic") {
  const Dataset d = tiny_data();
  TrainConfig c = tiny_config();
  c.stage_steps = 5;
  c.missing_rate = 0.2;
  const NetworkParams a = train_denoiser(d, c);
  const NetworkParams b = train_denoiser(d, c);
  NetworkShape shape = c.shape;
  shape.landmarks = d.landmark_count();
  const NetworkParams init = init_network(shape, 0, c.seed);
  for (std::size_t k = 0; k < a.dae.layers.size(); ++k) {
    CHECK((a.dae.layers[k].weight.data() == b.dae.layers[k].weight.data()).all());
  }
  CHECK_FALSE((a.dae.layers[0].weight.data() == init.dae.layers[0].weight.data()).all());
  CHECK((a.atn.layers[0].weight.data() == init.atn.layers[0].weight.data()).all());
  CHECK((a.psi[0].layers[0].weight.data() == init.psi[0].layers[0].weight.data()).all());
}
