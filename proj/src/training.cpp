#include "sparsebody/training.hpp"

#include "sparsebody/errors.hpp"
#include "sparsebody/random.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace sparsebody {

using ad::Tensor;

namespace {

constexpr std::uint64_t kBatchStream = 0xBA;
constexpr std::uint64_t kAugmentStream = 0xA6;
constexpr std::uint64_t kSplitStream = 0x5B;
constexpr std::uint64_t kBoundsSeed = 0x5EED;
constexpr int kBoundSamples = 20000;

std::string join(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<Index> sizes_from(const KeyValues& kv, const std::string& key, const std::vector<Index>& fallback) {
  if (!kv.has(key)) return fallback;
  std::vector<Index> out;
  for (double d : kv.get_doubles(key)) {
    if (d < 1 || d != std::floor(d)) throw ConfigurationError(key + ": layer widths must be positive integers");
    out.push_back(static_cast<Index>(d));
  }
  return out;
}

std::string format(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// Unique global step id for RNG streams.
std::uint64_t step_id(Index stage, Index step) {
  return (static_cast<std::uint64_t>(stage) << 32) | static_cast<std::uint64_t>(step);
}

// Replaces every parameter of a trainable block by a tape variable.
std::map<std::string, Tensor> bind_trainable(NetworkParams& live, ad::Tape& tape) {
  std::map<std::string, Tensor> vars;
  for (Block* b : live.blocks()) {
    if (!b->trainable) continue;
    for (std::size_t k = 0; k < b->layers.size(); ++k) {
      const std::string prefix = b->name + "/layer" + std::to_string(k);
      b->layers[k].weight = tape.variable(b->layers[k].weight);
      b->layers[k].bias = tape.variable(b->layers[k].bias);
      vars[prefix + "/weight"] = b->layers[k].weight;
      vars[prefix + "/bias"] = b->layers[k].bias;
    }
  }
  return vars;
}

// Subtracts each row's valid-landmark mean from the valid entries of both
// `coordinates` and `targets`, keeping them in one frame.
void recenter(RowMatrixXd& coordinates, const RowMatrixXd& mask, RowMatrixXd& targets, const RowMatrixXd& target_mask) {
  const Index l = mask.cols();
  for (Index r = 0; r < coordinates.rows(); ++r) {
    const double count = mask.row(r).sum();
    if (count == 0) continue;
    Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
    for (Index i = 0; i < l; ++i) mean += mask(r, i) * coordinates.row(r).segment<3>(3 * i);
    mean /= count;
    for (Index i = 0; i < l; ++i) {
      if (mask(r, i) != 0) coordinates.row(r).segment<3>(3 * i) -= mean;
      if (target_mask(r, i) != 0) targets.row(r).segment<3>(3 * i) -= mean;
    }
  }
}

std::array<double, 6> weighted(const LossComponents& c, const LossWeights& w, Index stage) {
  return {stage == 0 ? w.dae * c.dae.item() : 0.0,         w.beta * c.beta.item(),       w.phi * c.phi.item(),
          w.joints * c.joints.item(),   w.surface * c.surface.item(), w.unpose * c.unpose.item()};
}

}  // namespace

std::string to_string(Preprocessing p) { return p == Preprocessing::kTranslate ? "translate" : "procrustes"; }

Preprocessing parse_preprocessing(const std::string& s) {
  if (s == "translate") return Preprocessing::kTranslate;
  if (s == "procrustes" || s == "translate+procrustes") return Preprocessing::kTranslateProcrustes;
  throw ConfigurationError("unknown preprocessing mode '" + s + "' (translate or procrustes)");
}

TrainConfig TrainConfig::from_config(const KeyValues& kv) {
  const auto unknown = kv.unknown_keys({"train.", "net.", "lambda.", "bounds."});
  if (!unknown.empty()) throw ConfigurationError("unknown config key " + unknown.front());
  TrainConfig c;
  c.learning_rate = kv.get_double("train.learning_rate", c.learning_rate);
  c.batch_size = kv.get_int("train.batch_size", c.batch_size);
  c.keep = kv.get_double("train.keep", c.keep);
  c.max_steps = kv.get_int("train.max_steps", c.max_steps);
  c.stage_steps = kv.get_int("train.stage_steps", c.stage_steps);
  c.cascades = kv.get_int("train.cascades", c.cascades);
  c.missing_rate = kv.get_double("train.missing_rate", c.missing_rate);
  c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<long long>(c.seed)));
  c.preprocessing = parse_preprocessing(kv.get_string("train.preprocessing", to_string(c.preprocessing)));
  c.validation_fraction = kv.get_double("train.validation_fraction", c.validation_fraction);
  c.validation_every = kv.get_int("train.validation_every", c.validation_every);
  c.validation_frames = kv.get_int("train.validation_frames", c.validation_frames);
  c.inflation = kv.get_double("train.inflation", c.inflation);
  const std::string assignment = kv.get_string("train.assignment", "nearest");
  if (assignment == "nearest") {
    c.assignment = SurfaceAssignment::kNearestVertex;
  } else if (assignment == "per_coordinate") {
    c.assignment = SurfaceAssignment::kPerCoordinate;
  } else {
    throw ConfigurationError("train.assignment must be nearest or per_coordinate");
  }
  c.hard_assignment = kv.get_bool("train.hard_assignment", c.hard_assignment);
  c.shape.dae_hidden = sizes_from(kv, "net.dae_hidden", c.shape.dae_hidden);
  c.shape.atn_hidden = sizes_from(kv, "net.atn_hidden", c.shape.atn_hidden);
  c.shape.psi_hidden = sizes_from(kv, "net.psi_hidden", c.shape.psi_hidden);
  c.weights = LossWeights::from_config(kv);
  if (kv.has("bounds.0.lower")) {
    Index joints = 0;
    while (kv.has("bounds." + std::to_string(joints) + ".lower")) ++joints;
    c.bounds = QuaternionBounds::from_config(kv, joints);
  }
  c.validate();
  return c;
}

KeyValues TrainConfig::to_config() const {
  KeyValues kv;
  kv.set("train.learning_rate", format(learning_rate));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.keep", format(keep));
  kv.set("train.max_steps", std::to_string(max_steps));
  kv.set("train.stage_steps", std::to_string(stage_steps));
  kv.set("train.cascades", std::to_string(cascades));
  kv.set("train.missing_rate", format(missing_rate));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.preprocessing", to_string(preprocessing));
  kv.set("train.validation_fraction", format(validation_fraction));
  kv.set("train.validation_every", std::to_string(validation_every));
  kv.set("train.validation_frames", std::to_string(validation_frames));
  kv.set("train.inflation", format(inflation));
  kv.set("train.assignment", assignment == SurfaceAssignment::kNearestVertex ? "nearest" : "per_coordinate");
  kv.set("train.hard_assignment", hard_assignment ? "true" : "false");
  kv.set("net.dae_hidden", join(shape.dae_hidden));
  kv.set("net.atn_hidden", join(shape.atn_hidden));
  kv.set("net.psi_hidden", join(shape.psi_hidden));
  kv.set("lambda.dae", format(weights.dae));
  kv.set("lambda.beta", format(weights.beta));
  kv.set("lambda.phi", format(weights.phi));
  kv.set("lambda.joints", format(weights.joints));
  kv.set("lambda.surface", format(weights.surface));
  kv.set("lambda.unpose", format(weights.unpose));
  if (bounds) bounds->write_config(kv);
  return kv;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigurationError("train.learning_rate must be positive");
  if (batch_size < 1) throw ConfigurationError("train.batch_size must be positive");
  if (!(keep > 0 && keep <= 1)) throw ConfigurationError("train.keep must be in (0, 1]");
  if (max_steps < 0 || stage_steps < 0) throw ConfigurationError("step counts must be non-negative");
  if (cascades < 0) throw ConfigurationError("train.cascades must be non-negative");
  if (!(missing_rate >= 0 && missing_rate < 1)) throw ConfigurationError("train.missing_rate must be in [0, 1)");
  if (!(validation_fraction >= 0 && validation_fraction < 1)) {
    throw ConfigurationError("train.validation_fraction must be in [0, 1)");
  }
  if (validation_every < 1 || validation_frames < 1) throw ConfigurationError("validation settings must be positive");
  if (!(inflation >= 0)) throw ConfigurationError("train.inflation must be non-negative");
  if (bounds) bounds->validate();
}

Points3 RigidTransform::apply(const Points3& points) const {
  return (points * rotation.transpose()).rowwise() + translation.transpose();
}

Points3 RigidTransform::invert(const Points3& points) const {
  return (points.rowwise() - translation.transpose()) * rotation;
}

RigidTransform RigidTransform::after(const RigidTransform& first) const {
  return {rotation * first.rotation, rotation * first.translation + translation};
}

Preprocessed preprocess_translate(const RowMatrixXd& coordinates, const RowMatrixXd& mask) {
  const Index l = mask.cols();
  Preprocessed out{coordinates, mask, {}};
  for (Index f = 0; f < coordinates.rows(); ++f) {
    const double count = mask.row(f).sum();
    if (count == 0) throw DataError("frame " + std::to_string(f) + " has no valid landmarks");
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (Index i = 0; i < l; ++i) mean += mask(f, i) * coordinates.row(f).segment<3>(3 * i).transpose();
    mean /= count;
    for (Index i = 0; i < l; ++i) {
      if (mask(f, i) != 0) out.coordinates.row(f).segment<3>(3 * i) -= mean.transpose();
    }
    RigidTransform t;
    t.translation = -mean;
    out.transforms.push_back(t);
  }
  return out;
}

RigidTransform procrustes_fit(const Points3& points, const Eigen::VectorXd& valid, const Points3& reference) {
  std::vector<Index> rows;
  for (Index i = 0; i < valid.size(); ++i) {
    if (valid[i] != 0) rows.push_back(i);
  }
  if (rows.size() < 3) {
    throw AlignmentError("rigid alignment needs at least 3 valid landmarks, got " + std::to_string(rows.size()));
  }
  const Points3 p = points(rows, Eigen::all), q = reference(rows, Eigen::all);
  const Eigen::RowVector3d pc = p.colwise().mean(), qc = q.colwise().mean();
  const Points3 x = p.rowwise() - pc, y = q.rowwise() - qc;
  for (const Points3* set : {&x, &y}) {
    const Eigen::Vector3d s = Eigen::JacobiSVD<Points3>(*set).singularValues();
    if (s[1] <= 1e-9 * std::max(s[0], 1e-300)) throw AlignmentError("rigid alignment: landmarks are collinear");
  }
  const Eigen::Matrix3d h = x.transpose() * y;
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  t.translation = qc.transpose() - t.rotation * pc.transpose();
  return t;
}

Preprocessed preprocess_procrustes(const RowMatrixXd& coordinates, const RowMatrixXd& mask, const Points3& reference) {
  const Index l = mask.cols();
  if (reference.rows() != l) throw DimensionError("procrustes reference must have one row per landmark");
  Preprocessed out{RowMatrixXd::Zero(coordinates.rows(), coordinates.cols()), mask, {}};
  for (Index f = 0; f < coordinates.rows(); ++f) {
    const Points3 pts = Eigen::Map<const Points3>(coordinates.row(f).data(), l, 3);
    RigidTransform t;
    try {
      t = procrustes_fit(pts, mask.row(f).transpose(), reference);
    } catch (const AlignmentError& e) {
      throw AlignmentError("frame " + std::to_string(f) + ": " + e.what());
    }
    const Points3 moved = t.apply(pts);
    for (Index i = 0; i < l; ++i) {
      if (mask(f, i) != 0) out.coordinates.row(f).segment<3>(3 * i) = moved.row(i);
    }
    out.transforms.push_back(t);
  }
  return out;
}

Preprocessed preprocess(const Dataset& data, Preprocessing mode, const Points3& reference) {
  if (mode == Preprocessing::kTranslate) return preprocess_translate(data.coordinates, data.mask);
  const Preprocessed aligned = preprocess_procrustes(data.coordinates, data.mask, reference);
  Preprocessed out = preprocess_translate(aligned.coordinates, aligned.mask);
  for (std::size_t f = 0; f < out.transforms.size(); ++f) out.transforms[f] = out.transforms[f].after(aligned.transforms[f]);
  return out;
}

Points3 procrustes_reference(const BodyModel& model) {
  const Points3 ref = model.template_vertices(model.landmarks.medians(), Eigen::all);
  return ref.rowwise() - ref.colwise().mean();
}

void augment_missing(RowMatrixXd& coordinates, RowMatrixXd& mask, double tau, std::mt19937_64& rng) {
  if (!(tau >= 0 && tau < 1)) throw ConfigurationError("missing rate must be in [0, 1)");
  if (tau == 0) return;
  for (Index r = 0; r < mask.rows(); ++r) {
    std::vector<Index> valid;
    for (Index i = 0; i < mask.cols(); ++i) {
      if (mask(r, i) != 0) valid.push_back(i);
    }
    const auto drop = static_cast<std::size_t>(std::floor(tau * static_cast<double>(valid.size())));
    for (std::size_t k = 0; k < drop; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, valid.size() - 1);
      std::swap(valid[k], valid[pick(rng)]);
      mask(r, valid[k]) = 0.0;
      coordinates.row(r).segment<3>(3 * valid[k]).setZero();
    }
  }
}

FrameBatch make_batch(const RowMatrixXd& coordinates, const RowMatrixXd& mask) {
  const Index b = coordinates.rows(), l = mask.cols();
  ad::Array m(b * l * 3);
  for (Index r = 0; r < b; ++r) {
    for (Index i = 0; i < l; ++i) m.segment<3>((r * l + i) * 3).setConstant(mask(r, i));
  }
  return {Tensor({b, l, 3}, coordinates.reshaped<Eigen::RowMajor>().array()), Tensor({b, l, 3}, std::move(m))};
}

void adam_update(ad::Array& x, const ad::Array& grad, ad::Array& m, ad::Array& v, long long step, double lr,
                 const AdamSettings& s) {
  m = s.beta1 * m + (1 - s.beta1) * grad;
  v = s.beta2 * v + (1 - s.beta2) * grad.square();
  const double c1 = 1 - std::pow(s.beta1, static_cast<double>(step));
  const double c2 = 1 - std::pow(s.beta2, static_cast<double>(step));
  x -= lr * (m / c1) / ((v / c2).sqrt() + s.epsilon);
}

void adam_step(NetworkParams& params, const std::map<std::string, ad::Array>& grads, OptimizerState& state, double lr,
               const AdamSettings& s) {
  for (const auto& [name, g] : grads) {
    if (!g.allFinite()) throw NumericError("non-finite gradient for parameter " + name);
  }
  ++state.step;
  for (Block* b : params.blocks()) {
    if (!b->trainable) continue;
    for (std::size_t k = 0; k < b->layers.size(); ++k) {
      for (const char* part : {"weight", "bias"}) {
        const std::string name = b->name + "/layer" + std::to_string(k) + "/" + part;
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        Tensor& t = part[0] == 'w' ? b->layers[k].weight : b->layers[k].bias;
        if (it->second.size() != t.size()) throw DimensionError("gradient of " + name + " has the wrong size");
        auto& m = state.first_moment[name];
        auto& v = state.second_moment[name];
        if (m.size() == 0) m = v = ad::Array::Zero(t.size());
        ad::Array x = t.data();
        adam_update(x, it->second, m, v, state.step, lr, s);
        t = Tensor(t.shape(), std::move(x));
      }
    }
  }
}

LossContext::LossContext(const BodyModel& body, const TrainConfig& config)
    : model(inflate_template(body, config.inflation)),
      tensors(model),
      correction(model),
      patches(patch_lists(model.landmarks, config.hard_assignment)),
      weights(config.weights),
      assignment(config.assignment) {
  if (config.bounds) {
    bounds = *config.bounds;
  } else if (model.joint_count() == static_cast<Index>(toy_pose_limits().size())) {
    bounds = bounds_from_euler(toy_pose_limits(), kBoundSamples, kBoundsSeed);
  } else {
    throw ConfigurationError("pose bounds are required for a model with " + std::to_string(model.joint_count()) +
                             " joints");
  }
  if (bounds.lower.rows() != model.joint_count()) throw ConfigurationError("pose bounds do not match the model");
}

StepLosses compute_losses(const NetworkParams& params, const FrameBatch& batch, const Tensor& clean_mask,
                          const Tensor& clean_landmarks, Index stage, const LossContext& context,
                          const DropoutContext& dropout) {
  StepLosses s;
  s.pipeline = pipeline_forward(params, batch.landmarks, batch.mask, stage, dropout);
  const PipelineOutput& p = s.pipeline;
  const PoseShapeTensors& ps = p.stages.back();
  const TapeBody body = tape_forward(ps.quaternions, ps.betas, context.tensors);
  const Tensor joints_out = subtract_root(body.joints, body.joints);
  const Tensor vertices_out = subtract_root(body.vertices, body.joints);
  const Tensor rest_joints = subtract_root(body.rest_joints, body.rest_joints);
  const Tensor rest_vertices = subtract_root(body.rest_vertices, body.rest_joints);

  LossComponents& c = s.components;
  c.dae = loss_dae(clean_landmarks, p.reconstruction, clean_mask);
  c.beta = loss_beta(ps.betas);
  c.phi = loss_phi(ps.quaternions, context.bounds);
  c.joints = loss_joints(p.centered_joints, joints_out);
  c.surface = loss_surface(p.centered_landmarks, vertices_out, context.patches, context.assignment);
  c.unpose = loss_unpose(body.rotations, p.centered_joints, p.centered_landmarks, rest_joints, rest_vertices,
                         context.correction, context.model.parents, context.patches)
                 .total;
  s.total = combined_loss(stage == 0 ? LossStage::kL1 : LossStage::kL2, c, context.weights);
  return s;
}

Split split_frames(const Dataset& data, double validation_fraction, std::uint64_t seed) {
  Split s;
  auto sequences = data.sequences();
  if (validation_fraction <= 0 || data.size() < 2) {
    s.train.resize(static_cast<std::size_t>(data.size()));
    std::iota(s.train.begin(), s.train.end(), 0);
    return s;
  }
  auto rng = stream_rng(seed, 0, kSplitStream);
  if (sequences.size() < 2) {
    std::vector<Index> rows = sequences.front().second;
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(rows.size()))));
    s.train.assign(rows.begin(), rows.end() - static_cast<std::ptrdiff_t>(n_val));
    s.validation.assign(rows.end() - static_cast<std::ptrdiff_t>(n_val), rows.end());
    return s;
  }
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t k = order.size() - 1; k > 0; --k) {
    std::swap(order[k], order[std::uniform_int_distribution<std::size_t>(0, k)(rng)]);
  }
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(order.size()))), 1, order.size() - 1);
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < n_val ? s.validation : s.train;
    const auto& rows = sequences[order[k]].second;
    dst.insert(dst.end(), rows.begin(), rows.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

std::string metrics_header(const std::vector<std::string>& monitor_keys) {
  std::string h = "stage,step,dae,beta,phi,joints,surface,unpose,total,validation_loss";
  for (const auto& k : monitor_keys) h += "," + k;
  return h;
}

std::string metrics_line(const MetricsRow& row, const std::vector<std::string>& monitor_keys) {
  auto cell = [](double v) { return std::isnan(v) ? std::string("NA") : format(v); };
  std::string line = std::to_string(row.stage) + "," + std::to_string(row.step);
  for (double w : row.weighted) line += "," + cell(w);
  line += "," + cell(row.total) + "," + cell(row.validation_loss);
  for (const auto& k : monitor_keys) {
    auto it = row.monitor.find(k);
    line += "," + cell(it == row.monitor.end() ? std::nan("") : it->second);
  }
  return line;
}

double validation_loss(const NetworkParams& params, const Preprocessed& frames, const std::vector<Index>& rows,
                       Index stage, const LossContext& context, Index batch_size) {
  double total = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(rows.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<Index> chunk(rows.begin() + static_cast<std::ptrdiff_t>(start), rows.begin() + static_cast<std::ptrdiff_t>(end));
    const FrameBatch batch = make_batch(frames.coordinates(chunk, Eigen::all), frames.mask(chunk, Eigen::all));
    const StepLosses s = compute_losses(params, batch, batch.mask, batch.landmarks, stage, context, DropoutContext{});
    total += s.total.item() * static_cast<double>(chunk.size());
  }
  return rows.empty() ? 0.0 : total / static_cast<double>(rows.size());
}

StageResult train_stage(Index stage, NetworkParams params, const Dataset& data, const BodyModel& model,
                        const TrainConfig& config, const TrainingHooks& hooks) {
  config.validate();
  data.validate();
  if (stage < 0 || stage > config.cascades) throw StagingError("stage " + std::to_string(stage) + " is not configured");
  if (params.completed_stages < stage) {
    throw StagingError("stage " + std::to_string(stage) + " needs a checkpoint that finished stage " +
                       std::to_string(stage - 1));
  }
  if (params.shape.landmarks != data.landmark_count() || params.shape.joints != model.joint_count()) {
    throw ConfigurationError("network sizes do not match the data and model");
  }
  if (stage > 0 && static_cast<Index>(params.psi.size()) == stage) add_cascade(params, config.seed);
  for (Block* b : params.blocks()) b->trainable = false;
  if (stage == 0) {
    params.dae.trainable = params.atn.trainable = params.psi[0].trainable = true;
  } else {
    params.psi[static_cast<std::size_t>(stage)].trainable = true;
  }

  const LossContext context(model, config);
  const Preprocessed frames = preprocess(data, config.preprocessing, procrustes_reference(model));
  StageResult result;
  result.split = split_frames(data, config.validation_fraction, config.seed);
  const std::vector<Index>& train_rows = result.split.train;
  std::vector<Index> val_rows = result.split.validation;
  if (static_cast<Index>(val_rows.size()) > config.validation_frames) val_rows.resize(static_cast<std::size_t>(config.validation_frames));
  if (train_rows.empty()) throw DataError("no training frames");

  const Index steps = std::min(config.stage_steps, std::max<Index>(0, config.max_steps - stage * config.stage_steps));
  const Index batch = std::min<Index>(config.batch_size, static_cast<Index>(train_rows.size()));
  OptimizerState optimizer;

  auto validate_now = [&](MetricsRow& row) {
    if (val_rows.empty()) return;
    row.validation_loss = validation_loss(params, frames, val_rows, stage, context, config.batch_size);
    if (hooks.monitor) row.monitor = hooks.monitor(params, val_rows);
    if (row.validation_loss < result.best_validation_loss) {
      result.best_validation_loss = row.validation_loss;
      result.best_step = row.step;
      result.params = params;
    }
  };

  result.params = params;
  result.best_validation_loss = std::numeric_limits<double>::infinity();
  {
    MetricsRow row;
    row.stage = stage;
    row.total = std::nan("");
    row.weighted.fill(std::nan(""));
    validate_now(row);
    result.log.push_back(row);
    if (hooks.on_row) hooks.on_row(row);
  }

  double tail_loss = 0.0;
  Index tail_count = 0;
  const Index tail_start = steps - std::max<Index>(1, steps / 10);
  std::vector<Index> pool = train_rows;
  for (Index step = 1; step <= steps; ++step) {
    const std::uint64_t id = step_id(stage, step);
    auto batch_rng = stream_rng(config.seed, id, kBatchStream);
    for (Index k = 0; k < batch; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(k)], pool[pick(batch_rng)]);
    }
    const std::vector<Index> rows(pool.begin(), pool.begin() + batch);
    RowMatrixXd clean = frames.coordinates(rows, Eigen::all);
    const RowMatrixXd clean_mask = frames.mask(rows, Eigen::all);
    RowMatrixXd input = clean, input_mask = clean_mask;
    auto augment_rng = stream_rng(config.seed, id, kAugmentStream);
    augment_missing(input, input_mask, config.missing_rate, augment_rng);
    if (config.missing_rate > 0) recenter(input, input_mask, clean, clean_mask);
    const FrameBatch in = make_batch(input, input_mask);
    const FrameBatch target = make_batch(clean, clean_mask);

    ad::Tape tape;
    NetworkParams live = params;
    const auto vars = bind_trainable(live, tape);
    const DropoutContext dropout{true, config.keep, config.seed, id};
    const StepLosses losses = compute_losses(live, in, target.mask, target.landmarks, stage, context, dropout);
    const ad::Gradients grads = tape.backward(losses.total);
    std::map<std::string, ad::Array> g;
    for (const auto& [name, v] : vars) g[name] = grads[v].data();
    adam_step(params, g, optimizer, config.learning_rate);

    MetricsRow row;
    row.stage = stage;
    row.step = step;
    row.weighted = weighted(losses.components, config.weights, stage);
    row.total = losses.total.item();
    if (step >= tail_start) tail_loss += row.total, ++tail_count;
    if (step % config.validation_every == 0 || step == steps) validate_now(row);
    result.log.push_back(row);
    if (hooks.on_row) hooks.on_row(row);
  }
  if (val_rows.empty()) result.params = params, result.best_step = steps, result.best_validation_loss = std::nan("");
  result.final_training_loss = tail_count ? tail_loss / static_cast<double>(tail_count) : std::nan("");
  result.params.completed_stages = std::max(result.params.completed_stages, stage + 1);
  check_finite(result.params);
  return result;
}

TrainingRun train(const Dataset& data, const BodyModel& model, const TrainConfig& config, const TrainingHooks& hooks,
                  const std::function<void(Index, const StageResult&)>& on_stage) {
  NetworkShape shape = config.shape;
  shape.landmarks = data.landmark_count();
  shape.joints = model.joint_count();
  TrainingRun run;
  run.params = init_network(shape, 0, config.seed);
  for (Index stage = 0; stage <= config.cascades; ++stage) {
    StageResult r = train_stage(stage, run.params, data, model, config, hooks);
    run.params = r.params;
    if (on_stage) on_stage(stage, r);
    run.stages.push_back(std::move(r));
  }
  return run;
}

NetworkParams train_denoiser(const Dataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  NetworkShape shape = config.shape;
  shape.landmarks = data.landmark_count();
  NetworkParams params = init_network(shape, 0, config.seed);
  for (Block* b : params.blocks()) b->trainable = false;
  params.dae.trainable = true;
  const Preprocessed frames = preprocess_translate(data.coordinates, data.mask);
  std::vector<Index> pool(static_cast<std::size_t>(data.size()));
  std::iota(pool.begin(), pool.end(), 0);
  const Index batch = std::min<Index>(config.batch_size, data.size());
  OptimizerState optimizer;
  for (Index step = 1; step <= config.stage_steps; ++step) {
    const std::uint64_t id = step_id(0, step);
    auto batch_rng = stream_rng(config.seed, id, kBatchStream);
    for (Index k = 0; k < batch; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(k)], pool[pick(batch_rng)]);
    }
    const std::vector<Index> rows(pool.begin(), pool.begin() + batch);
    RowMatrixXd clean = frames.coordinates(rows, Eigen::all);
    const RowMatrixXd clean_mask = frames.mask(rows, Eigen::all);
    RowMatrixXd input = clean, input_mask = clean_mask;
    auto augment_rng = stream_rng(config.seed, id, kAugmentStream);
    augment_missing(input, input_mask, config.missing_rate, augment_rng);
    recenter(input, input_mask, clean, clean_mask);
    const FrameBatch in = make_batch(input, input_mask);
    const FrameBatch target = make_batch(clean, clean_mask);

    ad::Tape tape;
    NetworkParams live = params;
    const auto vars = bind_trainable(live, tape);
    const Tensor loss = loss_dae(target.landmarks, dae_forward(live.dae, in.landmarks, in.mask, {true, config.keep, config.seed, id}),
                                 target.mask);
    const ad::Gradients grads = tape.backward(loss);
    std::map<std::string, ad::Array> g;
    for (const auto& [name, v] : vars) g[name] = grads[v].data();
    adam_step(params, g, optimizer, config.learning_rate);
  }
  check_finite(params);
  return params;
}

RecoveryErrors masked_recovery_errors(const NetworkParams& params, const Dataset& reference, const Dataset& test,
                                      double tau, std::uint64_t seed) {
  if (reference.landmark_count() != test.landmark_count() || params.shape.landmarks != test.landmark_count()) {
    throw ConfigurationError("recovery: landmark counts differ");
  }
  const Index l = test.landmark_count();
  const Preprocessed ref = preprocess_translate(reference.coordinates, reference.mask);
  Points3 column_mean = Points3::Zero(l, 3);
  for (Index i = 0; i < l; ++i) {
    const double count = ref.mask.col(i).sum();
    if (count == 0) continue;
    for (Index r = 0; r < ref.coordinates.rows(); ++r) {
      if (ref.mask(r, i) != 0) column_mean.row(i) += ref.coordinates.row(r).segment<3>(3 * i);
    }
    column_mean.row(i) /= count;
  }

  const Preprocessed frames = preprocess_translate(test.coordinates, test.mask);
  RowMatrixXd clean = frames.coordinates, input = clean, input_mask = frames.mask;
  auto rng = stream_rng(seed, 0, kAugmentStream);
  augment_missing(input, input_mask, tau, rng);
  recenter(input, input_mask, clean, frames.mask);
  const FrameBatch in = make_batch(input, input_mask);
  const RowMatrixXd recon = dae_forward(params.dae, in.landmarks, in.mask, DropoutContext{}).as_matrix(test.size(), 3 * l);

  RecoveryErrors e;
  for (Index r = 0; r < test.size(); ++r) {
    Eigen::RowVector3d shift = Eigen::RowVector3d::Zero();
    const double kept = input_mask.row(r).sum();
    for (Index i = 0; i < l; ++i) {
      if (input_mask(r, i) != 0) shift += input.row(r).segment<3>(3 * i) - column_mean.row(i);
    }
    if (kept > 0) shift /= kept;
    for (Index i = 0; i < l; ++i) {
      if (frames.mask(r, i) == 0 || input_mask(r, i) != 0) continue;
      const Eigen::RowVector3d truth = clean.row(r).segment<3>(3 * i);
      e.denoiser += (recon.row(r).segment<3>(3 * i) - truth).norm();
      e.column_mean += (column_mean.row(i) + shift - truth).norm();
      ++e.masked;
    }
  }
  if (e.masked > 0) e.denoiser /= static_cast<double>(e.masked), e.column_mean /= static_cast<double>(e.masked);
  return e;
}

}  // namespace sparsebody
