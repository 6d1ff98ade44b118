#include "sparsebody/networks.hpp"

#include "sparsebody/body_model.hpp"
#include "sparsebody/errors.hpp"
#include "sparsebody/random.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace sparsebody {

using ad::Tensor;

namespace {

constexpr std::uint64_t kDaeStream = 1;
constexpr std::uint64_t kAtnStream = 2;
constexpr std::uint64_t kPsiStream = 16;
constexpr std::uint64_t kInitStream = 0xC0FFEE;

Dense xavier_layer(Index in, Index out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  ad::Array w(in * out);
  for (auto& v : w) v = u(rng);
  return {Tensor({in, out}, std::move(w)), Tensor::zeros({out})};
}

Block make_block(std::string name, Index in, const std::vector<Index>& hidden, Index out, std::mt19937_64& rng) {
  Block b;
  b.name = std::move(name);
  Index prev = in;
  for (Index h : hidden) {
    b.layers.push_back(xavier_layer(prev, h, rng));
    prev = h;
  }
  b.layers.push_back(xavier_layer(prev, out, rng));
  return b;
}

Index psi_input(const NetworkShape& s, bool cascade) {
  return 3 * s.joints + 3 * s.landmarks + (cascade ? 4 * s.joints + kShapeCount : 0);
}

std::string join(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<Index> split_sizes(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
  return out;
}

std::vector<Index> layer_sizes(const Block& b) {
  std::vector<Index> sizes = {b.input_size()};
  for (const auto& l : b.layers) sizes.push_back(l.weight.dim(1));
  return sizes;
}

std::vector<Index> hidden_of(const std::vector<Index>& sizes) { return {sizes.begin() + 1, sizes.end() - 1}; }

// [n, m] matrix whose column 0 is all ones: left-multiplying joints by it
// broadcasts the root joint to n rows.
Tensor root_broadcaster(Index rows, Index joints) {
  ad::Array a = ad::Array::Zero(rows * joints);
  for (Index r = 0; r < rows; ++r) a[r * joints] = 1.0;
  return Tensor({rows, joints}, std::move(a));
}

Tensor dropout_mask(Index batch, Index width, const DropoutContext& d, std::uint64_t stream) {
  auto rng = stream_rng(d.seed, d.step, stream);
  std::bernoulli_distribution keep(d.keep);
  ad::Array mask(batch * width);
  for (auto& v : mask) v = keep(rng) ? 1.0 / d.keep : 0.0;
  return Tensor({batch, width}, std::move(mask));
}

}  // namespace

std::vector<Block*> NetworkParams::blocks() {
  std::vector<Block*> out = {&dae, &atn};
  for (auto& p : psi) out.push_back(&p);
  return out;
}

std::vector<const Block*> NetworkParams::blocks() const {
  std::vector<const Block*> out = {&dae, &atn};
  for (const auto& p : psi) out.push_back(&p);
  return out;
}

std::map<std::string, Tensor*> NetworkParams::named_parameters() {
  std::map<std::string, Tensor*> out;
  for (Block* b : blocks()) {
    for (std::size_t k = 0; k < b->layers.size(); ++k) {
      const std::string prefix = b->name + "/layer" + std::to_string(k);
      out[prefix + "/weight"] = &b->layers[k].weight;
      out[prefix + "/bias"] = &b->layers[k].bias;
    }
  }
  return out;
}

NetworkParams init_network(const NetworkShape& shape, Index cascades, std::uint64_t seed) {
  NetworkParams p;
  p.shape = shape;
  auto rng = stream_rng(seed, 0, kInitStream);
  const Index l3 = 3 * shape.landmarks;
  p.dae = make_block("dae", 2 * l3, shape.dae_hidden, l3, rng);
  p.atn = make_block("atn", l3, shape.atn_hidden, shape.joints * shape.landmarks, rng);

  Block psi0 = make_block("psi0", psi_input(shape, false), shape.psi_hidden, 4 * shape.joints + kShapeCount, rng);
  Dense& out = psi0.layers.back();
  out.weight = ad::scale(out.weight, 0.01);
  ad::Array bias = ad::Array::Zero(out.bias.size());
  for (Index j = 0; j < shape.joints; ++j) bias[4 * j] = 1.0;
  out.bias = Tensor(out.bias.shape(), std::move(bias));
  p.psi.push_back(std::move(psi0));
  for (Index c = 0; c < cascades; ++c) add_cascade(p, seed);
  return p;
}

void add_cascade(NetworkParams& params, std::uint64_t seed) {
  const auto index = params.psi.size();
  auto rng = stream_rng(seed, index, kInitStream);
  Block b = make_block("psi" + std::to_string(index), psi_input(params.shape, true), params.shape.psi_hidden,
                       4 * params.shape.joints + kShapeCount, rng);
  b.layers.back().weight = Tensor::zeros(b.layers.back().weight.shape());
  params.psi.push_back(std::move(b));
}

Tensor block_forward(const Block& block, const Tensor& x, const DropoutContext& dropout, std::uint64_t stream) {
  if (x.rank() != 2 || x.dim(1) != block.input_size()) {
    throw DimensionError(block.name + ": expected input [B, " + std::to_string(block.input_size()) + "], got " +
                         ad::shape_string(x.shape()));
  }
  Tensor h = x;
  for (std::size_t k = 0; k < block.layers.size(); ++k) {
    h = ad::add_bias(ad::matmul(h, block.layers[k].weight), block.layers[k].bias);
    const bool hidden = k + 1 < block.layers.size();
    if (hidden) {
      h = ad::relu(h);
      if (dropout.train && dropout.keep < 1.0) {
        h = ad::dropout(h, dropout_mask(h.dim(0), h.dim(1), dropout, stream * 64 + k));
      }
    }
    if (!h.data().allFinite()) {
      throw NumericError(block.name + "/layer" + std::to_string(k) + ": non-finite activation");
    }
  }
  return h;
}

Tensor dae_forward(const Block& dae, const Tensor& landmarks, const Tensor& mask, const DropoutContext& dropout) {
  const Index b = landmarks.dim(0);
  const Index n = landmarks.size() / b;
  const Tensor x = ad::concatenate({ad::reshape(landmarks, {b, n}), ad::reshape(mask, {b, n})}, 1);
  const Tensor fill(mask.shape(), 1.0 - mask.data());
  const Tensor h = ad::reshape(block_forward(dae, x, dropout, kDaeStream), landmarks.shape());
  return ad::add(ad::mul(mask, landmarks), ad::mul(fill, h));
}

Tensor merge_reconstruction(const Tensor& landmarks, const Tensor& mask, const Tensor& reconstruction) {
  const Tensor inverse(mask.shape(), 1.0 - mask.data());
  return ad::add(ad::mul(mask, landmarks), ad::mul(inverse, reconstruction));
}

AttentionOutput atn_forward(const Block& atn, const Tensor& landmarks, Index joints, const DropoutContext& dropout) {
  const Index b = landmarks.dim(0);
  const Index l = landmarks.dim(1);
  AttentionOutput out;
  out.logits = ad::reshape(block_forward(atn, ad::reshape(landmarks, {b, 3 * l}), dropout, kAtnStream), {b, joints, l});
  out.weights = ad::softmax(out.logits, 2);
  out.joints = ad::compose(out.weights, landmarks);
  return out;
}

Tensor subtract_root(const Tensor& points, const Tensor& joints) {
  return ad::sub(points, ad::matmul(root_broadcaster(points.dim(1), joints.dim(1)), joints));
}

PoseShapeTensors psi_forward(const Block& psi, const Tensor& joints, const Tensor& landmarks,
                             const PoseShapeTensors* previous, Index joint_count, const DropoutContext& dropout,
                             std::uint64_t stream) {
  const Index b = joints.dim(0);
  std::vector<Tensor> inputs = {ad::reshape(joints, {b, joints.size() / b}),
                                ad::reshape(landmarks, {b, landmarks.size() / b})};
  if (previous) inputs.push_back(previous->flat);
  Tensor out = block_forward(psi, ad::concatenate(std::span<const Tensor>(inputs), 1), dropout, kPsiStream + stream);
  if (previous) out = ad::add(out, previous->flat);
  std::vector<Index> qi(static_cast<std::size_t>(4 * joint_count));
  std::iota(qi.begin(), qi.end(), 0);
  std::vector<Index> bi(kShapeCount);
  std::iota(bi.begin(), bi.end(), 4 * joint_count);
  return {ad::reshape(ad::gather(out, 1, qi), {b, joint_count, 4}), ad::gather(out, 1, bi), out};
}

PipelineOutput pipeline_forward(const NetworkParams& params, const Tensor& landmarks, const Tensor& mask,
                                Index last_stage, const DropoutContext& dropout) {
  if (last_stage < 0 || last_stage >= static_cast<Index>(params.psi.size())) {
    throw StagingError("pipeline has no regressor " + std::to_string(last_stage));
  }
  const Index m = params.shape.joints;
  auto mode = [&](const Block& b) {
    DropoutContext d = dropout;
    d.train = dropout.train && b.trainable;
    return d;
  };
  PipelineOutput out;
  out.reconstruction = dae_forward(params.dae, landmarks, mask, mode(params.dae));
  out.landmarks = merge_reconstruction(landmarks, mask, out.reconstruction);
  out.attention = atn_forward(params.atn, out.landmarks, m, mode(params.atn));
  out.centered_joints = subtract_root(out.attention.joints, out.attention.joints);
  out.centered_landmarks = subtract_root(out.landmarks, out.attention.joints);
  for (Index i = 0; i <= last_stage; ++i) {
    const Block& psi = params.psi[static_cast<std::size_t>(i)];
    const PoseShapeTensors* prev = i == 0 ? nullptr : &out.stages.back();
    out.stages.push_back(psi_forward(psi, out.centered_joints, out.centered_landmarks, prev, m, mode(psi),
                                     static_cast<std::uint64_t>(i)));
  }
  return out;
}

Archive checkpoint_archive(const NetworkParams& params, const std::map<std::string, std::string>& extra) {
  Archive a;
  std::ostringstream manifest;
  manifest << "landmarks=" << params.shape.landmarks << '\n' << "joints=" << params.shape.joints << '\n';
  manifest << "cascades=" << params.psi.size() - 1 << '\n';
  manifest << "completed_stages=" << params.completed_stages << '\n';
  for (const Block* b : params.blocks()) {
    manifest << b->name << ".sizes=" << join(layer_sizes(*b)) << '\n';
    manifest << b->name << ".trainable=" << (b->trainable ? 1 : 0) << '\n';
    for (std::size_t k = 0; k < b->layers.size(); ++k) {
      const auto& layer = b->layers[k];
      const std::string prefix = b->name + "/layer" + std::to_string(k);
      const auto& w = layer.weight.data();
      a.put(prefix + "/weight", {layer.weight.dim(0), layer.weight.dim(1)}, {w.begin(), w.end()});
      a.put(prefix + "/bias", {layer.bias.dim(0)}, {layer.bias.data().begin(), layer.bias.data().end()});
    }
  }
  for (const auto& [k, v] : extra) manifest << k << '=' << v << '\n';
  a.put_text("manifest", manifest.str());
  return a;
}

std::map<std::string, std::string> manifest_of(const Archive& archive) {
  std::map<std::string, std::string> out;
  std::stringstream ss(archive.text("manifest"));
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

NetworkParams network_from_archive(const Archive& archive) {
  const auto manifest = manifest_of(archive);
  auto get = [&](const std::string& key) {
    auto it = manifest.find(key);
    if (it == manifest.end()) throw DataError("checkpoint manifest lacks " + key);
    return it->second;
  };
  NetworkParams p;
  p.shape.landmarks = std::stoll(get("landmarks"));
  p.shape.joints = std::stoll(get("joints"));
  p.shape.dae_hidden = hidden_of(split_sizes(get("dae.sizes")));
  p.shape.atn_hidden = hidden_of(split_sizes(get("atn.sizes")));
  p.shape.psi_hidden = hidden_of(split_sizes(get("psi0.sizes")));
  const Index cascades = std::stoll(get("cascades"));
  if (manifest.count("completed_stages")) p.completed_stages = std::stoll(get("completed_stages"));

  auto load_block = [&](const std::string& name) {
    Block b;
    b.name = name;
    b.trainable = get(name + ".trainable") == "1";
    const auto sizes = split_sizes(get(name + ".sizes"));
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
      const std::string prefix = name + "/layer" + std::to_string(k);
      const auto& w = archive.doubles(prefix + "/weight");
      const auto& bias = archive.doubles(prefix + "/bias");
      if (static_cast<Index>(w.size()) != sizes[k] * sizes[k + 1] || static_cast<Index>(bias.size()) != sizes[k + 1]) {
        throw DataError("checkpoint layer " + prefix + " does not match the manifest");
      }
      b.layers.push_back({Tensor({sizes[k], sizes[k + 1]}, Eigen::Map<const ad::Array>(w.data(), static_cast<Index>(w.size()))),
                          Tensor({sizes[k + 1]}, Eigen::Map<const ad::Array>(bias.data(), sizes[k + 1]))});
    }
    return b;
  };
  p.dae = load_block("dae");
  p.atn = load_block("atn");
  for (Index i = 0; i <= cascades; ++i) p.psi.push_back(load_block("psi" + std::to_string(i)));
  check_finite(p);
  return p;
}

void check_finite(const NetworkParams& params) {
  for (const Block* b : params.blocks()) {
    for (std::size_t k = 0; k < b->layers.size(); ++k) {
      if (!b->layers[k].weight.data().allFinite() || !b->layers[k].bias.data().allFinite()) {
        throw NumericError("non-finite parameter in " + b->name + "/layer" + std::to_string(k));
      }
    }
  }
}

}  // namespace sparsebody
