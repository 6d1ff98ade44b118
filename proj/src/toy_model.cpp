#include "sparsebody/toy_model.hpp"

#include "sparsebody/errors.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <map>
#include <numbers>

namespace sparsebody {
namespace {

using Vec3 = Eigen::Vector3d;

constexpr int kRings = 4;
constexpr int kSides = 8;
constexpr int kTubeVertices = kRings * kSides;

struct JointSpec {
  const char* name;
  int parent;
  double x, y, z;
};

// Left side has x > 0; right-side joints mirror x.
const JointSpec kJoints[24] = {
    {"pelvis", -1, 0.0, 0.95, 0.0},        {"left_hip", 0, 0.09, 0.87, 0.0},
    {"right_hip", 0, -0.09, 0.87, 0.0},    {"spine1", 0, 0.0, 1.05, -0.01},
    {"left_knee", 1, 0.10, 0.50, 0.01},    {"right_knee", 2, -0.10, 0.50, 0.01},
    {"spine2", 3, 0.0, 1.18, 0.0},         {"left_ankle", 4, 0.10, 0.09, -0.02},
    {"right_ankle", 5, -0.10, 0.09, -0.02}, {"spine3", 6, 0.0, 1.24, 0.01},
    {"left_foot", 7, 0.11, 0.03, 0.10},    {"right_foot", 8, -0.11, 0.03, 0.10},
    {"neck", 9, 0.0, 1.45, -0.01},         {"left_collar", 9, 0.07, 1.38, -0.01},
    {"right_collar", 9, -0.07, 1.38, -0.01}, {"head", 12, 0.0, 1.55, 0.02},
    {"left_shoulder", 13, 0.18, 1.40, -0.02}, {"right_shoulder", 14, -0.18, 1.40, -0.02},
    {"left_elbow", 16, 0.44, 1.40, -0.03}, {"right_elbow", 17, -0.44, 1.40, -0.03},
    {"left_wrist", 18, 0.69, 1.40, -0.02}, {"right_wrist", 19, -0.69, 1.40, -0.02},
    {"left_hand", 20, 0.78, 1.40, -0.02},  {"right_hand", 21, -0.78, 1.40, -0.02},
};

// Limb tips: start joint, tip position, radii.
struct TipSpec {
  int joint;
  double x, y, z;
  double r0, r1;
};
const TipSpec kTips[5] = {
    {15, 0.0, 1.72, 0.02, 0.09, 0.07},     // head top
    {22, 0.88, 1.40, -0.02, 0.03, 0.02},   // left fingertips
    {23, -0.88, 1.40, -0.02, 0.03, 0.02},  // right fingertips
    {10, 0.11, 0.02, 0.18, 0.035, 0.025},  // left toes
    {11, -0.11, 0.02, 0.18, 0.035, 0.025}, // right toes
};

// Start/end radius of the tube for the bone ending at joint j (index j - 1).
const double kBoneRadii[23][2] = {
    {0.09, 0.08},   {0.09, 0.08},   {0.13, 0.12},   {0.075, 0.055}, {0.075, 0.055}, {0.12, 0.125},
    {0.05, 0.04},   {0.05, 0.04},   {0.125, 0.13},  {0.04, 0.035},  {0.04, 0.035},  {0.12, 0.055},
    {0.06, 0.06},   {0.06, 0.06},   {0.05, 0.06},   {0.06, 0.055},  {0.06, 0.055},  {0.05, 0.04},
    {0.05, 0.04},   {0.04, 0.032},  {0.04, 0.032},  {0.03, 0.03},   {0.03, 0.03},
};

struct Tube {
  int start;     // joint the tube hangs from
  int end;       // child joint, or -1 for a limb tip
  int tip = -1;  // index into kTips for tip tubes
  Vec3 a, b;
  double r0, r1;
  Vec3 axis, u, v;
};

Vec3 joint_position(int j) { return {kJoints[j].x, kJoints[j].y, kJoints[j].z}; }

std::vector<Tube> build_tubes() {
  std::vector<Tube> tubes;
  auto frame = [](Tube& t) {
    t.axis = (t.b - t.a).normalized();
    const Vec3 ref = std::abs(t.axis.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    t.u = t.axis.cross(ref).normalized();
    t.v = t.axis.cross(t.u);
  };
  for (int j = 1; j < 24; ++j) {
    Tube t{kJoints[j].parent, j, -1, joint_position(kJoints[j].parent), joint_position(j), kBoneRadii[j - 1][0],
           kBoneRadii[j - 1][1], {}, {}, {}};
    frame(t);
    tubes.push_back(t);
  }
  for (int e = 0; e < 5; ++e) {
    Tube t{kTips[e].joint, -1, e, joint_position(kTips[e].joint), Vec3(kTips[e].x, kTips[e].y, kTips[e].z),
           kTips[e].r0, kTips[e].r1, {}, {}, {}};
    frame(t);
    tubes.push_back(t);
  }
  return tubes;
}

double ring_s(int ring) { return ring / static_cast<double>(kRings); }

Index ring_vertex(std::size_t tube, int ring, int side) {
  return static_cast<Index>(tube) * kTubeVertices + ring * kSides + ((side % kSides) + kSides) % kSides;
}

Vec3 radial(const Tube& t, int side) {
  const double theta = 2.0 * std::numbers::pi * side / kSides;
  return std::cos(theta) * t.u + std::sin(theta) * t.v;
}

double radius_at(const Tube& t, double s) { return (1.0 - s) * t.r0 + s * t.r1; }

std::size_t tube_ending_at(int joint) { return static_cast<std::size_t>(joint - 1); }
std::size_t tip_tube(int tip) { return 23 + static_cast<std::size_t>(tip); }

// First tube hanging from `joint` (bone order first, then tips).
std::size_t first_tube_from(const std::vector<Tube>& tubes, int joint) {
  for (std::size_t t = 0; t < tubes.size(); ++t) {
    if (tubes[t].start == joint) return t;
  }
  throw ModelValidationError("toy joint without an outgoing tube");
}

// Joint offsets scaled by one shape component: each listed bone (by end joint,
// tips as 100 + tip index) stretches by `gain` along `mask`.
struct Stretch {
  std::vector<int> bones;
  double gain;
  Vec3 mask;
};

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

struct Component {
  Stretch stretch;
  std::map<int, double> radial;  // tube index -> fractional radius change
  std::vector<int> belly_tubes;
};

std::vector<Component> shape_components() {
  std::vector<int> all_bones;
  for (int j = 1; j < 24; ++j) all_bones.push_back(j);
  for (int e = 0; e < 5; ++e) all_bones.push_back(100 + e);
  const std::vector<std::size_t> torso = {0, 1, 2, 5, 8, 11};
  const std::vector<std::size_t> limbs = {3, 4, 6, 7, 15, 16, 17, 18, 19, 20, 21, 22};

  std::vector<Component> c(kShapeCount);
  c[0].stretch = {all_bones, 0.04, Vec3::Ones()};  // stature
  for (std::size_t t = 0; t < 28; ++t) c[0].radial[static_cast<int>(t)] = 0.02;
  for (std::size_t t = 0; t < 28; ++t) c[1].radial[static_cast<int>(t)] = 0.04;  // girth
  for (auto t : torso) c[1].radial[static_cast<int>(t)] = 0.12;
  c[2].stretch = {{4, 5, 7, 8}, 0.06, Vec3::Ones()};                        // leg length
  c[3].stretch = {{18, 19, 20, 21, 22, 23, 101, 102}, 0.06, Vec3::Ones()};  // arm length
  c[4].stretch = {{13, 14, 16, 17}, 0.10, Vec3::UnitX()};                   // shoulder width
  c[5].stretch = {{1, 2}, 0.15, Vec3::UnitX()};                             // hip width
  c[6].stretch = {{3, 6, 9, 12}, 0.06, Vec3::Ones()};                       // torso length
  c[7].belly_tubes = {2, 5};                                                // belly
  for (auto t : limbs) c[8].radial[static_cast<int>(t)] = 0.12;             // limb thickness
  c[9].stretch = {{100}, 0.10, Vec3::Ones()};                               // head size
  c[9].radial[static_cast<int>(tip_tube(0))] = 0.12;
  c[9].radial[static_cast<int>(tube_ending_at(15))] = 0.05;
  return c;
}

// Displacement of every joint (and tip, at 24 + tip) under one component.
std::vector<Vec3> stretch_offsets(const Stretch& s) {
  std::vector<Vec3> d(24 + 5, Vec3::Zero());
  for (int j = 1; j < 24; ++j) {
    const int p = kJoints[j].parent;
    d[static_cast<std::size_t>(j)] = d[static_cast<std::size_t>(p)];
    if (contains(s.bones, j)) {
      d[static_cast<std::size_t>(j)] += s.gain * s.mask.cwiseProduct(joint_position(j) - joint_position(p));
    }
  }
  for (int e = 0; e < 5; ++e) {
    const int a = kTips[e].joint;
    Vec3 off = d[static_cast<std::size_t>(a)];
    if (contains(s.bones, 100 + e)) {
      off += s.gain * s.mask.cwiseProduct(Vec3(kTips[e].x, kTips[e].y, kTips[e].z) - joint_position(a));
    }
    d[24 + static_cast<std::size_t>(e)] = off;
  }
  return d;
}

struct LandmarkSpec {
  std::string code;
  std::size_t tube;
  int ring;
  Vec3 direction;
};

std::vector<LandmarkSpec> landmark_specs() {
  const Vec3 front = Vec3::UnitZ(), back = -Vec3::UnitZ(), up = Vec3::UnitY(), down = -Vec3::UnitY();
  std::vector<LandmarkSpec> specs = {
      {"C7", tube_ending_at(12), 3, back},
      {"CLAV", tube_ending_at(12), 2, front},
      {"STRN", tube_ending_at(9), 2, front},
      {"T10", tube_ending_at(6), 2, back},
      {"T8", tube_ending_at(9), 0, back},
      {"MFWT", tube_ending_at(3), 0, front},
      {"MBWT", tube_ending_at(3), 0, back},
      {"BELLY", tube_ending_at(6), 0, front},
      {"XYPH", tube_ending_at(9), 0, front},
      {"CHIN", tip_tube(0), 0, front},
  };
  for (int side = 0; side < 2; ++side) {
    const std::string prefix = side == 0 ? "L" : "R";
    const double sx = side == 0 ? 1.0 : -1.0;
    const Vec3 lateral(sx, 0.0, 0.0);
    auto bone = [&](int left_joint) {
      // The right partner of a left joint has the next index.
      return tube_ending_at(side == 0 ? left_joint : left_joint + 1);
    };
    const std::size_t hand_tip = tip_tube(side == 0 ? 1 : 2);
    const std::size_t toe_tip = tip_tube(side == 0 ? 3 : 4);
    const std::vector<LandmarkSpec> sided = {
        {"FHD", tip_tube(0), 2, Vec3(0.5 * sx, 0.0, 1.0)},
        {"BHD", tip_tube(0), 2, Vec3(0.5 * sx, 0.0, -1.0)},
        {"SHO", bone(16), 3, up},
        {"BAK", bone(16), 1, back},
        {"CHST", tube_ending_at(9), 3, Vec3(sx, 0.0, 1.0)},
        {"UPA", bone(18), 2, up},
        {"UPAM", bone(18), 2, down},
        {"ELB", bone(20), 0, back},
        {"ELBM", bone(20), 0, front},
        {"FRM", bone(20), 2, up},
        {"FRMM", bone(20), 2, down},
        {"WRA", bone(22), 0, front},
        {"WRB", bone(22), 0, back},
        {"FIN", hand_tip, 3, up},
        {"THM", hand_tip, 1, front},
        {"FWT", tube_ending_at(3), 1, Vec3(sx, 0.0, 1.0)},
        {"BWT", tube_ending_at(3), 1, Vec3(sx, 0.0, -1.0)},
        {"HIP", bone(1), 3, lateral},
        {"THI", bone(4), 1, front},
        {"THIM", bone(4), 1, -lateral},
        {"KNE", bone(7), 0, front},
        {"KNEM", bone(7), 0, -lateral},
        {"SHN", bone(7), 2, front},
        {"SHNB", bone(7), 2, back},
        {"ANK", bone(10), 0, lateral},
        {"ANKM", bone(10), 0, -lateral},
        {"HEE", bone(10), 0, back},
        {"TOE", toe_tip, 3, up},
    };
    for (auto s : sided) {
      s.code = prefix + s.code;
      specs.push_back(std::move(s));
    }
  }
  return specs;
}

}  // namespace

const std::vector<std::string>& toy_joint_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& j : kJoints) n.emplace_back(j.name);
    return n;
  }();
  return names;
}

BodyModel make_toy_model() {
  const std::vector<Tube> tubes = build_tubes();
  const Index tube_vertices = static_cast<Index>(tubes.size()) * kTubeVertices;
  const Index p = tube_vertices + 5;
  const Index m = 24;

  BodyModel model;
  model.template_vertices.resize(p, 3);
  model.shape_blendshapes = RowMatrixXd::Zero(3 * p, kShapeCount);
  model.skinning_weights = RowMatrixXd::Zero(p, m);
  model.joint_regressor = RowMatrixXd::Zero(m, p);
  for (const auto& j : kJoints) model.parents.push_back(j.parent);

  const auto components = shape_components();
  std::vector<std::vector<Vec3>> offsets;
  for (const auto& c : components) offsets.push_back(stretch_offsets(c.stretch));
  auto end_slot = [](const Tube& t) { return t.end >= 0 ? static_cast<std::size_t>(t.end) : 24 + static_cast<std::size_t>(t.tip); };

  for (std::size_t ti = 0; ti < tubes.size(); ++ti) {
    const Tube& t = tubes[ti];
    const int grand = kJoints[t.start].parent;
    for (int ring = 0; ring < kRings; ++ring) {
      const double s = ring_s(ring);
      const Vec3 center = t.a + s * (t.b - t.a);
      const double r = radius_at(t, s);
      const double w_parent = grand >= 0 ? std::max(0.0, (0.4 - s) / 0.4) * 0.5 : 0.0;
      const double w_child = t.end >= 0 ? std::max(0.0, (s - 0.6) / 0.4) * 0.5 : 0.0;
      for (int side = 0; side < kSides; ++side) {
        const Index vi = ring_vertex(ti, ring, side);
        const Vec3 out = r * radial(t, side);
        model.template_vertices.row(vi) = (center + out).transpose();
        if (grand >= 0) model.skinning_weights(vi, grand) = w_parent;
        if (t.end >= 0) model.skinning_weights(vi, t.end) = w_child;
        model.skinning_weights(vi, t.start) += 1.0 - w_parent - w_child;
        for (Index c = 0; c < kShapeCount; ++c) {
          const auto& comp = components[static_cast<std::size_t>(c)];
          const auto& d = offsets[static_cast<std::size_t>(c)];
          Vec3 disp = (1.0 - s) * d[static_cast<std::size_t>(t.start)] + s * d[end_slot(t)];
          if (auto it = comp.radial.find(static_cast<int>(ti)); it != comp.radial.end()) disp += it->second * out;
          if (contains(comp.belly_tubes, static_cast<int>(ti))) {
            disp += 0.4 * std::max(0.0, out.z()) * Vec3::UnitZ();
          }
          for (int k = 0; k < 3; ++k) model.shape_blendshapes(3 * vi + k, c) = disp[k];
        }
      }
    }
  }
  for (int e = 0; e < 5; ++e) {
    const Index vi = tube_vertices + e;
    model.template_vertices.row(vi) << kTips[e].x, kTips[e].y, kTips[e].z;
    model.skinning_weights(vi, kTips[e].joint) = 1.0;
    for (Index c = 0; c < kShapeCount; ++c) {
      const Vec3 d = offsets[static_cast<std::size_t>(c)][24 + static_cast<std::size_t>(e)];
      for (int k = 0; k < 3; ++k) model.shape_blendshapes(3 * vi + k, c) = d[k];
    }
  }
  for (int j = 0; j < m; ++j) {
    const std::size_t t = first_tube_from(tubes, j);
    for (int side = 0; side < kSides; ++side) model.joint_regressor(j, ring_vertex(t, 0, side)) = 1.0 / kSides;
  }

  // Faces, each oriented away from the axis of the tube it belongs to.
  std::vector<std::array<int, 3>> faces;
  std::vector<std::size_t> owner;
  auto quad = [&](Index a, Index b, Index c, Index d, std::size_t tube) {
    faces.push_back({static_cast<int>(a), static_cast<int>(b), static_cast<int>(c)});
    faces.push_back({static_cast<int>(a), static_cast<int>(c), static_cast<int>(d)});
    owner.push_back(tube);
    owner.push_back(tube);
  };
  for (std::size_t ti = 0; ti < tubes.size(); ++ti) {
    for (int ring = 0; ring + 1 < kRings; ++ring) {
      for (int side = 0; side < kSides; ++side) {
        quad(ring_vertex(ti, ring, side), ring_vertex(ti, ring, side + 1), ring_vertex(ti, ring + 1, side + 1),
             ring_vertex(ti, ring + 1, side), ti);
      }
    }
    const Tube& t = tubes[ti];
    if (t.end < 0) {
      const Index tip = tube_vertices + t.tip;
      for (int side = 0; side < kSides; ++side) {
        faces.push_back({static_cast<int>(ring_vertex(ti, kRings - 1, side)),
                         static_cast<int>(ring_vertex(ti, kRings - 1, side + 1)), static_cast<int>(tip)});
        owner.push_back(ti);
      }
      continue;
    }
    // Join the last ring to the first ring of the continuing tube, choosing the
    // angular shift that best lines the two rings up.
    const std::size_t next = first_tube_from(tubes, t.end);
    int best_shift = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int shift = 0; shift < kSides; ++shift) {
      double cost = 0.0;
      for (int side = 0; side < kSides; ++side) {
        cost += (model.template_vertices.row(ring_vertex(ti, kRings - 1, side)) -
                 model.template_vertices.row(ring_vertex(next, 0, side + shift)))
                    .squaredNorm();
      }
      if (cost < best) best = cost, best_shift = shift;
    }
    for (int side = 0; side < kSides; ++side) {
      quad(ring_vertex(ti, kRings - 1, side), ring_vertex(ti, kRings - 1, side + 1),
           ring_vertex(next, 0, side + 1 + best_shift), ring_vertex(next, 0, side + best_shift), ti);
    }
  }
  model.faces.resize(static_cast<Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    auto tri = faces[f];
    const Tube& t = tubes[owner[f]];
    const Vec3 a = model.template_vertices.row(tri[0]).transpose();
    const Vec3 b = model.template_vertices.row(tri[1]).transpose();
    const Vec3 c = model.template_vertices.row(tri[2]).transpose();
    const Vec3 centroid = (a + b + c) / 3.0;
    const double s = std::clamp((centroid - t.a).dot(t.b - t.a) / (t.b - t.a).squaredNorm(), 0.0, 1.0);
    const Vec3 inside = t.a + s * (t.b - t.a);
    if ((b - a).cross(c - a).dot(centroid - inside) < 0.0) std::swap(tri[1], tri[2]);
    model.faces.row(static_cast<Index>(f)) << tri[0], tri[1], tri[2];
  }

  // Landmark patches: a 3x3 ring/side block around the best-facing vertex.
  std::vector<LandmarkPatch> patches;
  {
    const std::size_t head = tip_tube(0);
    LandmarkPatch ariel{"ARIEL", tube_vertices, {tube_vertices}};
    for (int side = 0; side < kSides; ++side) ariel.vertices.push_back(ring_vertex(head, kRings - 1, side));
    patches.push_back(std::move(ariel));
  }
  for (const auto& spec : landmark_specs()) {
    const Tube& t = tubes[spec.tube];
    int best_side = 0;
    double best = -2.0;
    for (int side = 0; side < kSides; ++side) {
      const double score = radial(t, side).dot(spec.direction.normalized());
      if (score > best + 1e-12) best = score, best_side = side;
    }
    LandmarkPatch patch{spec.code, ring_vertex(spec.tube, spec.ring, best_side), {}};
    patch.vertices.push_back(patch.median);
    for (int ring = std::max(0, spec.ring - 1); ring <= std::min(kRings - 1, spec.ring + 1); ++ring) {
      for (int ds = -1; ds <= 1; ++ds) {
        const Index v = ring_vertex(spec.tube, ring, best_side + ds);
        if (v != patch.median) patch.vertices.push_back(v);
      }
    }
    patches.push_back(std::move(patch));
  }
  model.landmarks = LandmarkDictionary(std::move(patches));
  validate(model);
  return model;
}

std::vector<EulerBox> toy_pose_limits() {
  std::vector<EulerBox> box(24, EulerBox{{-0.2, -0.2, -0.2}, {0.2, 0.2, 0.2}});
  auto set = [&](int j, std::array<double, 3> lo, std::array<double, 3> hi) { box[static_cast<std::size_t>(j)] = {lo, hi}; };
  set(0, {-0.3, -0.8, -0.2}, {0.3, 0.8, 0.2});
  set(1, {-1.2, -0.3, -0.1}, {0.3, 0.3, 0.5});
  set(2, {-1.2, -0.3, -0.5}, {0.3, 0.3, 0.1});
  set(3, {-0.3, -0.3, -0.2}, {0.3, 0.3, 0.2});
  set(4, {0.0, -0.05, -0.05}, {1.6, 0.05, 0.05});
  set(5, {0.0, -0.05, -0.05}, {1.6, 0.05, 0.05});
  set(6, {-0.3, -0.3, -0.2}, {0.3, 0.3, 0.2});
  set(7, {-0.4, -0.2, -0.2}, {0.4, 0.2, 0.2});
  set(8, {-0.4, -0.2, -0.2}, {0.4, 0.2, 0.2});
  set(9, {-0.3, -0.3, -0.2}, {0.3, 0.3, 0.2});
  set(12, {-0.4, -0.6, -0.3}, {0.4, 0.6, 0.3});
  set(15, {-0.4, -0.6, -0.3}, {0.4, 0.6, 0.3});
  set(16, {-0.6, -1.0, -1.3}, {0.6, 0.5, 0.6});
  set(17, {-0.6, -0.5, -0.6}, {0.6, 1.0, 1.3});
  set(18, {-0.5, -2.0, -0.1}, {0.5, 0.0, 0.1});
  set(19, {-0.5, 0.0, -0.1}, {0.5, 2.0, 0.1});
  set(20, {-0.5, -0.3, -0.5}, {0.5, 0.3, 0.5});
  set(21, {-0.5, -0.3, -0.5}, {0.5, 0.3, 0.5});
  return box;
}

Mesh make_icosphere(double radius, int level) {
  if (level < 0) throw ConfigurationError("icosphere level must be non-negative");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                             {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                           {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                           {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                           {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoint.find(key); it != midpoint.end()) return it->second;
      verts.push_back((verts[static_cast<std::size_t>(a)] + verts[static_cast<std::size_t>(b)]).normalized());
      const int id = static_cast<int>(verts.size()) - 1;
      midpoint[key] = id;
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  Mesh mesh;
  mesh.vertices.resize(static_cast<Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Index>(i)) = radius * verts[i].transpose();
  mesh.faces.resize(static_cast<Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i) mesh.faces.row(static_cast<Index>(i)) << faces[i][0], faces[i][1], faces[i][2];
  return mesh;
}

}  // namespace sparsebody
