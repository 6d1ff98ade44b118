#pragma once

#include "sparsebody/body_model.hpp"

#include <array>
#include <string>

namespace sparsebody {

/// Names of the 24 toy joints, in joint order.
const std::vector<std::string>& toy_joint_names();

/// Procedural stand-in for a real body model: 24 joints with an SMPL-style
/// tree, each bone wrapped in an 8-sided tube (4 rings), 5 capped limb tips,
/// 10 linear shape components and 67 landmark patches. Deterministic.
BodyModel make_toy_model();

/// Rotation limits of one joint as an Euler box (radians), applied as
/// Rx(x) * Ry(y) * Rz(z).
struct EulerBox {
  std::array<double, 3> lower{};
  std::array<double, 3> upper{};
};

/// Joint limits for the toy body, one box per joint. The root box is the
/// global orientation range.
std::vector<EulerBox> toy_pose_limits();

struct Mesh {
  Points3 vertices;
  Faces faces;
};

/// Subdivided icosahedron projected onto a sphere of the given radius.
/// Level 0 has 12 vertices; each level quadruples the face count.
Mesh make_icosphere(double radius, int level);

}  // namespace sparsebody
