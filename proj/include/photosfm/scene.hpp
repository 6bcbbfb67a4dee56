#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "photosfm/camera.hpp"

namespace photosfm {

struct SceneError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SceneGeometry { FrontoParallel, Slanted, Staircase };

// World model: textured plane(s) ahead of a camera that starts at the world
// origin looking down +z. All quantities are deterministic functions of the
// seed. Distances are in arbitrary world units.
struct SceneConfig {
  std::uint64_t seed = 7;
  SceneGeometry geometry = SceneGeometry::Slanted;
  int width = 128;
  int height = 96;
  double base_depth = 2.0;
  double slant_x = 0.15;  // plane z = base_depth + slant_x*x + slant_y*y
  double slant_y = 0.05;
  double step_depth = 0.6;  // staircase: far half-plane offset (x >= 0)
  int n_frames = 3;
  IntrinsicsValues k_gt{0.54, 0.56, 0.52, 0.47};
  std::array<double, 3> trans_step{0.035, -0.012, 0.06};  // per-frame motion, local frame
  std::array<double, 3> rot_step{0.008, 0.010, 0.004};    // per-frame axis-angle
  int texture_octaves = 4;

  void validate() const;
};

// Multi-octave value noise in [0,1]: per octave, a random lattice is drawn
// and bilinearly interpolated across the image; octave amplitudes halve.
Tensor gen_texture(std::uint64_t seed, int width, int height, int octaves = 4);

struct SyntheticScene {
  SceneConfig cfg;
  Tensor texture;                          // (3, 2H, 2W); margins of W/2, H/2
  std::vector<RigidTransform> trajectory;  // camera-to-world, one per frame
};

SyntheticScene make_scene(const SceneConfig& cfg);

struct RenderedFrame {
  Tensor image;  // (3,H,W)
  Tensor depth;  // (1,H,W), camera-frame z of the hit point
};

// Analytic ray casting against the plane(s); colors come from the shared
// world-anchored texture so corresponding pixels across frames agree.
// Throws SceneError if any ray misses or hits at non-positive depth.
RenderedFrame render_frame(const SyntheticScene& scene, int frame_index);

struct SequenceData {
  int width = 0;
  int height = 0;
  std::vector<Tensor> frames;
  std::vector<Tensor> depths;
  std::vector<RigidTransform> poses_c2w;
  IntrinsicsValues k_gt;

  // Transform taking `from`-frame camera coordinates into the `to` frame.
  RigidTransform relative(int from, int to) const;
};

SequenceData gen_sequence(const SceneConfig& cfg);

}  // namespace photosfm
