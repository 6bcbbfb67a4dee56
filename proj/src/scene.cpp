#include "photosfm/scene.hpp"

#include <cmath>
#include <random>

namespace photosfm {

void SceneConfig::validate() const {
  if (width < 8 || height < 8) throw std::invalid_argument("SceneConfig: image too small");
  if (!(base_depth > 0.0)) throw std::invalid_argument("SceneConfig: base_depth must be positive");
  if (geometry == SceneGeometry::Staircase && !(step_depth > 0.0))
    throw std::invalid_argument("SceneConfig: step_depth must be positive");
  if (n_frames < 2)
    throw std::invalid_argument("SceneConfig: need a target frame and at least one source frame");
  if (texture_octaves < 1 || texture_octaves > 10)
    throw std::invalid_argument("SceneConfig: texture_octaves outside [1,10]");
  if (!(k_gt.fx > 0.0) || !(k_gt.fy > 0.0))
    throw std::invalid_argument("SceneConfig: focal lengths must be positive");
}

Tensor gen_texture(std::uint64_t seed, int width, int height, int octaves) {
  if (width < 2 || height < 2) throw std::invalid_argument("gen_texture: size too small");
  if (octaves < 1) throw std::invalid_argument("gen_texture: octaves must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Tensor out({3, height, width});
  double amp_sum = 0.0;
  double amp = 1.0;
  for (int o = 0; o < octaves; ++o, amp *= 0.5) {
    const int cells = 1 << (o + 2);
    const int nx = cells + 1, ny = cells + 1;
    Tensor lattice({3, ny, nx});
    for (int i = 0; i < lattice.size(); ++i) lattice[i] = uni(rng);
    const double su = static_cast<double>(nx - 1) / (width - 1);
    const double sv = static_cast<double>(ny - 1) / (height - 1);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          out.at(c, y, x) += amp * bilinear_at(lattice, c, x * su, y * sv);
    amp_sum += amp;
  }
  for (int i = 0; i < out.size(); ++i) out[i] /= amp_sum;
  return out;
}

SyntheticScene make_scene(const SceneConfig& cfg) {
  cfg.validate();
  SyntheticScene scene;
  scene.cfg = cfg;
  scene.texture = gen_texture(cfg.seed, cfg.width * 2, cfg.height * 2, cfg.texture_octaves);
  const RigidTransform step = RigidTransform::from_axis_angle(
      Eigen::Vector3d(cfg.rot_step[0], cfg.rot_step[1], cfg.rot_step[2]),
      Eigen::Vector3d(cfg.trans_step[0], cfg.trans_step[1], cfg.trans_step[2]));
  RigidTransform pose = RigidTransform::identity();
  scene.trajectory.push_back(pose);
  for (int i = 1; i < cfg.n_frames; ++i) {
    pose = pose.compose(step);
    scene.trajectory.push_back(pose);
  }
  return scene;
}

RenderedFrame render_frame(const SyntheticScene& scene, int frame_index) {
  const SceneConfig& cfg = scene.cfg;
  if (frame_index < 0 || frame_index >= static_cast<int>(scene.trajectory.size()))
    throw std::invalid_argument("render_frame: frame index out of range");
  const RigidTransform& c2w = scene.trajectory[static_cast<size_t>(frame_index)];
  const int w = cfg.width, h = cfg.height;
  const double fx = cfg.k_gt.fx * w, fy = cfg.k_gt.fy * h;
  const double cx = cfg.k_gt.cx * w, cy = cfg.k_gt.cy * h;
  const int tw = scene.texture.dim(2), th = scene.texture.dim(1);
  const double tex_sx = fx / cfg.base_depth, tex_sy = fy / cfg.base_depth;

  RenderedFrame out;
  out.image = Tensor({3, h, w});
  out.depth = Tensor({1, h, w});
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const Eigen::Vector3d dir_cam((u - cx) / fx, (v - cy) / fy, 1.0);
      const Eigen::Vector3d dir = c2w.R * dir_cam;
      const Eigen::Vector3d& origin = c2w.t;

      double t = -1.0;
      Eigen::Vector3d hit;
      const auto try_plane = [&](double plane_z) -> double {
        if (std::fabs(dir.z()) < 1e-12) return -1.0;
        return (plane_z - origin.z()) / dir.z();
      };
      switch (cfg.geometry) {
        case SceneGeometry::FrontoParallel:
          t = try_plane(cfg.base_depth);
          break;
        case SceneGeometry::Slanted: {
          const double denom = dir.z() - cfg.slant_x * dir.x() - cfg.slant_y * dir.y();
          if (std::fabs(denom) > 1e-12)
            t = (cfg.base_depth + cfg.slant_x * origin.x() + cfg.slant_y * origin.y() -
                 origin.z()) /
                denom;
          break;
        }
        case SceneGeometry::Staircase: {
          const double tn = try_plane(cfg.base_depth);
          const double tf = try_plane(cfg.base_depth + cfg.step_depth);
          const bool near_ok = tn > 0.0 && (origin.x() + tn * dir.x()) < 0.0;
          const bool far_ok = tf > 0.0 && (origin.x() + tf * dir.x()) >= 0.0;
          if (near_ok && far_ok)
            t = std::min(tn, tf);
          else if (near_ok)
            t = tn;
          else if (far_ok)
            t = tf;
          else if (std::fabs(dir.x()) > 1e-12) {
            // The vertical riser joining the two half-planes at x = 0.
            const double tr = -origin.x() / dir.x();
            if (tr > 0.0) {
              const double z = origin.z() + tr * dir.z();
              if (z >= cfg.base_depth - 1e-12 && z <= cfg.base_depth + cfg.step_depth + 1e-12)
                t = tr;
            }
          }
          break;
        }
      }
      if (!(t > 0.0) || !std::isfinite(t))
        throw SceneError("render_frame: ray misses the scene at pixel (" + std::to_string(u) +
                         "," + std::to_string(v) + ") of frame " + std::to_string(frame_index));
      hit = origin + t * dir;
      // dir_cam.z == 1, so the ray parameter is the camera-frame depth.
      out.depth.at(0, v, u) = t;

      const double tex_x = hit.x() * tex_sx + 0.5 * tw;
      const double tex_y = hit.y() * tex_sy + 0.5 * th;
      for (int c = 0; c < 3; ++c)
        out.image.at(c, v, u) = bilinear_at(scene.texture, c, tex_x, tex_y);
    }
  return out;
}

RigidTransform SequenceData::relative(int from, int to) const {
  const int n = static_cast<int>(poses_c2w.size());
  if (from < 0 || from >= n || to < 0 || to >= n)
    throw std::invalid_argument("SequenceData::relative: frame index out of range");
  return poses_c2w[static_cast<size_t>(to)].inverse().compose(poses_c2w[static_cast<size_t>(from)]);
}

SequenceData gen_sequence(const SceneConfig& cfg) {
  const SyntheticScene scene = make_scene(cfg);
  SequenceData out;
  out.width = cfg.width;
  out.height = cfg.height;
  out.k_gt = cfg.k_gt;
  out.poses_c2w = scene.trajectory;
  for (int i = 0; i < cfg.n_frames; ++i) {
    RenderedFrame f = render_frame(scene, i);
    out.frames.push_back(std::move(f.image));
    out.depths.push_back(std::move(f.depth));
  }
  return out;
}

}  // namespace photosfm
