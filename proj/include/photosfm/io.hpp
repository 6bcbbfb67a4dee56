#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "photosfm/losses.hpp"
#include "photosfm/optimizer.hpp"
#include "photosfm/scene.hpp"

namespace photosfm {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Grayscale PFM ("Pf"), negative scale = little-endian, rows stored
// bottom-up, float32 samples. Color "PF" files are rejected.
Tensor read_pfm(const std::string& path);                       // -> (1,H,W)
void write_pfm(const Tensor& map, const std::string& path);     // (1,H,W)

// Binary PPM ("P6"), maxval 255. Values clamp to [0,1] and round on write.
Tensor read_ppm(const std::string& path);                       // -> (3,H,W)
void write_ppm(const Tensor& image, const std::string& path);   // (3,H,W)

// One pose per line: twelve numbers, the row-major top 3x4 of [R | t].
std::vector<RigidTransform> read_trajectory(const std::string& path);
void write_trajectory(const std::vector<RigidTransform>& poses, const std::string& path);

IntrinsicsValues read_intrinsics_json(const std::string& path);
void write_intrinsics_json(const IntrinsicsValues& k, const std::string& path);

// Flat key=value configuration covering the scene, loss and optimizer
// settings. '#' starts a comment; unknown keys are rejected so typos fail
// loudly. serialize() emits every key, and parse(serialize()) round-trips.
struct RunConfig {
  SceneConfig scene;
  LossConfig loss;
  OptimizerConfig opt;

  static RunConfig defaults() { return {}; }
  static RunConfig parse_text(const std::string& text);  // throws ConfigError
  static RunConfig load(const std::string& path);
  std::string serialize() const;
  void apply_override(const std::string& key, const std::string& value);  // throws ConfigError
};

}  // namespace photosfm
