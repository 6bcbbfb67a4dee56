#pragma once

#include <optional>
#include <stdexcept>

#include "photosfm/losses.hpp"
#include "photosfm/scene.hpp"

namespace photosfm {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Two-phase schedule: the initial rate until floor(boundary_fraction*total)
// steps have run, the final rate afterwards.
double lr_schedule(int step, int total_steps, double lr_initial = 1e-4, double lr_final = 1e-5,
                   double boundary_fraction = 0.6);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step_count = 0;
  struct Slot {
    Tensor m, v;
  };
  std::vector<Slot> slots;  // parallel to the parameter list

  static AdamState for_params(const std::vector<Var>& params);
};

// One bias-corrected Adam update, in place. Gradients are looked up by
// parameter id; a missing entry counts as zero. Validates all gradients are
// finite before mutating anything and throws DivergenceError otherwise.
void adam_step(AdamState& state, std::vector<Var>& params, const GradientMap& grads, double lr);

struct OptimizerConfig {
  int steps = 3000;
  double lr_initial = 1e-4;
  double lr_final = 1e-5;
  double lr_boundary_fraction = 0.6;
  bool with_uncertainty = false;
  bool learn_intrinsics = true;
  double init_jitter = 1e-3;  // uniform jitter on the raw disparity init
  std::uint64_t jitter_seed = 1;
};

// Direct optimization state: per-scale raw disparity grids, one pose per
// source frame, intrinsics, optional raw uncertainty — all leaves of one
// loss graph rebuilt every step.
struct SfmProblem {
  LossInputs inputs;
  LossConfig loss;
  OptimizerConfig opt;
  int width = 0;
  int height = 0;
  int target_index = 0;
  std::vector<int> source_indices;

  // Fixed order: disparity scales (coarse to fine), raw uncertainty (if
  // enabled), then per source omega and t, then intrinsics (if learned).
  std::vector<Var> parameters() const;

  // Middle frame as target, its neighbours as sources; disparity starts at
  // sigmoid(jitter), poses at identity, intrinsics at the 0.5 defaults.
  static SfmProblem from_sequence(const SequenceData& seq, const LossConfig& loss,
                                  const OptimizerConfig& opt);

  // Same frames but parameters initialized from the generator's ground
  // truth; used for stationarity probes.
  static SfmProblem at_ground_truth(const SequenceData& seq, const LossConfig& loss,
                                    const OptimizerConfig& opt);
};

struct TraceRow {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;  // evaluated before the step's update
};

struct SfmResult {
  Tensor depth_full;                        // (1,H,W), finest scale
  std::vector<Tensor> disparity_per_scale;  // post-sigmoid, native resolutions
  std::vector<RigidTransform> poses;        // target->source
  IntrinsicsValues intrinsics;
  std::optional<Tensor> uncertainty;
  std::vector<TraceRow> trace;
  double final_loss = 0.0;
  bool diverged = false;
};

SfmResult optimize(SfmProblem& problem);
SfmResult optimize(SfmProblem& problem, int steps);

// Small fully-populated problem (two sources, every parameter group
// present and jittered off its init, scale count fitted to the image size)
// for exercising gradients; the state is random but away from non-smooth
// loci such as mask flips or argmin ties.
SfmProblem make_probe_problem(int width, int height, std::uint64_t seed, bool with_uncertainty);

// Names parallel to SfmProblem::parameters(), for reports.
std::vector<std::string> parameter_names(const SfmProblem& problem);

}  // namespace photosfm
