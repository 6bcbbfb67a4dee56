#include "photosfm/optimizer.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "photosfm/subpixel.hpp"

namespace photosfm {

double lr_schedule(int step, int total_steps, double lr_initial, double lr_final,
                   double boundary_fraction) {
  if (total_steps < 1) throw std::invalid_argument("lr_schedule: total_steps must be >= 1");
  if (step < 0 || step >= total_steps)
    throw std::invalid_argument("lr_schedule: step outside [0, total_steps)");
  if (!(boundary_fraction >= 0.0 && boundary_fraction <= 1.0))
    throw std::invalid_argument("lr_schedule: boundary_fraction outside [0,1]");
  const int boundary = static_cast<int>(std::floor(boundary_fraction * total_steps));
  return step < boundary ? lr_initial : lr_final;
}

AdamState AdamState::for_params(const std::vector<Var>& params) {
  AdamState state;
  state.slots.reserve(params.size());
  for (const auto& p : params) {
    if (!p.valid() || !p.is_leaf() || !p.requires_grad())
      throw std::invalid_argument("AdamState: params must be grad-carrying leaves");
    Slot s;
    s.m = Tensor(p.shape());
    s.v = Tensor(p.shape());
    state.slots.push_back(std::move(s));
  }
  return state;
}

void adam_step(AdamState& state, std::vector<Var>& params, const GradientMap& grads, double lr) {
  if (params.size() != state.slots.size())
    throw std::logic_error("adam_step: state does not match the parameter list");
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");

  // Validate every gradient before touching any state.
  std::vector<const Tensor*> gs(params.size(), nullptr);
  for (size_t i = 0; i < params.size(); ++i) {
    const auto it = grads.find(params[i].id());
    if (it == grads.end()) continue;
    if (!same_shape(it->second.shape(), params[i].shape()))
      throw std::logic_error("adam_step: gradient shape mismatch");
    if (!it->second.all_finite())
      throw DivergenceError("adam_step: non-finite gradient for parameter " + std::to_string(i));
    gs[i] = &it->second;
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor x = params[i].value();
    AdamState::Slot& slot = state.slots[i];
    for (int j = 0; j < x.size(); ++j) {
      const double g = gs[i] ? (*gs[i])[j] : 0.0;
      slot.m[j] = state.beta1 * slot.m[j] + (1.0 - state.beta1) * g;
      slot.v[j] = state.beta2 * slot.v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = slot.m[j] / bc1;
      const double vhat = slot.v[j] / bc2;
      x[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    params[i].set_value(std::move(x));
  }
}

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

std::vector<Var> SfmProblem::parameters() const {
  std::vector<Var> out;
  for (const auto& d : inputs.raw_disp) out.push_back(d);
  if (inputs.raw_uncertainty) out.push_back(*inputs.raw_uncertainty);
  for (const auto& p : inputs.poses) {
    out.push_back(p.omega);
    out.push_back(p.t);
  }
  if (opt.learn_intrinsics) {
    out.push_back(inputs.intrinsics.raw_fx);
    out.push_back(inputs.intrinsics.raw_fy);
    out.push_back(inputs.intrinsics.cx);
    out.push_back(inputs.intrinsics.cy);
  }
  return out;
}

namespace {

void pick_frames(const SequenceData& seq, SfmProblem& p) {
  const int n = static_cast<int>(seq.frames.size());
  if (n < 2) throw std::invalid_argument("SfmProblem: need at least two frames");
  p.target_index = n / 2;
  if (p.target_index - 1 >= 0) p.source_indices.push_back(p.target_index - 1);
  if (p.target_index + 1 < n) p.source_indices.push_back(p.target_index + 1);
  p.width = seq.width;
  p.height = seq.height;
  p.inputs.target = Var::constant(seq.frames[static_cast<size_t>(p.target_index)]);
  for (int s : p.source_indices)
    p.inputs.sources.push_back(Var::constant(seq.frames[static_cast<size_t>(s)]));
}

}  // namespace

SfmProblem SfmProblem::from_sequence(const SequenceData& seq, const LossConfig& loss,
                                     const OptimizerConfig& opt) {
  loss.validate();
  SfmProblem p;
  p.loss = loss;
  p.opt = opt;
  pick_frames(seq, p);

  std::mt19937_64 rng(opt.jitter_seed);
  std::uniform_real_distribution<double> jitter(-opt.init_jitter, opt.init_jitter);
  for (double f : loss.scale_factors()) {
    const int sh = static_cast<int>(std::lround(p.height * f));
    const int sw = static_cast<int>(std::lround(p.width * f));
    Tensor raw({1, sh, sw});
    if (opt.init_jitter > 0.0)
      for (int i = 0; i < raw.size(); ++i) raw[i] = jitter(rng);
    p.inputs.raw_disp.push_back(Var::param(std::move(raw)));
  }
  if (opt.with_uncertainty)
    p.inputs.raw_uncertainty = Var::param(Tensor({1, p.height, p.width}));
  for (size_t i = 0; i < p.source_indices.size(); ++i)
    p.inputs.poses.push_back(PoseSE3::identity(true));
  p.inputs.intrinsics = init_intrinsics(opt.learn_intrinsics);
  return p;
}

SfmProblem SfmProblem::at_ground_truth(const SequenceData& seq, const LossConfig& loss,
                                       const OptimizerConfig& opt) {
  loss.validate();
  SfmProblem p;
  p.loss = loss;
  p.opt = opt;
  pick_frames(seq, p);

  // Raw disparity whose sigmoid reproduces the ground-truth inverse depth.
  const double b = 1.0 / loss.max_depth;
  const double a = 1.0 / loss.min_depth - b;
  const Tensor& gt_depth = seq.depths[static_cast<size_t>(p.target_index)];
  Tensor sig_full(gt_depth.shape());
  for (int i = 0; i < sig_full.size(); ++i) {
    const double s = (1.0 / gt_depth[i] - b) / a;
    sig_full[i] = std::min(std::max(s, 1e-6), 1.0 - 1e-6);
  }
  for (double f : loss.scale_factors()) {
    const int sh = static_cast<int>(std::lround(p.height * f));
    const int sw = static_cast<int>(std::lround(p.width * f));
    const Tensor sig =
        resize_bilinear(Var::constant(sig_full), sh, sw).value();
    Tensor raw(sig.shape());
    for (int i = 0; i < raw.size(); ++i) raw[i] = logit(sig[i]);
    p.inputs.raw_disp.push_back(Var::param(std::move(raw)));
  }
  if (opt.with_uncertainty)
    p.inputs.raw_uncertainty = Var::param(Tensor({1, p.height, p.width}));
  for (int s : p.source_indices) {
    const RigidTransform rel = seq.relative(p.target_index, s);
    const Eigen::AngleAxisd aa(rel.R);
    p.inputs.poses.push_back(PoseSE3::from_values(aa.angle() * aa.axis(), rel.t, true));
  }
  p.inputs.intrinsics = intrinsics_from_normalized(seq.k_gt, opt.learn_intrinsics);
  return p;
}

SfmResult optimize(SfmProblem& problem) { return optimize(problem, problem.opt.steps); }

SfmResult optimize(SfmProblem& problem, int steps) {
  if (steps < 1) throw std::invalid_argument("optimize: need at least one step");
  std::vector<Var> params = problem.parameters();
  AdamState adam = AdamState::for_params(params);
  LossScratch scratch;
  SfmResult res;
  res.trace.reserve(static_cast<size_t>(steps));

  for (int step = 0; step < steps; ++step) {
    const double lr = lr_schedule(step, steps, problem.opt.lr_initial, problem.opt.lr_final,
                                  problem.opt.lr_boundary_fraction);
    const Var loss = total_loss(problem.inputs, problem.loss, &scratch);
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) {
      res.diverged = true;
      break;
    }
    res.trace.push_back({step, lr, lv});
    GradientMap grads = backward(loss);
    try {
      adam_step(adam, params, grads, lr);
    } catch (const DivergenceError&) {
      res.diverged = true;
      break;
    }
  }

  res.final_loss = res.diverged && res.trace.empty()
                       ? std::numeric_limits<double>::quiet_NaN()
                       : total_loss(problem.inputs, problem.loss, &scratch).value()[0];

  for (const auto& d : problem.inputs.raw_disp)
    res.disparity_per_scale.push_back(sigmoid(d).value());
  res.depth_full = disparity_to_depth(sigmoid(problem.inputs.raw_disp.back()), problem.loss.min_depth,
                                      problem.loss.max_depth)
                       .value();
  for (const auto& pose : problem.inputs.poses) res.poses.push_back(pose.values());
  res.intrinsics = problem.inputs.intrinsics.normalized();
  if (problem.inputs.raw_uncertainty)
    res.uncertainty = sigmoid(*problem.inputs.raw_uncertainty).value();
  return res;
}

SfmProblem make_probe_problem(int width, int height, std::uint64_t seed, bool with_uncertainty) {
  if (width < 4 || height < 4)
    throw std::invalid_argument("make_probe_problem: image must be at least 4x4");

  SceneConfig scene;
  scene.seed = seed;
  scene.width = width;
  scene.height = height;
  const SequenceData seq = gen_sequence(scene);

  LossConfig loss;
  // Fit the pyramid depth to the image: every octave must divide both sides
  // and the coarsest disparity map must stay big enough for the smoothness
  // stencils (3x3).
  int n_scales = 1;
  while (n_scales < 4 && width % (1 << n_scales) == 0 && height % (1 << n_scales) == 0 &&
         (width >> n_scales) >= 3 && (height >> n_scales) >= 3)
    ++n_scales;
  loss.n_scales = n_scales;

  OptimizerConfig opt;
  opt.with_uncertainty = with_uncertainty;
  opt.jitter_seed = seed;
  SfmProblem p = SfmProblem::from_sequence(seq, loss, opt);

  // Move every parameter group off its init so no gradient path is trivially
  // zero, avoiding round values where clamps or argmin ties would sit.
  std::mt19937_64 rng(seed + 101);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto nudge = [&](Var& v, double amp) {
    Tensor x = v.value();
    for (int i = 0; i < x.size(); ++i) x[i] += amp * u(rng);
    v.set_value(std::move(x));
  };
  for (auto& d : p.inputs.raw_disp) nudge(d, 0.35);
  if (p.inputs.raw_uncertainty) nudge(*p.inputs.raw_uncertainty, 0.5);
  for (auto& pose : p.inputs.poses) {
    nudge(pose.omega, 0.015);
    nudge(pose.t, 0.03);
  }
  nudge(p.inputs.intrinsics.raw_fx, 0.07);
  nudge(p.inputs.intrinsics.raw_fy, 0.07);
  nudge(p.inputs.intrinsics.cx, 0.03);
  nudge(p.inputs.intrinsics.cy, 0.03);
  return p;
}

std::vector<std::string> parameter_names(const SfmProblem& problem) {
  std::vector<std::string> names;
  for (size_t i = 0; i < problem.inputs.raw_disp.size(); ++i)
    names.push_back("disp_scale" + std::to_string(i));
  if (problem.inputs.raw_uncertainty) names.push_back("uncertainty");
  for (size_t i = 0; i < problem.inputs.poses.size(); ++i) {
    names.push_back("pose" + std::to_string(i) + ".rotation");
    names.push_back("pose" + std::to_string(i) + ".translation");
  }
  if (problem.opt.learn_intrinsics) {
    names.push_back("intrinsics.fx");
    names.push_back("intrinsics.fy");
    names.push_back("intrinsics.cx");
    names.push_back("intrinsics.cy");
  }
  return names;
}

}  // namespace photosfm
