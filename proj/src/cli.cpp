#include "photosfm/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "photosfm/io.hpp"
#include "photosfm/metrics.hpp"
#include "photosfm/subpixel.hpp"

namespace photosfm {
namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_json_file(const fs::path& path, const ordered_json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

std::string indexed_name(const char* stem, int idx, const char* ext) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%s_%03d.%s", stem, idx, ext);
  return buf;
}

RunConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig::defaults() : RunConfig::load(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + kv);
    cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

ordered_json intrinsics_to_json(const IntrinsicsValues& k) {
  return ordered_json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}};
}

ordered_json pose_to_json(const RigidTransform& p) {
  ordered_json row = ordered_json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) row.push_back(p.R(r, c));
    row.push_back(p.t(r));
  }
  return row;
}

// Chains the estimated target->source motions into camera-to-world poses for
// every involved frame, anchoring the earliest frame at the identity (the
// same convention the synthetic ground truth uses).
std::vector<RigidTransform> predicted_trajectory(const SfmProblem& problem,
                                                 const std::vector<RigidTransform>& rel_poses) {
  int min_idx = problem.target_index;
  size_t min_src = 0;
  bool min_is_source = false;
  for (size_t i = 0; i < problem.source_indices.size(); ++i) {
    if (problem.source_indices[i] < min_idx) {
      min_idx = problem.source_indices[i];
      min_src = i;
      min_is_source = true;
    }
  }
  // rel maps target coordinates into source coordinates, so
  // c2w_source = c2w_target * rel^-1 and c2w_target = c2w_source * rel.
  const RigidTransform c2w_target =
      min_is_source ? rel_poses[min_src] : RigidTransform::identity();

  std::vector<std::pair<int, RigidTransform>> frames;
  frames.emplace_back(problem.target_index, c2w_target);
  for (size_t i = 0; i < problem.source_indices.size(); ++i)
    frames.emplace_back(problem.source_indices[i], c2w_target.compose(rel_poses[i].inverse()));
  std::sort(frames.begin(), frames.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<RigidTransform> traj;
  traj.reserve(frames.size());
  for (auto& f : frames) traj.push_back(std::move(f.second));
  return traj;
}

int cmd_synth_gen(const RunConfig& cfg, const std::string& out_dir) {
  const SequenceData seq = gen_sequence(cfg.scene);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    write_ppm(seq.frames[i], (dir / indexed_name("frame", static_cast<int>(i), "ppm")).string());
    write_pfm(seq.depths[i], (dir / indexed_name("depth", static_cast<int>(i), "pfm")).string());
  }
  write_trajectory(seq.poses_c2w, (dir / "poses_gt.txt").string());
  write_intrinsics_json(seq.k_gt, (dir / "intrinsics_gt.json").string());
  write_text_file(dir / "config.cfg", cfg.serialize());
  std::cout << "wrote " << seq.frames.size() << " frames (" << seq.width << "x" << seq.height
            << ") to " << out_dir << "\n";
  return 0;
}

int cmd_optimize(const RunConfig& cfg, const std::string& out_dir, int steps_override) {
  const SequenceData seq = gen_sequence(cfg.scene);
  SfmProblem problem = SfmProblem::from_sequence(seq, cfg.loss, cfg.opt);
  const int steps = steps_override > 0 ? steps_override : cfg.opt.steps;
  const SfmResult res = optimize(problem, steps);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_pfm(res.depth_full, (dir / "depth.pfm").string());
  write_pfm(seq.depths[static_cast<size_t>(problem.target_index)], (dir / "depth_gt.pfm").string());
  if (res.uncertainty) write_pfm(*res.uncertainty, (dir / "sigma.pfm").string());
  write_intrinsics_json(res.intrinsics, (dir / "intrinsics.json").string());
  write_intrinsics_json(seq.k_gt, (dir / "intrinsics_gt.json").string());
  write_trajectory(predicted_trajectory(problem, res.poses), (dir / "poses_pred.txt").string());
  write_trajectory(seq.poses_c2w, (dir / "poses_gt.txt").string());
  write_text_file(dir / "config.cfg", cfg.serialize());

  std::ostringstream trace;
  trace << "step,lr,loss\n";
  for (const auto& row : res.trace)
    trace << row.step << ',' << fmt17(row.lr) << ',' << fmt17(row.loss) << '\n';
  write_text_file(dir / "trace.csv", trace.str());

  ordered_json j;
  j["width"] = problem.width;
  j["height"] = problem.height;
  j["steps"] = steps;
  j["final_loss"] = res.final_loss;
  j["diverged"] = res.diverged;
  j["target_index"] = problem.target_index;
  j["source_indices"] = problem.source_indices;
  j["intrinsics"] = intrinsics_to_json(res.intrinsics);
  ordered_json rel = ordered_json::array();
  for (const auto& p : res.poses) rel.push_back(pose_to_json(p));
  j["relative_poses"] = rel;
  write_json_file(dir / "result.json", j);

  std::cout << "final_loss " << fmt17(res.final_loss) << (res.diverged ? "  (diverged)" : "")
            << "\n";
  std::cout << "intrinsics fx=" << fmt6(res.intrinsics.fx) << " fy=" << fmt6(res.intrinsics.fy)
            << " cx=" << fmt6(res.intrinsics.cx) << " cy=" << fmt6(res.intrinsics.cy) << "\n";
  return res.diverged ? 1 : 0;
}

int cmd_eval_depth(const std::string& pred_path, const std::string& gt_path, double cap,
                   bool no_median_scale, const std::string& out_path) {
  const Tensor pred = read_pfm(pred_path);
  const Tensor gt = read_pfm(gt_path);
  const DepthEvalResult r = depth_metrics(pred, gt, cap, !no_median_scale);

  ordered_json j{{"abs_rel", r.abs_rel},   {"sq_rel", r.sq_rel},
                 {"rmse", r.rmse},         {"rmse_log", r.rmse_log},
                 {"delta1", r.delta1},     {"delta2", r.delta2},
                 {"delta3", r.delta3},     {"scale_ratio", r.scale_ratio},
                 {"valid_count", r.valid_count}};
  if (!out_path.empty()) write_json_file(out_path, j);
  std::cout << "abs_rel " << fmt6(r.abs_rel) << "  sq_rel " << fmt6(r.sq_rel) << "  rmse "
            << fmt6(r.rmse) << "  rmse_log " << fmt6(r.rmse_log) << "  d1 " << fmt6(r.delta1)
            << "  d2 " << fmt6(r.delta2) << "  d3 " << fmt6(r.delta3) << "\n";
  return 0;
}

int cmd_eval_odom(const std::string& pred_path, const std::string& gt_path, int snippet,
                  bool per_pair, const std::string& out_path) {
  const std::vector<RigidTransform> pred = read_trajectory(pred_path);
  const std::vector<RigidTransform> gt = read_trajectory(gt_path);
  if (pred.size() != gt.size())
    throw std::invalid_argument("eval-odom: trajectories have different lengths");
  const int n = static_cast<int>(pred.size());
  if (snippet < 2) throw std::invalid_argument("eval-odom: snippet length must be >= 2");
  if (n < snippet) throw std::invalid_argument("eval-odom: trajectory shorter than one snippet");

  // Per-step motions: rel[i] maps frame i+1 coordinates into frame i.
  std::vector<RigidTransform> pred_rel, gt_rel;
  for (int i = 0; i + 1 < n; ++i) {
    pred_rel.push_back(pred[static_cast<size_t>(i)].inverse().compose(pred[static_cast<size_t>(i) + 1]));
    gt_rel.push_back(gt[static_cast<size_t>(i)].inverse().compose(gt[static_cast<size_t>(i) + 1]));
  }

  std::vector<double> errors;
  for (int w = 0; w + snippet <= n; ++w) {
    const std::vector<RigidTransform> ps(pred_rel.begin() + w, pred_rel.begin() + w + snippet - 1);
    const std::vector<RigidTransform> gs(gt_rel.begin() + w, gt_rel.begin() + w + snippet - 1);
    errors.push_back(snippet_ate(ps, gs, per_pair));
  }
  const AteResult agg = aggregate_ate(errors);

  ordered_json j{{"snippet_length", snippet}, {"per_pair", per_pair},
                 {"snippet_count", agg.snippet_count}, {"ate_mean", agg.mean},
                 {"ate_stddev", agg.stddev}, {"errors", errors}};
  if (!out_path.empty()) write_json_file(out_path, j);
  std::cout << "ate " << fmt6(agg.mean) << " +/- " << fmt6(agg.stddev) << " over "
            << agg.snippet_count << " snippets of " << snippet << "\n";
  return 0;
}

int cmd_eval_intrinsics(const std::vector<std::string>& est_paths, const std::string& gt_path,
                        const std::string& out_path) {
  std::vector<IntrinsicsValues> ests;
  ests.reserve(est_paths.size());
  for (const auto& p : est_paths) ests.push_back(read_intrinsics_json(p));
  const IntrinsicsValues gt = read_intrinsics_json(gt_path);
  const IntrinsicsReport rep = intrinsics_report(ests, gt);

  auto stats_json = [](const IntrinsicsErrorStats& s, double g) {
    return ordered_json{{"mean", s.mean}, {"stddev", s.stddev}, {"gt", g}};
  };
  ordered_json j{{"count", rep.count},
                 {"fx", stats_json(rep.fx, gt.fx)},
                 {"fy", stats_json(rep.fy, gt.fy)},
                 {"cx", stats_json(rep.cx, gt.cx)},
                 {"cy", stats_json(rep.cy, gt.cy)}};
  if (!out_path.empty()) write_json_file(out_path, j);
  std::cout << rep.format();
  return 0;
}

int cmd_grad_check(int width, int height, std::uint64_t seed, double h, double tol,
                   bool with_uncertainty, const std::string& out_path) {
  SfmProblem problem = make_probe_problem(width, height, seed, with_uncertainty);
  const std::vector<Var> params = problem.parameters();
  const std::vector<std::string> names = parameter_names(problem);
  LossScratch scratch;
  const auto f = [&]() { return total_loss(problem.inputs, problem.loss, &scratch); };
  const GradCheckReport rep = grad_check(f, params, h);

  ordered_json per = ordered_json::object();
  for (size_t i = 0; i < params.size(); ++i) {
    std::cout << "  " << names[i] << "  " << fmt6(rep.per_param_error[i]) << "\n";
    per[names[i]] = rep.per_param_error[i];
  }
  const bool ok = rep.max_rel_error <= tol;
  std::cout << "max relative error " << fmt6(rep.max_rel_error) << " (tolerance " << fmt6(tol)
            << "): " << (ok ? "ok" : "FAILED") << "\n";
  if (!out_path.empty()) {
    write_json_file(out_path, ordered_json{{"width", width},
                                           {"height", height},
                                           {"seed", seed},
                                           {"step", h},
                                           {"tolerance", tol},
                                           {"max_rel_error", rep.max_rel_error},
                                           {"per_parameter", per},
                                           {"passed", ok}});
  }
  return ok ? 0 : 1;
}

double max_phase_variance(const Tensor& up, int r) {
  const auto& s = up.shape();
  const int C = s[0], H = s[1], W = s[2];
  const int h = H / r, w = W / r;
  const int rr = r * r;
  double mx = 0.0;
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double mean = 0.0;
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx) mean += up.at(c, y * r + dy, x * r + dx);
        mean /= rr;
        double var = 0.0;
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx) {
            const double d = up.at(c, y * r + dy, x * r + dx) - mean;
            var += d * d;
          }
        mx = std::max(mx, var / rr);
      }
    }
  }
  return mx;
}

void write_normalized_ppm(const Tensor& img, const fs::path& path) {
  const double lo = img.min_value(), hi = img.max_value();
  const double span = hi > lo ? hi - lo : 1.0;
  Tensor norm(img.shape());
  for (int i = 0; i < img.size(); ++i) norm[i] = (img[i] - lo) / span;
  write_ppm(norm, path.string());
}

int cmd_upsample_demo(std::uint64_t seed, int height, int width, int r,
                      const std::string& out_dir) {
  if (height < 4 || width < 4) throw std::invalid_argument("upsample-demo: size must be >= 4x4");
  if (r < 2) throw std::invalid_argument("upsample-demo: factor must be >= 2");
  const int ch = 3, k = 3;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor x({ch, height, width});
  for (int i = 0; i < x.size(); ++i) x[i] = u(rng);
  const Var xv = Var::constant(x);

  // The replicated-kernel upsample must match a nearest-neighbour upsample of
  // the base convolution exactly; an independently drawn kernel will not.
  const Tensor base = kaiming_uniform_kernel(ch, ch, k, seed + 1);
  const Tensor replicated = icnr_init(ch * r * r, ch, k, r, seed + 1);
  const Tensor independent = kaiming_uniform_kernel(ch * r * r, ch, k, seed + 1);

  const Tensor low = conv2d(xv, Var::constant(base), 1, 1, PadMode::Zero).value();
  const Tensor up_icnr =
      pixel_shuffle(conv2d(xv, Var::constant(replicated), 1, 1, PadMode::Zero), r).value();
  const Tensor up_ind =
      pixel_shuffle(conv2d(xv, Var::constant(independent), 1, 1, PadMode::Zero), r).value();
  const Tensor up_nn = nearest_upsample(low, r);

  double max_abs_diff = 0.0;
  for (int i = 0; i < up_icnr.size(); ++i)
    max_abs_diff = std::max(max_abs_diff, std::abs(up_icnr[i] - up_nn[i]));

  SubpixelBlockConfig cfg;
  cfg.in_ch = ch;
  cfg.dconv_ch = 8;
  cfg.s1_ch = 16;
  cfg.s2_ch = 8;
  cfg.out_ch = 4;
  cfg.r = r;
  const SubpixelBlockWeights wts = SubpixelBlockWeights::init(cfg, seed + 2, true, false);
  const Tensor block_out = subpixel_block(xv, wts).value();

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_normalized_ppm(x, dir / "input.ppm");
  write_normalized_ppm(low, dir / "conv_low.ppm");
  write_normalized_ppm(up_icnr, dir / "upsampled.ppm");

  ordered_json j{{"seed", seed},
                 {"factor", r},
                 {"input_shape", ordered_json{ch, height, width}},
                 {"low_shape", ordered_json(low.shape())},
                 {"upsampled_shape", ordered_json(up_icnr.shape())},
                 {"max_abs_diff_vs_nearest", max_abs_diff},
                 {"phase_variance_replicated", max_phase_variance(up_icnr, r)},
                 {"phase_variance_independent", max_phase_variance(up_ind, r)},
                 {"block_output_shape", ordered_json(block_out.shape())}};
  write_json_file(dir / "demo.json", j);

  std::cout << "replicated-kernel upsample vs nearest-neighbour: max |diff| = "
            << fmt17(max_abs_diff) << "\n";
  std::cout << "phase variance  replicated " << fmt6(max_phase_variance(up_icnr, r))
            << "  independent " << fmt6(max_phase_variance(up_ind, r)) << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{
      "Self-supervised structure from motion on synthetic scenes: recovers "
      "dense depth, camera motion and pinhole intrinsics by direct "
      "photometric optimization."};
  app.require_subcommand(1);

  auto* sg = app.add_subcommand(
      "synth-gen", "Render a synthetic sequence (frames, depths, poses, intrinsics)");
  std::string sg_config, sg_out;
  std::vector<std::string> sg_set;
  sg->add_option("--config", sg_config, "key=value configuration file (defaults when omitted)");
  sg->add_option("--set", sg_set, "Override one configuration entry, key=value (repeatable)");
  sg->add_option("-o,--out", sg_out, "Output directory")->required();

  auto* op = app.add_subcommand(
      "optimize", "Recover depth, motion and intrinsics from a rendered sequence");
  std::string op_config, op_out;
  std::vector<std::string> op_set;
  int op_steps = 0;
  op->add_option("--config", op_config, "key=value configuration file (defaults when omitted)");
  op->add_option("--set", op_set, "Override one configuration entry, key=value (repeatable)");
  op->add_option("--steps", op_steps, "Override the configured step count");
  op->add_option("-o,--out", op_out, "Output directory")->required();

  auto* ed = app.add_subcommand("eval-depth", "Score a predicted depth map against ground truth");
  std::string ed_pred, ed_gt, ed_out;
  double ed_cap = 80.0;
  bool ed_no_median = false;
  ed->add_option("--pred", ed_pred, "Predicted depth map (.pfm)")->required();
  ed->add_option("--gt", ed_gt, "Ground-truth depth map (.pfm)")->required();
  ed->add_option("--cap", ed_cap, "Ignore ground truth beyond this depth");
  ed->add_flag("--no-median-scale", ed_no_median, "Compare without median scale alignment");
  ed->add_option("-o,--out", ed_out, "Write the metrics as JSON here");

  auto* eo = app.add_subcommand("eval-odom", "Score a trajectory with snippet-wise ATE");
  std::string eo_pred, eo_gt, eo_out;
  int eo_snippet = 5;
  bool eo_per_pair = false;
  eo->add_option("--pred", eo_pred, "Predicted trajectory file")->required();
  eo->add_option("--gt", eo_gt, "Ground-truth trajectory file")->required();
  eo->add_option("--snippet", eo_snippet, "Frames per evaluation snippet");
  eo->add_flag("--per-pair", eo_per_pair, "Average per-step displacement errors instead of RMSE");
  eo->add_option("-o,--out", eo_out, "Write the result as JSON here");

  auto* ei = app.add_subcommand("eval-intrinsics",
                                "Compare estimated camera intrinsics against ground truth");
  std::vector<std::string> ei_est;
  std::string ei_gt, ei_out;
  ei->add_option("--est", ei_est, "Estimated intrinsics JSON (repeatable)")->required();
  ei->add_option("--gt", ei_gt, "Ground-truth intrinsics JSON")->required();
  ei->add_option("-o,--out", ei_out, "Write the report as JSON here");

  auto* gc = app.add_subcommand(
      "grad-check", "Compare analytic gradients of the full objective to finite differences");
  int gc_width = 16, gc_height = 12;
  std::uint64_t gc_seed = 7;
  double gc_h = 1e-5, gc_tol = 1e-4;
  bool gc_no_uncert = false;
  std::string gc_out;
  gc->add_option("--width", gc_width, "Probe image width");
  gc->add_option("--height", gc_height, "Probe image height");
  gc->add_option("--seed", gc_seed, "Seed for the probe scene and state");
  gc->add_option("--step", gc_h, "Finite-difference step");
  gc->add_option("--tol", gc_tol, "Maximum allowed relative error");
  gc->add_flag("--no-uncertainty", gc_no_uncert, "Drop the uncertainty parameter group");
  gc->add_option("-o,--out", gc_out, "Write the report as JSON here");

  auto* ud = app.add_subcommand(
      "upsample-demo", "Show that replicated-kernel upsampling starts as nearest-neighbour");
  std::uint64_t ud_seed = 3;
  int ud_height = 16, ud_width = 20, ud_r = 2;
  std::string ud_out;
  ud->add_option("--seed", ud_seed, "Seed for the input and kernels");
  ud->add_option("--height", ud_height, "Input height");
  ud->add_option("--width", ud_width, "Input width");
  ud->add_option("--factor", ud_r, "Upsampling factor");
  ud->add_option("-o,--out", ud_out, "Output directory")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sg->parsed()) return cmd_synth_gen(load_config(sg_config, sg_set), sg_out);
    if (op->parsed()) return cmd_optimize(load_config(op_config, op_set), op_out, op_steps);
    if (ed->parsed()) return cmd_eval_depth(ed_pred, ed_gt, ed_cap, ed_no_median, ed_out);
    if (eo->parsed()) return cmd_eval_odom(eo_pred, eo_gt, eo_snippet, eo_per_pair, eo_out);
    if (ei->parsed()) return cmd_eval_intrinsics(ei_est, ei_gt, ei_out);
    if (gc->parsed())
      return cmd_grad_check(gc_width, gc_height, gc_seed, gc_h, gc_tol, !gc_no_uncert, gc_out);
    if (ud->parsed()) return cmd_upsample_demo(ud_seed, ud_height, ud_width, ud_r, ud_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace photosfm
