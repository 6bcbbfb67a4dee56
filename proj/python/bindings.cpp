#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "photosfm/cli.hpp"
#include "photosfm/io.hpp"
#include "photosfm/metrics.hpp"
#include "photosfm/subpixel.hpp"

namespace py = pybind11;
using namespace photosfm;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const DoubleArray& arr) {
  Shape shape;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i)
    shape.push_back(static_cast<int>(arr.shape(i)));
  if (shape.empty()) shape = {1};
  Tensor t(shape);
  if (arr.size() != t.size()) throw std::invalid_argument("array size mismatch");
  std::memcpy(t.data(), arr.data(), sizeof(double) * static_cast<size_t>(t.size()));
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
  return out;
}

PadMode pad_mode_from_string(const std::string& name) {
  if (name == "zero") return PadMode::Zero;
  if (name == "reflect") return PadMode::Reflect;
  if (name == "edge") return PadMode::ClampEdge;
  throw std::invalid_argument("pad mode must be zero, reflect or edge");
}

py::array_t<double> pose_to_array(const RigidTransform& p) {
  py::array_t<double> out({static_cast<py::ssize_t>(3), static_cast<py::ssize_t>(4)});
  auto view = out.mutable_unchecked<2>();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) view(r, c) = p.R(r, c);
    view(r, 3) = p.t(r);
  }
  return out;
}

RigidTransform pose_from_array(const DoubleArray& arr) {
  if (arr.ndim() != 2 || arr.shape(0) != 3 || arr.shape(1) != 4)
    throw std::invalid_argument("pose must be a 3x4 array");
  auto view = arr.unchecked<2>();
  RigidTransform p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.R(r, c) = view(r, c);
    p.t(r) = view(r, 3);
  }
  return p;
}

py::dict intrinsics_to_dict(const IntrinsicsValues& k) {
  py::dict d;
  d["fx"] = k.fx;
  d["fy"] = k.fy;
  d["cx"] = k.cx;
  d["cy"] = k.cy;
  return d;
}

RunConfig config_from_overrides(const py::dict& overrides) {
  RunConfig cfg = RunConfig::defaults();
  for (const auto& item : overrides)
    cfg.apply_override(py::cast<std::string>(item.first), py::cast<std::string>(py::str(item.second)));
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Self-supervised structure from motion: differentiable image ops, "
      "synthetic scenes and the photometric optimizer.";

  m.def(
      "conv2d",
      [](const DoubleArray& input, const DoubleArray& kernel, int stride, int pad,
         const std::string& mode) {
        const Var out = conv2d(Var::constant(tensor_from_array(input)),
                               Var::constant(tensor_from_array(kernel)), stride, pad,
                               pad_mode_from_string(mode));
        return array_from_tensor(out.value());
      },
      py::arg("input"), py::arg("kernel"), py::arg("stride") = 1, py::arg("pad") = 1,
      py::arg("mode") = "zero", "2-D convolution of a (C,H,W) input with an (O,C,k,k) kernel.");

  m.def(
      "pixel_shuffle",
      [](const DoubleArray& x, int r) {
        return array_from_tensor(pixel_shuffle(Var::constant(tensor_from_array(x)), r).value());
      },
      py::arg("x"), py::arg("r"), "Rearrange (C*r^2,H,W) into (C,H*r,W*r).");

  m.def(
      "pixel_unshuffle",
      [](const DoubleArray& x, int r) {
        return array_from_tensor(pixel_unshuffle(Var::constant(tensor_from_array(x)), r).value());
      },
      py::arg("x"), py::arg("r"), "Inverse of pixel_shuffle.");

  m.def(
      "resize_bilinear",
      [](const DoubleArray& x, int height, int width) {
        return array_from_tensor(
            resize_bilinear(Var::constant(tensor_from_array(x)), height, width).value());
      },
      py::arg("x"), py::arg("height"), py::arg("width"),
      "Bilinear resize of a (C,H,W) array (half-pixel centers).");

  m.def(
      "nearest_upsample",
      [](const DoubleArray& x, int r) { return array_from_tensor(nearest_upsample(tensor_from_array(x), r)); },
      py::arg("x"), py::arg("r"));

  m.def(
      "ssim",
      [](const DoubleArray& a, const DoubleArray& b) {
        return array_from_tensor(ssim(Var::constant(tensor_from_array(a)),
                                      Var::constant(tensor_from_array(b)), LossConfig{})
                                     .value());
      },
      py::arg("a"), py::arg("b"), "Per-pixel structural similarity of two (C,H,W) images.");

  m.def(
      "photometric_error",
      [](const DoubleArray& target, const DoubleArray& source, double alpha) {
        LossConfig cfg;
        cfg.alpha = alpha;
        return array_from_tensor(photometric_error(Var::constant(tensor_from_array(target)),
                                                   Var::constant(tensor_from_array(source)), cfg)
                                     .value());
      },
      py::arg("target"), py::arg("source"), py::arg("alpha") = 0.85,
      "Blended SSIM + L1 per-pixel reconstruction error, one channel.");

  m.def(
      "disparity_to_depth",
      [](const DoubleArray& sigma, double min_depth, double max_depth) {
        return array_from_tensor(
            disparity_to_depth(Var::constant(tensor_from_array(sigma)), min_depth, max_depth)
                .value());
      },
      py::arg("sigma"), py::arg("min_depth") = 0.1, py::arg("max_depth") = 100.0,
      "Map sigmoid outputs in (0,1) to metric depth in [min_depth, max_depth].");

  m.def(
      "so3_exp",
      [](const DoubleArray& omega) {
        return array_from_tensor(so3_exp(Var::constant(tensor_from_array(omega))).value());
      },
      py::arg("omega"), "Axis-angle vector (3,) to rotation matrix (3,3).");

  m.def("kaiming_uniform_kernel",
        [](int out_ch, int in_ch, int k, std::uint64_t seed) {
          return array_from_tensor(kaiming_uniform_kernel(out_ch, in_ch, k, seed));
        },
        py::arg("out_ch"), py::arg("in_ch"), py::arg("k"), py::arg("seed"));

  m.def("icnr_kernel",
        [](int out_ch, int in_ch, int k, int r, std::uint64_t seed) {
          return array_from_tensor(icnr_init(out_ch, in_ch, k, r, seed));
        },
        py::arg("out_ch"), py::arg("in_ch"), py::arg("k"), py::arg("r"), py::arg("seed"),
        "Kernel whose shuffled conv output equals a nearest-neighbour upsample at init.");

  m.def(
      "generate_sequence",
      [](const py::dict& overrides) {
        const RunConfig cfg = config_from_overrides(overrides);
        const SequenceData seq = gen_sequence(cfg.scene);
        py::list frames, depths, poses;
        for (const auto& f : seq.frames) frames.append(array_from_tensor(f));
        for (const auto& d : seq.depths) depths.append(array_from_tensor(d));
        for (const auto& p : seq.poses_c2w) poses.append(pose_to_array(p));
        py::dict out;
        out["width"] = seq.width;
        out["height"] = seq.height;
        out["frames"] = frames;
        out["depths"] = depths;
        out["poses_c2w"] = poses;
        out["intrinsics"] = intrinsics_to_dict(seq.k_gt);
        return out;
      },
      py::arg("overrides") = py::dict(),
      "Render a synthetic sequence; overrides take the same keys as the CLI config.");

  m.def(
      "optimize",
      [](const py::dict& overrides, int steps) {
        const RunConfig cfg = config_from_overrides(overrides);
        const SequenceData seq = gen_sequence(cfg.scene);
        SfmProblem problem = SfmProblem::from_sequence(seq, cfg.loss, cfg.opt);
        const SfmResult res = optimize(problem, steps > 0 ? steps : cfg.opt.steps);
        py::dict out;
        out["depth"] = array_from_tensor(res.depth_full);
        out["depth_gt"] =
            array_from_tensor(seq.depths[static_cast<size_t>(problem.target_index)]);
        out["intrinsics"] = intrinsics_to_dict(res.intrinsics);
        out["intrinsics_gt"] = intrinsics_to_dict(seq.k_gt);
        py::list poses;
        for (const auto& p : res.poses) poses.append(pose_to_array(p));
        out["relative_poses"] = poses;
        out["final_loss"] = res.final_loss;
        out["diverged"] = res.diverged;
        py::list trace;
        for (const auto& row : res.trace)
          trace.append(py::make_tuple(row.step, row.lr, row.loss));
        out["trace"] = trace;
        if (res.uncertainty) out["uncertainty"] = array_from_tensor(*res.uncertainty);
        return out;
      },
      py::arg("overrides") = py::dict(), py::arg("steps") = 0,
      "Run the full photometric optimization on a synthetic sequence.");

  m.def(
      "depth_metrics",
      [](const DoubleArray& pred, const DoubleArray& gt, double cap, bool median_scaling) {
        const DepthEvalResult r =
            depth_metrics(tensor_from_array(pred), tensor_from_array(gt), cap, median_scaling);
        py::dict d;
        d["abs_rel"] = r.abs_rel;
        d["sq_rel"] = r.sq_rel;
        d["rmse"] = r.rmse;
        d["rmse_log"] = r.rmse_log;
        d["delta1"] = r.delta1;
        d["delta2"] = r.delta2;
        d["delta3"] = r.delta3;
        d["scale_ratio"] = r.scale_ratio;
        d["valid_count"] = r.valid_count;
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("cap") = 80.0, py::arg("median_scaling") = true);

  m.def(
      "snippet_ate",
      [](const std::vector<DoubleArray>& pred_rel, const std::vector<DoubleArray>& gt_rel,
         bool per_pair) {
        std::vector<RigidTransform> ps, gs;
        for (const auto& p : pred_rel) ps.push_back(pose_from_array(p));
        for (const auto& g : gt_rel) gs.push_back(pose_from_array(g));
        return snippet_ate(ps, gs, per_pair);
      },
      py::arg("pred_rel"), py::arg("gt_rel"), py::arg("per_pair") = false,
      "Scale-aligned absolute trajectory error from per-step 3x4 relative poses.");

  m.def(
      "grad_check_probe",
      [](int width, int height, std::uint64_t seed, bool with_uncertainty, double h) {
        SfmProblem problem = make_probe_problem(width, height, seed, with_uncertainty);
        const std::vector<Var> params = problem.parameters();
        const std::vector<std::string> names = parameter_names(problem);
        LossScratch scratch;
        const GradCheckReport rep = grad_check(
            [&]() { return total_loss(problem.inputs, problem.loss, &scratch); }, params, h);
        py::dict per;
        for (size_t i = 0; i < names.size(); ++i) per[names[i].c_str()] = rep.per_param_error[i];
        py::dict out;
        out["max_rel_error"] = rep.max_rel_error;
        out["per_parameter"] = per;
        return out;
      },
      py::arg("width") = 16, py::arg("height") = 12, py::arg("seed") = 7,
      py::arg("with_uncertainty") = true, py::arg("h") = 1e-5,
      "Finite-difference check of the full objective on a small probe problem.");

  m.def("run_cli", &run_cli, py::arg("args"),
        "Invoke the command-line interface in-process; returns the exit code.");

  m.def("read_pfm", [](const std::string& path) { return array_from_tensor(read_pfm(path)); },
        py::arg("path"));
  m.def("write_pfm",
        [](const DoubleArray& map, const std::string& path) {
          write_pfm(tensor_from_array(map), path);
        },
        py::arg("map"), py::arg("path"));
  m.def("read_ppm", [](const std::string& path) { return array_from_tensor(read_ppm(path)); },
        py::arg("path"));
  m.def("write_ppm",
        [](const DoubleArray& image, const std::string& path) {
          write_ppm(tensor_from_array(image), path);
        },
        py::arg("image"), py::arg("path"));
}
