// Python bindings. Poses cross the boundary as float64 numpy arrays: one pose
// is (J, 3), a hypothesis set is (N, J, 3), 2D keypoints are (J, 2).

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "flowlift/aggregation.hpp"
#include "flowlift/error.hpp"
#include "flowlift/evaluation.hpp"
#include "flowlift/flow.hpp"
#include "flowlift/metrics.hpp"
#include "flowlift/synthdata.hpp"

namespace py = pybind11;
using namespace flowlift;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

HypothesisSet to_set(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("hypotheses must have shape (N, J, 3)");
  HypothesisSet set;
  const auto n = static_cast<std::size_t>(a.shape(0));
  const auto j = static_cast<Eigen::Index>(a.shape(1));
  for (std::size_t i = 0; i < n; ++i) {
    Pose3D p(j, 3);
    std::memcpy(p.data(), a.data() + i * j * 3, sizeof(double) * static_cast<std::size_t>(j * 3));
    set.poses.push_back(std::move(p));
  }
  return set;
}

Array from_set(const HypothesisSet& set) {
  const auto j = set.poses.front().rows();
  Array out({static_cast<py::ssize_t>(set.size()), static_cast<py::ssize_t>(j), py::ssize_t{3}});
  for (std::size_t i = 0; i < set.size(); ++i)
    std::memcpy(out.mutable_data() + i * j * 3, set.poses[i].data(), sizeof(double) * static_cast<std::size_t>(j * 3));
  return out;
}

template <typename Get>
Array stack(const Dataset& d, Eigen::Index cols, Get get) {
  const auto j = static_cast<py::ssize_t>(d.skeleton.joint_count());
  Array out({static_cast<py::ssize_t>(d.size()), j, static_cast<py::ssize_t>(cols)});
  for (std::size_t i = 0; i < d.size(); ++i)
    std::memcpy(out.mutable_data() + i * j * cols, get(d.samples[i]).data(), sizeof(double) * j * cols);
  return out;
}

Skeleton skeleton_named(const std::string& name) {
  if (name == "human17") return Skeleton::human17();
  if (name == "animal26") return Skeleton::animal26();
  throw py::value_error("unknown skeleton '" + name + "' (human17 or animal26)");
}

RpeaConfig rpea_config(const std::string& mode, std::optional<double> alpha, std::size_t top_k) {
  RpeaConfig c = RpeaConfig::defaults(parse_mode(mode));
  if (alpha) c.alpha = *alpha;
  c.top_k = top_k;
  return c;
}

}  // namespace

PYBIND11_MODULE(_flowlift, m) {
  m.doc() = "Flow-matching 3D pose lifting";
  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error(("[" + std::string(to_string(e.code())) + "] " + e.what()).c_str());
    }
  });

  py::class_<Skeleton>(m, "Skeleton")
      .def_static("human17", &Skeleton::human17)
      .def_static("animal26", &Skeleton::animal26)
      .def_static("load", [](const std::filesystem::path& p) { return Skeleton::load(p); })
      .def_property_readonly("joint_count", &Skeleton::joint_count)
      .def_property_readonly("root", &Skeleton::root)
      .def_property_readonly("parents", &Skeleton::parents)
      .def_property_readonly("mirror", &Skeleton::mirror)
      .def("to_text", &Skeleton::to_text)
      .def("__eq__", [](const Skeleton& a, const Skeleton& b) { return a == b; });

  py::class_<Camera>(m, "Camera")
      .def(py::init([](double fx, double fy, double cx, double cy, double root_depth) {
             return Camera{fx, fy, cx, cy, root_depth};
           }),
           py::arg("fx") = 4.0, py::arg("fy") = 4.0, py::arg("cx") = 0.0, py::arg("cy") = 0.0,
           py::arg("root_depth") = 5000.0)
      .def_readwrite("fx", &Camera::fx)
      .def_readwrite("fy", &Camera::fy)
      .def_readwrite("cx", &Camera::cx)
      .def_readwrite("cy", &Camera::cy)
      .def_readwrite("root_depth", &Camera::root_depth)
      .def("__repr__", [](const Camera& c) {
        return "Camera(fx=" + format_double(c.fx) + ", fy=" + format_double(c.fy) + ", cx=" + format_double(c.cx) +
               ", cy=" + format_double(c.cy) + ", root_depth=" + format_double(c.root_depth) + ")";
      });

  m.def("project", &project, py::arg("pose"), py::arg("camera"));
  m.def("reprojection_loss", &reprojection_loss, py::arg("pose"), py::arg("observed"), py::arg("camera"));
  m.def("flip_2d", &flip_2d, py::arg("keypoints"), py::arg("skeleton"));
  m.def("flip_3d", &flip_3d, py::arg("pose"), py::arg("skeleton"));

  m.def("mpjpe", &mpjpe, py::arg("pred"), py::arg("gt"));
  m.def("p_mpjpe", &p_mpjpe, py::arg("pred"), py::arg("gt"));
  m.def("procrustes_align", &procrustes_align, py::arg("pred"), py::arg("gt"));
  m.def("joint_errors", &joint_errors, py::arg("pred"), py::arg("gt"));
  m.def("pck", &pck, py::arg("pred"), py::arg("gt"), py::arg("threshold_mm") = kPckThresholdMm);
  m.def("auc", &auc, py::arg("pred"), py::arg("gt"));

  m.def(
      "rpea",
      [](const Array& hyps, const Pose2D& observed, const Camera& cam, const std::string& mode,
         std::optional<double> alpha, std::size_t top_k) {
        return rpea(to_set(hyps), observed, cam, rpea_config(mode, alpha, top_k));
      },
      py::arg("hypotheses"), py::arg("observed"), py::arg("camera"), py::arg("mode") = "joint",
      py::arg("alpha") = py::none(), py::arg("top_k") = 0,
      "Reprojection-weighted average; alpha defaults per mode, top_k=0 keeps all.");
  m.def(
      "mean_aggregate", [](const Array& hyps) { return mean_aggregate(to_set(hyps)); }, py::arg("hypotheses"));
  m.def(
      "best_select",
      [](const Array& hyps, const Pose2D& observed, const Camera& cam, const std::string& mode) {
        return best_select(to_set(hyps), observed, cam, parse_mode(mode));
      },
      py::arg("hypotheses"), py::arg("observed"), py::arg("camera"), py::arg("mode") = "joint");
  m.def(
      "joint_uncertainty", [](const Array& hyps) { return joint_uncertainty(to_set(hyps)); },
      py::arg("hypotheses"));

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_readonly("skeleton", &Dataset::skeleton)
      .def_readonly("noise_std", &Dataset::noise_std)
      .def_readonly("seed", &Dataset::seed)
      .def_property_readonly("poses", [](const Dataset& d) { return stack(d, 3, [](const Sample& s) -> auto& { return s.pose; }); })
      .def_property_readonly("keypoints", [](const Dataset& d) {
        return stack(d, 2, [](const Sample& s) -> auto& { return s.keypoints; });
      })
      .def("camera", [](const Dataset& d, std::size_t i) { return d.samples.at(i).camera; }, py::arg("index"))
      .def("split", &Dataset::split, py::arg("count"))
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { save_dataset(p, d); }, py::arg("path"))
      .def_static("load", [](const std::filesystem::path& p) { return load_dataset(p); }, py::arg("path"));

  m.def(
      "generate",
      [](const std::string& skeleton, std::size_t samples, double noise, std::uint64_t seed) {
        skeleton_named(skeleton);  // rejects unknown names
        const PoseSampler ps = skeleton == "animal26" ? PoseSampler::animal26() : PoseSampler::human17();
        return generate(ps, GeneratorConfig{}, samples, noise, seed);
      },
      py::arg("skeleton") = "human17", py::arg("samples") = 1000, py::arg("noise") = 0.0, py::arg("seed") = 0);

  py::class_<FlowModel>(m, "FlowModel")
      .def(py::init([](const std::string& skeleton, std::size_t width, std::size_t blocks, std::size_t heads,
                       bool residual, std::uint64_t net_seed, std::size_t epochs, std::size_t batch, double lr,
                       std::size_t steps, std::uint64_t seed) {
             const Skeleton skel = skeleton_named(skeleton);
             NetConfig nc;
             nc.joints = skel.joint_count();
             nc.width = width;
             nc.blocks = blocks;
             nc.heads = heads;
             nc.residual = residual;
             nc.seed = net_seed;
             FlowConfig fc;
             fc.epochs = epochs;
             fc.batch_size = batch;
             fc.lr.initial = lr;
             fc.steps = steps;
             fc.seed = seed;
             return FlowModel(skel, nc, fc);
           }),
           py::arg("skeleton") = "human17", py::arg("width") = 64, py::arg("blocks") = 2, py::arg("heads") = 4,
           py::arg("residual") = false, py::arg("net_seed") = 0, py::arg("epochs") = 30, py::arg("batch") = 4,
           py::arg("lr") = 1e-3, py::arg("steps") = 3, py::arg("seed") = 0)
      .def(
          "train",
          [](FlowModel& model, const Dataset& data) {
            TrainResult r;
            {
              py::gil_scoped_release release;
              r = train(model, data);
            }
            std::vector<double> losses;
            for (const EpochStats& e : r.history) losses.push_back(e.mean_loss);
            return losses;
          },
          py::arg("dataset"), "Trains in place; returns the mean loss of every epoch.")
      .def(
          "sample",
          [](const FlowModel& model, const Pose2D& keypoints, std::size_t n, std::optional<std::size_t> steps,
             std::uint64_t seed, bool fha) {
            HypothesisSet set;
            {
              py::gil_scoped_release release;
              set = draw_hypotheses(model, keypoints, n, steps.value_or(model.config().steps), seed, fha);
            }
            return from_set(set);
          },
          py::arg("keypoints"), py::arg("n") = 1, py::arg("steps") = py::none(), py::arg("seed") = 0,
          py::arg("fha") = false, "Draws (N, J, 3) hypotheses for one (J, 2) input.")
      .def_property_readonly("skeleton", &FlowModel::skeleton)
      .def_property_readonly("parameter_count", [](const FlowModel& m) { return m.net().parameter_count(); })
      .def("save", &FlowModel::save, py::arg("path"))
      .def_static("load", &FlowModel::load, py::arg("path"));

  m.def(
      "evaluate",
      [](const FlowModel& model, const Dataset& data, std::vector<std::size_t> hypotheses, std::size_t steps,
         bool fha, std::uint64_t seed, std::size_t max_samples) {
        EvalConfig cfg;
        cfg.hypotheses = std::move(hypotheses);
        cfg.steps = steps;
        cfg.fha = fha;
        cfg.seed = seed;
        cfg.max_samples = max_samples;
        EvalResult r;
        {
          py::gil_scoped_release release;
          r = evaluate(model, data, cfg);
        }
        py::list rows;
        for (const SummaryRow& s : r.summary()) {
          py::dict row;
          row["n"] = s.n;
          row["strategy"] = std::string(to_string(s.strategy));
          row["mpjpe"] = s.mpjpe;
          row["p_mpjpe"] = s.p_mpjpe;
          row["pck"] = s.pck;
          row["auc"] = s.auc;
          rows.append(row);
        }
        return rows;
      },
      py::arg("model"), py::arg("dataset"), py::arg("hypotheses") = std::vector<std::size_t>{1, 20},
      py::arg("steps") = 3, py::arg("fha") = false, py::arg("seed") = 0, py::arg("max_samples") = 0,
      "Mean scores per (N, strategy) as a list of dicts.");
}
