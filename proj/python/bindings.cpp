// Copyright 2026 The wwcnn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "wwcnn/analysis.hpp"
#include "wwcnn/checkpoint.hpp"
#include "wwcnn/kernels.hpp"
#include "wwcnn/netspec.hpp"
#include "wwcnn/synthdata.hpp"
#include "wwcnn/trainer.hpp"

namespace py = pybind11;
using namespace wwcnn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
  py::array_t<T> a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

Tensor<double> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

/// A network plus its training state, always at 32-bit.
struct Model {
  NetworkSpec spec;
  ArchKind kind = ArchKind::Base;
  Graph graph;
  TrainState<float> state;

  static Model create(const NetworkSpec& spec, ArchKind kind, std::uint64_t seed) {
    auto net = build<float>(spec, kind, seed);
    return Model{spec, kind, std::move(net.graph), TrainState<float>::start(std::move(net.params), seed)};
  }

  static Model load(const std::filesystem::path& path) {
    auto ck = load_checkpoint<float>(path);
    auto spec = ck.spec();
    auto graph = build_graph(spec, ck.kind);
    return Model{std::move(spec), ck.kind, std::move(graph), std::move(ck.state)};
  }

  void save(const std::filesystem::path& path) const {
    save_checkpoint(path, Checkpoint<float>{kind, spec.canonical(), state});
  }

  py::dict parameters() const {
    py::dict d;
    for (const auto& p : state.params) d[py::str(p.name)] = to_numpy(p.value);
    return d;
  }

  py::dict partitions() const {
    py::dict d;
    for (const auto& p : state.params) d[py::str(p.name)] = std::string(partition_name(p.partition));
    return d;
  }

  void set_parameter(const std::string& name, const Array& value) {
    auto& p = state.params.at(name);
    auto t = to_tensor(value);
    if (t.shape() != p.value.shape())
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(p.value.shape()));
    p.value = t.cast<float>();
  }

  Model pruned() const {
    auto r = prune(Network<float>{kind, graph, state.params});
    return Model{spec, r.network.kind, std::move(r.network.graph),
                 TrainState<float>::start(std::move(r.network.params), 0)};
  }

  /// Copies this model's name-matched parameters into a fresh network of `target`.
  std::pair<Model, TransplantReport> transplant_to(ArchKind target, std::uint64_t seed) const {
    auto dst = build<float>(spec, target, seed);
    auto report = transplant(state.params, dst.params, derive_seed(seed, "fresh"));
    return {Model{spec, target, std::move(dst.graph), TrainState<float>::start(std::move(dst.params), seed)},
            std::move(report)};
  }
};

py::dict log_dict(const EpochLog& l) {
  py::dict d;
  d["epoch"] = l.epoch;
  d["train_loss"] = l.train_loss;
  d["train_cat_loss"] = l.train_cat_loss;
  d["train_pose_loss"] = l.train_pose_loss;
  d["test_acc"] = l.test_acc;
  d["lr"] = l.lr;
  return d;
}

py::array_t<float> dataset_images(const Dataset& d) {
  const auto& m = d.meta;
  py::array_t<float> a({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(m.height),
                        static_cast<py::ssize_t>(m.width), static_cast<py::ssize_t>(m.channels)});
  float* out = a.mutable_data();
  for (const auto& r : d.records) out = std::copy(r.image.begin(), r.image.end(), out);
  return a;
}

template <typename F>
py::array_t<std::uint32_t> record_field(const Dataset& d, F f) {
  py::array_t<std::uint32_t> a(static_cast<py::ssize_t>(d.size()));
  auto* out = a.mutable_data();
  for (const auto& r : d.records) *out++ = f(r);
  return a;
}

}  // namespace

PYBIND11_MODULE(_wwcnn, m) {
  m.doc() = "What/where CNN engine: synthetic data, multi-head training, pruning and diagnostics";
  m.attr("__version__") = WWCNN_VERSION;

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::enum_<ArchKind>(m, "Arch")
      .value("BASE", ArchKind::Base)
      .value("INJECT_TOP", ArchKind::InjectTop)
      .value("INJECT_MULTI", ArchKind::InjectMulti);
  m.def("parse_arch", [](const std::string& s) { return parse_arch(s); });
  m.def("derive_seed", py::overload_cast<std::uint64_t, std::string_view>(&derive_seed));

  py::class_<NetworkSpec>(m, "NetworkSpec")
      .def_readonly("height", &NetworkSpec::height)
      .def_readonly("width", &NetworkSpec::width)
      .def_readonly("channels", &NetworkSpec::channels)
      .def_readonly("category_width", &NetworkSpec::category_width)
      .def_readonly("pose_width", &NetworkSpec::pose_width)
      .def_readonly("lam", &NetworkSpec::lambda)
      .def("canonical", &NetworkSpec::canonical)
      .def("hash", &NetworkSpec::hash)
      .def("layer_names", [](const NetworkSpec& s) {
        std::vector<std::string> out;
        for (const auto& l : s.layers) out.push_back(l.name);
        return out;
      });
  m.def("parse_spec", [](const std::string& text) { return parse_spec(text); });
  m.def("load_spec", &load_spec);

  py::class_<GenConfig>(m, "GenConfig")
      .def(py::init<>())
      .def_readwrite("categories", &GenConfig::categories)
      .def_readwrite("n_rot", &GenConfig::n_rot)
      .def_readwrite("n_az", &GenConfig::n_az)
      .def_readwrite("instances", &GenConfig::instances)
      .def_readwrite("backgrounds", &GenConfig::backgrounds)
      .def_readwrite("height", &GenConfig::height)
      .def_readwrite("width", &GenConfig::width)
      .def_readwrite("channels", &GenConfig::channels)
      .def_readwrite("shape_set", &GenConfig::shape_set)
      .def_readwrite("seed", &GenConfig::seed)
      .def("poses", &GenConfig::poses);

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_property_readonly("categories", [](const Dataset& d) { return d.meta.categories; })
      .def_property_readonly("poses", [](const Dataset& d) { return d.meta.poses; })
      .def_property_readonly("images", &dataset_images, "N x H x W x C float32 in [0, 1]")
      .def_property_readonly("category", [](const Dataset& d) {
        return record_field(d, [](const SampleRecord& r) { return r.category; });
      })
      .def_property_readonly("pose", [](const Dataset& d) {
        return record_field(d, [](const SampleRecord& r) { return r.pose; });
      })
      .def_property_readonly("instance", [](const Dataset& d) {
        return record_field(d, [](const SampleRecord& r) { return r.instance; });
      })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });
  m.def("generate", &generate, py::arg("config"));
  m.def("split_by_instance", &split_by_instance, py::arg("data"), py::arg("train_fraction") = 0.75,
        py::arg("seed") = 1);
  m.def("read_dataset", &read_dataset);
  m.def("write_dataset", &write_dataset);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_static("defaults_for", &TrainConfig::defaults_for)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("lr_decay", &TrainConfig::lr_decay)
      .def_readwrite("lr_step", &TrainConfig::lr_step)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("dropout", &TrainConfig::dropout)
      .def_readwrite("lam", &TrainConfig::lambda)
      .def_readwrite("seed", &TrainConfig::seed)
      .def("lr_at", &TrainConfig::lr_at);

  py::class_<TransplantReport>(m, "TransplantReport")
      .def_readonly("copied", &TransplantReport::copied)
      .def_readonly("fresh", &TransplantReport::fresh);

  py::class_<GradProbeReport>(m, "GradProbeReport")
      .def_readonly("category_shared", &GradProbeReport::category_shared)
      .def_readonly("category_head", &GradProbeReport::category_head)
      .def_readonly("total_shared", &GradProbeReport::total_shared)
      .def_readonly("total_category", &GradProbeReport::total_category)
      .def_readonly("total_pose", &GradProbeReport::total_pose)
      .def_readonly("pose_induced_shared", &GradProbeReport::pose_induced_shared)
      .def_readonly("shared_count", &GradProbeReport::shared_count)
      .def_readonly("category_count", &GradProbeReport::category_count)
      .def_readonly("pose_count", &GradProbeReport::pose_count)
      .def_static("rms", &GradProbeReport::rms);

  py::class_<Model>(m, "Model")
      .def_static("create", &Model::create, py::arg("spec"), py::arg("arch"), py::arg("seed") = 1)
      .def_static("load", &Model::load)
      .def("save", &Model::save)
      .def_readonly("arch", &Model::kind)
      .def_property_readonly("epoch", [](const Model& m) { return m.state.epoch; })
      .def_property_readonly("node_names", [](const Model& m) {
        std::vector<std::string> out;
        for (const auto& n : m.graph.nodes()) out.push_back(n.name);
        return out;
      })
      .def("parameters", &Model::parameters)
      .def("partitions", &Model::partitions)
      .def("set_parameter", &Model::set_parameter)
      .def(
          "train",
          [](Model& m, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
             const std::function<void(py::dict)>& on_epoch) {
            EpochCallback<float> cb;
            if (on_epoch) cb = [&](const EpochLog& l, const TrainState<float>&) { on_epoch(log_dict(l)); };
            py::list out;
            for (const auto& l : train<float>(m.graph, m.state, train_set, test_set, cfg, cb)) out.append(log_dict(l));
            return out;
          },
          py::arg("train_set"), py::arg("test_set") = nullptr, py::arg("config"), py::arg("on_epoch") = nullptr,
          "Trains from the current epoch up to config.epochs; returns one dict per epoch.")
      .def("accuracy", [](const Model& m, const Dataset& d) { return accuracy(m.graph, m.state.params, d); })
      .def("evaluate",
           [](const Model& m, const Dataset& d) {
             const auto r = evaluate(m.graph, m.state.params, d);
             py::dict out;
             out["samples"] = r.samples;
             out["accuracy"] = r.accuracy;
             out["map"] = r.map;
             out["class_ap"] = r.class_ap;
             out["confusion"] = r.confusion;
             out["pose_accuracy"] = r.pose_accuracy;
             return out;
           })
      .def(
          "predict",
          [](const Model& m, const Dataset& d, bool pose_head) {
            const auto s = predict_scores(m.graph, m.state.params, d, pose_head);
            const auto k = d.size() ? s.size() / d.size() : 0;
            py::array_t<double> a({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(k)});
            std::copy(s.begin(), s.end(), a.mutable_data());
            return a;
          },
          py::arg("data"), py::arg("pose_head") = false, "Eval-mode softmax probabilities, N x K.")
      .def("prune", &Model::pruned)
      .def("transplant_to", &Model::transplant_to, py::arg("arch"), py::arg("seed") = 1)
      .def(
          "gradient_probe",
          [](const Model& m, const Dataset& d, std::size_t batches, std::size_t batch_size, std::uint64_t seed,
             std::map<std::string, double> weights) {
            SinkWeights w(weights.begin(), weights.end());
            if (w.empty()) {
              w[std::string(kCategorySink)] = 1.0;
              if (m.graph.has_sink(kPoseSink)) w[std::string(kPoseSink)] = m.spec.lambda;
            }
            return gradient_probe(m.graph, m.state.params, probe_batches<float>(d, batches, batch_size, seed), w);
          },
          py::arg("data"), py::arg("batches") = 8, py::arg("batch_size") = 64, py::arg("seed") = 1,
          py::arg("weights") = std::map<std::string, double>{})
      .def("decoupleness",
           [](const Model& m, const std::string& layer, const Dataset& d) {
             return decoupleness(unit_entropy<float>(m.graph, m.state.params, layer, d));
           })
      .def(
          "responses",
          [](const Model& m, const std::string& layer, const Dataset& d, bool max) {
            std::size_t units = 0;
            const auto r = layer_responses<float>(m.graph, m.state.params, layer, d, max ? Reduce::Max : Reduce::Mean,
                                                  &units);
            py::array_t<double> a({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(units)});
            std::copy(r.begin(), r.end(), a.mutable_data());
            return a;
          },
          py::arg("layer"), py::arg("data"), py::arg("spatial_max") = false);

  m.def(
      "entropy_bits", [](const Array& mass) { return entropy_bits({mass.data(), static_cast<std::size_t>(mass.size())}); },
      "Shannon entropy in bits of a normalized non-negative mass vector.");
  m.def(
      "project_2d",
      [](const Array& features) {
        if (features.ndim() != 2) throw ShapeError("features must be N x D");
        const auto p = project_2d({features.data(), static_cast<std::size_t>(features.size())},
                                  static_cast<std::size_t>(features.shape(1)));
        py::array_t<double> coords({features.shape(0), py::ssize_t{2}});
        std::copy(p.coords.begin(), p.coords.end(), coords.mutable_data());
        return py::make_tuple(coords, p.eigenvalues);
      },
      "PCA projection onto the top two principal directions; returns (coords, spectrum).");

  auto k = m.def_submodule("kernels", "64-bit layer kernels");
  k.def(
      "conv2d",
      [](const Array& x, const Array& w, const Array& b, std::size_t stride, std::size_t pad) {
        return to_numpy(kernels::conv2d_forward(to_tensor(x), to_tensor(w), to_tensor(b), stride, pad));
      },
      py::arg("input"), py::arg("kernels"), py::arg("bias"), py::arg("stride") = 1, py::arg("pad") = 0);
  k.def(
      "conv2d_backward",
      [](const Array& g, const Array& x, const Array& w, std::size_t stride, std::size_t pad) {
        const auto r = kernels::conv2d_backward(to_tensor(g), to_tensor(x), to_tensor(w), stride, pad);
        return py::make_tuple(to_numpy(r.input), to_numpy(r.kernels), to_numpy(r.bias));
      },
      py::arg("grad_out"), py::arg("input"), py::arg("kernels"), py::arg("stride") = 1, py::arg("pad") = 0);
  k.def("maxpool", [](const Array& x, std::size_t window, std::size_t stride) {
    return to_numpy(kernels::maxpool_forward(to_tensor(x), window, stride).output);
  });
  k.def("fc", [](const Array& x, const Array& w, const Array& b) {
    return to_numpy(kernels::fc_forward(to_tensor(x), to_tensor(w), to_tensor(b)));
  });
  k.def("softmax_cross_entropy", [](const Array& logits, const std::vector<std::size_t>& labels) {
    const auto r = kernels::softmax_ce_batch(to_tensor(logits), labels);
    return py::make_tuple(r.loss, to_numpy(r.probabilities));
  });
}
