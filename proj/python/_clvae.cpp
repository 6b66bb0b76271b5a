// Python bindings. Configs cross the boundary as JSON text; the Python
// package wraps them as dicts.
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "clvae/clustering.hpp"
#include "clvae/config.hpp"
#include "clvae/errors.hpp"
#include "clvae/losses.hpp"
#include "clvae/metrics.hpp"
#include "clvae/pipeline.hpp"

namespace py = pybind11;
using namespace clvae;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Accepts 1-D to 4-D arrays; missing leading dims become 1.
Tensor to_tensor(const Array& a) {
  if (a.ndim() < 1 || a.ndim() > 4) throw ShapeError("expected an array with 1 to 4 dimensions");
  int dims[4] = {1, 1, 1, 1};
  for (py::ssize_t i = 0; i < a.ndim(); ++i) dims[4 - a.ndim() + i] = static_cast<int>(a.shape(i));
  Tensor t(dims[0], dims[1], dims[2], dims[3]);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

ExperimentConfig parse(const std::string& text) { return config_from_json(nlohmann::json::parse(text)); }

std::vector<Label> to_labels(const std::vector<int>& v) {
  std::vector<Label> out;
  for (int x : v) out.push_back(x ? Label::Anomaly : Label::Normal);
  return out;
}

}  // namespace

PYBIND11_MODULE(_clvae, m) {
  m.doc() = "Conditioned-latent VAE anomaly classification";

  static py::exception<Error> base(m, "ClvaeError");
  static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
  static py::exception<DataError> data_error(m, "DataError", base.ptr());
  static py::exception<NumericalError> numerical_error(m, "NumericalError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      config_error(e.what());
    } catch (const NumericalError& e) {
      numerical_error(e.what());
    } catch (const DataError& e) {
      data_error(e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  m.def("default_config", [] { return config_to_json(ExperimentConfig{}).dump(); });
  m.def("normalize_config", [](const std::string& text) { return config_to_json(parse(text)).dump(); });
  m.def("config_hash", [](const std::string& text) { return parse(text).hash(); });

  m.def("generate", [](const std::string& text) { return cmd_generate(parse(text)); });
  m.def("train", [](const std::string& text) {
    const ExperimentConfig c = parse(text);
    py::gil_scoped_release release;
    return cmd_train(c);
  });
  m.def("evaluate", [](const std::string& text, const std::string& checkpoint) {
    const ExperimentConfig c = parse(text);
    py::gil_scoped_release release;
    return cmd_eval(c, checkpoint);
  }, py::arg("config"), py::arg("checkpoint") = "");
  m.def("sweep", [](const std::string& text) {
    const ExperimentConfig c = parse(text);
    py::gil_scoped_release release;
    return cmd_sweep(c);
  });
  m.def("report", [](const std::filesystem::path& run_dir) { return cmd_report(run_dir); });

  m.def("reconstruction_loss", [](const Array& x, const Array& y) {
    return reconstruction_loss(to_tensor(x), to_tensor(y));
  });
  m.def("kl_divergence", [](const Array& mu, const Array& logvar, const Array& prior) {
    return kl_divergence(to_tensor(mu), to_tensor(logvar), to_tensor(prior));
  });
  m.def("distance_loss", [](const std::vector<double>& a, const std::vector<double>& b) {
    return distance_loss(a, b);
  });
  m.def("cluster_loss", [](const Array& z, const Array& means) {
    return cluster_loss(to_tensor(z), to_tensor(means));
  });

  m.def("roc_auc", [](const std::vector<double>& scores, const std::vector<int>& labels) {
    return roc_curve(scores, to_labels(labels)).auc;
  }, "AUROC with label 1 as the anomalous class.");
  m.def("frechet_distance", [](const Eigen::VectorXd& mean_a, const Eigen::MatrixXd& cov_a,
                               const Eigen::VectorXd& mean_b, const Eigen::MatrixXd& cov_b) {
    return frechet_distance({mean_a, cov_a, 2}, {mean_b, cov_b, 2});
  });
  m.def("kmeans", [](const Eigen::MatrixXd& points, int k, std::uint64_t seed) {
    const ClusterModel model = kmeans_fit(points, {k, seed});
    return py::make_tuple(Eigen::MatrixXd(model.centroids), model.inertia);
  }, py::arg("points"), py::arg("k") = 2, py::arg("seed") = 0);
}
