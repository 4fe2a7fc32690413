#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "rvi/datasets.hpp"
#include "rvi/error.hpp"
#include "rvi/evaluate.hpp"
#include "rvi/harness.hpp"
#include "rvi/objective.hpp"
#include "rvi/optimize.hpp"
#include "rvi/relay_posterior.hpp"

namespace py = pybind11;
using namespace rvi;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  if (t.numel()) std::memcpy(out.mutable_data(), t.values().data(), t.numel() * sizeof(double));
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::dict record_dict(const RunRecord& r) {
  py::dict d;
  const auto cols = run_csv_columns();
  const auto row = csv_row(r);
  std::size_t start = 0;
  for (const auto& c : cols) {
    const auto end = row.find(',', start);
    d[py::str(c)] = row.substr(start, end == std::string::npos ? std::string::npos : end - start);
    start = end + 1;
  }
  // Numeric columns as floats for convenience.
  for (const char* k : {"recon", "kl", "elbo", "train_metric", "test_metric", "imputation_metric", "wall_seconds"}) {
    const std::string s = d[k].cast<std::string>();
    d[k] = s.empty() ? std::nan("") : std::stod(s);
  }
  d["epoch"] = r.epoch;
  d["seed"] = r.seed;
  return d;
}

py::list records_list(const std::vector<RunRecord>& rs) {
  py::list out;
  for (const auto& r : rs) out.append(record_dict(r));
  return out;
}

TrainConfig make_config(const std::string& method, const std::vector<std::size_t>& arch, std::size_t latent_dim,
                        double network_lr, double posterior_lr, std::size_t epochs, std::size_t batch_size,
                        std::uint64_t seed, const std::vector<std::size_t>& groups, double budget_fraction,
                        const std::string& relay_mode) {
  TrainConfig c;
  c.method = parse_method(method);
  c.arch = arch;
  c.latent_dim = latent_dim;
  c.network_lr = network_lr;
  c.posterior_lr = posterior_lr;
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.seed = seed;
  c.relay.group_sizes = groups;
  c.relay.budget_fraction = budget_fraction;
  c.relay.mode = parse_relay_mode(relay_mode);
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Relay variational inference: encoderless posteriors with shared relay vectors.";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<MaskedDataset>(m, "Dataset")
      .def(py::init([](const Array& x, std::optional<Array> mask, std::vector<int> labels) {
             MaskedDataset ds;
             ds.x = from_numpy(x);
             if (ds.x.rank() != 2) throw DimensionError("x must be a matrix");
             ds.mask = mask ? from_numpy(*mask) : Tensor::full(ds.x.shape(), 1.0);
             ds.labels = std::move(labels);
             for (int l : ds.labels) ds.num_classes = std::max<std::size_t>(ds.num_classes, l + 1);
             ds.image = ds.x.cols() == kImageDim;
             return ds;
           }),
           py::arg("x"), py::arg("mask") = py::none(), py::arg("labels") = std::vector<int>{})
      .def_property_readonly("x", [](const MaskedDataset& d) { return to_numpy(d.x); })
      .def_property_readonly("mask", [](const MaskedDataset& d) { return to_numpy(d.mask); })
      .def_readonly("labels", &MaskedDataset::labels)
      .def_readonly("num_classes", &MaskedDataset::num_classes)
      .def("__len__", &MaskedDataset::size)
      .def_property_readonly("dim", &MaskedDataset::dim)
      .def("observed_count", &MaskedDataset::observed_count);

  m.def("gen_artificial", py::overload_cast<std::size_t, std::uint64_t>(&gen_artificial), py::arg("n"),
        py::arg("seed"), "Linear mixture of ten source distributions in 300 dimensions.");
  m.def(
      "apply_missing",
      [](const MaskedDataset& ds, const std::string& spec, std::uint64_t seed) {
        return apply_missing(ds, MissingSpec::parse(spec, seed));
      },
      py::arg("dataset"), py::arg("spec"), py::arg("seed"), "spec: none, mcar:<rate> or boxes:<count>[:<side>]");
  m.def(
      "load_data",
      [](const std::string& dataset, std::size_t train_size, std::size_t test_size, std::uint64_t data_seed,
         const std::string& data_dir) {
        DataOptions o;
        o.dataset = dataset;
        o.train_size = train_size;
        o.test_size = test_size;
        o.data_seed = data_seed;
        o.data_dir = data_dir;
        const DataSplit s = load_data(o);
        return py::make_tuple(s.train, s.test);
      },
      py::arg("dataset"), py::arg("train_size") = 0, py::arg("test_size") = 0, py::arg("data_seed") = 0,
      py::arg("data_dir") = "");
  m.def("load_idx", &load_idx, py::arg("images"), py::arg("labels"));

  m.def("budget_for", &budget_for, py::arg("fraction"), py::arg("k"));
  m.def(
      "select_top", [](const std::vector<double>& c, std::size_t budget) { return select_top(c, budget); },
      py::arg("coeffs"), py::arg("budget"));

  m.def(
      "kl_diag_gaussian",
      [](const Array& mu, const Array& sigma) { return kl_diag_gaussian(from_numpy(mu), from_numpy(sigma)).item(); },
      py::arg("mu"), py::arg("sigma"));
  m.def(
      "elastic_metric",
      [](const Array& x, const Array& mask, const Array& recon) {
        return elastic_metric(from_numpy(x), from_numpy(mask), from_numpy(recon));
      },
      py::arg("x"), py::arg("mask"), py::arg("recon"));
  m.def(
      "imputation_loss",
      [](const Array& x, const Array& mask, const Array& recon) {
        return imputation_loss(from_numpy(x), from_numpy(mask), from_numpy(recon));
      },
      py::arg("x"), py::arg("mask"), py::arg("recon"));

  py::class_<TrainedModel>(m, "Model")
      .def_property_readonly("method", [](const TrainedModel& t) { return to_string(t.method); })
      .def_property_readonly("records", [](const TrainedModel& t) { return records_list(t.records); })
      .def_property_readonly("budgets",
                             [](const TrainedModel& t) {
                               return t.bank ? t.bank->budgets() : std::vector<std::size_t>{};
                             })
      .def("posterior_means", [](const TrainedModel& t, const MaskedDataset& d) { return to_numpy(posterior_means(t, d)); })
      .def("reconstruct",
           [](const TrainedModel& t, const MaskedDataset& d) {
             return to_numpy(reconstruct(t.decoder, posterior_means(t, d)));
           })
      .def(
          "generate", [](const TrainedModel& t, std::size_t n, std::uint64_t seed) { return to_numpy(generate(t.decoder, n, seed)); },
          py::arg("n"), py::arg("seed"))
      .def("decoder_checksum", [](const TrainedModel& t) { return parameter_checksum(t.decoder.parameters()); })
      .def("save", [](const TrainedModel& t, const std::filesystem::path& dir) { save_checkpoint(dir, t, DataOptions{}); });

  m.def(
      "train",
      [](const MaskedDataset& ds, const std::string& method, std::uint64_t seed, std::size_t epochs,
         const std::vector<std::size_t>& arch, std::size_t latent_dim, double network_lr, double posterior_lr,
         std::size_t batch_size, const std::vector<std::size_t>& groups, double budget_fraction,
         const std::string& relay_mode) {
        const TrainConfig c = make_config(method, arch, latent_dim, network_lr, posterior_lr, epochs, batch_size,
                                          seed, groups, budget_fraction, relay_mode);
        py::gil_scoped_release release;
        return train(ds, c);
      },
      py::arg("dataset"), py::arg("method") = "rvi", py::arg("seed") = 0, py::arg("epochs") = 250,
      py::arg("arch") = std::vector<std::size_t>{64, 64}, py::arg("latent_dim") = 64, py::arg("network_lr") = 1e-3,
      py::arg("posterior_lr") = 1e-3, py::arg("batch_size") = 256,
      py::arg("groups") = std::vector<std::size_t>{25, 50, 100}, py::arg("budget_fraction") = 0.5,
      py::arg("relay_mode") = "topk");

  m.def(
      "infer",
      [](const TrainedModel& model, const MaskedDataset& test, std::size_t steps, double lr, std::size_t batch_size,
         std::uint64_t seed) {
        InferenceResult r;
        {
          py::gil_scoped_release release;
          r = infer_test(model, test, {steps, lr, batch_size, seed});
        }
        py::dict out;
        out["mu"] = to_numpy(r.mu);
        out["sigma"] = to_numpy(r.sigma);
        out["records"] = records_list(r.records);
        return out;
      },
      py::arg("model"), py::arg("test"), py::arg("steps") = 250, py::arg("lr") = 1e-3, py::arg("batch_size") = 256,
      py::arg("seed") = 0, "Test-time inference; returns posterior means, scales and per-step records.");

  m.def("mean_imputation_baseline", &mean_imputation_baseline, py::arg("reference"), py::arg("test"));

  m.def(
      "supervised_probe",
      [](const Array& features, const std::vector<int>& labels, std::size_t num_classes, std::uint64_t seed,
         std::size_t epochs, bool shuffle_labels) {
        ProbeConfig c;
        c.seed = seed;
        c.epochs = epochs;
        c.shuffle_labels = shuffle_labels;
        const Tensor f = from_numpy(features);
        ProbeResult r;
        {
          py::gil_scoped_release release;
          r = supervised_probe(f, labels, num_classes, c);
        }
        py::list out;
        for (const auto& e : r.epochs) out.append(py::make_tuple(e.epoch, e.loss, e.accuracy));
        return out;
      },
      py::arg("features"), py::arg("labels"), py::arg("num_classes"), py::arg("seed") = 0, py::arg("epochs") = 250,
      py::arg("shuffle_labels") = false, "Returns (epoch, loss, accuracy) tuples.");
}
