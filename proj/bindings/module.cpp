#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "sngd/acceptance.hpp"
#include "sngd/harness.hpp"
#include "sngd/mnist.hpp"
#include "sngd/oracles.hpp"
#include "sngd/samplers.hpp"

namespace py = pybind11;
using namespace sngd;

namespace {

// Keeps the model and dataset behind a SamplingProblem alive from Python.
struct BoundProblem {
  std::shared_ptr<Model> model;
  std::shared_ptr<Dataset> data;
  SamplingProblem problem;
};

BoundProblem bind_problem(const Model& model, const Dataset& data, const SamplerConfig& cfg,
                          const FisherOptions& fisher) {
  BoundProblem bound;
  bound.model = std::make_shared<Model>(model);
  bound.data = std::make_shared<Dataset>(data);
  bound.problem = make_problem(*bound.model, *bound.data, cfg, fisher);
  return bound;
}

BoundProblem bind_toy_problem(const Toy1D& toy, double damping) {
  BoundProblem bound;
  bound.problem = make_toy_problem(toy, damping);
  return bound;
}

BoundProblem bind_logistic_1d(const Dataset& data, double damping) {
  BoundProblem bound;
  bound.data = std::make_shared<Dataset>(data);
  bound.problem = make_logistic_1d_problem(*bound.data, damping);
  return bound;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Posterior sampling with natural-gradient and Langevin update rules";

  py::register_exception<FactorizationError>(m, "FactorizationError");
  py::register_exception<UnsupportedModelError>(m, "UnsupportedModelError");
  py::register_exception<DivergenceError>(m, "DivergenceError");

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("normal", &Rng::normal)
      .def("uniform", &Rng::uniform)
      .def("uniform_int", &Rng::uniform_int, py::arg("n"))
      .def("split", &Rng::split, py::arg("stream"))
      .def_property_readonly("seed", &Rng::seed);

  py::class_<MetricMatrix>(m, "MetricMatrix")
      .def(py::init<const Eigen::MatrixXd&, double>(), py::arg("entries"),
           py::arg("damping_applied") = 0.0)
      .def_property_readonly("dim", &MetricMatrix::dim)
      .def_property_readonly("entries", &MetricMatrix::entries)
      .def_property_readonly("damping_applied", &MetricMatrix::damping_applied)
      .def_property_readonly("factor", &MetricMatrix::factor)
      .def("factorizable", &MetricMatrix::factorizable)
      .def("solve", [](const MetricMatrix& g, const Eigen::VectorXd& v) { return g.solve(v); })
      .def("log_det", &MetricMatrix::log_det)
      .def("condition_estimate", &MetricMatrix::condition_estimate,
           py::arg("iterations") = 12);

  py::class_<MetricDerivatives>(m, "MetricDerivatives")
      .def(py::init([](std::vector<Eigen::MatrixXd> blocks) {
             MetricDerivatives d;
             d.per_coordinate = std::move(blocks);
             return d;
           }),
           py::arg("per_coordinate"))
      .def_readwrite("per_coordinate", &MetricDerivatives::per_coordinate);

  py::class_<NoiseDraw>(m, "NoiseDraw")
      .def_readonly("vector", &NoiseDraw::vector)
      .def_readonly("scale", &NoiseDraw::scale);

  m.def("damp", &damp, py::arg("f"), py::arg("delta"));
  m.def("damp_to_factorizable", &damp_to_factorizable, py::arg("f"), py::arg("delta"));
  m.def("draw_noise", &draw_noise, py::arg("g"), py::arg("temperature"), py::arg("eps"),
        py::arg("data_size"), py::arg("rng"));
  m.def("jeffreys_correction", &jeffreys_correction, py::arg("g"), py::arg("dg"));
  m.def("flat_correction", &flat_correction, py::arg("g"), py::arg("dg"));
  m.def("verify_logdet_identity", &verify_logdet_identity, py::arg("g"), py::arg("dg"),
        py::arg("step") = 1e-5);

  py::enum_<ModelKind>(m, "ModelKind")
      .value("logistic", ModelKind::logistic)
      .value("softmax", ModelKind::softmax)
      .value("mlp", ModelKind::mlp);

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init([](ModelKind kind, int input_dim, int class_count, int hidden_units,
                       double l2) {
             return ModelSpec{kind, input_dim, class_count, hidden_units, l2};
           }),
           py::arg("kind"), py::arg("input_dim"), py::arg("class_count") = 2,
           py::arg("hidden_units") = 0, py::arg("l2") = 0.0)
      .def_readwrite("kind", &ModelSpec::kind)
      .def_readwrite("input_dim", &ModelSpec::input_dim)
      .def_readwrite("class_count", &ModelSpec::class_count)
      .def_readwrite("hidden_units", &ModelSpec::hidden_units)
      .def_readwrite("l2", &ModelSpec::l2);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init([](Eigen::MatrixXd inputs, Eigen::VectorXi labels) {
             Dataset d;
             d.inputs = std::move(inputs);
             d.labels = std::move(labels);
             return d;
           }),
           py::arg("inputs"), py::arg("labels"))
      .def_readwrite("inputs", &Dataset::inputs)
      .def_readwrite("labels", &Dataset::labels)
      .def_property_readonly("size", &Dataset::size)
      .def_property_readonly("input_dim", &Dataset::input_dim);

  py::class_<Model>(m, "Model")
      .def(py::init<ModelSpec>(), py::arg("spec"))
      .def_property_readonly("spec", &Model::spec)
      .def_property_readonly("param_dim", &Model::param_dim)
      .def_property_readonly("class_count", &Model::class_count)
      .def("predict", &Model::predict, py::arg("w"), py::arg("input"))
      .def("predict_batch", &Model::predict_batch, py::arg("w"), py::arg("inputs"))
      .def("loss", &Model::loss, py::arg("w"), py::arg("input"), py::arg("label"))
      .def("grad", &Model::grad, py::arg("w"), py::arg("input"), py::arg("label"))
      .def("grad_for_class", &Model::grad_for_class, py::arg("w"), py::arg("input"),
           py::arg("class_index"))
      .def("total_cost", &Model::total_cost, py::arg("w"), py::arg("data"))
      .def("grad_total", &Model::grad_total, py::arg("w"), py::arg("data"))
      .def("sample_label", &Model::sample_label, py::arg("w"), py::arg("input"), py::arg("rng"))
      .def("hessian_total", &Model::hessian_total, py::arg("w"), py::arg("data"))
      .def("class_to_label", &Model::class_to_label, py::arg("class_index"))
      .def("label_to_class", &Model::label_to_class, py::arg("label"));

  m.def("generate_synthetic_logistic", &generate_synthetic_logistic, py::arg("n_examples"),
        py::arg("input_dim"), py::arg("w_true"), py::arg("rng"));
  m.def("generate_synthetic_classification", &generate_synthetic_classification,
        py::arg("teacher"), py::arg("w_teacher"), py::arg("n_examples"), py::arg("rng"),
        py::arg("input_scale") = 1.0);
  m.def("save_dataset", &save_dataset, py::arg("data"), py::arg("path"));
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("load_mnist_projected", &load_mnist_projected, py::arg("image_path"),
        py::arg("label_path"), py::arg("projection_dim"), py::arg("n_examples"), py::arg("rng"));

  py::enum_<FisherSource>(m, "FisherSource")
      .value("exact_expectation", FisherSource::exact_expectation)
      .value("sampled_labels", FisherSource::sampled_labels)
      .value("empirical", FisherSource::empirical);

  py::enum_<DerivativeMode>(m, "DerivativeMode")
      .value("analytic", DerivativeMode::analytic)
      .value("finite_difference", DerivativeMode::finite_difference);

  py::class_<FisherEstimate>(m, "FisherEstimate")
      .def_readonly("matrix", &FisherEstimate::matrix)
      .def_readonly("source", &FisherEstimate::source)
      .def_readonly("sample_size", &FisherEstimate::sample_size);

  py::class_<FisherMovingAverage>(m, "FisherMovingAverage")
      .def(py::init([](const FisherEstimate& current, double smoothing) {
             return FisherMovingAverage{current, smoothing};
           }),
           py::arg("current"), py::arg("smoothing"))
      .def(py::init([](double smoothing) {
             FisherMovingAverage ma;
             ma.smoothing = smoothing;
             return ma;
           }),
           py::arg("smoothing"))
      .def_readonly("current", &FisherMovingAverage::current)
      .def_readonly("smoothing", &FisherMovingAverage::smoothing);

  m.def("fisher_exact", &fisher_exact, py::arg("model"), py::arg("w"), py::arg("inputs"));
  m.def("fisher_sampled", &fisher_sampled, py::arg("model"), py::arg("w"), py::arg("inputs"),
        py::arg("rng"));
  m.def("fisher_empirical", &fisher_empirical, py::arg("model"), py::arg("w"), py::arg("data"));
  m.def("gradient_noise_covariance", &gradient_noise_covariance, py::arg("model"), py::arg("w"),
        py::arg("data"));
  m.def("fisher_derivatives", &fisher_derivatives, py::arg("model"), py::arg("w"),
        py::arg("inputs"), py::arg("mode"), py::arg("fd_step") = 1e-5);
  m.def("moving_average_update", &moving_average_update, py::arg("state"), py::arg("incoming"));
  m.def("fisher_ma_smoothing", &fisher_ma_smoothing, py::arg("eps"));

  py::enum_<SamplerRule>(m, "SamplerRule")
      .value("langevin", SamplerRule::langevin)
      .value("precond_static", SamplerRule::precond_static)
      .value("riemannian_jeffreys", SamplerRule::riemannian_jeffreys)
      .value("riemannian_flat", SamplerRule::riemannian_flat)
      .value("minibatch_ngd", SamplerRule::minibatch_ngd)
      .value("sngd", SamplerRule::sngd);

  py::class_<SamplerConfig>(m, "SamplerConfig")
      .def(py::init<>())
      .def_readwrite("rule", &SamplerConfig::rule)
      .def_readwrite("eps", &SamplerConfig::eps)
      .def_readwrite("temperature", &SamplerConfig::temperature)
      .def_readwrite("batch_size", &SamplerConfig::batch_size)
      .def_readwrite("damping", &SamplerConfig::damping)
      .def_readwrite("burn_in_steps", &SamplerConfig::burn_in_steps)
      .def_readwrite("sample_steps", &SamplerConfig::sample_steps)
      .def_readwrite("thinning", &SamplerConfig::thinning)
      .def_readwrite("seed", &SamplerConfig::seed)
      .def_readwrite("refresh_metric", &SamplerConfig::refresh_metric);

  py::class_<FisherOptions>(m, "FisherOptions")
      .def(py::init<>())
      .def_readwrite("source", &FisherOptions::source)
      .def_readwrite("derivative_mode", &FisherOptions::derivative_mode)
      .def_readwrite("fd_step", &FisherOptions::fd_step)
      .def_readwrite("ma_smoothing", &FisherOptions::ma_smoothing)
      .def_readwrite("estimation_batch", &FisherOptions::estimation_batch);

  m.def("temperature", &temperature, py::arg("eps"), py::arg("data_size"),
        py::arg("batch_size"));
  m.def("batch_for_temperature", &batch_for_temperature, py::arg("eps"), py::arg("data_size"),
        py::arg("temperature"));
  m.def(
      "draw_minibatch",
      [](std::int64_t data_size, int batch_size, Rng& rng) {
        return draw_minibatch(data_size, batch_size, rng).indices;
      },
      py::arg("data_size"), py::arg("batch_size"), py::arg("rng"));

  py::class_<Toy1D>(m, "Toy1D")
      .def(py::init([](std::function<double(double)> cost, std::function<double(double)> cost_grad,
                       std::function<double(double)> metric,
                       std::function<double(double)> metric_grad, const std::string& name) {
             return Toy1D{name, std::move(cost), std::move(cost_grad), std::move(metric),
                          std::move(metric_grad)};
           }),
           py::arg("cost"), py::arg("cost_grad"), py::arg("metric"), py::arg("metric_grad"),
           py::arg("name") = "custom")
      .def_readonly("name", &Toy1D::name);
  m.def("gaussian_toy", &gaussian_toy);
  m.def("exp_metric_toy", &exp_metric_toy);
  m.def("polynomial_metric_toy", &polynomial_metric_toy);

  py::class_<BoundProblem>(m, "SamplingProblem")
      .def_property_readonly("dim", [](const BoundProblem& p) { return p.problem.dim; })
      .def_property_readonly("data_size",
                             [](const BoundProblem& p) { return p.problem.data_size; })
      .def("cost",
           [](const BoundProblem& p, const Eigen::VectorXd& w) { return p.problem.cost(w); })
      .def("mean_grad", [](const BoundProblem& p, const Eigen::VectorXd& w) {
        return p.problem.mean_grad(w);
      });

  m.def("make_problem", &bind_problem, py::arg("model"), py::arg("data"), py::arg("config"),
        py::arg("fisher") = FisherOptions{});
  m.def("make_toy_problem", &bind_toy_problem, py::arg("toy"), py::arg("damping") = 0.0);
  m.def("make_logistic_1d_problem", &bind_logistic_1d, py::arg("data"), py::arg("damping"));

  py::class_<Chain>(m, "Chain")
      .def_readonly("samples", &Chain::samples)
      .def_readonly("grad_norms", &Chain::grad_norms)
      .def_readonly("metric_conditions", &Chain::metric_conditions)
      .def_readonly("realized_temperature", &Chain::realized_temperature)
      .def_readonly("seed", &Chain::seed)
      .def_property_readonly("size", &Chain::size)
      .def("sample_mean", &Chain::sample_mean)
      .def("sample_covariance", &Chain::sample_covariance);

  m.def(
      "run_chain",
      [](const BoundProblem& problem, const SamplerConfig& cfg, const Eigen::VectorXd& initial,
         std::uint64_t seed) { return run_chain(problem.problem, cfg, initial, Rng(seed)); },
      py::arg("problem"), py::arg("config"), py::arg("initial"), py::arg("seed"));
  m.def("save_chain", &save_chain, py::arg("chain"), py::arg("config"), py::arg("spec_hash"),
        py::arg("path"));
  m.def("load_chain", &load_chain, py::arg("path"));
  m.def("model_spec_hash", &model_spec_hash, py::arg("spec"));

  py::class_<LaplaceApprox>(m, "LaplaceApprox")
      .def_readonly("mode", &LaplaceApprox::mode)
      .def_readonly("covariance", &LaplaceApprox::covariance);

  m.def(
      "minimize",
      [](const Model& model, const Dataset& data, const Eigen::VectorXd& initial,
         double tolerance) { return minimize(model, data, initial, tolerance); },
      py::arg("model"), py::arg("data"), py::arg("initial"), py::arg("tolerance") = 1e-8);
  m.def(
      "laplace",
      [](const Model& model, const Dataset& data, double temperature, double tolerance) {
        return laplace(model, data, temperature, tolerance);
      },
      py::arg("model"), py::arg("data"), py::arg("temperature"), py::arg("tolerance") = 1e-8);

  py::enum_<DensityBias>(m, "DensityBias")
      .value("jeffreys", DensityBias::jeffreys)
      .value("flat", DensityBias::flat);

  py::class_<GridSpec>(m, "GridSpec")
      .def(py::init([](double lo, double hi, int points) {
             return GridSpec{lo, hi, points};
           }),
           py::arg("lo"), py::arg("hi"), py::arg("points"))
      .def_readwrite("lo", &GridSpec::lo)
      .def_readwrite("hi", &GridSpec::hi)
      .def_readwrite("points", &GridSpec::points);

  py::class_<DensityGrid>(m, "DensityGrid")
      .def_readonly("grid", &DensityGrid::grid)
      .def_readonly("density", &DensityGrid::density)
      .def("cell_masses", &DensityGrid::cell_masses);

  m.def("stationary_density_1d", &stationary_density_1d, py::arg("cost"), py::arg("metric"),
        py::arg("temperature"), py::arg("bias"), py::arg("grid_spec"));
  m.def(
      "total_variation",
      [](const std::vector<double>& samples, const DensityGrid& oracle) {
        return total_variation(samples, oracle);
      },
      py::arg("samples"), py::arg("oracle"));
  m.def(
      "total_variation_grids",
      [](const DensityGrid& a, const DensityGrid& b) { return total_variation(a, b); },
      py::arg("a"), py::arg("b"));

  py::class_<GaussianDistance>(m, "GaussianDistance")
      .def_readonly("mean_mahalanobis", &GaussianDistance::mean_mahalanobis)
      .def_readonly("cov_frobenius_rel", &GaussianDistance::cov_frobenius_rel)
      .def_readonly("eig_ratio_max", &GaussianDistance::eig_ratio_max);

  m.def("gaussian_distance", &gaussian_distance, py::arg("sample_mean"), py::arg("sample_cov"),
        py::arg("reference"));

  // Experiment harness.
  py::enum_<SweepMode>(m, "SweepMode")
      .value("precond_langevin", SweepMode::precond_langevin)
      .value("ngd", SweepMode::ngd);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("model", &ExperimentConfig::model)
      .def_readwrite("data_source", &ExperimentConfig::data_source)
      .def_readwrite("n_train", &ExperimentConfig::n_train)
      .def_readwrite("n_test", &ExperimentConfig::n_test)
      .def_readwrite("w_true", &ExperimentConfig::w_true)
      .def_readwrite("teacher_gain", &ExperimentConfig::teacher_gain)
      .def_readwrite("input_scale", &ExperimentConfig::input_scale)
      .def_readwrite("sampler", &ExperimentConfig::sampler)
      .def_readwrite("fisher", &ExperimentConfig::fisher)
      .def_readwrite("sweep_mode", &ExperimentConfig::sweep_mode)
      .def_readwrite("sweep_values", &ExperimentConfig::sweep_values)
      .def_readwrite("init_descent_steps", &ExperimentConfig::init_descent_steps)
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("out_dir", &ExperimentConfig::out_dir)
      .def_readwrite("workers", &ExperimentConfig::workers);

  py::class_<EnsembleResult>(m, "EnsembleResult")
      .def_readonly("sweep_value", &EnsembleResult::sweep_value)
      .def_readonly("temperature", &EnsembleResult::temperature)
      .def_readonly("batch_size", &EnsembleResult::batch_size)
      .def_readonly("ensemble_accuracy", &EnsembleResult::ensemble_accuracy)
      .def_readonly("ensemble_cross_entropy", &EnsembleResult::ensemble_cross_entropy)
      .def_readonly("single_accuracy", &EnsembleResult::single_accuracy)
      .def_readonly("single_cross_entropy", &EnsembleResult::single_cross_entropy)
      .def_readonly("diverged", &EnsembleResult::diverged);

  py::class_<EvalMetrics>(m, "EvalMetrics")
      .def_readonly("accuracy", &EvalMetrics::accuracy)
      .def_readonly("cross_entropy", &EvalMetrics::cross_entropy);

  m.def("ensemble_predict", &ensemble_predict, py::arg("chain"), py::arg("model"),
        py::arg("test_inputs"));
  m.def("evaluate", &evaluate, py::arg("probabilities"), py::arg("labels"), py::arg("model"));
  m.def("evaluate_chain", &evaluate_chain, py::arg("chain"), py::arg("model"), py::arg("test"));
  m.def("run_temperature_sweep", &run_temperature_sweep, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("run_batch_sweep", &run_batch_sweep, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("emit", &emit, py::arg("results"), py::arg("format"), py::arg("path"));
}
