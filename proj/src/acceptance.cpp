#include "sngd/acceptance.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

#include "sngd/harness.hpp"
#include "sngd/mnist.hpp"
#include "sngd/oracles.hpp"
#include "sngd/samplers.hpp"

namespace sngd::acceptance {

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(double v, int precision = 3) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

ExperimentConfig figure1_config(int workers) {
  ExperimentConfig cfg;
  cfg.model = ModelSpec{ModelKind::logistic, 2, 2, 0, 0.0};
  cfg.w_true = Eigen::Vector2d(16.0, 0.0);
  cfg.n_train = 1000;
  cfg.n_test = 100;
  cfg.sampler.eps = 0.1;
  cfg.sampler.temperature = 1.0;
  cfg.sampler.damping = 1e-4;
  cfg.sampler.burn_in_steps = 5000;
  cfg.sampler.sample_steps = 5000;
  cfg.seed = 1;
  cfg.workers = workers;
  return cfg;
}

// Criterion 1: both Figure-1 modes land on the Laplace oracle.
CriterionResult criterion1(const Options& options) {
  CriterionResult result;
  result.id = 1;
  result.name = "figure1 laplace agreement";
  ExperimentConfig cfg = figure1_config(options.workers);
  if (!options.out_dir.empty()) cfg.out_dir = options.out_dir;
  const Figure1Result fig = run_figure1(cfg, !options.out_dir.empty());

  const Figure1Variant* langevin = nullptr;
  const Figure1Variant* ngd = nullptr;
  for (const auto& v : fig.variants) {
    if (v.name == "fig1a_paper") langevin = &v;
    if (v.name == "fig1b_ngd") ngd = &v;
  }
  bool pass = true;
  std::ostringstream detail;
  for (const Figure1Variant* v : {langevin, ngd}) {
    const bool ok = v->distance.cov_frobenius_rel < 0.35 && v->distance.mean_mahalanobis < 0.5;
    pass = pass && ok;
    detail << v->name << ": covF=" << fmt(v->distance.cov_frobenius_rel)
           << " mahal=" << fmt(v->distance.mean_mahalanobis) << " (<0.35, <0.5) ";
  }
  // Cross-mode check: covariance eigenvalues within 2x of each other.
  {
    const Eigen::MatrixXd a = langevin->chain.sample_covariance();
    const MetricMatrix b(ngd->chain.sample_covariance());
    const Eigen::MatrixXd l = b.factor();
    const Eigen::MatrixXd whitened = l.triangularView<Eigen::Lower>().solve(
        Eigen::MatrixXd(l.triangularView<Eigen::Lower>().solve(a).transpose()));
    const Eigen::VectorXd eigs =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(whitened).eigenvalues();
    const bool ok = eigs.minCoeff() > 0.5 && eigs.maxCoeff() < 2.0;
    pass = pass && ok;
    detail << "cross-mode eig range [" << fmt(eigs.minCoeff()) << ", " << fmt(eigs.maxCoeff())
           << "] (within [0.5, 2])";
  }
  result.passed = pass;
  result.detail = detail.str();
  return result;
}

int argmin_xent(const std::vector<EnsembleResult>& results) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(results.size()); ++i) {
    if (results[i].diverged) continue;
    if (best < 0 || results[i].ensemble_cross_entropy < results[best].ensemble_cross_entropy) {
      best = i;
    }
  }
  return best;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Criterion 2: temperature-sweep ensemble cross-entropy minimum near T = 1
// for both sampler modes, median over 5 seeds.
CriterionResult criterion2(const Options& options) {
  CriterionResult result;
  result.id = 2;
  result.name = "temperature-sweep minimum";
  const std::vector<double> grid = {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  bool pass = true;
  std::ostringstream detail;
  for (const SweepMode mode : {SweepMode::precond_langevin, SweepMode::ngd}) {
    std::vector<double> argmins;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      ExperimentConfig cfg;
      cfg.model = ModelSpec{ModelKind::logistic, 64, 2, 0, 0.0};
      cfg.w_true = Eigen::VectorXd::Zero(64);
      cfg.w_true[0] = 16.0;
      cfg.n_train = 1000;
      cfg.n_test = 10000;
      cfg.sampler.eps = 0.1;
      cfg.sampler.damping = 1e-4;
      cfg.sampler.burn_in_steps = 1000;
      cfg.sampler.sample_steps = 1000;
      cfg.sweep_mode = mode;
      cfg.sweep_values = grid;
      cfg.seed = seed;
      cfg.workers = options.workers;
      const auto sweep = run_temperature_sweep(cfg);
      const int best = argmin_xent(sweep);
      argmins.push_back(sweep[best].sweep_value);
    }
    const double med = median(argmins);
    const bool ok = med >= 0.5 && med <= 2.0;
    pass = pass && ok;
    detail << (mode == SweepMode::ngd ? "ngd" : "langevin") << ": median argmin T=" << fmt(med)
           << " (in [1/2, 2]; seeds:";
    for (double a : argmins) detail << ' ' << fmt(a);
    detail << ") ";
  }
  result.passed = pass;
  result.detail = detail.str();
  return result;
}

// Criterion 3: MLP batch-sweep cross-entropy minimum within one grid point
// of eps N / 2, median over 3 seeds, for N = 1024 and N = 4096.
CriterionResult criterion3(const Options& options) {
  CriterionResult result;
  result.id = 3;
  result.name = "mlp batch-sweep minimum";
  bool pass = true;
  std::ostringstream detail;
  for (const std::int64_t n : {std::int64_t(1024), std::int64_t(4096)}) {
    const double target = 0.125 * static_cast<double>(n) / 2.0;  // 64 or 256
    std::vector<double> argmins;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      ExperimentConfig cfg;
      cfg.model = ModelSpec{ModelKind::mlp, 10, 10, 40, 20.0 / static_cast<double>(n)};
      cfg.n_train = n;
      cfg.n_test = 10000;
      cfg.teacher_gain = 0.0;  // teacher drawn from the model prior
      cfg.input_scale = 3.0;   // feature scale emulating projected-MNIST inputs
      cfg.sampler.eps = 0.125;
      cfg.sampler.damping = 0.1;
      cfg.sampler.burn_in_steps = 500;
      cfg.sampler.sample_steps = 500;
      cfg.fisher.source = FisherSource::sampled_labels;
      cfg.fisher.estimation_batch = 1024;
      cfg.sweep_values = {8, 16, 32, 64, 128, 256, 512, 1024};
      cfg.init_descent_steps = 500;
      cfg.seed = seed;
      cfg.workers = options.workers;
      const auto sweep = run_batch_sweep(cfg);
      const int best = argmin_xent(sweep);
      argmins.push_back(sweep[best].sweep_value);
    }
    const double med = median(argmins);
    const bool ok = med >= target / 2.0 && med <= target * 2.0;
    pass = pass && ok;
    detail << "N=" << n << ": median argmin B=" << fmt(med) << " (target " << fmt(target)
           << " +/- one point; seeds:";
    for (double a : argmins) detail << ' ' << fmt(a);
    detail << ") ";
  }
  result.passed = pass;
  result.detail = detail.str();
  return result;
}

// Criterion 4: empirical minibatch-noise covariance matches
// (1/B)(1 - B/N) Sigma at the fitted optimum.
CriterionResult criterion4(const Options& options) {
  CriterionResult result;
  result.id = 4;
  result.name = "gradient-noise covariance law";
  ExperimentConfig cfg = figure1_config(options.workers);
  const Task task = make_task(cfg);
  const Eigen::VectorXd w_star =
      minimize(task.model, task.train, Eigen::VectorXd::Zero(task.model.param_dim()));
  const Eigen::MatrixXd sigma = gradient_noise_covariance(task.model, w_star, task.train).entries();

  SamplerConfig pcfg;
  pcfg.damping = 0.0;
  const SamplingProblem problem = make_problem(task.model, task.train, pcfg, FisherOptions{});
  const Eigen::VectorXd full_mean = problem.mean_grad(w_star);

  Rng rng(41);
  std::vector<int> pool;
  bool pass = true;
  std::ostringstream detail;
  for (const int batch : {50, 250, 500}) {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2, 2);
    const int draws = 10000;
    for (int t = 0; t < draws; ++t) {
      const auto indices = draw_minibatch(pool, task.train.size(), batch, rng);
      const Eigen::VectorXd beta = problem.minibatch_grad(w_star, indices) - full_mean;
      cov += beta * beta.transpose();
    }
    cov /= draws;
    const double n = static_cast<double>(task.train.size());
    const Eigen::MatrixXd expected = (1.0 / batch) * (1.0 - batch / n) * sigma;
    const double rel = (cov - expected).norm() / expected.norm();
    pass = pass && rel < 0.1;
    detail << "B=" << batch << ": relF=" << fmt(rel) << " (<0.1) ";
  }
  result.passed = pass;
  result.detail = detail.str();
  return result;
}

// Criterion 5: Fisher approaches the gradient covariance at the optimum of
// well-specified data.
CriterionResult criterion5(const Options&) {
  CriterionResult result;
  result.id = 5;
  result.name = "fisher matches noise covariance at the optimum";
  Rng rng(51);
  Eigen::VectorXd w_true(4);
  w_true << 1.0, -0.7, 0.4, 0.0;
  const Dataset data = generate_synthetic_logistic(10000, 4, w_true, rng);
  const Model model(ModelSpec{ModelKind::logistic, 4, 2, 0, 0.0});
  const Eigen::VectorXd w_star = minimize(model, data, Eigen::VectorXd::Zero(4));
  const Eigen::MatrixXd fisher = fisher_exact(model, w_star, data.inputs).matrix.entries();
  const Eigen::MatrixXd sigma = gradient_noise_covariance(model, w_star, data).entries();
  const double rel = (fisher - sigma).norm() / fisher.norm();
  result.passed = rel < 0.1;
  result.detail = "relF=" + fmt(rel) + " (<0.1) at N=10^4";
  return result;
}

// Criterion 6: Fokker-Planck stationary suite at the pinned protocols.
CriterionResult criterion6(const Options&) {
  CriterionResult result;
  result.id = 6;
  result.name = "fokker-planck stationary suite";
  FokkerPlanckConfig cfg;
  cfg.eps_values = {4e-3, 2e-3, 1e-3};
  cfg.steps = 1000000;
  cfg.burn_in = 100000;
  cfg.seed = 1;
  const auto entries = run_fokker_planck_suite(cfg);
  const auto find = [&](const std::string& system, const std::string& rule,
                        double eps) -> const FokkerPlanckEntry* {
    for (const auto& e : entries) {
      if (e.system == system && e.rule == rule && std::abs(e.eps - eps) < 1e-12) return &e;
    }
    return nullptr;
  };
  const FokkerPlanckEntry* jeffreys = find("exp_metric", "riemannian_jeffreys", 1e-3);
  const FokkerPlanckEntry* flat = find("exp_metric", "riemannian_flat", 1e-3);
  const FokkerPlanckEntry* sngd_toy = find("logistic_1d", "sngd", 0.05);
  bool pass = true;
  std::ostringstream detail;
  detail << "exp_metric jeffreys tv=" << fmt(jeffreys->tv) << " (<0.05) ";
  pass = pass && !jeffreys->diverged && jeffreys->tv < 0.05;
  detail << "exp_metric flat tv=" << fmt(flat->tv) << " (<0.05) ";
  pass = pass && !flat->diverged && flat->tv < 0.05;
  detail << "sngd logistic toy tv=" << fmt(sngd_toy->tv) << " (<0.08) ";
  pass = pass && !sngd_toy->diverged && sngd_toy->tv < 0.08;
  // Supplementary diagnostics (reported, not gating): the same rules on toys
  // where the Euler chain is stable, and the discretization-bias spot check.
  detail << "| diagnostics:";
  for (const auto& e : entries) {
    if (e.system == "gaussian_flat" || e.system == "polynomial_metric") {
      detail << ' ' << e.system << '/' << e.rule << " tv=" << fmt(e.tv);
    }
  }
  const FokkerPlanckEntry* coarse = find("exp_metric", "riemannian_jeffreys", 4e-3);
  detail << " | eps sweep (jeffreys): tv(4e-3)=" << fmt(coarse->tv)
         << " tv(1e-3)=" << fmt(jeffreys->tv);
  result.passed = pass;
  result.detail = detail.str();
  return result;
}

// Criterion 7: identity and reduction unit suite at machine tolerances.
CriterionResult criterion7(const Options&) {
  CriterionResult result;
  result.id = 7;
  result.name = "reduction lattice and identities";
  bool pass = true;
  std::ostringstream detail;
  Rng rng(71);

  // Eq. 20 identity on 100 random metrics.
  {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const int dim = 2 + static_cast<int>(rng.uniform_int(4));
      Eigen::MatrixXd a(dim, dim);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) a(i, j) = rng.normal();
      const MetricMatrix g(Eigen::MatrixXd(a * a.transpose() +
                                           Eigen::MatrixXd::Identity(dim, dim)));
      MetricDerivatives dg;
      for (int j = 0; j < dim; ++j) {
        Eigen::MatrixXd s(dim, dim);
        for (int r = 0; r < dim; ++r)
          for (int c = 0; c < dim; ++c) s(r, c) = rng.normal();
        dg.per_coordinate.push_back(0.5 * (s + s.transpose()));
      }
      worst = std::max(worst, verify_logdet_identity(g, dg, 1e-5));
    }
    pass = pass && worst < 1e-4;
    detail << "logdet identity max residual=" << fmt(worst, 2) << " (<1e-4) ";
  }

  // Full-batch reductions, exact.
  {
    Rng drng(72);
    Eigen::VectorXd w_true(3);
    w_true << 1.0, -1.0, 0.5;
    const Dataset data = generate_synthetic_logistic(50, 3, w_true, drng);
    const Model model(ModelSpec{ModelKind::logistic, 3, 2, 0, 0.2});
    SamplerConfig cfg;
    cfg.eps = 0.1;
    cfg.batch_size = 50;
    cfg.damping = 1e-4;
    const SamplingProblem problem = make_problem(model, data, cfg, FisherOptions{});
    Eigen::VectorXd w(3);
    w << 0.3, -0.2, 0.1;
    Rng r1(73), r2(73), r3(73);
    const Eigen::VectorXd via_sngd = step_sngd(problem, w, cfg, r1);
    const Eigen::VectorXd via_mb = step_minibatch_ngd(problem, w, cfg, r2);
    const Eigen::VectorXd manual =
        w - cfg.eps * problem.metric(w, r3).solve(problem.mean_grad(w));
    const bool exact = (via_sngd == via_mb) && (via_mb == manual);
    pass = pass && exact;
    detail << "B=N reductions " << (exact ? "exact" : "NOT exact") << " ";

    SamplerConfig noise_cfg;
    noise_cfg.eps = 0.1;
    noise_cfg.temperature = 1.0;
    const MetricMatrix identity(Eigen::MatrixXd::Identity(3, 3));
    Rng r4(74), r5(74);
    const bool langevin_exact = step_precond_static(problem, w, identity, noise_cfg, r4) ==
                                step_langevin(problem, w, noise_cfg, r5);
    pass = pass && langevin_exact;
    detail << "| precond(I)=langevin " << (langevin_exact ? "exact" : "NOT exact") << " ";
  }

  // Correction prefactor identity.
  {
    double worst = 0.0;
    for (const auto& [eps, n, b] : {std::tuple{0.1, std::int64_t(1000), 50},
                                    std::tuple{0.125, std::int64_t(1024), 64},
                                    std::tuple{0.05, std::int64_t(4096), 256}}) {
      const double direct = eps * eps / (2.0 * b) * (1.0 - double(b) / double(n));
      const double via_t = eps * temperature(eps, n, b) / double(n);
      worst = std::max(worst, std::abs(direct - via_t) / direct);
    }
    pass = pass && worst < 1e-15;
    detail << "| prefactor identity rel err=" << fmt(worst, 2) << " (<1e-15) ";
  }

  // Finite-difference checks at the stated tolerances.
  {
    Rng frng(75);
    double worst_grad = 0.0;
    for (const ModelSpec spec :
         {ModelSpec{ModelKind::logistic, 4, 2, 0, 0.0}, ModelSpec{ModelKind::softmax, 3, 3, 0, 0.0},
          ModelSpec{ModelKind::mlp, 3, 3, 6, 0.0}}) {
      const Model m(spec);
      for (int t = 0; t < 20; ++t) {
        Eigen::VectorXd w(m.param_dim()), x(spec.input_dim);
        for (int i = 0; i < w.size(); ++i) w[i] = 0.4 * frng.normal();
        for (int i = 0; i < x.size(); ++i) x[i] = frng.normal();
        const int label = m.class_to_label(static_cast<int>(frng.uniform_int(m.class_count())));
        const Eigen::VectorXd analytic = m.grad(w, x, label);
        Eigen::VectorXd numeric(w.size());
        Eigen::VectorXd wp = w;
        for (int i = 0; i < w.size(); ++i) {
          wp[i] = w[i] + 1e-5;
          const double fp = m.loss(wp, x, label);
          wp[i] = w[i] - 1e-5;
          const double fm = m.loss(wp, x, label);
          wp[i] = w[i];
          numeric[i] = (fp - fm) / 2e-5;
        }
        worst_grad = std::max(worst_grad,
                              (analytic - numeric).norm() / std::max(analytic.norm(), 1e-8));
      }
    }
    pass = pass && worst_grad < 1e-5;
    detail << "| grad fd rel=" << fmt(worst_grad, 2) << " (<1e-5) ";

    // Hessian and Fisher-derivative checks on logistic data.
    Eigen::VectorXd w_true(3);
    w_true << 0.8, -0.4, 0.2;
    const Dataset data = generate_synthetic_logistic(60, 3, w_true, frng);
    const Model logistic(ModelSpec{ModelKind::logistic, 3, 2, 0, 0.3});
    Eigen::VectorXd w(3);
    w << 0.2, 0.4, -0.3;
    Eigen::MatrixXd hess_fd(3, 3);
    Eigen::VectorXd wp = w;
    for (int i = 0; i < 3; ++i) {
      wp[i] = w[i] + 1e-5;
      const Eigen::VectorXd gp = logistic.grad_total(wp, data);
      wp[i] = w[i] - 1e-5;
      const Eigen::VectorXd gm = logistic.grad_total(wp, data);
      wp[i] = w[i];
      hess_fd.col(i) = (gp - gm) / 2e-5;
    }
    const double hess_err = (logistic.hessian_total(w, data).entries() - hess_fd).norm();
    pass = pass && hess_err < 1e-4;
    detail << "| hessian fd=" << fmt(hess_err, 2) << " (<1e-4) ";

    const MetricDerivatives analytic =
        fisher_derivatives(logistic, w, data.inputs, DerivativeMode::analytic);
    const MetricDerivatives numeric =
        fisher_derivatives(logistic, w, data.inputs, DerivativeMode::finite_difference);
    double fisher_err = 0.0;
    for (int j = 0; j < 3; ++j) {
      fisher_err = std::max(fisher_err,
                            (analytic.per_coordinate[j] - numeric.per_coordinate[j]).norm());
    }
    pass = pass && fisher_err < 1e-4;
    detail << "| dF fd=" << fmt(fisher_err, 2) << " (<1e-4)";
  }

  result.passed = pass;
  result.detail = detail.str();
  return result;
}

CriterionResult criterion8(const Options&) {
  CriterionResult result;
  result.id = 8;
  result.name = "cnn-scale reproduction";
  result.gating = false;
  result.passed = true;
  result.detail =
      "excluded by design: full-scale CNN curves and exact paper accuracies are out of scope";
  return result;
}

}  // namespace

std::vector<CriterionResult> run(const Options& options, std::ostream& out) {
  std::vector<CriterionResult> results;
  for (const int id : options.criteria) {
    const auto start = Clock::now();
    CriterionResult result;
    try {
      switch (id) {
        case 1: result = criterion1(options); break;
        case 2: result = criterion2(options); break;
        case 3: result = criterion3(options); break;
        case 4: result = criterion4(options); break;
        case 5: result = criterion5(options); break;
        case 6: result = criterion6(options); break;
        case 7: result = criterion7(options); break;
        case 8: result = criterion8(options); break;
        default:
          throw std::invalid_argument("unknown criterion " + std::to_string(id));
      }
    } catch (const std::exception& err) {
      result.id = id;
      result.name = "criterion " + std::to_string(id);
      result.passed = false;
      result.detail = std::string("error: ") + err.what();
    }
    result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (options.verbose) {
      out << "criterion " << result.id << " ["
          << (result.gating ? (result.passed ? "PASS" : "FAIL") : "EXCLUDED") << "] "
          << result.name << ": " << result.detail << " (" << fmt(result.seconds, 3) << " s)"
          << std::endl;
    }
    results.push_back(std::move(result));
  }
  return results;
}

bool all_passed(const std::vector<CriterionResult>& results) {
  for (const auto& r : results) {
    if (r.gating && !r.passed) return false;
  }
  return true;
}

}  // namespace sngd::acceptance
