// Command-line driver for the sampling experiments.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sngd/acceptance.hpp"
#include "sngd/harness.hpp"

namespace {

using namespace sngd;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string format = "csv";
  std::uint64_t seed = 1;
  int workers = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file (dotted keys)");
  cmd->add_option("--out-dir", args.out_dir, "output directory");
  cmd->add_option("--format", args.format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--seed", args.seed, "master seed")->each([&](const std::string&) {
    args.seed_set = true;
  });
  cmd->add_option("--workers", args.workers, "worker threads (0 = hardware)");
}

// Overlay precedence: protocol defaults, then config file, then explicit
// command-line flags.
void finalize(ExperimentConfig& cfg, const CommonArgs& args) {
  if (!args.config_path.empty()) apply_config(cfg, read_key_value_file(args.config_path));
  if (args.seed_set || cfg.seed == 0) cfg.seed = args.seed;
  cfg.out_dir = args.out_dir;
  cfg.format = args.format;
  if (args.workers > 0) cfg.workers = args.workers;
  std::filesystem::create_directories(cfg.out_dir);
}

ExperimentConfig figure1_defaults() {
  ExperimentConfig cfg;
  cfg.model = ModelSpec{ModelKind::logistic, 2, 2, 0, 0.0};
  cfg.w_true = Eigen::Vector2d(16.0, 0.0);
  cfg.n_train = 1000;
  cfg.n_test = 1000;
  cfg.sampler.eps = 0.1;
  cfg.sampler.temperature = 1.0;
  cfg.sampler.damping = 1e-4;
  cfg.sampler.burn_in_steps = 5000;
  cfg.sampler.sample_steps = 5000;
  cfg.seed = 1;
  return cfg;
}

ExperimentConfig temperature_sweep_defaults() {
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
  cfg.sweep_mode = SweepMode::ngd;
  cfg.sweep_values = {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  cfg.seed = 1;
  return cfg;
}

ExperimentConfig batch_sweep_defaults() {
  ExperimentConfig cfg;
  cfg.model = ModelSpec{ModelKind::mlp, 10, 10, 40, -1.0};  // l2 resolved from N below
  cfg.n_train = 1024;
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
  cfg.seed = 1;
  return cfg;
}

int run_figure1_cmd(const CommonArgs& args) {
  ExperimentConfig cfg = figure1_defaults();
  finalize(cfg, args);
  const Figure1Result result = run_figure1(cfg, true);
  for (const auto& v : result.variants) {
    std::printf("%-16s mean_mahalanobis=%.4f cov_frobenius_rel=%.4f eig_ratio_max=%.4f\n",
                v.name.c_str(), v.distance.mean_mahalanobis, v.distance.cov_frobenius_rel,
                v.distance.eig_ratio_max);
  }
  std::printf("files written to %s\n", cfg.out_dir.c_str());
  return 0;
}

int run_sweep_cmd(ExperimentConfig cfg, const CommonArgs& args, const std::string& name,
                  bool batch_axis, int seeds_override) {
  finalize(cfg, args);
  if (cfg.model.l2 < 0.0) cfg.model.l2 = 20.0 / static_cast<double>(cfg.n_train);
  const int replicates = seeds_override > 0 ? seeds_override : cfg.sweep_seeds;
  for (int k = 0; k < replicates; ++k) {
    ExperimentConfig point_cfg = cfg;
    point_cfg.seed = cfg.seed + static_cast<std::uint64_t>(k);
    const auto results =
        batch_axis ? run_batch_sweep(point_cfg) : run_temperature_sweep(point_cfg);
    std::ostringstream path;
    path << cfg.out_dir << '/' << name;
    if (replicates > 1) path << "_seed" << point_cfg.seed;
    path << '.' << cfg.format;
    emit(results, cfg.format, path.str());
    std::printf("%s (seed %llu):\n", name.c_str(),
                static_cast<unsigned long long>(point_cfg.seed));
    for (const auto& r : results) {
      std::printf("  %s=%-8g T=%-8.4g ensemble_xent=%.4f ensemble_acc=%.4f%s\n",
                  batch_axis ? "B" : "T", r.sweep_value, r.temperature,
                  r.ensemble_cross_entropy, r.ensemble_accuracy,
                  r.diverged ? " DIVERGED" : "");
    }
    std::printf("wrote %s\n", path.str().c_str());
  }
  return 0;
}

int run_fokker_planck_cmd(const CommonArgs& args) {
  FokkerPlanckConfig cfg;
  cfg.eps_values = {4e-3, 2e-3, 1e-3};
  cfg.seed = args.seed;
  if (!args.config_path.empty()) {
    // Only the generic run keys apply to this subcommand.
    for (const auto& [key, value] : read_key_value_file(args.config_path)) {
      if (key == "fokker.steps") cfg.steps = std::stoll(value);
      else if (key == "fokker.burn_in") cfg.burn_in = std::stoll(value);
      else if (key == "fokker.toy_steps") cfg.toy_steps = std::stoll(value);
      else if (key == "fokker.toy_batch") cfg.toy_batch = std::stoi(value);
      else if (key == "fokker.toy_eps") cfg.toy_eps = std::stod(value);
      else if (key == "fokker.toy_data_size") cfg.toy_data_size = std::stoll(value);
      else if (key == "run.seed") cfg.seed = std::stoull(value);
      else throw std::invalid_argument("unknown fokker-planck config key: " + key);
    }
  }
  const auto entries = run_fokker_planck_suite(cfg);
  std::filesystem::create_directories(args.out_dir);
  const std::string path = args.out_dir + "/fokker_planck." + args.format;
  std::ofstream out(path);
  if (args.format == "csv") {
    out << "system,rule,eps,steps,tv,diverged\n";
    for (const auto& e : entries) {
      out << e.system << ',' << e.rule << ',' << e.eps << ',' << e.steps << ',' << e.tv << ','
          << (e.diverged ? 1 : 0) << '\n';
    }
  } else {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : entries) {
      rows.push_back({{"system", e.system},
                      {"rule", e.rule},
                      {"eps", e.eps},
                      {"steps", e.steps},
                      {"tv", e.tv},
                      {"diverged", e.diverged}});
    }
    out << rows.dump(2) << '\n';
  }
  for (const auto& e : entries) {
    std::printf("%-18s %-22s eps=%-8g steps=%-9lld tv=%.4f%s\n", e.system.c_str(),
                e.rule.c_str(), e.eps, static_cast<long long>(e.steps), e.tv,
                e.diverged ? " DIVERGED" : "");
  }
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int run_verify_cmd(const CommonArgs& args, const std::vector<int>& criteria) {
  acceptance::Options options;
  if (!criteria.empty()) options.criteria = criteria;
  options.workers = args.workers;
  options.out_dir = args.out_dir;
  std::filesystem::create_directories(args.out_dir);
  const auto results = acceptance::run(options, std::cout);
  return acceptance::all_passed(results) ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Posterior sampling with natural-gradient and Langevin update rules"};
  app.require_subcommand(1);

  CommonArgs fig_args, temp_args, batch_args, fp_args, verify_args;
  std::vector<int> criteria;
  int temp_seeds = 0, batch_seeds = 0;
  std::string temp_mode = "ngd";

  CLI::App* figure1_cmd = app.add_subcommand("figure1", "posterior scatter vs Laplace oracle");
  add_common(figure1_cmd, fig_args);

  CLI::App* temp_cmd =
      app.add_subcommand("sweep-temperature", "ensemble metrics across temperatures");
  add_common(temp_cmd, temp_args);
  temp_cmd->add_option("--mode", temp_mode, "ngd or precond_langevin")
      ->check(CLI::IsMember({"ngd", "precond_langevin"}));
  temp_cmd->add_option("--seeds", temp_seeds, "replicate count (one file per seed)");

  CLI::App* batch_cmd = app.add_subcommand("sweep-batch", "ensemble metrics across batch sizes");
  add_common(batch_cmd, batch_args);
  batch_cmd->add_option("--seeds", batch_seeds, "replicate count (one file per seed)");

  CLI::App* fp_cmd =
      app.add_subcommand("fokker-planck", "1-d stationary-density verification table");
  add_common(fp_cmd, fp_args);

  CLI::App* verify_cmd = app.add_subcommand("verify", "run the acceptance criteria");
  add_common(verify_cmd, verify_args);
  verify_cmd->add_option("--criteria", criteria, "subset of criteria to run (default all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (figure1_cmd->parsed()) return run_figure1_cmd(fig_args);
    if (temp_cmd->parsed()) {
      ExperimentConfig cfg = temperature_sweep_defaults();
      cfg.sweep_mode = temp_mode == "ngd" ? SweepMode::ngd : SweepMode::precond_langevin;
      return run_sweep_cmd(cfg, temp_args, "sweep_temperature", false, temp_seeds);
    }
    if (batch_cmd->parsed()) {
      return run_sweep_cmd(batch_sweep_defaults(), batch_args, "sweep_batch", true, batch_seeds);
    }
    if (fp_cmd->parsed()) return run_fokker_planck_cmd(fp_args);
    if (verify_cmd->parsed()) return run_verify_cmd(verify_args, criteria);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << std::endl;
    return 1;
  }
  return 0;
}
