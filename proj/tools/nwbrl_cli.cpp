#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nwbrl.h"

namespace {

int exit_code(nwbrl_status s) {
  if (s == NWBRL_OK) return 0;
  if (s == NWBRL_ERR_CONFIG) return 2;
  if (nwbrl_status_is_numerical(s)) return 3;
  return 1;
}

int report(nwbrl_status s) {
  if (s != NWBRL_OK)
    std::fprintf(stderr, "error: %s: %s\n", nwbrl_status_string(s), nwbrl_last_error());
  return exit_code(s);
}

void print_line(const char* line, void*) { std::printf("%s\n", line); }

struct RunOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<long> steps;
  bool known_noise = false;
  bool no_reg = false;
  std::optional<std::size_t> dt;
  std::optional<std::size_t> dr;
};

void add_run_options(CLI::App* app, RunOptions& o) {
  app->add_option("--config", o.config, "JSON run config")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "run seed");
  app->add_option("--out", o.out, "output directory (relative to NWBRL_OUT_ROOT if set)");
  app->add_option("--steps", o.steps, "total environment steps");
  app->add_flag("--known-noise", o.known_noise, "fix the noise covariance instead of inferring it");
  app->add_flag("--no-reg", o.no_reg, "drop the feature-norm penalties from the model loss");
  app->add_option("--dt", o.dt, "transition task dimension D_T");
  app->add_option("--dr", o.dr, "reward task dimension D_R");
}

nwbrl_status make_run(const RunOptions& o, nwbrl_run** run) {
  nwbrl_status s = o.config.empty() ? nwbrl_run_create(nullptr, run)
                                    : nwbrl_run_create_from_file(o.config.c_str(), run);
  if (s != NWBRL_OK) return s;
  if (o.seed) s = nwbrl_run_set_seed(*run, *o.seed);
  if (s == NWBRL_OK && !o.out.empty()) s = nwbrl_run_set_out_dir(*run, o.out.c_str());
  if (s == NWBRL_OK && o.steps) s = nwbrl_run_set_total_steps(*run, *o.steps);
  if (s == NWBRL_OK && o.known_noise) s = nwbrl_run_set_known_noise(*run, 1);
  if (s == NWBRL_OK && o.no_reg) s = nwbrl_run_set_regularization(*run, 0);
  if (s == NWBRL_OK && (o.dt || o.dr)) {
    size_t cur_dt = 0, cur_dr = 0;
    s = nwbrl_run_get_task_dims(*run, &cur_dt, &cur_dr);
    if (s == NWBRL_OK) s = nwbrl_run_set_task_dims(*run, o.dt.value_or(cur_dt), o.dr.value_or(cur_dr));
  }
  return s;
}

void print_summary(const nwbrl_eval_summary& e) {
  std::printf("success=%.4f return=%.4f transition_l1=%.5f reward_l1=%.5f\n", e.success_rate,
              e.mean_return, e.transition_l1, e.reward_l1);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian meta-RL with conjugate Normal-Wishart task beliefs"};
  app.set_version_flag("--version", nwbrl_version());
  app.require_subcommand(1);

  RunOptions train_opts, ablate_opts, sweep_opts;
  auto* train = app.add_subcommand("train", "run the full training loop");
  add_run_options(train, train_opts);
  auto* ablate = app.add_subcommand("ablate", "run the known-noise and no-regularization arms");
  add_run_options(ablate, ablate_opts);
  auto* sweep = app.add_subcommand("sweep", "sweep the latent task dimensions");
  add_run_options(sweep, sweep_opts);

  std::string checkpoint;
  int eval_tasks = 0;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "zero-shot evaluation of a checkpoint");
  eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--tasks", eval_tasks, "number of test tasks (default: from config)");
  eval->add_option("--seed", eval_seed, "evaluation seed");

  std::uint64_t verify_seed = 7;
  auto* verify = app.add_subcommand("verify", "run the numerical self checks");
  verify->add_option("--seed", verify_seed, "seed for the random instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  nwbrl_run* run = nullptr;
  nwbrl_status s = NWBRL_OK;
  if (*train) {
    s = make_run(train_opts, &run);
    if (s == NWBRL_OK) s = nwbrl_run_train(run);
    nwbrl_eval_summary e{};
    if (s == NWBRL_OK) s = nwbrl_run_final_eval(run, &e);
    if (s == NWBRL_OK) print_summary(e);
  } else if (*ablate) {
    s = make_run(ablate_opts, &run);
    if (s == NWBRL_OK) s = nwbrl_run_ablate(run, print_line, nullptr);
  } else if (*sweep) {
    s = make_run(sweep_opts, &run);
    if (s == NWBRL_OK) s = nwbrl_run_sweep(run, print_line, nullptr);
  } else if (*eval) {
    nwbrl_eval_summary e{};
    s = nwbrl_eval_checkpoint(checkpoint.c_str(), eval_tasks, eval_seed, &e);
    if (s == NWBRL_OK) print_summary(e);
  } else if (*verify) {
    int failed = 0;
    s = nwbrl_verify(verify_seed, print_line, nullptr, &failed);
    if (s == NWBRL_OK && failed > 0) {
      std::fprintf(stderr, "%d check(s) failed\n", failed);
      nwbrl_run_destroy(run);
      return 3;
    }
  }
  nwbrl_run_destroy(run);
  return report(s);
}
