#include "nwbrl.h"

#include <cstdio>
#include <cstring>
#include <memory>
#include <optional>
#include <string>

#include "nwbrl/container.hpp"
#include "nwbrl/error.hpp"
#include "nwbrl/experiment.hpp"
#include "nwbrl/verify.hpp"

using nwbrl::ErrorCode;
using nwbrl::Matrix;

struct nwbrl_belief {
  nwbrl::NWBelief b;
};

struct nwbrl_run {
  nwbrl::RunConfig cfg;
  std::optional<nwbrl::EvalResult> final_eval;
};

namespace {

thread_local std::string g_last_error;

nwbrl_status to_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::EmptyInput:
    case ErrorCode::NonScalarRoot: return NWBRL_ERR_INVALID_ARGUMENT;
    case ErrorCode::DimensionMismatch: return NWBRL_ERR_DIMENSION_MISMATCH;
    case ErrorCode::NotPositiveDefinite: return NWBRL_ERR_NOT_POSITIVE_DEFINITE;
    case ErrorCode::InvalidDof: return NWBRL_ERR_INVALID_DOF;
    case ErrorCode::DegenerateDenominator: return NWBRL_ERR_DEGENERATE_DENOMINATOR;
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::NonFiniteLoss: return NWBRL_ERR_NON_FINITE;
    case ErrorCode::EpisodeExhausted: return NWBRL_ERR_EPISODE_EXHAUSTED;
    case ErrorCode::NotOracleFamily: return NWBRL_ERR_NOT_ORACLE_FAMILY;
    case ErrorCode::InsufficientData: return NWBRL_ERR_INSUFFICIENT_DATA;
    case ErrorCode::ChecksumMismatch: return NWBRL_ERR_CHECKSUM;
    case ErrorCode::Io: return NWBRL_ERR_IO;
    case ErrorCode::Config: return NWBRL_ERR_CONFIG;
  }
  return NWBRL_ERR_INTERNAL;
}

nwbrl_status fail(nwbrl_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename Fn>
nwbrl_status guard(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return NWBRL_OK;
  } catch (const nwbrl::Error& e) {
    return fail(to_status(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(NWBRL_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(NWBRL_ERR_INTERNAL, e.what());
  }
}

Matrix rows_of(const double* data, size_t n, nwbrl::Index cols) {
  Matrix m(static_cast<nwbrl::Index>(n), cols);
  if (n > 0) std::memcpy(m.data(), data, n * static_cast<size_t>(cols) * sizeof(double));
  return m;
}

void copy_summary(const nwbrl::EvalResult& e, nwbrl_eval_summary* out) {
  out->success_rate = e.success_rate;
  out->mean_return = e.mean_return;
  out->transition_l1 = e.transition_l1;
  out->reward_l1 = e.reward_l1;
}

std::string summary_line(const std::string& name, const nwbrl::EvalResult& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%s success=%.4f return=%.4f transition_l1=%.5f reward_l1=%.5f", name.c_str(),
                e.success_rate, e.mean_return, e.transition_l1, e.reward_l1);
  return buf;
}

#define NWBRL_REQUIRE_PTR(p) \
  if ((p) == nullptr) return fail(NWBRL_ERR_INVALID_ARGUMENT, #p " is NULL")

}  // namespace

extern "C" {

const char* nwbrl_version(void) { return nwbrl::version_string(); }

const char* nwbrl_last_error(void) { return g_last_error.c_str(); }

const char* nwbrl_status_string(nwbrl_status s) {
  switch (s) {
    case NWBRL_OK: return "ok";
    case NWBRL_ERR_INVALID_ARGUMENT: return "invalid argument";
    case NWBRL_ERR_DIMENSION_MISMATCH: return "dimension mismatch";
    case NWBRL_ERR_NOT_POSITIVE_DEFINITE: return "not positive definite";
    case NWBRL_ERR_INVALID_DOF: return "invalid degrees of freedom";
    case NWBRL_ERR_DEGENERATE_DENOMINATOR: return "degenerate denominator";
    case NWBRL_ERR_NON_FINITE: return "non-finite value";
    case NWBRL_ERR_EPISODE_EXHAUSTED: return "episode exhausted";
    case NWBRL_ERR_NOT_ORACLE_FAMILY: return "not an oracle family";
    case NWBRL_ERR_INSUFFICIENT_DATA: return "insufficient data";
    case NWBRL_ERR_CHECKSUM: return "checksum mismatch";
    case NWBRL_ERR_IO: return "i/o error";
    case NWBRL_ERR_CONFIG: return "configuration error";
    case NWBRL_ERR_BUFFER_TOO_SMALL: return "buffer too small";
    case NWBRL_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

int nwbrl_status_is_numerical(nwbrl_status s) {
  return s == NWBRL_ERR_NOT_POSITIVE_DEFINITE || s == NWBRL_ERR_DEGENERATE_DENOMINATOR ||
         s == NWBRL_ERR_NON_FINITE;
}

nwbrl_status nwbrl_belief_create(size_t d, size_t p, double m0, double xi0, double omega0,
                                 double nu0, nwbrl_belief** out) {
  NWBRL_REQUIRE_PTR(out);
  *out = nullptr;
  return guard([&] {
    auto b = nwbrl::make_prior(static_cast<nwbrl::Index>(d), static_cast<nwbrl::Index>(p), m0,
                               xi0, omega0, nu0);
    *out = new nwbrl_belief{std::move(b)};
  });
}

nwbrl_status nwbrl_belief_clone(const nwbrl_belief* b, nwbrl_belief** out) {
  NWBRL_REQUIRE_PTR(b);
  NWBRL_REQUIRE_PTR(out);
  return guard([&] { *out = new nwbrl_belief{b->b}; });
}

void nwbrl_belief_destroy(nwbrl_belief* b) { delete b; }

nwbrl_status nwbrl_belief_dims(const nwbrl_belief* b, size_t* d, size_t* p) {
  NWBRL_REQUIRE_PTR(b);
  if (d) *d = static_cast<size_t>(b->b.dim());
  if (p) *p = static_cast<size_t>(b->b.out_dim());
  return NWBRL_OK;
}

nwbrl_status nwbrl_belief_nu(const nwbrl_belief* b, double* nu) {
  NWBRL_REQUIRE_PTR(b);
  NWBRL_REQUIRE_PTR(nu);
  *nu = b->b.nu;
  return NWBRL_OK;
}

nwbrl_status nwbrl_belief_get(const nwbrl_belief* b, nwbrl_field field, double* out,
                              size_t capacity) {
  NWBRL_REQUIRE_PTR(b);
  NWBRL_REQUIRE_PTR(out);
  const Matrix* m = nullptr;
  switch (field) {
    case NWBRL_FIELD_M: m = &b->b.M; break;
    case NWBRL_FIELD_XI: m = &b->b.Xi; break;
    case NWBRL_FIELD_XI_INV: m = &b->b.XiInv; break;
    case NWBRL_FIELD_OMEGA: m = &b->b.Omega; break;
    default: return fail(NWBRL_ERR_INVALID_ARGUMENT, "unknown belief field");
  }
  const auto n = static_cast<size_t>(m->size());
  if (capacity < n) return fail(NWBRL_ERR_BUFFER_TOO_SMALL, "output buffer too small");
  std::memcpy(out, m->data(), n * sizeof(double));
  return NWBRL_OK;
}

nwbrl_status nwbrl_belief_online_update(nwbrl_belief* b, const double* c, const double* y) {
  NWBRL_REQUIRE_PTR(b);
  NWBRL_REQUIRE_PTR(c);
  NWBRL_REQUIRE_PTR(y);
  return guard([&] {
    nwbrl::NWBelief next = b->b;
    nwbrl::online_update(next, rows_of(c, 1, b->b.dim()), rows_of(y, 1, b->b.out_dim()));
    b->b = std::move(next);
  });
}

nwbrl_status nwbrl_belief_batch_update(nwbrl_belief* b, size_t n, const double* c,
                                       const double* y) {
  NWBRL_REQUIRE_PTR(b);
  if (n > 0 && (c == nullptr || y == nullptr))
    return fail(NWBRL_ERR_INVALID_ARGUMENT, "data pointers are NULL");
  return guard([&] {
    b->b = nwbrl::batch_update(b->b, rows_of(c, n, b->b.dim()), rows_of(y, n, b->b.out_dim()));
  });
}

nwbrl_status nwbrl_belief_marginal_ll(const nwbrl_belief* prior, size_t n, const double* c,
                                      const double* y, int full, double* out) {
  NWBRL_REQUIRE_PTR(prior);
  NWBRL_REQUIRE_PTR(out);
  if (n > 0 && (c == nullptr || y == nullptr))
    return fail(NWBRL_ERR_INVALID_ARGUMENT, "data pointers are NULL");
  return guard([&] {
    const Matrix cm = rows_of(c, n, prior->b.dim());
    const Matrix ym = rows_of(y, n, prior->b.out_dim());
    *out = full ? nwbrl::marginal_ll_full(prior->b, cm, ym)
                : nwbrl::marginal_ll_reduced(prior->b, cm, ym);
  });
}

nwbrl_status nwbrl_belief_predict(const nwbrl_belief* b, const double* c, double* mean_out) {
  NWBRL_REQUIRE_PTR(b);
  NWBRL_REQUIRE_PTR(c);
  NWBRL_REQUIRE_PTR(mean_out);
  return guard([&] {
    const nwbrl::RowVector m = nwbrl::predictive_mean(b->b, rows_of(c, 1, b->b.dim()));
    std::memcpy(mean_out, m.data(), static_cast<size_t>(m.size()) * sizeof(double));
  });
}

nwbrl_status nwbrl_belief_kl(const nwbrl_belief* q, const nwbrl_belief* p, double* out) {
  NWBRL_REQUIRE_PTR(q);
  NWBRL_REQUIRE_PTR(p);
  NWBRL_REQUIRE_PTR(out);
  return guard([&] { *out = nwbrl::nw_kl(q->b, p->b); });
}

nwbrl_status nwbrl_belief_save(const nwbrl_belief* b, const char* path) {
  NWBRL_REQUIRE_PTR(b);
  NWBRL_REQUIRE_PTR(path);
  return guard([&] {
    nwbrl::Container c;
    nwbrl::put_belief(c, "belief", b->b);
    c.save(path);
  });
}

nwbrl_status nwbrl_belief_load(const char* path, nwbrl_belief** out) {
  NWBRL_REQUIRE_PTR(path);
  NWBRL_REQUIRE_PTR(out);
  *out = nullptr;
  return guard([&] {
    const nwbrl::Container c = nwbrl::Container::load(path);
    *out = new nwbrl_belief{nwbrl::get_belief(c, "belief")};
  });
}

nwbrl_status nwbrl_run_create(const char* config_json, nwbrl_run** out) {
  NWBRL_REQUIRE_PTR(out);
  *out = nullptr;
  return guard([&] {
    auto run = std::make_unique<nwbrl_run>();
    if (config_json != nullptr && *config_json != '\0')
      run->cfg = nwbrl::RunConfig::from_json(config_json);
    *out = run.release();
  });
}

nwbrl_status nwbrl_run_create_from_file(const char* path, nwbrl_run** out) {
  NWBRL_REQUIRE_PTR(path);
  NWBRL_REQUIRE_PTR(out);
  *out = nullptr;
  return guard([&] {
    auto run = std::make_unique<nwbrl_run>();
    run->cfg = nwbrl::RunConfig::load(path);
    *out = run.release();
  });
}

void nwbrl_run_destroy(nwbrl_run* run) { delete run; }

nwbrl_status nwbrl_run_set_seed(nwbrl_run* run, uint64_t seed) {
  NWBRL_REQUIRE_PTR(run);
  run->cfg.seed = seed;
  return NWBRL_OK;
}

nwbrl_status nwbrl_run_set_out_dir(nwbrl_run* run, const char* dir) {
  NWBRL_REQUIRE_PTR(run);
  return guard([&] {
    run->cfg.out_dir = dir ? nwbrl::resolve_out_dir(dir).string() : std::string();
  });
}

nwbrl_status nwbrl_run_set_total_steps(nwbrl_run* run, long steps) {
  NWBRL_REQUIRE_PTR(run);
  if (steps < 1) return fail(NWBRL_ERR_CONFIG, "total steps must be positive");
  run->cfg.total_steps = steps;
  return NWBRL_OK;
}

nwbrl_status nwbrl_run_set_known_noise(nwbrl_run* run, int enabled) {
  NWBRL_REQUIRE_PTR(run);
  run->cfg.loss.known_noise = enabled != 0;
  return NWBRL_OK;
}

nwbrl_status nwbrl_run_set_regularization(nwbrl_run* run, int enabled) {
  NWBRL_REQUIRE_PTR(run);
  run->cfg.loss.regularization = enabled != 0;
  return NWBRL_OK;
}

nwbrl_status nwbrl_run_set_task_dims(nwbrl_run* run, size_t d_t, size_t d_r) {
  NWBRL_REQUIRE_PTR(run);
  if (d_t == 0 || d_r == 0) return fail(NWBRL_ERR_CONFIG, "task dimensions must be positive");
  run->cfg.basis.transition_dim = static_cast<nwbrl::Index>(d_t);
  run->cfg.basis.reward_dim = static_cast<nwbrl::Index>(d_r);
  return NWBRL_OK;
}

nwbrl_status nwbrl_run_get_task_dims(const nwbrl_run* run, size_t* d_t, size_t* d_r) {
  NWBRL_REQUIRE_PTR(run);
  if (d_t) *d_t = static_cast<size_t>(run->cfg.basis.transition_dim);
  if (d_r) *d_r = static_cast<size_t>(run->cfg.basis.reward_dim);
  return NWBRL_OK;
}

nwbrl_status nwbrl_run_config_json(const nwbrl_run* run, char* buf, size_t cap, size_t* needed) {
  NWBRL_REQUIRE_PTR(run);
  const std::string s = run->cfg.to_json();
  if (needed) *needed = s.size() + 1;
  if (buf == nullptr || cap < s.size() + 1)
    return fail(NWBRL_ERR_BUFFER_TOO_SMALL, "config buffer too small");
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return NWBRL_OK;
}

nwbrl_status nwbrl_run_train(nwbrl_run* run) {
  NWBRL_REQUIRE_PTR(run);
  return guard([&] {
    run->final_eval.reset();
    run->final_eval = nwbrl::run_experiment(run->cfg).final_eval;
  });
}

nwbrl_status nwbrl_run_ablate(nwbrl_run* run, nwbrl_line_fn fn, void* user) {
  NWBRL_REQUIRE_PTR(run);
  return guard([&] {
    for (const auto& arm : nwbrl::ablate(run->cfg))
      if (fn) fn(summary_line(arm.name, arm.result.final_eval).c_str(), user);
  });
}

nwbrl_status nwbrl_run_sweep(nwbrl_run* run, nwbrl_line_fn fn, void* user) {
  NWBRL_REQUIRE_PTR(run);
  return guard([&] {
    for (const auto& arm : nwbrl::sweep(run->cfg))
      if (fn) fn(summary_line(arm.name, arm.result.final_eval).c_str(), user);
  });
}

nwbrl_status nwbrl_run_final_eval(const nwbrl_run* run, nwbrl_eval_summary* out) {
  NWBRL_REQUIRE_PTR(run);
  NWBRL_REQUIRE_PTR(out);
  if (!run->final_eval) return fail(NWBRL_ERR_INVALID_ARGUMENT, "run has not been trained");
  copy_summary(*run->final_eval, out);
  return NWBRL_OK;
}

nwbrl_status nwbrl_eval_checkpoint(const char* path, int n_tasks, uint64_t seed,
                                   nwbrl_eval_summary* out) {
  NWBRL_REQUIRE_PTR(path);
  NWBRL_REQUIRE_PTR(out);
  return guard([&] {
    const nwbrl::Checkpoint ck = nwbrl::load_checkpoint(path);
    const nwbrl::EvalResult e = nwbrl::eval_zero_shot(
        ck.policy, ck.nets, ck.config.priors(), ck.config.agent_config(), ck.normalizer,
        ck.config.family, n_tasks > 0 ? n_tasks : ck.config.eval_tasks, seed,
        ck.config.eval_deterministic);
    copy_summary(e, out);
  });
}

nwbrl_status nwbrl_verify(uint64_t seed, nwbrl_line_fn fn, void* user, int* failed) {
  return guard([&] {
    int bad = 0;
    for (const nwbrl::CheckResult& r : nwbrl::run_self_checks(seed)) {
      if (!r.passed) ++bad;
      const std::string line =
          std::string(r.passed ? "PASS " : "FAIL ") + r.name +
          (r.detail.empty() ? std::string() : " (" + r.detail + ")");
      if (fn) fn(line.c_str(), user);
    }
    if (failed) *failed = bad;
  });
}

}  // extern "C"
