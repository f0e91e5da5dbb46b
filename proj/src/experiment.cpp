#include "nwbrl/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nwbrl/container.hpp"
#include "nwbrl/error.hpp"

namespace nwbrl {

using nlohmann::json;

const char* version_string() { return NWBRL_VERSION_STRING; }

NWBelief PriorSpec::make(Index d, Index p) const {
  return make_prior(d, p, m0, xi0, omega0, nu0 ? *nu0 : static_cast<double>(p + 1));
}

int RunConfig::iterations() const {
  const long per_iter = static_cast<long>(tasks_per_iter) * family.horizon;
  return static_cast<int>(std::max(1L, (total_steps + per_iter - 1) / per_iter));
}

BasisConfig RunConfig::basis_config() const {
  BasisConfig b = basis;
  b.state_dim = family.state_dim;
  b.action_dim = family.action_dim;
  return b;
}

ModelPriors RunConfig::priors() const {
  return ModelPriors::from(prior_t.make(basis.transition_dim, family.state_dim),
                           prior_r.make(basis.reward_dim, 1));
}

AgentConfig RunConfig::agent_config() const {
  AgentConfig a;
  a.known_noise = loss.known_noise;
  a.belief_in_observation = belief_in_observation;
  a.track_kl = track_kl && !loss.known_noise;
  a.online = online;
  return a;
}

void RunConfig::validate() const {
  require(total_steps >= 1 && tasks_per_iter >= 1 && eval_tasks >= 1, ErrorCode::Config,
          "total_steps, tasks_per_iter and eval_tasks must be positive");
  require(eval_every >= 0 && checkpoint_every >= 0, ErrorCode::Config,
          "eval_every and checkpoint_every must be nonnegative");
  require(model_lr > 0.0 && model_grad_epochs >= 1 && model_grad_steps >= 0, ErrorCode::Config,
          "invalid model optimizer settings");
  require(loss.lambda_t >= 0.0 && loss.lambda_r >= 0.0, ErrorCode::Config,
          "regularization coefficients must be nonnegative");
  require(basis.transition_dim >= 1 && basis.reward_dim >= 1, ErrorCode::Config,
          "D_T and D_R must be positive");
  require(family.horizon >= 1, ErrorCode::Config, "horizon must be positive");
  ppo.validate();
  try {
    (void)priors();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, "prior: " + e.detail());
  }
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  require(j.is_object(), ErrorCode::Config, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    require(allowed.count(it.key()) > 0, ErrorCode::Config,
            "unknown key '" + it.key() + "' in " + (where.empty() ? "config" : where));
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_opt(const json& j, const char* key, std::optional<double>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null())
    out.reset();
  else
    out = j.at(key).get<double>();
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

const char* family_name(FamilyKind k) {
  return k == FamilyKind::PointGoal2D ? "PointGoal2D" : "LinearOracle";
}

json family_json(const TaskFamily& f) {
  return {{"name", family_name(f.kind)},
          {"state_dim", f.state_dim},
          {"action_dim", f.action_dim},
          {"horizon", f.horizon},
          {"action_bound", f.action_bound},
          {"train_seed", f.train_seed},
          {"test_seed", f.test_seed},
          {"goal_radius", f.goal_radius},
          {"gain_min", f.gain_min},
          {"gain_max", f.gain_max},
          {"dt", f.dt},
          {"position_noise", f.position_noise},
          {"success_radius", f.success_radius},
          {"success_bonus", f.success_bonus},
          {"transition_noise", f.transition_noise},
          {"reward_noise", f.reward_noise},
          {"initial_state_std", f.initial_state_std},
          {"max_state_gain", f.max_state_gain}};
}

TaskFamily family_from(const json& j) {
  check_keys(j,
             {"name", "state_dim", "action_dim", "horizon", "action_bound", "train_seed",
              "test_seed", "goal_radius", "gain_min", "gain_max", "dt", "position_noise",
              "success_radius", "success_bonus", "transition_noise", "reward_noise",
              "initial_state_std", "max_state_gain"},
             "family");
  const std::string name = j.value("name", std::string("PointGoal2D"));
  TaskFamily f;
  if (name == "PointGoal2D") {
    f = TaskFamily::point_goal_2d();
  } else if (name == "LinearOracle") {
    f = TaskFamily::linear_oracle(j.value("state_dim", Index{4}), j.value("action_dim", Index{2}));
  } else {
    throw Error(ErrorCode::Config, "unknown family '" + name + "'");
  }
  if (f.kind == FamilyKind::PointGoal2D) {
    require(j.value("state_dim", Index{2}) == 2 && j.value("action_dim", Index{2}) == 2,
            ErrorCode::Config, "PointGoal2D has D_S = D_A = 2");
  }
  read(j, "horizon", f.horizon);
  read(j, "action_bound", f.action_bound);
  read(j, "train_seed", f.train_seed);
  read(j, "test_seed", f.test_seed);
  read(j, "goal_radius", f.goal_radius);
  read(j, "gain_min", f.gain_min);
  read(j, "gain_max", f.gain_max);
  read(j, "dt", f.dt);
  read(j, "position_noise", f.position_noise);
  read(j, "success_radius", f.success_radius);
  read(j, "success_bonus", f.success_bonus);
  read(j, "transition_noise", f.transition_noise);
  read(j, "reward_noise", f.reward_noise);
  read(j, "initial_state_std", f.initial_state_std);
  read(j, "max_state_gain", f.max_state_gain);
  return f;
}

json eval_json(const EvalResult& e) {
  return {{"success_rate", e.success_rate},
          {"mean_return", e.mean_return},
          {"transition_l1", e.transition_l1},
          {"reward_l1", e.reward_l1}};
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["total_steps"] = total_steps;
  j["tasks_per_iter"] = tasks_per_iter;
  j["eval_every"] = eval_every;
  j["eval_tasks"] = eval_tasks;
  j["eval_deterministic"] = eval_deterministic;
  j["checkpoint_every"] = checkpoint_every;
  j["belief_in_observation"] = belief_in_observation;
  j["track_kl"] = track_kl;
  j["train_model"] = train_model;
  j["train_policy"] = train_policy;
  j["out_dir"] = out_dir;
  j["known_noise"] = loss.known_noise;
  j["no_regularization"] = !loss.regularization;
  j["family"] = family_json(family);
  j["basis"] = {{"D_T", basis.transition_dim},
                {"D_R", basis.reward_dim},
                {"s_feat_layers", basis.s_feat_layers},
                {"s_feat_out", basis.s_feat_out},
                {"a_feat_layers", basis.a_feat_layers},
                {"a_feat_out", basis.a_feat_out},
                {"t_mix_layers", basis.t_mix_layers},
                {"t_mix_layernorm", basis.t_mix_layernorm},
                {"r_mix_layers", basis.r_mix_layers},
                {"r_mix_layernorm", basis.r_mix_layernorm}};
  j["model"] = {{"lr", model_lr},
                {"max_norm", opt_json(model_max_norm)},
                {"grad_epochs", model_grad_epochs},
                {"grad_steps", model_grad_steps},
                {"t_reg_coef", loss.lambda_t},
                {"r_reg_coef", loss.lambda_r},
                {"online_refresh_every", online.refresh_every}};
  j["policy"] = {{"layers", ppo.hidden},
                 {"lr", ppo.lr},
                 {"max_norm", ppo.max_grad_norm},
                 {"grad_epochs", ppo.epochs},
                 {"grad_steps", ppo.minibatches},
                 {"clip_eps", ppo.clip_eps},
                 {"gamma", ppo.gamma},
                 {"gae_lambda", ppo.gae_lambda},
                 {"entropy_coef", ppo.entropy_coef},
                 {"value_coef", ppo.value_coef},
                 {"log_std_min", ppo.std_min},
                 {"log_std_max", ppo.std_max},
                 {"log_std_bounds_are_log", ppo.std_bounds_are_log},
                 {"init_log_std", ppo.init_log_std},
                 {"standardize_advantages", ppo.standardize_advantages},
                 {"baseline", ppo.baseline == Baseline::ValueNet ? "value_net" : "linear_feature"}};
  j["prior"] = {{"init_mt", prior_t.m0},     {"init_xit", prior_t.xi0},
                {"init_omegat", prior_t.omega0}, {"init_nut", opt_json(prior_t.nu0)},
                {"init_mr", prior_r.m0},     {"init_xir", prior_r.xi0},
                {"init_omegar", prior_r.omega0}, {"init_nur", opt_json(prior_r.nu0)}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    check_keys(j,
               {"seed", "total_steps", "tasks_per_iter", "eval_every", "eval_tasks",
                "eval_deterministic", "checkpoint_every", "belief_in_observation", "track_kl",
                "train_model", "train_policy", "out_dir", "known_noise", "no_regularization",
                "family", "basis", "model", "policy", "prior"},
               "");
    read(j, "seed", c.seed);
    read(j, "total_steps", c.total_steps);
    read(j, "tasks_per_iter", c.tasks_per_iter);
    read(j, "eval_every", c.eval_every);
    read(j, "eval_tasks", c.eval_tasks);
    read(j, "eval_deterministic", c.eval_deterministic);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "belief_in_observation", c.belief_in_observation);
    read(j, "track_kl", c.track_kl);
    read(j, "train_model", c.train_model);
    read(j, "train_policy", c.train_policy);
    read(j, "out_dir", c.out_dir);
    read(j, "known_noise", c.loss.known_noise);
    if (j.contains("no_regularization")) c.loss.regularization = !j["no_regularization"].get<bool>();
    if (j.contains("family")) c.family = family_from(j["family"]);
    if (j.contains("basis")) {
      const json& b = j["basis"];
      check_keys(b,
                 {"D_T", "D_R", "s_feat_layers", "s_feat_out", "a_feat_layers", "a_feat_out",
                  "t_mix_layers", "t_mix_layernorm", "r_mix_layers", "r_mix_layernorm"},
                 "basis");
      read(b, "D_T", c.basis.transition_dim);
      read(b, "D_R", c.basis.reward_dim);
      read(b, "s_feat_layers", c.basis.s_feat_layers);
      read(b, "s_feat_out", c.basis.s_feat_out);
      read(b, "a_feat_layers", c.basis.a_feat_layers);
      read(b, "a_feat_out", c.basis.a_feat_out);
      read(b, "t_mix_layers", c.basis.t_mix_layers);
      read(b, "t_mix_layernorm", c.basis.t_mix_layernorm);
      read(b, "r_mix_layers", c.basis.r_mix_layers);
      read(b, "r_mix_layernorm", c.basis.r_mix_layernorm);
    }
    if (j.contains("model")) {
      const json& m = j["model"];
      check_keys(m,
                 {"lr", "max_norm", "grad_epochs", "grad_steps", "t_reg_coef", "r_reg_coef",
                  "online_refresh_every"},
                 "model");
      read(m, "lr", c.model_lr);
      read_opt(m, "max_norm", c.model_max_norm);
      read(m, "grad_epochs", c.model_grad_epochs);
      read(m, "grad_steps", c.model_grad_steps);
      read(m, "t_reg_coef", c.loss.lambda_t);
      read(m, "r_reg_coef", c.loss.lambda_r);
      read(m, "online_refresh_every", c.online.refresh_every);
    }
    if (j.contains("policy")) {
      const json& p = j["policy"];
      check_keys(p,
                 {"layers", "lr", "max_norm", "grad_epochs", "grad_steps", "clip_eps", "gamma",
                  "gae_lambda", "entropy_coef", "value_coef", "log_std_min", "log_std_max",
                  "log_std_bounds_are_log", "init_log_std", "standardize_advantages",
                  "baseline"},
                 "policy");
      read(p, "layers", c.ppo.hidden);
      read(p, "lr", c.ppo.lr);
      read(p, "max_norm", c.ppo.max_grad_norm);
      read(p, "grad_epochs", c.ppo.epochs);
      read(p, "grad_steps", c.ppo.minibatches);
      read(p, "clip_eps", c.ppo.clip_eps);
      read(p, "gamma", c.ppo.gamma);
      read(p, "gae_lambda", c.ppo.gae_lambda);
      read(p, "entropy_coef", c.ppo.entropy_coef);
      read(p, "value_coef", c.ppo.value_coef);
      read(p, "log_std_min", c.ppo.std_min);
      read(p, "log_std_max", c.ppo.std_max);
      read(p, "log_std_bounds_are_log", c.ppo.std_bounds_are_log);
      read(p, "init_log_std", c.ppo.init_log_std);
      read(p, "standardize_advantages", c.ppo.standardize_advantages);
      if (p.contains("baseline")) {
        const std::string b = p["baseline"].get<std::string>();
        require(b == "value_net" || b == "linear_feature", ErrorCode::Config,
                "policy.baseline must be value_net or linear_feature");
        c.ppo.baseline = b == "value_net" ? Baseline::ValueNet : Baseline::LinearFeature;
      }
    }
    if (j.contains("prior")) {
      const json& p = j["prior"];
      check_keys(p,
                 {"init_mt", "init_xit", "init_omegat", "init_nut", "init_mr", "init_xir",
                  "init_omegar", "init_nur"},
                 "prior");
      read(p, "init_mt", c.prior_t.m0);
      read(p, "init_xit", c.prior_t.xi0);
      read(p, "init_omegat", c.prior_t.omega0);
      read_opt(p, "init_nut", c.prior_t.nu0);
      read(p, "init_mr", c.prior_r.m0);
      read(p, "init_xir", c.prior_r.xi0);
      read(p, "init_omegar", c.prior_r.omega0);
      read_opt(p, "init_nur", c.prior_r.nu0);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    throw Error(ErrorCode::Config, e.detail());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string MetricsRow::to_json() const {
  json j;
  j["step"] = step;
  j["iteration"] = iteration;
  j["train_success"] = train_success;
  j["train_return"] = train_return;
  j["transition_l1"] = transition_l1;
  j["reward_l1"] = reward_l1;
  j["kl_transition"] = kl_transition;
  j["kl_reward"] = kl_reward;
  j["model_loss"] = model_loss;
  j["policy_loss"] = policy_loss;
  j["value_loss"] = value_loss;
  j["entropy"] = entropy;
  j["clip_fraction"] = clip_fraction;
  j["test"] = test ? eval_json(*test) : json(nullptr);
  return j.dump();
}

MetricsRow MetricsRow::from_json(const std::string& line) {
  const json j = json::parse(line);
  MetricsRow r;
  r.step = j.at("step").get<long>();
  r.iteration = j.at("iteration").get<int>();
  r.train_success = j.at("train_success").get<double>();
  r.train_return = j.at("train_return").get<double>();
  r.transition_l1 = j.at("transition_l1").get<double>();
  r.reward_l1 = j.at("reward_l1").get<double>();
  r.kl_transition = j.at("kl_transition").get<double>();
  r.kl_reward = j.at("kl_reward").get<double>();
  r.model_loss = j.at("model_loss").get<double>();
  r.policy_loss = j.at("policy_loss").get<double>();
  r.value_loss = j.at("value_loss").get<double>();
  r.entropy = j.at("entropy").get<double>();
  r.clip_fraction = j.at("clip_fraction").get<double>();
  if (!j.at("test").is_null()) {
    const json& t = j["test"];
    EvalResult e;
    e.success_rate = t.at("success_rate").get<double>();
    e.mean_return = t.at("mean_return").get<double>();
    e.transition_l1 = t.at("transition_l1").get<double>();
    e.reward_l1 = t.at("reward_l1").get<double>();
    r.test = e;
  }
  return r;
}

std::uint64_t parameter_hash(const BasisNets& nets, const GaussianPolicy& policy,
                             const RunningNormalizer& norm) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const Matrix& m) {
    h = fnv1a64(reinterpret_cast<const std::uint8_t*>(m.data()),
                static_cast<std::size_t>(m.size()) * sizeof(double), h);
  };
  for (const Matrix* m : nets.params()) mix(*m);
  for (const Matrix* m : policy.params()) mix(*m);
  mix(norm.state());
  return h;
}

EvalResult eval_zero_shot(const GaussianPolicy& policy, const BasisNets& nets,
                          const ModelPriors& priors, const AgentConfig& agent_cfg,
                          const RunningNormalizer& norm, const TaskFamily& family, int n_tasks,
                          std::uint64_t seed, bool deterministic) {
  require(n_tasks >= 1, ErrorCode::InvalidArgument, "eval_zero_shot: need at least one task");
  const std::uint64_t before = parameter_hash(nets, policy, norm);
  Agent agent(priors, agent_cfg);
  agent.normalizer() = norm;
  agent.normalizer().set_frozen(true);
  Rng rng(seed);
  const Actor actor = [&](const RowVector& obs) { return policy.act(obs, rng, deterministic); };
  EvalResult out;
  for (int k = 0; k < n_tasks; ++k) {
    TaskInstance task = make_task(family, Split::Test, static_cast<std::uint64_t>(k));
    agent.reset();
    const Rollout ro = collect_rollout(agent, task, actor, nets, family.horizon, false);
    out.successes.push_back(ro.stats.success ? 1.0 : 0.0);
    out.returns.push_back(ro.stats.total_return);
    out.transition_l1_per_task.push_back(ro.stats.transition_l1);
    out.success_rate += out.successes.back();
    out.mean_return += ro.stats.total_return;
    out.transition_l1 += ro.stats.transition_l1;
    out.reward_l1 += ro.stats.reward_l1;
  }
  const double n = n_tasks;
  out.success_rate /= n;
  out.mean_return /= n;
  out.transition_l1 /= n;
  out.reward_l1 /= n;
  require(parameter_hash(nets, policy, norm) == before, ErrorCode::InvalidArgument,
          "eval_zero_shot: parameters changed during evaluation");
  return out;
}

double heldout_transition_l1(const BasisNets& nets, const ModelPriors& priors,
                             const AgentConfig& agent_cfg, const TaskFamily& family,
                             int n_tasks, std::uint64_t seed) {
  AgentConfig cfg = agent_cfg;
  cfg.track_kl = false;
  Agent agent(priors, cfg);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-family.action_bound, family.action_bound);
  const Actor actor = [&](const RowVector&) {
    ActionSample s;
    s.action = RowVector(family.action_dim);
    for (Index i = 0; i < s.action.size(); ++i) s.action(i) = u(rng);
    return s;
  };
  double total = 0.0;
  for (int k = 0; k < n_tasks; ++k) {
    TaskInstance task = make_task(family, Split::Test, static_cast<std::uint64_t>(k));
    agent.reset();
    total += collect_rollout(agent, task, actor, nets, family.horizon, false).stats.transition_l1;
  }
  return total / n_tasks;
}

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg,
                     const BasisNets& nets, const GaussianPolicy& policy,
                     const RunningNormalizer& norm) {
  Container c;
  c.put_text("config", cfg.to_json());
  c.put_text("version", version_string());
  const auto np = nets.params();
  for (std::size_t i = 0; i < np.size(); ++i) c.put("basis/" + std::to_string(i), *np[i]);
  const auto pp = policy.params();
  for (std::size_t i = 0; i < pp.size(); ++i) c.put("policy/" + std::to_string(i), *pp[i]);
  c.put("normalizer", norm.state());
  const ModelPriors pr = cfg.priors();
  put_belief(c, "prior_t", pr.transition);
  put_belief(c, "prior_r", pr.reward);
  c.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const Container c = Container::load(path);
  Checkpoint ck;
  ck.config = RunConfig::from_json(c.get_text("config"));
  Rng rng(0);
  ck.nets = BasisNets(ck.config.basis_config(), rng);
  const AgentConfig acfg = ck.config.agent_config();
  const Agent probe(ck.config.priors(), acfg);
  ck.policy = GaussianPolicy(probe.observation_dim(ck.config.family.state_dim),
                             ck.config.family.action_dim, ck.config.ppo, rng);
  auto load_into = [&c](const std::string& prefix, const std::vector<Matrix*>& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix& m = c.get(prefix + std::to_string(i));
      require(m.rows() == params[i]->rows() && m.cols() == params[i]->cols(),
              ErrorCode::DimensionMismatch, "checkpoint parameter shape mismatch");
      *params[i] = m;
    }
  };
  load_into("basis/", ck.nets.params());
  load_into("policy/", ck.policy.params());
  ck.normalizer = RunningNormalizer::from_state(c.get("normalizer"));
  return ck;
}

namespace {

void write_manifest(const std::filesystem::path& dir, const RunConfig& cfg,
                    const std::string& status, const std::string& error = "", long step = -1) {
  json m;
  m["config"] = json::parse(cfg.to_json());
  m["seed"] = cfg.seed;
  m["version"] = version_string();
  m["status"] = status;
  if (!error.empty()) {
    m["error"] = error;
    m["abort_step"] = step;
  }
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << '\n';
}

}  // namespace

RunResult run_experiment(const RunConfig& cfg) {
  cfg.validate();
  RunResult res;
  const bool write = !cfg.out_dir.empty();
  std::ofstream metrics, timings;
  if (write) {
    res.dir = cfg.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(res.dir / "checkpoints", ec);
    require(!ec, ErrorCode::Io, "cannot create run directory " + res.dir.string());
    write_manifest(res.dir, cfg, "running");
    metrics.open(res.dir / "metrics.jsonl");
    timings.open(res.dir / "timings.jsonl");
    require(metrics && timings, ErrorCode::Io, "cannot open metrics files");
  }

  const ModelPriors priors = cfg.priors();
  const AgentConfig acfg = cfg.agent_config();
  Rng init_rng(derive_seed(cfg.seed, 0));
  BasisNets nets(cfg.basis_config(), init_rng);
  Agent agent(priors, acfg);
  Rng policy_rng(derive_seed(cfg.seed, 1));
  GaussianPolicy policy(agent.observation_dim(cfg.family.state_dim), cfg.family.action_dim,
                        cfg.ppo, policy_rng);
  Rng act_rng(derive_seed(cfg.seed, 2));
  Rng ppo_rng(derive_seed(cfg.seed, 3));
  nn::Adam model_opt(cfg.model_lr, cfg.model_max_norm);
  nn::Adam policy_opt(cfg.ppo.lr, cfg.ppo.max_grad_norm);
  LinearFeatureBaseline baseline;
  TaskFamily train_family = cfg.family;
  train_family.train_seed = derive_seed(cfg.family.train_seed, cfg.seed);
  const Actor actor = [&](const RowVector& obs) { return policy.act(obs, act_rng, false); };

  const int iters = cfg.iterations();
  const int k_tasks = cfg.tasks_per_iter;
  long env_steps = 0;
  int it = 0;
  try {
    for (it = 0; it < iters; ++it) {
      const auto t0 = std::chrono::steady_clock::now();
      MetricsRow row;
      row.iteration = it;
      std::vector<RolloutBuffer> buffers;
      std::vector<ContextBatch> contexts;
      for (int k = 0; k < k_tasks; ++k) {
        TaskInstance task = make_task(
            train_family, Split::Train,
            static_cast<std::uint64_t>(it) * static_cast<std::uint64_t>(k_tasks) +
                static_cast<std::uint64_t>(k));
        agent.reset();
        Rollout ro = collect_rollout(agent, task, actor, nets, cfg.family.horizon, true);
        env_steps += static_cast<long>(ro.buffer.size());
        row.train_success += ro.stats.success ? 1.0 : 0.0;
        row.train_return += ro.stats.total_return;
        row.transition_l1 += ro.stats.transition_l1;
        row.reward_l1 += ro.stats.reward_l1;
        row.kl_transition += ro.stats.kl_transition;
        row.kl_reward += ro.stats.kl_reward;
        buffers.push_back(std::move(ro.buffer));
        contexts.push_back(std::move(ro.contexts));
      }
      for (double* v : {&row.train_success, &row.train_return, &row.transition_l1,
                        &row.reward_l1, &row.kl_transition, &row.kl_reward})
        *v /= k_tasks;

      if (cfg.train_model) {
        const int steps = cfg.model_grad_epochs * cfg.model_grad_steps;
        for (int s = 0; s < steps; ++s)
          row.model_loss += train_step(nets, model_opt, priors, contexts, cfg.loss).loss;
        if (steps > 0) row.model_loss /= steps;
      }
      if (cfg.train_policy) {
        const PPOMetrics pm = ppo_update(policy, policy_opt, merge_buffers(buffers), cfg.ppo,
                                         ppo_rng, &baseline);
        row.policy_loss = pm.policy_loss;
        row.value_loss = pm.value_loss;
        row.entropy = pm.entropy;
        row.clip_fraction = pm.clip_fraction;
      }
      row.step = env_steps;
      const bool last = it + 1 == iters;
      if (last || (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0)) {
        row.test = eval_zero_shot(policy, nets, priors, acfg, agent.normalizer(), cfg.family,
                                  cfg.eval_tasks, derive_seed(cfg.seed, 4), cfg.eval_deterministic);
      }
      if (write) {
        metrics << row.to_json() << '\n';
        metrics.flush();
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        timings << json{{"iteration", it}, {"seconds", secs}}.dump() << '\n';
        if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && !last) {
          save_checkpoint(res.dir / "checkpoints" / ("iter_" + std::to_string(it + 1) + ".bin"),
                          cfg, nets, policy, agent.normalizer());
        }
      }
      res.rows.push_back(std::move(row));
    }
  } catch (const Error& e) {
    if (write) write_manifest(res.dir, cfg, "aborted", e.what(), env_steps);
    throw Error(e.code(), "iteration " + std::to_string(it) + ": " + e.detail());
  }
  res.final_eval = *res.rows.back().test;
  if (write) {
    save_checkpoint(res.dir / "checkpoints" / "final.bin", cfg, nets, policy, agent.normalizer());
    write_manifest(res.dir, cfg, "completed");
  }
  res.nets = std::move(nets);
  res.policy = std::move(policy);
  res.normalizer = agent.normalizer();
  return res;
}

KlSeries kl_diagnostic(const std::vector<MetricsRow>& rows) {
  KlSeries s;
  for (const MetricsRow& r : rows) {
    s.transition.push_back(r.kl_transition);
    s.reward.push_back(r.kl_reward);
  }
  return s;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& run_dir) {
  std::ifstream in(run_dir / "metrics.jsonl");
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + (run_dir / "metrics.jsonl").string());
  std::vector<MetricsRow> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(MetricsRow::from_json(line));
  return rows;
}

KlSeries kl_diagnostic(const std::filesystem::path& run_dir) {
  return kl_diagnostic(read_metrics(run_dir));
}

namespace {
std::string sub_dir(const RunConfig& base, const std::string& name) {
  return base.out_dir.empty() ? std::string() : (std::filesystem::path(base.out_dir) / name).string();
}
}  // namespace

std::vector<ArmResult> ablate(const RunConfig& base) {
  std::vector<ArmResult> out;
  RunConfig full = base;
  full.loss.known_noise = false;
  full.loss.regularization = true;
  RunConfig known = full;
  known.loss.known_noise = true;
  RunConfig noreg = full;
  noreg.loss.regularization = false;
  for (auto& [name, c] : std::vector<std::pair<std::string, RunConfig>>{
           {"full", full}, {"known_noise", known}, {"no_reg", noreg}}) {
    c.out_dir = sub_dir(base, name);
    out.push_back({name, run_experiment(c)});
  }
  return out;
}

std::vector<std::pair<Index, Index>> sweep_grid(Index base_dt, Index base_dr) {
  std::vector<std::pair<Index, Index>> g;
  for (Index dt : {4, 8, 16, 32}) g.emplace_back(dt, base_dr);
  for (Index dr : {32, 64, 128, 256, 512}) g.emplace_back(base_dt, dr);
  return g;
}

std::vector<ArmResult> sweep(const RunConfig& base) {
  std::vector<ArmResult> out;
  std::set<std::pair<Index, Index>> done;
  for (const auto& [dt, dr] : sweep_grid(base.basis.transition_dim, base.basis.reward_dim)) {
    if (!done.insert({dt, dr}).second) continue;
    RunConfig c = base;
    c.basis.transition_dim = dt;
    c.basis.reward_dim = dr;
    const std::string name = "dt" + std::to_string(dt) + "_dr" + std::to_string(dr);
    c.out_dir = sub_dir(base, name);
    out.push_back({name, run_experiment(c)});
  }
  return out;
}

std::filesystem::path resolve_out_dir(const std::string& out) {
  std::filesystem::path p(out);
  const char* root = std::getenv("NWBRL_OUT_ROOT");
  if (root != nullptr && *root != '\0' && p.is_relative()) return std::filesystem::path(root) / p;
  return p;
}

}  // namespace nwbrl
