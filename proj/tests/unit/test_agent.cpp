#include <doctest.h>

#include <cmath>
#include <memory>

#include "nwbrl/agent.hpp"
#include "nwbrl/error.hpp"
#include "nwbrl/linalg.hpp"
#include "support.hpp"

using namespace nwbrl;
using testing::max_abs_diff;

namespace {

BasisConfig small_basis(Index ds, Index da, Index dt, Index dr) {
  BasisConfig c;
  c.state_dim = ds;
  c.action_dim = da;
  c.transition_dim = dt;
  c.reward_dim = dr;
  c.s_feat_layers = {16};
  c.a_feat_layers = {8};
  c.t_mix_layers = {16};
  c.r_mix_layers = {16};
  return c;
}

ModelPriors priors(Index dt, Index dr, Index ds) {
  return ModelPriors::from(make_prior(dt, ds, 0.0, 1.0, 1.0, static_cast<double>(ds + 1)),
                           make_prior(dr, 1, 0.0, 1.0, 1.0, 2.0));
}

Actor random_actor(Index da, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  return [rng, da](const RowVector&) {
    return ActionSample{standard_normal(1, da, *rng), 0.0, 0.0};
  };
}

Actor fixed_actor(Index da) {
  return [da](const RowVector& obs) {
    RowVector a = RowVector::Constant(da, 0.3 * std::tanh(obs(0)));
    return ActionSample{a, -1.0, obs.sum()};
  };
}

}  // namespace

TEST_CASE("reset returns to the prior and is idempotent") {
  Rng rng(1);
  const BasisNets nets = init_networks(small_basis(2, 2, 4, 8), rng);
  Agent agent(priors(4, 8, 2), AgentConfig{});
  const RowVector prior_features = agent.raw_belief_features();
  CHECK(prior_features.cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 5; ++i)
    agent.observe(standard_normal(1, 2, rng), standard_normal(1, 2, rng), standard_normal(1, 2, rng),
                  0.5, nets);
  CHECK(agent.contexts().size() == 5);
  CHECK(agent.raw_belief_features().cwiseAbs().maxCoeff() > 0.0);
  agent.reset();
  CHECK(max_abs_diff(agent.raw_belief_features(), prior_features) == 0.0);
  CHECK(agent.contexts().size() == 0);
  CHECK(max_abs_diff(agent.belief_transition().Xi, agent.priors().transition.Xi) == 0.0);
  agent.reset();
  CHECK(agent.belief_transition().nu == agent.priors().transition.nu);
  CHECK(max_abs_diff(agent.belief_reward().Omega, agent.priors().reward.Omega) == 0.0);
}

TEST_CASE("k observes equal the batch posterior without any factorization") {
  Rng rng(2);
  const BasisNets nets = init_networks(small_basis(3, 2, 5, 12), rng);
  for (bool known : {false, true}) {
    AgentConfig cfg;
    cfg.known_noise = known;
    Agent agent(priors(5, 12, 3), cfg);
    const std::uint64_t before = linalg::cholesky_call_count();
    for (int i = 0; i < 40; ++i)
      agent.observe(standard_normal(1, 3, rng), standard_normal(1, 2, rng),
                    standard_normal(1, 3, rng), standard_normal(1, 1, rng)(0, 0), nets);
    CHECK(linalg::cholesky_call_count() == before);

    auto [ct, cr] = nets.eval(agent.contexts());
    if (known) {
      const KnownNoiseBelief bt = known_noise_update(agent.priors().transition_known, ct,
                                                     agent.contexts().Snext);
      const KnownNoiseBelief br = known_noise_update(agent.priors().reward_known, cr,
                                                     agent.contexts().r);
      CHECK(max_abs_diff(agent.known_transition().M, bt.M) < 1e-6);
      CHECK(max_abs_diff(agent.known_reward().M, br.M) < 1e-6);
      CHECK(max_abs_diff(agent.known_reward().Xi, br.Xi) < 1e-6);
    } else {
      const NWBelief bt = batch_update(agent.priors().transition, ct, agent.contexts().Snext);
      const NWBelief br = batch_update(agent.priors().reward, cr, agent.contexts().r);
      CHECK(max_abs_diff(agent.belief_transition().M, bt.M) < 1e-6);
      CHECK(max_abs_diff(agent.belief_transition().Omega, bt.Omega) < 1e-6);
      CHECK(max_abs_diff(agent.belief_reward().M, br.M) < 1e-6);
      CHECK(max_abs_diff(agent.belief_reward().XiInv, br.XiInv) < 1e-6);
      CHECK(agent.belief_reward().nu == br.nu);
    }
  }
}

TEST_CASE("observe reports errors under the pre-update belief and KL when tracked") {
  Rng rng(3);
  const BasisNets nets = init_networks(small_basis(2, 1, 3, 4), rng);
  AgentConfig cfg;
  cfg.track_kl = true;
  Agent agent(priors(3, 4, 2), cfg);
  const RowVector s = standard_normal(1, 2, rng), a = standard_normal(1, 1, rng);
  const RowVector sn = standard_normal(1, 2, rng);
  const ObserveInfo first = agent.observe(s, a, sn, 0.7, nets);
  CHECK(first.transition_l1 == doctest::Approx(sn.cwiseAbs().sum()));
  CHECK(first.reward_l1 == doctest::Approx(0.7));
  CHECK(first.kl_transition > 0.0);
  CHECK(first.kl_reward > 0.0);
  NWBelief prev = agent.belief_transition();
  const ObserveInfo second = agent.observe(sn, a, s, -0.2, nets);
  CHECK(second.kl_transition == doctest::Approx(nw_kl(agent.belief_transition(), prev)));
  const FeatureRows f = nets.eval_row(sn, a, s);
  CHECK(second.transition_l1 == doctest::Approx((s - f.transition * prev.M).cwiseAbs().sum()));
}

TEST_CASE("policy feature layout") {
  Agent big(priors(16, 256, 2), AgentConfig{});
  CHECK(big.feature_dim() == 136 + 256);
  CHECK(big.raw_belief_features().size() == 392);
  CHECK(big.observation_dim(39) == 39 + 392);
  CHECK(big.observation(RowVector::Zero(2)).size() == 394);
  AgentConfig blind;
  blind.belief_in_observation = false;
  Agent b(priors(16, 256, 2), blind);
  CHECK(b.observation_dim(2) == 2);
  CHECK(b.observation(RowVector::Ones(2)).size() == 2);
}

TEST_CASE("triangle block is invariant to orthogonal mixing of the state columns") {
  Rng rng(4);
  const Index ds = 3, dt = 4;
  const BasisNets nets = init_networks(small_basis(ds, 1, dt, 5), rng);
  Eigen::HouseholderQR<Matrix> qr(standard_normal(ds, ds, rng));
  const Matrix q = qr.householderQ();
  Agent a(priors(dt, 5, ds), AgentConfig{});
  NWBelief rotated = a.priors().transition;
  for (int i = 0; i < 15; ++i) {
    const RowVector s = standard_normal(1, ds, rng), act = standard_normal(1, 1, rng);
    const RowVector sn = standard_normal(1, ds, rng);
    a.observe(s, act, sn, 0.0, nets);
    // The transition features depend on (s, a) only, so rotating s' rotates M_T.
    online_update(rotated, nets.eval_row(s, act, sn).transition, sn * q);
  }
  CHECK(max_abs_diff(rotated.M, a.belief_transition().M * q) < 1e-10);
  const Matrix g = rotated.M * rotated.M.transpose();
  const RowVector feats = a.raw_belief_features();
  Index k = 0;
  double worst = 0.0;
  for (Index i = 0; i < dt; ++i)
    for (Index j = 0; j <= i; ++j) worst = std::max(worst, std::abs(feats(k++) - g(i, j)));
  CHECK(k == dt * (dt + 1) / 2);
  CHECK(worst < 1e-10);
}

TEST_CASE("normalizer") {
  RunningNormalizer n(3, 10.0);
  Rng rng(5);
  Matrix xs = standard_normal(200, 3, rng);
  xs.col(1) = xs.col(1) * 5.0 + Vector::Constant(200, 2.0);
  for (Index i = 0; i < xs.rows(); ++i) n.update(xs.row(i));
  const RowVector mean = xs.colwise().mean();
  CHECK(max_abs_diff(n.mean(), mean) < 1e-12);
  const RowVector var = (xs.rowwise() - mean).array().square().colwise().sum() / 200.0;
  CHECK(max_abs_diff(n.variance(), var) < 1e-10);
  CHECK(n.normalize(RowVector::Constant(3, 1e6)).maxCoeff() == 10.0);
  CHECK(n.normalize(RowVector::Constant(3, -1e6)).minCoeff() == -10.0);

  const RunningNormalizer r = RunningNormalizer::from_state(n.state());
  CHECK(r.count() == n.count());
  const RowVector probe = standard_normal(1, 3, rng);
  CHECK(max_abs_diff(r.normalize(probe), n.normalize(probe)) == 0.0);

  n.set_frozen(true);
  Agent agent(priors(2, 3, 2), AgentConfig{});
  agent.normalizer() = n;
  agent.normalizer().set_frozen(true);
  CHECK_THROWS(agent.policy_features());  // 2*3/2 + 3 = 6 features against a 3-dim normalizer

  Agent fresh(priors(2, 3, 2), AgentConfig{});
  fresh.normalizer().set_frozen(true);
  fresh.policy_features();
  CHECK(fresh.normalizer().count() == 0.0);
}

TEST_CASE("rollouts") {
  Rng rng(6);
  TaskFamily fam = TaskFamily::point_goal_2d();
  fam.position_noise = 0.0;
  const BasisNets nets = init_networks(small_basis(2, 2, 4, 8), rng);

  auto once = [&] {
    Agent agent(priors(4, 8, 2), AgentConfig{});
    TaskInstance task = make_task(fam, Split::Train, 2);
    task.reset();
    Rollout r = collect_rollout(agent, task, fixed_actor(2), nets, fam.horizon);
    return std::make_pair(std::move(r), agent);
  };
  auto [r1, a1] = once();
  auto [r2, a2] = once();
  CHECK(r1.buffer.size() == 60);
  CHECK(r1.contexts.size() == 60);
  CHECK(r1.trajectory.size() == 60);
  CHECK(r1.buffer.dones.back());
  CHECK_FALSE(r1.buffer.dones.front());
  for (std::size_t i = 0; i < r1.buffer.size(); ++i) {
    CHECK(max_abs_diff(r1.buffer.observations[i], r2.buffer.observations[i]) == 0.0);
    CHECK(r1.buffer.rewards[i] == r2.buffer.rewards[i]);
  }
  CHECK(r1.stats.total_return == r2.stats.total_return);

  auto [ct, cr] = nets.eval(r1.contexts);
  const NWBelief bt = batch_update(a1.priors().transition, ct, r1.contexts.Snext);
  const NWBelief br = batch_update(a1.priors().reward, cr, r1.contexts.r);
  CHECK(max_abs_diff(a1.belief_transition().M, bt.M) < 1e-6);
  CHECK(max_abs_diff(a1.belief_reward().M, br.M) < 1e-6);
  CHECK(max_abs_diff(a1.belief_reward().Omega, br.Omega) < 1e-6);

  // Rollouts of random actions with noise, merged in task order.
  std::vector<RolloutBuffer> parts;
  for (std::uint64_t k = 0; k < 3; ++k) {
    Agent agent(priors(4, 8, 2), AgentConfig{});
    TaskInstance task = make_task(TaskFamily::point_goal_2d(), Split::Train, k);
    task.reset();
    parts.push_back(collect_rollout(agent, task, random_actor(2, k), nets, 60).buffer);
  }
  const RolloutBuffer merged = merge_buffers(parts);
  CHECK(merged.size() == 180);
  CHECK(merged.dones[59]);
  CHECK(merged.dones[119]);
  RolloutBuffer partial = parts[0];
  partial.dones.back() = false;
  CHECK_THROWS_AS(merge_buffers({partial}), Error);
}

TEST_CASE("rollout errors carry the step index") {
  Rng rng(7);
  const BasisNets nets = init_networks(small_basis(2, 2, 3, 3), rng);
  Agent agent(priors(3, 3, 2), AgentConfig{});
  TaskInstance task = make_task(TaskFamily::point_goal_2d(), Split::Train, 0);
  task.reset();
  Actor bad = [](const RowVector&) { return ActionSample{RowVector::Zero(3), 0.0, 0.0}; };
  try {
    collect_rollout(agent, task, bad, nets, 60);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}
