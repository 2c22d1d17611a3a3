#pragma once

// Numerical checks of the baseline theory: the grid-walker variance gap,
// factorization of (z-tail, a) given the observation, baseline invariance of
// the expected gradient, optimality of b*, constancy of the surrogate
// baseline term, the Markov property of case-1 observations, and gradcheck.

#include <Eigen/Dense>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "idb/analysis/enumerable_mdp.hpp"
#include "idb/baselines/oracle.hpp"
#include "idb/envs/gridworld.hpp"
#include "idb/nn/mlp.hpp"
#include "idb/trainer.hpp"

namespace idb::analysis {

// ---------------------------------------------------------------------------
// Grid walker variance gap

struct VarianceGapReport {
  double gamma = 0.0;
  int horizon = 0;
  std::size_t trajectories = 0;
  double v1_mc = 0.0, v1_se = 0.0;
  double v2_mc = 0.0, v2_se = 0.0;
  double gap_mc = 0.0;
  double gap_se = 0.0;  // standard error of the paired difference
  double analytic_gap = 0.0;

  double z_score() const { return gap_se > 0.0 ? std::abs(gap_mc - analytic_gap) / gap_se : 0.0; }
};

inline double analytic_variance_gap(double gamma, double var_a = 1.0, double var_z = 1.0) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error("gamma must lie in [0, 1)");
  const double d = 1.0 - gamma * gamma;
  return var_a * var_z / (4.0 * d * d);
}

/// Smallest T with gamma^T < tol.
inline int truncation_horizon(double gamma, double tol = 1e-4) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error("gamma must lie in (0, 1)");
  int T = 1;
  double g = gamma;
  while (g >= tol) {
    g *= gamma;
    ++T;
  }
  return T;
}

/// Monte Carlo V1 (no baseline) and V2 (input-dependent baseline
/// sum_t gamma^t z_t) for the grid walker at theta = 0, where
///   X = sum_t (a_t/2) sum_{t'>=t} gamma^t' (a_t' + z_t')   and
///   Y = sum_t (a_t/2) sum_{t'>=t} gamma^t' a_t'.
inline VarianceGapReport gridworld_variance_gap(double gamma, std::size_t num_trajectories, int horizon,
                                                std::uint64_t seed, int threads = 1) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error("gamma must lie in (0, 1)");
  if (num_trajectories < 2) throw Error("need at least 2 trajectories");
  if (horizon < 1) horizon = truncation_horizon(gamma);
  const std::size_t shards = 64;
  std::vector<double> disc(static_cast<std::size_t>(horizon));
  for (int t = 0; t < horizon; ++t) disc[static_cast<std::size_t>(t)] = std::pow(gamma, t);

  // Replays shard s, calling f(x, y) per trajectory. Both passes below see
  // identical draws.
  auto replay = [&](std::size_t s, auto&& f) {
    const std::size_t lo = num_trajectories * s / shards, hi = num_trajectories * (s + 1) / shards;
    Rng rng(derive_seed(seed, {s}));
    std::vector<int> a(disc.size()), z(disc.size());
    for (std::size_t n = lo; n < hi; ++n) {
      for (std::size_t t = 0; t < a.size(); ++t) {
        a[t] = uniform01(rng) < 0.5 ? -1 : 1;  // pi(+1) = sigmoid(0)
        z[t] = uniform01(rng) < 0.5 ? -1 : 1;
      }
      double tail_az = 0.0, tail_a = 0.0, x = 0.0, y = 0.0;
      for (std::size_t t = a.size(); t-- > 0;) {
        tail_az += disc[t] * (a[t] + z[t]);
        tail_a += disc[t] * a[t];
        x += 0.5 * a[t] * tail_az;
        y += 0.5 * a[t] * tail_a;
      }
      f(x, y);
    }
  };

  struct Sums {
    double x = 0, xx = 0, y = 0, yy = 0, d = 0, dd = 0;
    void add(const Sums& o) {
      x += o.x, xx += o.xx, y += o.y, yy += o.yy, d += o.d, dd += o.dd;
    }
  };
  std::vector<Sums> first(shards);
  parallel_for(shards, threads, [&](std::size_t s) {
    replay(s, [&](double x, double y) {
      first[s].x += x;
      first[s].y += y;
    });
  });
  Sums m1;
  for (const auto& f : first) m1.add(f);
  const double n = static_cast<double>(num_trajectories);
  const double mx = m1.x / n, my = m1.y / n;

  // Squared deviations u, v have means V1, V2 (up to n/(n-1)); their sample
  // spread gives the standard errors, and u - v the paired gap.
  std::vector<Sums> second(shards);
  parallel_for(shards, threads, [&](std::size_t s) {
    replay(s, [&](double x, double y) {
      const double u = (x - mx) * (x - mx), v = (y - my) * (y - my);
      Sums& S = second[s];
      S.x += u, S.xx += u * u, S.y += v, S.yy += v * v, S.d += u - v, S.dd += (u - v) * (u - v);
    });
  });
  Sums m2;
  for (const auto& f : second) m2.add(f);
  auto se = [n](double s, double ss) {
    const double m = s / n;
    return std::sqrt(std::max(ss / n - m * m, 0.0) / (n - 1.0));
  };
  VarianceGapReport r;
  r.gamma = gamma;
  r.horizon = horizon;
  r.trajectories = num_trajectories;
  r.v1_mc = m2.x / (n - 1.0);
  r.v2_mc = m2.y / (n - 1.0);
  r.gap_mc = r.v1_mc - r.v2_mc;
  r.analytic_gap = analytic_variance_gap(gamma);
  r.v1_se = se(m2.x, m2.xx);
  r.v2_se = se(m2.y, m2.yy);
  r.gap_se = se(m2.d, m2.dd);
  return r;
}

// ---------------------------------------------------------------------------
// Exact quantities on enumerable MDPs

/// E[sum_t score_t (G_t - b_t)], exactly.
inline Eigen::VectorXd exact_expected_gradient(const TabularPolicy& policy, const std::vector<Path>& paths,
                                               const KeyedBaseline& b) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.dim());
  for (const auto& p : paths) g += p.prob * path_gradient(policy, p, b);
  return g;
}

/// E[sum_t score_t b_t], exactly.
inline Eigen::VectorXd exact_baseline_term(const TabularPolicy& policy, const std::vector<Path>& paths,
                                           const KeyedBaseline& b) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.dim());
  for (const auto& p : paths) g += p.prob * path_baseline_term(policy, p, b);
  return g;
}

/// Trace of the covariance of the per-path estimator, exactly.
inline double exact_trajectory_variance(const TabularPolicy& policy, const std::vector<Path>& paths,
                                        const KeyedBaseline& b) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(policy.dim());
  double second = 0.0;
  for (const auto& p : paths) {
    Eigen::VectorXd g = path_gradient(policy, p, b);
    mean += p.prob * g;
    second += p.prob * g.squaredNorm();
  }
  return second - mean.squaredNorm();
}

/// Variance of the single-sample estimator score(a|w) (Q(w,a,z) - b(w,z)),
/// with (w, z) drawn from the (unnormalized, undiscounted) visitation and
/// a ~ pi. This is the objective b* minimizes pointwise.
inline double exact_stepwise_variance(const TabularPolicy& policy, const VisitTable& table,
                                      const KeyedBaseline& b) {
  double total = 0.0;
  for (const auto& [k, e] : table) total += e.mass;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(policy.dim());
  double second = 0.0;
  for (const auto& [k, e] : table) {
    const double w = e.mass / total;
    const double bk = b(k);
    for (int a = 0; a < policy.num_actions; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      Eigen::VectorXd s = policy.score(k.obs, a);
      const double adv = e.q[ua] - bk;
      mean += w * e.pi[ua] * adv * s;
      second += w * e.pi[ua] * adv * adv * s.squaredNorm();
    }
  }
  return second - mean.squaredNorm();
}

/// The conventional value baseline V(t, w) = E[G_t | t, w], exactly.
inline KeyedBaseline exact_state_baseline(const VisitTable& table) {
  std::map<std::pair<int, int>, std::pair<double, double>> acc;  // (t, obs) -> (mass * V, mass)
  for (const auto& [k, e] : table) {
    double v = 0.0;
    for (std::size_t a = 0; a < e.q.size(); ++a) v += e.pi[a] * e.q[a];
    auto& x = acc[{k.t, k.obs}];
    x.first += e.mass * v;
    x.second += e.mass;
  }
  auto shared = std::make_shared<std::map<std::pair<int, int>, double>>();
  for (const auto& [key, x] : acc) (*shared)[key] = x.first / x.second;
  return [shared](const VisitKey& k) { return shared->at({k.t, k.obs}); };
}

/// The practical input-dependent baseline E_a[Q(w, a, z)].
inline KeyedBaseline exact_input_baseline(const VisitTable& table) {
  std::map<VisitKey, double> v;
  for (const auto& [k, e] : table) {
    double s = 0.0;
    for (std::size_t a = 0; a < e.q.size(); ++a) s += e.pi[a] * e.q[a];
    v[k] = s;
  }
  return keyed(std::move(v));
}

// ---------------------------------------------------------------------------
// Baseline invariance of the expected gradient

struct BaselineInvarianceReport {
  Eigen::VectorXd reference;  // no baseline
  double max_relative_deviation = 0.0;
  std::vector<double> deviations;  // one per candidate baseline
};

inline BaselineInvarianceReport baseline_invariance_check(const EnumerableMDP& mdp, const TabularPolicy& policy,
                                                          const std::vector<KeyedBaseline>& baselines) {
  auto paths = enumerate_paths(mdp, policy);
  BaselineInvarianceReport r;
  r.reference = exact_expected_gradient(policy, paths, zero_baseline());
  const double scale = std::max(r.reference.norm(), 1e-300);
  for (const auto& b : baselines) {
    const double d = (exact_expected_gradient(policy, paths, b) - r.reference).norm() / scale;
    r.deviations.push_back(d);
    r.max_relative_deviation = std::max(r.max_relative_deviation, d);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Optimality of b*

struct OptimalityReport {
  double optimal_variance = 0.0;
  double min_perturbed_variance = 0.0;
  std::size_t trials = 0;
  std::size_t violations = 0;  // perturbed variance below the optimum
  std::size_t strict = 0;      // perturbed variance strictly above
};

inline OptimalityReport baseline_optimality_check(const EnumerableMDP& mdp, const TabularPolicy& policy,
                                                  std::size_t perturbations, std::uint64_t seed,
                                                  double scale = 1.0) {
  VisitTable table = visit_table(mdp, policy);
  auto bstar = optimal_baseline_table(policy, table);
  OptimalityReport r;
  r.optimal_variance = exact_stepwise_variance(policy, table, keyed(bstar));
  r.min_perturbed_variance = std::numeric_limits<double>::infinity();
  Rng rng(seed);
  for (std::size_t i = 0; i < perturbations; ++i) {
    auto b = bstar;
    for (auto& [k, v] : b) v += scale * standard_normal(rng);
    const double var = exact_stepwise_variance(policy, table, keyed(std::move(b)));
    r.min_perturbed_variance = std::min(r.min_perturbed_variance, var);
    ++r.trials;
    // tolerance covers summation rounding only
    if (var < r.optimal_variance - 1e-12 * std::max(1.0, r.optimal_variance)) ++r.violations;
    if (var > r.optimal_variance) ++r.strict;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Surrogate baseline term constancy

struct TrpoTermReport {
  std::vector<double> terms;
  double max_abs_deviation = 0.0;
  double max_relative_deviation = 0.0;
};

/// E_{(w,z)~rho_old, a~pi_old}[(pi_theta(a|w) / pi_old(a|w)) b(w, z)] for
/// each candidate parameter vector.
inline TrpoTermReport trpo_term_constancy_check(const EnumerableMDP& mdp, const TabularPolicy& old_policy,
                                                const KeyedBaseline& b,
                                                const std::vector<Eigen::VectorXd>& thetas) {
  VisitTable table = visit_table(mdp, old_policy);
  TrpoTermReport r;
  for (const auto& theta : thetas) {
    if (theta.size() != old_policy.dim()) throw Error("candidate theta has wrong dimension");
    TabularPolicy cand = old_policy;
    cand.theta = theta;
    double term = 0.0;
    for (const auto& [k, e] : table) {
      Eigen::VectorXd pi_new = cand.probs(k.obs);
      const double bk = b(k);
      for (int a = 0; a < old_policy.num_actions; ++a) {
        const double pold = e.pi[static_cast<std::size_t>(a)];
        // Eigen's exp flushes to subnormals rather than zero
        if (pold < std::numeric_limits<double>::min()) throw Error("support mismatch");
        term += e.mass * pold * (pi_new[a] / pold) * bk;
      }
    }
    r.terms.push_back(term);
  }
  if (!r.terms.empty()) {
    const double ref = r.terms.front();
    for (double t : r.terms) r.max_abs_deviation = std::max(r.max_abs_deviation, std::abs(t - ref));
    double mag = 0.0;
    for (double t : r.terms) mag = std::max(mag, std::abs(t));
    r.max_relative_deviation = mag > 0.0 ? r.max_abs_deviation / mag : r.max_abs_deviation;
  }
  return r;
}

/// Total visitation mass sum_t sum_{w,z} rho_old.
inline double total_visitation(const VisitTable& table) {
  double s = 0.0;
  for (const auto& [k, e] : table) s += e.mass;
  return s;
}

// ---------------------------------------------------------------------------
// Factorization P(z-tail, a | w) = P(z-tail | w) P(a | w)

struct FactorizationReport {
  double max_tv = 0.0;
  double chi_square = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
  std::size_t bins_used = 0;
  std::size_t bins_excluded = 0;  // fewer than min_samples
};

namespace detail {
// (z-tail, action) -> weight, per observation.
using JointTable = std::map<int, std::map<std::vector<int>, std::vector<double>>>;

inline double tv_from_joint(const std::map<std::vector<int>, std::vector<double>>& rows, double& total) {
  total = 0.0;
  std::size_t A = 0;
  for (const auto& [z, r] : rows) {
    A = r.size();
    for (double x : r) total += x;
  }
  std::vector<double> pa(A, 0.0);
  for (const auto& [z, r] : rows)
    for (std::size_t a = 0; a < A; ++a) pa[a] += r[a] / total;
  double tv = 0.0;
  for (const auto& [z, r] : rows) {
    double pz = 0.0;
    for (double x : r) pz += x / total;
    for (std::size_t a = 0; a < A; ++a) tv += std::abs(r[a] / total - pz * pa[a]);
  }
  return 0.5 * tv;
}
}  // namespace detail

/// Exact joint of (z_{t:}, a_t) given w_t from the path enumeration.
inline FactorizationReport lemma1_factorization_exact(const EnumerableMDP& mdp, const TabularPolicy& policy, int t) {
  if (t < 0 || t >= mdp.horizon) throw Error("step index out of range");
  auto paths = enumerate_paths(mdp, policy);
  detail::JointTable joint;
  for (const auto& p : paths) {
    VisitKey k = visit_key(p, static_cast<std::size_t>(t));
    auto& row = joint[k.obs][k.tail];
    row.resize(static_cast<std::size_t>(mdp.num_actions), 0.0);
    row[static_cast<std::size_t>(p.steps[static_cast<std::size_t>(t)].action)] += p.prob;
  }
  FactorizationReport r;
  for (const auto& [obs, rows] : joint) {
    double total = 0.0;
    r.max_tv = std::max(r.max_tv, detail::tv_from_joint(rows, total));
    ++r.bins_used;
  }
  return r;
}

/// Draws one path.
inline Path sample_path(const EnumerableMDP& m, const TabularPolicy& policy, Rng& rng) {
  auto draw = [&](const Dist& d) {
    return sample_categorical(Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size())), rng);
  };
  Path p;
  p.prob = 1.0;
  int s = draw(m.initial_state), z = draw(m.initial_input);
  for (int t = 0; t < m.horizon; ++t) {
    const int obs = m.observation_index(s, z);
    Eigen::VectorXd pi = policy.probs(obs);
    const int a = sample_categorical(pi, rng);
    p.steps.push_back({s, z, obs, a, m.reward[s][a][z], 0.0});
    const int s2 = draw(m.transition[s][a][z]);
    z = draw(m.next_input(z, a));
    s = s2;
  }
  double g = 0.0;
  for (std::size_t u = p.steps.size(); u-- > 0;) p.steps[u].ret = g = p.steps[u].reward + m.gamma * g;
  return p;
}

/// Pooled chi-square test of independence of (z-tail, a) within each
/// observation bin; bins with fewer than `min_samples` draws are excluded.
inline FactorizationReport lemma1_factorization_sampled(const EnumerableMDP& mdp, const TabularPolicy& policy,
                                                        int t, std::size_t num_samples, std::uint64_t seed,
                                                        std::size_t min_samples = 100) {
  if (t < 0 || t >= mdp.horizon) throw Error("step index out of range");
  Rng rng(seed);
  detail::JointTable joint;
  for (std::size_t i = 0; i < num_samples; ++i) {
    Path p = sample_path(mdp, policy, rng);
    VisitKey k = visit_key(p, static_cast<std::size_t>(t));
    auto& row = joint[k.obs][k.tail];
    row.resize(static_cast<std::size_t>(mdp.num_actions), 0.0);
    row[static_cast<std::size_t>(p.steps[static_cast<std::size_t>(t)].action)] += 1.0;
  }
  FactorizationReport r;
  for (const auto& [obs, rows] : joint) {
    double total = 0.0;
    const double tv = detail::tv_from_joint(rows, total);
    if (total < static_cast<double>(min_samples)) {
      ++r.bins_excluded;
      continue;
    }
    ++r.bins_used;
    r.max_tv = std::max(r.max_tv, tv);
    const std::size_t A = rows.begin()->second.size();
    std::vector<double> col(A, 0.0);
    for (const auto& [z, row] : rows)
      for (std::size_t a = 0; a < A; ++a) col[a] += row[a];
    std::size_t nz_cols = 0;
    for (double c : col) nz_cols += c > 0.0;
    for (const auto& [z, row] : rows) {
      double rs = 0.0;
      for (double x : row) rs += x;
      for (std::size_t a = 0; a < A; ++a) {
        const double e = rs * col[a] / total;
        if (e > 0.0) r.chi_square += (row[a] - e) * (row[a] - e) / e;
      }
    }
    r.dof += static_cast<double>((rows.size() - 1) * (nz_cols > 0 ? nz_cols - 1 : 0));
  }
  if (r.dof > 0.0)
    r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.dof), r.chi_square));
  return r;
}

// ---------------------------------------------------------------------------
// Markov property of grid-walker observations

struct MarkovTestReport {
  double chi_square = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
  std::size_t samples = 0;
  std::size_t contexts_used = 0;
};

/// Tests whether the next observation (and, in case 1, the next input) is
/// independent of (w_{t-1}, a_{t-1}) given (w_t, a_t). Case 1 observes
/// (s_t, z_t) and should pass; case 2 observes s_t alone, and with sticky
/// inputs the past carries information about z_t, so it should fail.
inline MarkovTestReport gridworld_markov_test(bool observe_input, std::size_t num_samples, std::uint64_t seed,
                                              double persistence = 0.8, int horizon = 6,
                                              std::size_t min_context = 100) {
  envs::GridWorldConfig gc;
  gc.horizon = horizon;
  gc.observe_input = observe_input;
  envs::GridWorldEnv env(gc);
  Rng prng(derive_seed(seed, {1}));
  nn::MlpParams policy = nn::MlpParams::glorot(nn::MlpConfig{{env.observation_dim(), 2}}, prng);

  using Vec = std::vector<int>;
  // context (w_t, a_t) -> history (w_{t-1}, a_{t-1}) -> next (w_{t+1}) -> count
  std::map<Vec, std::map<Vec, std::map<Vec, double>>> table;
  auto obs_key = [](const Observation& o) {
    Vec v;
    for (double x : o.vector) v.push_back(static_cast<int>(std::lround(x * 10.0)));
    return v;
  };
  MarkovTestReport r;
  std::size_t ep = 0;
  while (r.samples < num_samples) {
    InputSequence z = envs::gen_gridworld_inputs(horizon + 1, derive_seed(seed, {2, ep}), ep, persistence);
    Trajectory tr = rollout(policy, env, z, horizon, derive_seed(seed, {3, ep}));
    ++ep;
    for (std::size_t t = 1; t + 1 < tr.size() && r.samples < num_samples; ++t) {
      Vec ctx = obs_key(tr.transitions[t].observation);
      ctx.push_back(tr.transitions[t].action);
      Vec hist = obs_key(tr.transitions[t - 1].observation);
      hist.push_back(tr.transitions[t - 1].action);
      table[ctx][hist][obs_key(tr.transitions[t + 1].observation)] += 1.0;
      ++r.samples;
    }
  }
  for (const auto& [ctx, rows] : table) {
    double total = 0.0;
    std::map<Vec, double> col;
    for (const auto& [h, row] : rows)
      for (const auto& [nx, c] : row) {
        col[nx] += c;
        total += c;
      }
    if (total < static_cast<double>(min_context) || rows.size() < 2 || col.size() < 2) continue;
    ++r.contexts_used;
    for (const auto& [h, row] : rows) {
      double rs = 0.0;
      for (const auto& [nx, c] : row) rs += c;
      for (const auto& [nx, cc] : col) {
        const double e = rs * cc / total;
        auto it = row.find(nx);
        const double o = it == row.end() ? 0.0 : it->second;
        r.chi_square += (o - e) * (o - e) / e;
      }
    }
    r.dof += static_cast<double>((rows.size() - 1) * (col.size() - 1));
  }
  if (r.dof > 0.0)
    r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.dof), r.chi_square));
  return r;
}

// ---------------------------------------------------------------------------
// Gradcheck

namespace detail {
inline double min_hidden_preactivation(const nn::MlpParams& p, const Eigen::MatrixXd& x) {
  double m = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd a = x;
  for (int l = 0; l + 1 < p.config().num_layers(); ++l) {
    Eigen::MatrixXd z = p.weight(l) * a;
    z.colwise() += p.bias(l);
    m = std::min(m, z.cwiseAbs().minCoeff());
    a = z.cwiseMax(0.0);
  }
  return m;
}
}  // namespace detail

struct GradcheckReport {
  std::size_t cases = 0;
  double max_relative_error = 0.0;
};

/// Central differences (step h) of <mlp(x), g> against mlp_backward. The
/// error of one case is |analytic - numeric| / max(|analytic|, |numeric|)
/// in the Euclidean norm over all parameters.
inline GradcheckReport mlp_gradcheck(const nn::MlpConfig& cfg, std::size_t cases, std::uint64_t seed,
                                     double h = 1e-5, double kink_margin = 1e-3) {
  GradcheckReport r;
  for (std::size_t c = 0; c < cases; ++c) {
    // Central differences are meaningless across a ReLU kink, so a case is
    // redrawn until every hidden pre-activation is clear of zero.
    nn::MlpParams p;
    Eigen::MatrixXd x(cfg.input_dim(), 1), g(cfg.output_dim(), 1);
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt == 1000) throw Error("gradcheck could not draw a case away from ReLU kinks");
      Rng rng(derive_seed(seed, {c, attempt}));
      p = nn::MlpParams::glorot(cfg, rng);
      p.update([&](Eigen::VectorXd& f) {
        for (Eigen::Index i = 0; i < f.size(); ++i) f[i] += 0.1 * standard_normal(rng);  // nonzero biases
      });
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = standard_normal(rng);
      for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = standard_normal(rng);
      if (detail::min_hidden_preactivation(p, x) >= kink_margin) break;
    }
    nn::MlpCache cache = nn::mlp_forward(p, x);
    Eigen::VectorXd analytic = nn::mlp_backward(p, cache, g);
    Eigen::VectorXd numeric(analytic.size());
    Eigen::VectorXd flat = p.flat();
    nn::MlpParams q = p;
    for (Eigen::Index i = 0; i < flat.size(); ++i) {
      const double orig = flat[i];
      flat[i] = orig + h;
      q.assign(flat);
      const double fp = (nn::mlp_forward(q, x).output().array() * g.array()).sum();
      flat[i] = orig - h;
      q.assign(flat);
      const double fm = (nn::mlp_forward(q, x).output().array() * g.array()).sum();
      flat[i] = orig;
      numeric[i] = (fp - fm) / (2.0 * h);
    }
    const double denom = std::max({analytic.norm(), numeric.norm(), 1e-300});
    r.max_relative_error = std::max(r.max_relative_error, (analytic - numeric).norm() / denom);
    ++r.cases;
  }
  return r;
}

/// max over random logits of |sum_a pi(a) grad log pi(a)|.
inline double score_identity_residual(int num_actions, std::size_t cases, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t c = 0; c < cases; ++c) {
    Eigen::VectorXd logits(num_actions);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits[i] = 5.0 * standard_normal(rng);
    Eigen::VectorXd p = nn::softmax(logits);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(num_actions);
    for (int a = 0; a < num_actions; ++a) s += p[a] * nn::softmax_logprob_grad(logits, a).grad;
    worst = std::max(worst, s.cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace idb::analysis
