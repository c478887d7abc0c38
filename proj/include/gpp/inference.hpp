#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gpp/interpreter.hpp"
#include "gpp/ir.hpp"
#include "gpp/rng.hpp"
#include "gpp/source.hpp"
#include "gpp/typecheck.hpp"
#include "gpp/weight.hpp"

namespace gpp {

// ---------------------------------------------------------------------------
// Importance sampling
// ---------------------------------------------------------------------------

struct Particle {
  GuidanceTrace latent;
  LogWeight log_importance;  // log w_m - log w_g
  LogWeight log_guide;
};

struct ParticleSet {
  std::vector<Particle> particles;
  std::uint64_t seed = 0;
};

// n independent joint executions, each weighted by model/guide density ratio.
// Particle i draws from the substream derived from (seed, i), so results do
// not depend on evaluation order.
inline ParticleSet importance_sample(const Program& p, const std::string& guide,
                                     const std::string& model, const GuidanceTrace& so,
                                     std::size_t n, std::uint64_t seed,
                                     const JointOptions& opts = {}) {
  if (n == 0) throw InferenceError("importance sampling needs at least one particle");
  ParticleSet out;
  out.seed = seed;
  out.particles.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(Rng::derive(seed, i));
    ExecutionRecord rec =
        joint_execute(p, guide, model, Value::triv(), Value::triv(), so, rng, opts);
    Particle part;
    part.latent = std::move(rec.latent);
    part.log_guide = rec.log_guide;
    part.log_importance = rec.log_model.is_impossible() || rec.log_guide.is_impossible()
                              ? LogWeight::impossible()
                              : LogWeight(rec.log_model.log_value() - rec.log_guide.log_value());
    out.particles.push_back(std::move(part));
  }
  return out;
}

// Self-normalized estimator with max-shifted exponentiation.
inline double posterior_expectation(const ParticleSet& ps,
                                    const std::function<double(const GuidanceTrace&)>& f) {
  double max_lw = -std::numeric_limits<double>::infinity();
  for (const auto& part : ps.particles)
    max_lw = std::max(max_lw, part.log_importance.log_value());
  if (!std::isfinite(max_lw))
    throw InferenceError("all particles carry impossible importance weights");
  double num = 0.0, den = 0.0;
  for (const auto& part : ps.particles) {
    if (part.log_importance.is_impossible()) continue;
    double w = std::exp(part.log_importance.log_value() - max_lw);
    num += w * f(part.latent);
    den += w;
  }
  return num / den;
}

inline double effective_sample_size(const ParticleSet& ps) {
  double max_lw = -std::numeric_limits<double>::infinity();
  for (const auto& part : ps.particles)
    max_lw = std::max(max_lw, part.log_importance.log_value());
  if (!std::isfinite(max_lw)) return 0.0;
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& part : ps.particles) {
    if (part.log_importance.is_impossible()) continue;
    double w = std::exp(part.log_importance.log_value() - max_lw);
    sum += w;
    sum_sq += w * w;
  }
  return sum * sum / sum_sq;
}

// ---------------------------------------------------------------------------
// Metropolis-Hastings with trace-valued proposals
// ---------------------------------------------------------------------------

struct ChainState {
  GuidanceTrace trace;
  LogWeight log_model;
  std::size_t step_index = 0;
  std::size_t acceptance_count = 0;
};

struct MhStepInfo {
  bool accepted = false;
  bool backward_impossible = false;
  double log_alpha = 0.0;
};

// One transition: run the proposal forward against the model, score the
// reverse move by replaying the proposal on the swapped traces, and accept
// with probability min(1, (w'_m * w_bwd) / (w_m * w_fwd)).
inline std::pair<ChainState, MhStepInfo> mh_step(const Program& p, const std::string& proposal,
                                                 const std::string& model,
                                                 const GuidanceTrace& so,
                                                 const ChainState& current, Rng& rng,
                                                 const JointOptions& opts = {}) {
  const ProcDecl* g = p.find_proc(proposal);
  if (!g) throw InferenceError("unknown proposal procedure '" + proposal + "'");

  Value old_trace = Value::trace(std::make_shared<GuidanceTrace>(current.trace));
  ExecutionRecord fwd =
      joint_execute(p, proposal, model, old_trace, Value::triv(), so, rng, opts);

  MhStepInfo info;
  ChainState next = current;
  next.step_index = current.step_index + 1;

  double log_alpha;
  LogWeight log_bwd;
  try {
    Value new_trace = Value::trace(std::make_shared<GuidanceTrace>(fwd.latent));
    EvalResult bwd = eval_proc(p, *g, new_trace, GuidanceTrace{}, current.trace, opts.guide_extra);
    log_bwd = bwd.weight;
  } catch (const TraceMismatchError&) {
    log_bwd = LogWeight::impossible();
  }

  if (log_bwd.is_impossible() || fwd.log_model.is_impossible()) {
    info.backward_impossible = log_bwd.is_impossible();
    info.log_alpha = -std::numeric_limits<double>::infinity();
    return {next, info};
  }

  log_alpha = std::min(0.0, (fwd.log_model.log_value() + log_bwd.log_value()) -
                                (current.log_model.log_value() + fwd.log_guide.log_value()));
  info.log_alpha = log_alpha;
  if (std::log(rng.uniform_open01()) < log_alpha) {
    info.accepted = true;
    next.trace = fwd.latent;
    next.log_model = fwd.log_model;
    next.acceptance_count = current.acceptance_count + 1;
  }
  return {next, info};
}

struct McmcResult {
  std::vector<ChainState> states;  // states[0] is the initial state
  std::size_t burnin = 0;
  double acceptance_rate = 0.0;
  std::size_t backward_impossible_count = 0;
};

inline McmcResult mh_chain(const Program& p, const std::string& proposal,
                           const std::string& model, const GuidanceTrace& so,
                           const GuidanceTrace& init, std::size_t steps, std::size_t burnin,
                           std::uint64_t seed, const JointOptions& opts = {}) {
  ChainState state;
  state.trace = init;
  state.log_model = model_log_density(p, model, so, init);
  if (state.log_model.is_impossible())
    throw InferenceError("initial trace has zero model density");

  McmcResult out;
  out.burnin = burnin;
  out.states.reserve(steps + 1);
  out.states.push_back(state);
  Rng rng(Rng::derive(seed, 0x6d68));
  for (std::size_t i = 0; i < steps; ++i) {
    auto [next, info] = mh_step(p, proposal, model, so, state, rng, opts);
    if (info.backward_impossible) ++out.backward_impossible_count;
    state = std::move(next);
    out.states.push_back(state);
  }
  out.acceptance_rate = steps == 0 ? 0.0
                                   : static_cast<double>(state.acceptance_count) /
                                         static_cast<double>(steps);
  return out;
}

// ---------------------------------------------------------------------------
// Variational inference
// ---------------------------------------------------------------------------

enum class ParamTransform { Identity, Exp, Logit };

inline const char* transform_name(ParamTransform t) {
  switch (t) {
    case ParamTransform::Identity: return "identity";
    case ParamTransform::Exp: return "exp";
    case ParamTransform::Logit: return "logit";
  }
  return "?";
}

struct ViParam {
  std::string name;
  ParamTransform transform = ParamTransform::Identity;
  double value = 0.0;  // constrained value
};

struct ViParams {
  std::vector<ViParam> params;

  const ViParam* find(const std::string& name) const {
    for (const auto& q : params)
      if (q.name == name) return &q;
    return nullptr;
  }
};

struct ElboRecord {
  std::size_t iteration = 0;
  double elbo = 0.0;
  ViParams params;
};

namespace detail {

inline double to_unconstrained(const ViParam& q) {
  switch (q.transform) {
    case ParamTransform::Identity: return q.value;
    case ParamTransform::Exp: return std::log(q.value);
    case ParamTransform::Logit: return std::log(q.value / (1.0 - q.value));
  }
  return q.value;
}

// transformed values must stay inside the open target domains
inline double to_constrained(ParamTransform t, double u) {
  switch (t) {
    case ParamTransform::Identity:
      return u;
    case ParamTransform::Exp:
      return std::max(std::exp(u), std::numeric_limits<double>::min());
    case ParamTransform::Logit: {
      double c = 1.0 / (1.0 + std::exp(-u));
      if (c <= 0.0) return std::numeric_limits<double>::min();
      if (c >= 1.0) return std::nexttoward(1.0, 0.0);
      return c;
    }
  }
  return u;
}

inline Env param_env(const ViParams& params) {
  Env env;
  for (const auto& q : params.params) env = env.bind(q.name, Value::real(q.value));
  return env;
}

inline Env param_env(const std::vector<ViParam>& names, const std::vector<double>& unconstrained) {
  Env env;
  for (std::size_t i = 0; i < names.size(); ++i)
    env = env.bind(names[i].name, Value::real(to_constrained(names[i].transform, unconstrained[i])));
  return env;
}

inline Env param_env(const ViParams& p0, const std::vector<double>& unconstrained) {
  return param_env(p0.params, unconstrained);
}

}  // namespace detail

// Monte-Carlo ELBO: mean of log w_m - log w_g over joint executions with the
// guide instantiated at the given parameters.
inline double elbo_estimate(const Program& p, const std::string& guide, const ViParams& theta,
                            const std::string& model, const GuidanceTrace& so, std::size_t n,
                            std::uint64_t seed, const JointOptions& base_opts = {}) {
  if (n == 0) throw InferenceError("ELBO estimation needs at least one sample");
  JointOptions opts = base_opts;
  opts.guide_extra = detail::param_env(theta);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(Rng::derive(seed, i));
    ExecutionRecord rec =
        joint_execute(p, guide, model, Value::triv(), Value::triv(), so, rng, opts);
    if (rec.log_model.is_impossible() || rec.log_guide.is_impossible())
      return -std::numeric_limits<double>::infinity();
    total += rec.log_model.log_value() - rec.log_guide.log_value();
  }
  return total / static_cast<double>(n);
}

struct ViResult {
  ViParams params;
  std::vector<ElboRecord> trajectory;
};

// ELBO ascent by central finite differences in unconstrained space. Both
// evaluations of a difference share one seed (common random numbers); a fresh
// seed is drawn per iteration.
inline ViResult vi_optimize(const Program& p, const std::string& guide, const ViParams& theta0,
                            const std::string& model, const GuidanceTrace& so, std::size_t iters,
                            std::size_t n_per_iter, double step_size, std::uint64_t seed,
                            const JointOptions& base_opts = {}) {
  constexpr double kFdStep = 1e-4;
  std::vector<double> u;
  u.reserve(theta0.params.size());
  for (const auto& q : theta0.params) u.push_back(detail::to_unconstrained(q));

  auto constrained = [&](const std::vector<double>& uvec) {
    ViParams out = theta0;
    for (std::size_t i = 0; i < out.params.size(); ++i)
      out.params[i].value = detail::to_constrained(out.params[i].transform, uvec[i]);
    return out;
  };

  auto elbo_at = [&](const std::vector<double>& uvec, std::uint64_t s) {
    return elbo_estimate(p, guide, constrained(uvec), model, so, n_per_iter, s, base_opts);
  };

  ViResult out;
  out.trajectory.reserve(iters);
  for (std::size_t t = 0; t < iters; ++t) {
    std::uint64_t seed_t = Rng::derive(seed, t);
    std::vector<double> grad(u.size(), 0.0);
    for (std::size_t i = 0; i < u.size(); ++i) {
      std::vector<double> up = u, dn = u;
      up[i] += kFdStep;
      dn[i] -= kFdStep;
      double hi = elbo_at(up, seed_t);
      double lo = elbo_at(dn, seed_t);
      if (!std::isfinite(hi) || !std::isfinite(lo))
        throw InferenceError("non-finite ELBO while estimating the gradient");
      grad[i] = (hi - lo) / (2.0 * kFdStep);
    }
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += step_size * grad[i];
    ElboRecord rec;
    rec.iteration = t;
    rec.elbo = elbo_at(u, seed_t);
    rec.params = constrained(u);
    out.trajectory.push_back(std::move(rec));
  }
  out.params = constrained(u);
  return out;
}

}  // namespace gpp
