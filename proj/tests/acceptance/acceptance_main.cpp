// Acceptance gate: eight end-to-end criteria, one pass/fail line each.
// Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gpp/gpp.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace gpp;

namespace {

std::string corpus_path(const std::string& rel) {
  return std::string(GPP_CORPUS_DIR) + "/" + rel;
}

Program load(const std::string& rel) {
  std::ifstream in(corpus_path(rel));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_program(ss.str(), rel);
}

GuidanceTrace tr(std::initializer_list<Message> ms) {
  GuidanceTrace t;
  t.messages = ms;
  return t;
}

struct Gate {
  int failures = 0;

  void run(int index, const std::string& label, const std::function<void()>& body) {
    auto t0 = std::chrono::steady_clock::now();
    std::string error;
    try {
      body();
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    if (error.empty()) {
      std::printf("[PASS] %d. %s (%lld ms)\n", index, label.c_str(),
                  static_cast<long long>(ms));
    } else {
      ++failures;
      std::printf("[FAIL] %d. %s (%lld ms)\n       %s\n", index, label.c_str(),
                  static_cast<long long>(ms), error.c_str());
    }
    std::fflush(stdout);
  }
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

void require_close(double got, double want, double tol, const std::string& what) {
  if (!(std::fabs(got - want) <= tol)) {
    std::ostringstream ss;
    ss.precision(17);
    ss << what << ": got " << got << ", want " << want << " +/- " << tol;
    throw Error(ss.str());
  }
}

GuidePtr instantiate_op(const InferredTypes& inf, const std::pair<std::string, std::string>& op) {
  const TypeDef* def = find_typedef(inf.typedefs, op.second);
  return subst_guide(def->body, def->param, guides::end());
}

// --- criterion 1 -------------------------------------------------------------

void criterion_inferred_types() {
  auto t0 = std::chrono::steady_clock::now();

  Program toy = load("toy_pair.gpp");
  InferredTypes toy_inf = infer_program_types(toy);
  GuidePtr latent = instantiate_op(toy_inf, *toy_inf.signatures.at("Model").consume_op);
  GuidePtr obs = instantiate_op(toy_inf, *toy_inf.signatures.at("Model").provide_op);
  require(guide_type_equal(latent, parse_guide_type("preal /\\ (1 & (ureal /\\ 1))")),
          "latent protocol is not preal /\\ (1 & (ureal /\\ 1)): got " +
              format_guide_type(latent));
  require(guide_type_equal(obs, parse_guide_type("real /\\ 1")),
          "observation protocol is not real /\\ 1: got " + format_guide_type(obs));

  Program pcfg = load("pcfg.gpp");
  InferredTypes pcfg_inf = infer_program_types(pcfg);
  const TypeDef* gen_def =
      find_typedef(pcfg_inf.typedefs, pcfg_inf.signatures.at("PcfgGen").consume_op->second);
  TypeDefTable pcfg_expected;
  pcfg_expected.push_back(
      {"R", "X", parse_guide_type("ureal /\\ ((real /\\ X) & R[R[X]])"), {}});
  std::string why;
  require(guide_type_equal_upto_renaming(gen_def->body, pcfg_inf.typedefs,
                                         pcfg_expected[0].body, pcfg_expected, &why),
          "recursive operator body mismatch: " + why + " (got " +
              format_guide_type(gen_def->body) + ")");

  Program ptrace = load("ptrace.gpp");
  InferredTypes pt_inf = infer_program_types(ptrace);
  const TypeDef* helper_def =
      find_typedef(pt_inf.typedefs, pt_inf.signatures.at("PtraceHelper").consume_op->second);
  TypeDefTable pt_expected;
  pt_expected.push_back({"H", "X", parse_guide_type("ureal /\\ (X & H[X])"), {}});
  require(guide_type_equal_upto_renaming(helper_def->body, pt_inf.typedefs,
                                         pt_expected[0].body, pt_expected, &why),
          "helper operator body mismatch: " + why + " (got " +
              format_guide_type(helper_def->body) + ")");

  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - t0)
                .count();
  require(ms < 1000, "inference took " + std::to_string(ms) + " ms, budget 1000 ms");
}

// --- criterion 2 -------------------------------------------------------------

void criterion_unsound_guides() {
  Program toy = load("toy_pair.gpp");
  CompatReport bad1 = check_model_guide(toy, "Model", "Guide1Bad");
  require(!bad1.accept, "the natural-number proposal must be rejected");
  require(bad1.detail.find("nat") != std::string::npos &&
              bad1.detail.find("preal") != std::string::npos,
          "rejection must name the mismatched carriers, got: " + bad1.detail);
  CompatReport bad2 = check_model_guide(toy, "Model", "Guide2Bad");
  require(!bad2.accept, "the whole-line proposal must be rejected");
  require(bad2.detail.find("real") != std::string::npos &&
              bad2.detail.find("preal") != std::string::npos,
          "rejection must name the mismatched carriers, got: " + bad2.detail);
  CompatReport ok = check_model_guide(toy, "Model", "Guide1");
  require(ok.accept, "the sound guide must be accepted");
}

// --- criterion 3 -------------------------------------------------------------

void criterion_scoring() {
  Program p = load("ex3.gpp");
  EvalResult r1 = eval_proc(p, *p.find_proc("M1"), Value::triv(),
                            tr({Message::psample(Value::real(1.0))}),
                            tr({Message::psample(Value::real(2.0))}));
  require_close(r1.weight.log_value(), -2.8378770664093453, 1e-9, "two-normal score");
  EvalResult r2 = eval_proc(p, *p.find_proc("M2"), Value::triv(), GuidanceTrace{},
                            tr({Message::psample(Value::real(1.0))}));
  require_close(r2.weight.log_value(), -2.9189385332046727, 1e-9, "shifted-normal score");
}

// --- criterion 4 -------------------------------------------------------------

struct PairSpec {
  const char* file;
  const char* model;
  const char* guide;
  std::size_t runs;
  std::size_t budget;
  bool needs_mu;
};

void criterion_theorem_properties() {
  const PairSpec pairs[] = {
      {"toy_pair.gpp", "Model", "Guide1", 1500, 0, false},
      {"toy_pair.gpp", "Model", "GuidePrior", 1000, 0, false},
      {"outlier.gpp", "OutlierModel", "OutlierGuide", 1500, 0, false},
      {"toy_mh.gpp", "ToyMhModel", "ToyMhGuide", 1500, 0, false},
      {"nn_conjugate.gpp", "NnModel", "NnGuide", 1000, 0, true},
      {"branching.gpp", "BranchModel", "BranchGuide", 1500, 0, false},
      {"cat_demo.gpp", "CatModel", "CatGuide", 1000, 0, false},
      {"marsaglia.gpp", "Marsaglia", "MarsagliaGuide", 800, 40000, false},
      {"ptrace.gpp", "Ptrace", "PtraceGuide", 800, 40000, false},
      {"pcfg.gpp", "Pcfg", "PcfgGuide", 400, 20000, false},
  };

  std::size_t total_runs = 0;
  std::size_t violations = 0;
  std::string first_violation;
  auto note = [&](bool ok, const std::string& what) {
    if (!ok) {
      ++violations;
      if (first_violation.empty()) first_violation = what;
    }
  };

  for (const PairSpec& pair : pairs) {
    Program p = parse_program(
        [&] {
          std::ifstream in(corpus_path(pair.file));
          std::ostringstream ss;
          ss << in.rdbuf();
          return ss.str();
        }(),
        pair.file);
    TypingContext ambient;
    JointOptions opts;
    opts.max_messages = pair.budget;
    if (pair.needs_mu) {
      ambient = ambient.bind("mu", types::real());
      Env env;
      opts.guide_extra = env.bind("mu", Value::real(0.2));
    }
    InferredTypes inf = infer_program_types(p, ambient);
    const ProcDecl* model = p.find_proc(pair.model);
    const ProcDecl* guide = p.find_proc(pair.guide);
    const ProcSignature& msig = inf.signatures.at(pair.model);
    const ProcSignature& gsig = inf.signatures.at(pair.guide);
    GuidePtr latent_type = instantiate_op(inf, *msig.consume_op);
    GuidePtr obs_type =
        msig.provide_op ? instantiate_op(inf, *msig.provide_op) : guides::end();

    Rng mut(0xD1CE);
    std::size_t done = 0;
    for (std::uint64_t seed = 0; done < pair.runs && seed < pair.runs * 4; ++seed) {
      Rng rng(Rng::derive(0xACCE97, seed * 977 + std::hash<std::string>{}(pair.file)));
      ExecutionRecord rec;
      try {
        rec = joint_simulate(p, pair.guide, pair.model, Value::triv(), Value::triv(), rng, opts);
      } catch (const JointError&) {
        if (pair.budget == 0) throw;
        continue;  // budget guard on the recursive models
      }
      ++done;
      ++total_runs;

      // trace/value typing of every execution record
      note(check_trace(rec.latent, latent_type, inf.typedefs), "latent trace ill-typed");
      note(check_trace(rec.obs, obs_type, inf.typedefs), "observation trace ill-typed");
      note(check_value(rec.model_result, msig.ret_type, inf.typedefs), "model value ill-typed");
      note(check_value(rec.guide_result, gsig.ret_type, inf.typedefs), "guide value ill-typed");

      // evaluation/reduction equivalence on the record and on corruptions
      auto agree = [&](const GuidanceTrace& sl, const GuidanceTrace& so) {
        bool eval_ok = false, positive = false;
        Value ev;
        try {
          EvalResult r = eval_proc(p, *model, Value::triv(), sl, so);
          eval_ok = true;
          positive = !r.weight.is_impossible();
          ev = r.value;
        } catch (const TraceMismatchError&) {
        }
        ReduceResult red = reduce_proc(p, *model, Value::triv(), sl, so);
        note((eval_ok && positive) == red.ok(), "evaluation/reduction divergence");
        if (red.ok() && eval_ok && positive)
          note(value_equal(ev, *red.value), "evaluation/reduction value mismatch");
      };
      agree(rec.latent, rec.obs);
      agree(gen::mutate_trace(mut, rec.latent), rec.obs);
      agree(rec.latent, gen::mutate_trace(mut, rec.obs));

      // positivity on the guide side: its provided protocol is oplus-free
      try {
        EvalResult r =
            eval_proc(p, *guide, Value::triv(), GuidanceTrace{}, rec.latent, opts.guide_extra);
        note(!r.weight.is_impossible(), "guide scored a generated trace at zero");
      } catch (const TraceMismatchError&) {
        note(false, "guide failed to replay a generated trace");
      }
    }
    require(done == pair.runs,
            std::string(pair.file) + ": only " + std::to_string(done) + " runs completed");
  }

  // positivity with type-generated traces on choice-restricted models
  const PairSpec positives[] = {
      {"outlier.gpp", "OutlierModel", "OutlierGuide", 700, 0, false},
      {"toy_mh.gpp", "ToyMhModel", "ToyMhGuide", 700, 0, false},
      {"nn_conjugate.gpp", "NnModel", "NnGuide", 700, 0, true},
      {"cat_demo.gpp", "CatModel", "CatGuide", 700, 0, false},
  };
  for (const PairSpec& pair : positives) {
    std::ifstream in(corpus_path(pair.file));
    std::ostringstream ss;
    ss << in.rdbuf();
    Program p = parse_program(ss.str(), pair.file);
    TypingContext ambient;
    if (pair.needs_mu) ambient = ambient.bind("mu", types::real());
    InferredTypes inf = infer_program_types(p, ambient);
    const ProcDecl* model = p.find_proc(pair.model);
    const ProcSignature& msig = inf.signatures.at(pair.model);
    GuidePtr latent_type = instantiate_op(inf, *msig.consume_op);
    GuidePtr obs_type =
        msig.provide_op ? instantiate_op(inf, *msig.provide_op) : guides::end();
    require(is_amp_free(latent_type, inf.typedefs), "latent protocol must be &-free here");
    require(is_oplus_free(obs_type, inf.typedefs), "obs protocol must be (+)-free here");
    Rng rng(0xF00D);
    for (std::size_t i = 0; i < pair.runs; ++i) {
      GuidanceTrace sl = gen::random_trace_for(latent_type, inf.typedefs, rng, 8);
      GuidanceTrace so = gen::random_trace_for(obs_type, inf.typedefs, rng, 8);
      ++total_runs;
      try {
        EvalResult r = eval_proc(p, *model, Value::triv(), sl, so);
        note(!r.weight.is_impossible(), "restricted model scored a well-typed trace at zero");
      } catch (const TraceMismatchError& e) {
        note(false, std::string("restricted model failed to evaluate: ") + e.what());
      }
    }
  }

  require(total_runs >= 10000,
          "only " + std::to_string(total_runs) + " randomized executions, need >= 10000");
  require(violations == 0, std::to_string(violations) +
                               " violation(s); first: " + first_violation);
}

// --- criterion 5 -------------------------------------------------------------

void criterion_importance_sampling() {
  Program p = load("toy_pair.gpp");
  double z = 0.8;
  GuidanceTrace obs = tr({Message::psample(Value::real(z))});
  oracles::ToyPosterior truth = oracles::toy_posterior(z);

  ParticleSet ps = importance_sample(p, "Guide1", "Model", obs, 100000, 20240817);
  double p_lo = posterior_expectation(
      ps, [](const GuidanceTrace& t) { return t.messages[1].value.as_bool() ? 1.0 : 0.0; });
  double mean_x = posterior_expectation(
      ps, [](const GuidanceTrace& t) { return t.messages[0].value.as_real(); });

  require_close(p_lo, truth.p_branch1, 0.01, "P(x < 2 | z = 0.8)");
  require_close(mean_x, truth.mean_x, 0.05, "E[x | z = 0.8]");
}

// --- criterion 6 -------------------------------------------------------------

void criterion_mh_stationarity() {
  Program p = load("toy_mh.gpp");
  GuidanceTrace obs = tr({Message::psample(Value::boolean(true))});
  GuidanceTrace init = tr({Message::psample(Value::boolean(true))});
  const std::size_t steps = 100000, burnin = 1000;
  McmcResult run = mh_chain(p, "ToyMhProp", "ToyMhModel", obs, init, steps, burnin, 7331);
  std::size_t trues = 0, counted = 0;
  for (std::size_t i = burnin + 1; i < run.states.size(); ++i) {
    trues += run.states[i].trace.messages[0].value.as_bool();
    ++counted;
  }
  double freq = static_cast<double>(trues) / static_cast<double>(counted);
  require_close(freq, oracles::toy_mh_posterior_true(), 0.01, "chain marginal of true");
  require(run.acceptance_rate > 0.0 && run.acceptance_rate <= 1.0, "acceptance rate range");
}

// --- criterion 7 -------------------------------------------------------------

void criterion_vi() {
  Program p = load("nn_conjugate.gpp");
  double z = 0.8;
  GuidanceTrace obs = tr({Message::psample(Value::real(z))});
  oracles::ConjugateFacts facts = oracles::conjugate_facts(z);

  ViParams theta0;
  theta0.params.push_back({"mu", ParamTransform::Identity, -1.0});
  ViResult res = vi_optimize(p, "NnGuide", theta0, "NnModel", obs, 500, 256, 0.1, 90210);
  double mu = res.params.params[0].value;
  require_close(mu, facts.posterior_mean, 0.05, "recovered posterior mean");

  // final ELBO within three standard errors below the analytic evidence
  const std::size_t n = 2000;
  JointOptions opts;
  Env env;
  opts.guide_extra = env.bind("mu", Value::real(mu));
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(Rng::derive(555, i));
    ExecutionRecord rec =
        joint_execute(p, "NnGuide", "NnModel", Value::triv(), Value::triv(), obs, rng, opts);
    double term = rec.log_model.log_value() - rec.log_guide.log_value();
    sum += term;
    sum_sq += term * term;
  }
  double elbo = sum / n;
  double var = std::max(0.0, sum_sq / n - elbo * elbo);
  double se = std::sqrt(var / n);
  require(elbo <= facts.log_evidence + 3.0 * se,
          "ELBO exceeds the log evidence beyond noise");
  require(elbo >= facts.log_evidence - 3.0 * se - 1e-6,
          "ELBO sits more than three standard errors below the log evidence");
}

// --- criterion 8 -------------------------------------------------------------

void criterion_inference_speed() {
  const char* files[] = {"toy_pair.gpp", "pcfg.gpp",      "ptrace.gpp",
                         "outlier.gpp",  "toy_mh.gpp",    "nn_conjugate.gpp",
                         "branching.gpp", "marsaglia.gpp", "cat_demo.gpp",
                         "ex3.gpp"};
  for (const char* file : files) {
    std::ifstream in(corpus_path(file));
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    TypingContext ambient;
    if (std::string(file) == "nn_conjugate.gpp") ambient = ambient.bind("mu", types::real());
    auto t0 = std::chrono::steady_clock::now();
    Program p = parse_program(text, file);
    require(validate_program(p).empty(), std::string(file) + " has diagnostics");
    InferredTypes inf = infer_program_types(p, ambient);
    auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    require(!inf.signatures.empty(), std::string(file) + " inferred nothing");
    require(us < 100000, std::string(file) + " took " + std::to_string(us / 1000.0) +
                             " ms, budget 100 ms");
  }
}

}  // namespace

int main() {
  Gate gate;
  gate.run(1, "guide-type inference reproduces the reference protocols",
           criterion_inferred_types);
  gate.run(2, "unsound guides are rejected naming the mismatched carrier",
           criterion_unsound_guides);
  gate.run(3, "command scoring matches the closed-form log densities (1e-9)",
           criterion_scoring);
  gate.run(4, "trace typing, normalization and eval/reduce equivalence over 10^4 runs",
           criterion_theorem_properties);
  gate.run(5, "importance sampling matches the quadrature oracle (0.01 / 0.05)",
           criterion_importance_sampling);
  gate.run(6, "MH chain marginals match the enumerated posterior (0.01)",
           criterion_mh_stationarity);
  gate.run(7, "VI recovers the conjugate posterior mean (0.05) with a tight ELBO",
           criterion_vi);
  gate.run(8, "every corpus program checks and infers within 100 ms",
           criterion_inference_speed);
  if (gate.failures > 0) {
    std::printf("%d criterion(s) failed\n", gate.failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
