#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gpp/gpp.hpp"

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw gpp::Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

struct ParamSpec {
  gpp::ViParams params;
};

// --param name:transform:init, repeatable
void add_param_option(CLI::App* cmd, ParamSpec& spec) {
  cmd->add_option_function<std::vector<std::string>>(
      "--param",
      [&spec](const std::vector<std::string>& raw) {
        for (const auto& s : raw) {
          auto c1 = s.find(':');
          auto c2 = s.find(':', c1 == std::string::npos ? c1 : c1 + 1);
          if (c1 == std::string::npos || c2 == std::string::npos)
            throw CLI::ValidationError("--param expects name:transform:init");
          gpp::ViParam q;
          q.name = s.substr(0, c1);
          std::string tr = s.substr(c1 + 1, c2 - c1 - 1);
          if (tr == "identity") {
            q.transform = gpp::ParamTransform::Identity;
          } else if (tr == "exp") {
            q.transform = gpp::ParamTransform::Exp;
          } else if (tr == "logit") {
            q.transform = gpp::ParamTransform::Logit;
          } else {
            throw CLI::ValidationError("unknown transform '" + tr +
                                       "' (identity, exp or logit)");
          }
          q.value = std::strtod(s.substr(c2 + 1).c_str(), nullptr);
          spec.params.params.push_back(std::move(q));
        }
      },
      "Guide parameter as name:transform:init (repeatable)");
}

gpp::TypingContext ambient_context(const ParamSpec& spec) {
  gpp::TypingContext ctx;
  for (const auto& q : spec.params.params) {
    switch (q.transform) {
      case gpp::ParamTransform::Identity: ctx = ctx.bind(q.name, gpp::types::real()); break;
      case gpp::ParamTransform::Exp: ctx = ctx.bind(q.name, gpp::types::preal()); break;
      case gpp::ParamTransform::Logit: ctx = ctx.bind(q.name, gpp::types::ureal()); break;
    }
  }
  return ctx;
}

std::uint64_t seed_or_env(CLI::Option* seed_opt, std::uint64_t seed_flag) {
  if (seed_opt->count() > 0) return seed_flag;
  if (const char* env = std::getenv("GPP_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

int run_check(const std::string& path, const ParamSpec& spec) {
  gpp::Program p = gpp::parse_program(read_file(path), path);
  auto diags = gpp::validate_program(p);
  if (!diags.empty()) {
    for (const auto& d : diags) std::cerr << d.str() << "\n";
    return 1;
  }
  gpp::InferredTypes inf = gpp::infer_program_types(p, ambient_context(spec));
  auto protocol_of = [&inf](const std::string& op) {
    const gpp::TypeDef* def = gpp::find_typedef(inf.typedefs, op);
    return gpp::format_guide_type(gpp::subst_guide(def->body, def->param, gpp::guides::end()));
  };
  for (const auto& proc : p.procs) {
    const gpp::ProcSignature& sig = inf.signatures.at(proc.name);
    std::cout << "proc " << proc.name << " : " << gpp::format_base_type(sig.arg_type) << " ~> "
              << gpp::format_base_type(sig.ret_type);
    std::cout << " | consume ";
    std::cout << (sig.consume_op ? sig.consume_op->first + " : " + sig.consume_op->second : ".");
    std::cout << " ; provide ";
    std::cout << (sig.provide_op ? sig.provide_op->first + " : " + sig.provide_op->second : ".");
    std::cout << "\n";
    if (sig.consume_op)
      std::cout << "  " << sig.consume_op->first << " protocol: "
                << protocol_of(sig.consume_op->second) << "\n";
    if (sig.provide_op)
      std::cout << "  " << sig.provide_op->first << " protocol: "
                << protocol_of(sig.provide_op->second) << "\n";
  }
  for (const auto& d : inf.typedefs) {
    std::cout << "type " << d.op << "[" << d.param << "] = " << gpp::format_guide_type(d.body)
              << "\n";
  }
  return 0;
}

json compat_json(const gpp::CompatReport& rep) {
  json j;
  j["channel"] = rep.channel;
  j["latent_type"] = gpp::format_guide_type(rep.latent_type);
  j["obs_type"] = gpp::format_guide_type(rep.obs_type);
  j["oplus_free_latent"] = rep.oplus_free_a;
  j["amp_free_obs"] = rep.amp_free_b;
  j["types_agree"] = rep.types_agree;
  j["verdict"] = rep.verdict();
  j["detail"] = rep.detail;
  return j;
}

int run_compat(const std::string& path, const std::string& model, const std::string& guide,
               const ParamSpec& spec, const std::string& out_path) {
  gpp::Program p = gpp::parse_program(read_file(path), path);
  gpp::CompatReport rep = gpp::check_model_guide(p, model, guide, ambient_context(spec));
  std::cout << "channel:             " << rep.channel << "\n";
  std::cout << "latent type:         " << gpp::format_guide_type(rep.latent_type) << "\n";
  std::cout << "obs type:            " << gpp::format_guide_type(rep.obs_type) << "\n";
  std::cout << "oplus-free(latent):  " << (rep.oplus_free_a ? "yes" : "no") << "\n";
  std::cout << "amp-free(obs):       " << (rep.amp_free_b ? "yes" : "no") << "\n";
  std::cout << "verdict:             " << rep.verdict();
  if (!rep.accept) std::cout << " (" << rep.detail << ")";
  std::cout << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << compat_json(rep).dump(2) << "\n";
  } else {
    std::cout << compat_json(rep).dump() << "\n";
  }
  return rep.accept ? 0 : 1;
}

int run_score(const std::string& path, const std::string& model, const std::string& latent_path,
              const std::string& obs_path) {
  gpp::Program p = gpp::parse_program(read_file(path), path);
  if (!p.find_proc(model)) throw gpp::Error("unknown procedure '" + model + "'");
  gpp::GuidanceTrace sl = gpp::load_trace_file(latent_path);
  gpp::GuidanceTrace so = gpp::load_trace_file(obs_path);
  gpp::LogWeight w = gpp::model_log_density(p, model, so, sl);
  std::cout << (w.is_impossible() ? "-inf" : fmt_double(w.log_value())) << "\n";
  return 0;
}

struct RunArgs {
  std::string path, model, guide, obs_path, init_path, out_path, engine;
  std::size_t n = 1000, steps = 1000, burnin = 0, iters = 100;
  std::size_t max_messages = 0;
  double step_size = 0.1;
  std::uint64_t seed = 0;
  ParamSpec spec;
};

// results are computed in full before the output file is opened, so a
// failing engine never leaves a partial file behind
std::ofstream open_results(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw gpp::Error("cannot write '" + path + "'");
  return out;
}

int run_engine(const RunArgs& args) {
  gpp::Program p = gpp::parse_program(read_file(args.path), args.path);
  gpp::GuidanceTrace so;
  if (!args.obs_path.empty()) so = gpp::load_trace_file(args.obs_path);

  gpp::CompatReport rep =
      gpp::check_model_guide(p, args.model, args.guide, ambient_context(args.spec));
  if (!rep.accept)
    throw gpp::Error("model/guide pair rejected: " + rep.detail);

  gpp::JointOptions opts;
  opts.max_messages = args.max_messages;

  if (args.engine == "is") {
    gpp::ParticleSet ps =
        gpp::importance_sample(p, args.guide, args.model, so, args.n, args.seed, opts);
    std::ofstream out = open_results(args.out_path);
    double max_lw = -std::numeric_limits<double>::infinity();
    for (const auto& part : ps.particles)
      max_lw = std::max(max_lw, part.log_importance.log_value());
    for (const auto& part : ps.particles) {
      json j;
      j["trace"] = gpp::trace_to_json(part.latent);
      j["log_weight"] = part.log_importance.is_impossible()
                            ? json("-inf")
                            : json(part.log_importance.log_value());
      j["log_guide"] = part.log_guide.log_value();
      out << j.dump() << "\n";
    }
    std::cout << "engine: is\nparticles: " << ps.particles.size() << "\n";
    std::cout << "ess: " << fmt_double(gpp::effective_sample_size(ps)) << "\n";
    if (std::isfinite(max_lw)) {
      double mean_w = 0.0;
      for (const auto& part : ps.particles)
        if (!part.log_importance.is_impossible())
          mean_w += std::exp(part.log_importance.log_value() - max_lw);
      mean_w /= static_cast<double>(ps.particles.size());
      std::cout << "log_evidence_estimate: " << fmt_double(max_lw + std::log(mean_w)) << "\n";
    }
    return 0;
  }

  if (args.engine == "mh") {
    if (args.init_path.empty()) throw gpp::Error("mh needs --init with a starting latent trace");
    gpp::GuidanceTrace init = gpp::load_trace_file(args.init_path);
    gpp::McmcResult res = gpp::mh_chain(p, args.guide, args.model, so, init, args.steps,
                                        args.burnin, args.seed, opts);
    std::ofstream out = open_results(args.out_path);
    for (const auto& st : res.states) {
      json j;
      j["step"] = st.step_index;
      j["trace"] = gpp::trace_to_json(st.trace);
      j["log_model"] = st.log_model.log_value();
      out << j.dump() << "\n";
    }
    std::cout << "engine: mh\nsteps: " << args.steps << "\n";
    std::cout << "acceptance_rate: " << fmt_double(res.acceptance_rate) << "\n";
    if (res.backward_impossible_count > 0)
      std::cout << "backward_impossible: " << res.backward_impossible_count << "\n";
    return 0;
  }

  if (args.engine == "vi") {
    if (args.spec.params.params.empty())
      throw gpp::Error("vi needs at least one --param name:transform:init");
    gpp::ViResult res = gpp::vi_optimize(p, args.guide, args.spec.params, args.model, so,
                                         args.iters, args.n, args.step_size, args.seed, opts);
    std::ofstream out = open_results(args.out_path);
    for (const auto& rec : res.trajectory) {
      json j;
      j["iter"] = rec.iteration;
      j["elbo"] = rec.elbo;
      json params = json::object();
      for (const auto& q : rec.params.params) params[q.name] = q.value;
      j["params"] = params;
      out << j.dump() << "\n";
      std::cout << "iter " << rec.iteration << " elbo " << fmt_double(rec.elbo) << "\n";
    }
    json fin = json::object();
    for (const auto& q : res.params.params) fin[q.name] = q.value;
    out << json{{"final", fin}}.dump() << "\n";
    std::cout << "engine: vi\nfinal:";
    for (const auto& q : res.params.params)
      std::cout << " " << q.name << "=" << fmt_double(q.value);
    std::cout << "\n";
    return 0;
  }

  throw gpp::Error("unknown engine '" + args.engine + "' (is, mh or vi)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guide-typed probabilistic programs: check, score and run inference"};
  app.require_subcommand(1);

  std::string path, model, guide, latent_path, obs_path, out_path;
  ParamSpec check_params, compat_params;
  RunArgs run_args;

  CLI::App* check = app.add_subcommand("check", "Parse, validate and infer guide types");
  check->add_option("file", path, "source file")->required();
  add_param_option(check, check_params);

  CLI::App* compat = app.add_subcommand("compat", "Check a model/guide pair for support match");
  compat->add_option("file", path, "source file")->required();
  compat->add_option("--model", model, "model procedure")->required();
  compat->add_option("--guide", guide, "guide procedure")->required();
  compat->add_option("--out", out_path, "write the JSON report here");
  add_param_option(compat, compat_params);

  CLI::App* score = app.add_subcommand("score", "Log density of a latent/observation pairing");
  score->add_option("file", path, "source file")->required();
  score->add_option("--model", model, "model procedure")->required();
  score->add_option("--latent", latent_path, "latent trace JSON")->required();
  score->add_option("--obs", obs_path, "observation trace JSON")->required();

  CLI::App* run = app.add_subcommand("run", "Run an inference engine");
  run->add_option("file", run_args.path, "source file")->required();
  run->add_option("--engine", run_args.engine, "is, mh or vi")->required();
  run->add_option("--model", run_args.model, "model procedure")->required();
  run->add_option("--guide", run_args.guide, "guide or proposal procedure")->required();
  run->add_option("--obs", run_args.obs_path, "observation trace JSON");
  run->add_option("--init", run_args.init_path, "initial latent trace (mh)");
  run->add_option("--n", run_args.n, "particles (is) or samples per iteration (vi)");
  run->add_option("--steps", run_args.steps, "mh steps");
  run->add_option("--burnin", run_args.burnin, "mh burn-in prefix recorded in the output");
  run->add_option("--iters", run_args.iters, "vi iterations");
  run->add_option("--step-size", run_args.step_size, "vi ascent step size");
  run->add_option("--max-messages", run_args.max_messages,
                  "abort a joint execution past this many shared messages (0 = unbounded)");
  CLI::Option* seed_opt = run->add_option("--seed", run_args.seed, "rng seed (env GPP_SEED)");
  run->add_option("--out", run_args.out_path, "results file (JSON lines)")->required();
  add_param_option(run, run_args.spec);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (check->parsed()) return run_check(path, check_params);
    if (compat->parsed()) return run_compat(path, model, guide, compat_params, out_path);
    if (score->parsed()) return run_score(path, model, latent_path, obs_path);
    if (run->parsed()) {
      run_args.seed = seed_or_env(seed_opt, run_args.seed);
      return run_engine(run_args);
    }
  } catch (const gpp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
