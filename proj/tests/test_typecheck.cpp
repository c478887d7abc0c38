#include <catch2/catch_amalgamated.hpp>

#include "gpp/gpp.hpp"
#include "support/corpus.hpp"

using namespace gpp;

namespace {

TypePtr t(const std::string& s) { return parse_base_type(s); }
GuidePtr g(const std::string& s) { return parse_guide_type(s); }

ExprPtr expr_of(const std::string& src) {
  Program p = parse_program("proc F() consume . provide . = return " + src);
  return p.procs[0].body->expr;
}

TypePtr type_of(const std::string& src, const TypingContext& ctx = {}) {
  return type_of_expr(ctx, expr_of(src));
}

}  // namespace

TEST_CASE("scalar subtyping closure") {
  CHECK(subtype(t("ureal"), t("real")));
  CHECK(subtype(t("ureal"), t("preal")));
  CHECK(subtype(t("preal"), t("real")));
  CHECK(!subtype(t("real"), t("preal")));
  CHECK(!subtype(t("preal"), t("ureal")));
  CHECK(subtype(t("fin[3]"), t("fin[5]")));
  CHECK(!subtype(t("fin[5]"), t("fin[3]")));
  CHECK(subtype(t("fin[3]"), t("nat")));
  CHECK(!subtype(t("nat"), t("real")));
  CHECK(!subtype(t("dist[ureal]"), t("dist[real]")));  // invariance
  CHECK(subtype(t("real -> ureal"), t("ureal -> real")));  // contra/co
  CHECK(!subtype(t("ureal -> real"), t("real -> real")));
  CHECK(subtype(t("trace[1]"), t("trace[1]")));
  CHECK(!subtype(t("trace[1]"), t("trace[real /\\ 1]")));
}

TEST_CASE("literal typing takes the minimal type") {
  CHECK(base_type_equal(type_of("0.5"), t("ureal")));
  CHECK(base_type_equal(type_of("3.0"), t("preal")));
  CHECK(base_type_equal(type_of("-1.0"), t("real")));
  CHECK(base_type_equal(type_of("0.0"), t("real")));
  CHECK(base_type_equal(type_of("3"), t("fin[4]")));
  CHECK(base_type_equal(type_of("()"), t("unit")));
  CHECK(base_type_equal(type_of("true"), t("bool")));
}

TEST_CASE("expression typing follows the rules") {
  CHECK(base_type_equal(type_of("gamma(2.0, 1.0)"), t("dist[preal]")));
  CHECK(base_type_equal(type_of("cat(1.0, 2.0, 3.0)"), t("dist[fin[3]]")));
  CHECK(base_type_equal(type_of("ber(0.5)"), t("dist[bool]")));
  CHECK(base_type_equal(type_of("unif"), t("dist[ureal]")));
  CHECK(base_type_equal(type_of("pois(4.0)"), t("dist[nat]")));
  CHECK(base_type_equal(type_of("fn (x : real) => x + x"), t("real -> real")));
  CHECK(base_type_equal(type_of("(fn (x : real) => x + x) 0.5"), t("real")));
  CHECK(base_type_equal(type_of("let y = 0.5 in y * y"), t("ureal")));
  CHECK(base_type_equal(type_of("if true then 0.5 else 3.0"), t("preal")));
  CHECK(base_type_equal(type_of("if true then 0.5 else -1.0"), t("real")));
  CHECK(base_type_equal(type_of("1 + 2"), t("nat")));
  CHECK(base_type_equal(type_of("1 + 2.0"), t("real")));
  CHECK(base_type_equal(type_of("2.0 / 4.0"), t("preal")));
  CHECK(base_type_equal(type_of("0.5 * 0.5"), t("ureal")));
  TypingContext ctx;
  ctx = ctx.bind("old", t("trace[bool /\\ 1]"));
  CHECK(base_type_equal(type_of("get[bool](old, 0)", ctx), t("bool")));
}

TEST_CASE("expression typing errors") {
  CHECK_THROWS_AS(type_of("nope"), TypeError);             // unbound variable
  CHECK_THROWS_AS(type_of("true + 1"), TypeError);         // operator mismatch
  CHECK_THROWS_AS(type_of("if 1 then 2 else 3"), TypeError);
  CHECK_THROWS_AS(type_of("ber(1.2)"), TypeError);         // parameter domain
  CHECK_THROWS_AS(type_of("gamma(-1.0, 1.0)"), TypeError);
  CHECK_THROWS_AS(type_of("normal(0.0, 0.0)"), TypeError); // 0.0 is not preal
  CHECK_THROWS_AS(type_of("(fn (x : ureal) => x) 2.0"), TypeError);
  CHECK_THROWS_AS(type_of("get[bool](1.0, 0)"), TypeError);
}

TEST_CASE("check_value follows the value typing rules") {
  CHECK(check_value(Value::real(0.5), t("ureal")));
  CHECK(!check_value(Value::real(1.0), t("ureal")));
  CHECK(!check_value(Value::nat(3), t("fin[3]")));
  CHECK(check_value(Value::nat(2), t("fin[3]")));
  CHECK(check_value(Value::nat(3), t("nat")));
  CHECK(!check_value(Value::nat(3), t("real")));
  CHECK(check_value(Value::dist(make_dist(DistKind::Normal, {0.0, 1.0})), t("dist[real]")));
  CHECK(!check_value(Value::dist(make_dist(DistKind::Normal, {0.0, 1.0})), t("dist[preal]")));

  Env env;
  auto clo = std::make_shared<ClosureData>();
  clo->env = env;
  clo->param = "x";
  clo->param_type = t("real");
  clo->body = expr_of("x + x");
  Value f = Value::closure(clo);
  CHECK(check_value(f, t("real -> real")));
  CHECK(check_value(f, t("ureal -> real")));   // contravariant argument
  CHECK(!check_value(f, t("real -> ureal")));

  auto tr = std::make_shared<GuidanceTrace>();
  tr->messages = {Message::psample(Value::boolean(true))};
  CHECK(check_value(Value::trace(tr), t("trace[bool /\\ 1]")));
  CHECK(!check_value(Value::trace(tr), t("trace[real /\\ 1]")));
}

TEST_CASE("trace typing") {
  CHECK(check_trace(GuidanceTrace{}, g("1"), {}));

  GuidanceTrace eq3;
  eq3.messages = {Message::psample(Value::real(1.0)), Message::cbranch(true)};
  CHECK(check_trace(eq3, g("preal /\\ (1 & (ureal /\\ 1))"), {}));

  GuidanceTrace short_trace;
  short_trace.messages = {Message::psample(Value::real(1.0))};
  CHECK(!check_trace(short_trace, g("real /\\ (real /\\ 1)"), {}));
  CHECK(!check_trace(short_trace, g("1"), {}));
  CHECK(check_trace(short_trace, g("real /\\ 1"), {}));
  CHECK(!check_trace(short_trace, g("preal => 1"), {}));  // wrong direction

  GuidanceTrace dual;
  dual.messages = {Message::csample(Value::real(2.0)), Message::pbranch(false)};
  CHECK(check_trace(dual, g("real => (1 (+) 1)"), {}));

  TypeDefTable defs;
  defs.push_back({"T", "X", g("real /\\ X"), {}});
  GuidanceTrace folded;
  folded.messages = {Message::fold(), Message::psample(Value::real(0.0))};
  CHECK(check_trace(folded, g("T[1]"), defs));
  CHECK(!check_trace(folded, g("T[real /\\ 1]"), defs));
  CHECK_THROWS_AS(check_trace(folded, g("U[1]"), defs), TypeError);
}

TEST_CASE("command basic types") {
  Program p = corpus::load("toy_pair.gpp");
  InferredTypes inf = infer_program_types(p);
  TypingContext ctx;
  ctx = ctx.bind("_", types::unit());
  TypePtr model_type = base_type_of_cmd(inf.signatures, ctx, p.find_proc("Model")->body);
  CHECK(base_type_equal(model_type, t("preal")));

  Program q = parse_program(
      "proc A() consume . provide . = return ()\n"
      "proc B() consume a provide . = x <- sample[recv](a, normal(0.0, 1.0)); return x\n");
  InferredTypes qi = infer_program_types(q);
  CHECK(base_type_equal(base_type_of_cmd(qi.signatures, ctx, q.procs[0].body), t("unit")));
  CHECK(base_type_equal(base_type_of_cmd(qi.signatures, ctx, q.procs[1].body), t("real")));
}

TEST_CASE("backward inference leaves return commands alone") {
  SignatureTable sigs;
  TypingContext ctx;
  auto pre = infer_cmd_pre(sigs, ctx, cmds::ret(exprs::triv()), std::optional<std::string>("a"),
                           std::optional<std::string>("b"), guides::var("X"), guides::var("Y"));
  CHECK(guide_type_equal(pre.a, guides::var("X")));
  CHECK(guide_type_equal(pre.b, guides::var("Y")));
}

TEST_CASE("backward inference threads procedure calls") {
  // two calls around a sample against the operator of the callee
  SignatureTable sigs;
  ProcSignature f;
  f.arg_type = t("ureal");
  f.ret_type = t("unit");
  f.consume_op = {{"a", "T"}};
  sigs.emplace("f", f);

  CmdPtr m3 = cmds::bnd(
      cmds::call("f", exprs::var("k")), "_",
      cmds::bnd(cmds::sample_recv(exprs::dist(DistKind::Normal,
                                              {exprs::real_lit(0.0), exprs::real_lit(1.0)}),
                                  "a"),
                "_", cmds::bnd(cmds::call("f", exprs::var("k")), "_", cmds::ret(exprs::triv()))));

  TypingContext ctx;
  ctx = ctx.bind("k", t("ureal"));
  auto pre = infer_cmd_pre(sigs, ctx, m3, std::optional<std::string>("a"), std::nullopt,
                           guides::end(), guides::end());
  CHECK(guide_type_equal(pre.a, g("T[real /\\ T[1]]")));
}

TEST_CASE("toy pair infers the reference protocol") {
  Program p = corpus::load("toy_pair.gpp");
  InferredTypes inf = infer_program_types(p);
  const ProcSignature& sig = inf.signatures.at("Model");
  const TypeDef* lat = find_typedef(inf.typedefs, sig.consume_op->second);
  const TypeDef* obs = find_typedef(inf.typedefs, sig.provide_op->second);
  CHECK(guide_type_equal(subst_guide(lat->body, lat->param, guides::end()),
                         g("preal /\\ (1 & (ureal /\\ 1))")));
  CHECK(guide_type_equal(subst_guide(obs->body, obs->param, guides::end()), g("real /\\ 1")));

  // the same derivation run directly against ended continuations
  const ProcDecl* model = p.find_proc("Model");
  TypingContext ctx;
  ctx = ctx.bind(model->param, model->arg_type);
  auto pre = infer_cmd_pre(inf.signatures, ctx, model->body, model->consume_chan,
                           model->provide_chan, guides::end(), guides::end());
  CHECK(guide_type_equal(pre.a, g("preal /\\ (1 & (ureal /\\ 1))")));
  CHECK(guide_type_equal(pre.b, g("real /\\ 1")));
}

TEST_CASE("an empty body maps the continuation through") {
  Program p = parse_program("proc F() consume a provide . = return ()");
  InferredTypes inf = infer_program_types(p);
  const TypeDef* d = find_typedef(inf.typedefs, inf.signatures.at("F").consume_op->second);
  REQUIRE(d);
  CHECK(d->body->kind == GuideKind::Var);
  CHECK(d->body->name == d->param);
}

TEST_CASE("recursive operators match the reference bodies up to renaming") {
  {
    Program p = corpus::load("pcfg.gpp");
    InferredTypes inf = infer_program_types(p);
    const auto& op = inf.signatures.at("PcfgGen").consume_op->second;
    TypeDefTable expected;
    expected.push_back({"R", "X", g("ureal /\\ ((real /\\ X) & R[R[X]])"), {}});
    std::string why;
    CHECK(guide_type_equal_upto_renaming(find_typedef(inf.typedefs, op)->body, inf.typedefs,
                                         expected[0].body, expected, &why));
  }
  {
    Program p = corpus::load("ptrace.gpp");
    InferredTypes inf = infer_program_types(p);
    const auto& op = inf.signatures.at("PtraceHelper").consume_op->second;
    TypeDefTable expected;
    expected.push_back({"H", "X", g("ureal /\\ (X & H[X])"), {}});
    std::string why;
    CHECK(guide_type_equal_upto_renaming(find_typedef(inf.typedefs, op)->body, inf.typedefs,
                                         expected[0].body, expected, &why));
  }
}

TEST_CASE("mutually recursive procedures infer interlocking operators") {
  Program p = parse_program(
      "proc Flip() : bool consume latent provide . =\n"
      "  u <- sample[recv](latent, unif);\n"
      "  if[send latent] u < 0.5 then { return true } else { call Flop() }\n"
      "proc Flop() : bool consume latent provide . =\n"
      "  u <- sample[recv](latent, unif);\n"
      "  if[send latent] u < 0.5 then { return false } else { call Flip() }\n"
      "proc FlipGuide() : unit consume . provide latent =\n"
      "  u <- sample[send](latent, unif);\n"
      "  if[recv latent] * then { return () } else { call FlopGuide() }\n"
      "proc FlopGuide() : unit consume . provide latent =\n"
      "  u <- sample[send](latent, unif);\n"
      "  if[recv latent] * then { return () } else { call FlipGuide() }\n");
  InferredTypes inf = infer_program_types(p);
  const std::string flip_op = inf.signatures.at("Flip").consume_op->second;
  const std::string flop_op = inf.signatures.at("Flop").consume_op->second;
  const TypeDef* flip = find_typedef(inf.typedefs, flip_op);
  REQUIRE(flip);
  // Flip's protocol recurses through Flop's operator and vice versa
  CHECK(guide_type_equal(flip->body,
                         guides::sample_p(types::ureal(),
                                          guides::choice_c(guides::var(flip->param),
                                                           guides::op_app(flop_op,
                                                                          guides::var(flip->param))))));
  CHECK(check_model_guide(p, "Flip", "FlipGuide").accept);
  CHECK(check_model_guide(p, "Flop", "FlopGuide").accept);

  // and the pair executes: generated traces replay on both sides
  Rng rng(99);
  for (int i = 0; i < 50; ++i) {
    ExecutionRecord rec =
        joint_simulate(p, "FlipGuide", "Flip", Value::triv(), Value::triv(), rng);
    CHECK(!rec.log_model.is_impossible());
    CHECK(check_value(rec.model_result, types::boolean(), inf.typedefs));
  }
}

TEST_CASE("inference is deterministic and reproducible") {
  Program p = corpus::load("pcfg.gpp");
  InferredTypes a = infer_program_types(p);
  InferredTypes b = infer_program_types(p);
  REQUIRE(a.typedefs.size() == b.typedefs.size());
  for (std::size_t i = 0; i < a.typedefs.size(); ++i) {
    CHECK(a.typedefs[i].op == b.typedefs[i].op);
    CHECK(guide_type_equal(a.typedefs[i].body, b.typedefs[i].body));
  }
  // re-deriving a body against the recorded signatures reproduces the typedef
  const ProcDecl* gen = p.find_proc("PcfgGen");
  TypingContext ctx;
  ctx = ctx.bind(gen->param, gen->arg_type);
  auto pre = infer_cmd_pre(a.signatures, ctx, gen->body, gen->consume_chan, gen->provide_chan,
                           guides::var("X"), guides::var("Y"));
  CHECK(guide_type_equal(pre.a,
                         find_typedef(a.typedefs, a.signatures.at("PcfgGen").consume_op->second)
                             ->body));
}

TEST_CASE("recursion without a return annotation is reported") {
  Program p = parse_program(
      "proc Loop() consume a provide . = n <- call Loop(); return n + 1");
  CHECK_THROWS_WITH(infer_program_types(p),
                    Catch::Matchers::ContainsSubstring("annotate"));
}

TEST_CASE("dual commands are rejected by the checker") {
  CHECK_THROWS_WITH(
      infer_program_types(parse_program(
          "proc F() consume a provide . = sample[send](a, normal(0.0, 1.0))")),
      Catch::Matchers::ContainsSubstring("dual"));
  CHECK_THROWS_WITH(
      infer_program_types(parse_program(
          "proc F() consume . provide b = sample[recv](b, normal(0.0, 1.0))")),
      Catch::Matchers::ContainsSubstring("dual"));
  CHECK_THROWS_WITH(
      infer_program_types(parse_program(
          "proc F() consume . provide b = if[send b] true then return () else return ()")),
      Catch::Matchers::ContainsSubstring("dual"));
  CHECK_THROWS_WITH(
      infer_program_types(parse_program(
          "proc F() consume a provide . = if[recv a] * then return () else return ()")),
      Catch::Matchers::ContainsSubstring("dual"));
}

TEST_CASE("ill-formed annotations are rejected") {
  CHECK_THROWS_WITH(
      infer_program_types(parse_program(
          "proc F(x : dist[real -> real]) consume . provide . = return ()")),
      Catch::Matchers::ContainsSubstring("scalar"));
  CHECK_THROWS_WITH(
      infer_program_types(parse_program(
          "proc F() : trace[1] consume . provide . = return ()")),
      Catch::Matchers::ContainsSubstring("trace"));
  CHECK_THROWS_WITH(type_of("fn (x : trace[1]) => true"),
                    Catch::Matchers::ContainsSubstring("trace"));
  // trace-typed procedure parameters are the supported position
  CHECK_NOTHROW(infer_program_types(
      parse_program("proc F(old : trace[bool /\\ 1]) consume . provide . = return ()")));
}

TEST_CASE("branch arms must agree on the passive channel") {
  Program p = parse_program(
      "proc F() consume a provide b =\n"
      "  x <- sample[recv](a, ber(0.5));\n"
      "  if[send a] x then sample[send](b, normal(0.0, 1.0)) else return 0.0");
  CHECK_THROWS_WITH(infer_program_types(p),
                    Catch::Matchers::ContainsSubstring("disagree"));
}

TEST_CASE("freeness flags unfold operators with a visited set") {
  CHECK(is_oplus_free(g("preal /\\ (1 & (ureal /\\ 1))")));
  CHECK(!is_amp_free(g("preal /\\ (1 & (ureal /\\ 1))")));
  CHECK(is_amp_free(g("real /\\ 1")));
  CHECK(!is_oplus_free(g("1 (+) 1")));

  Program p = corpus::load("marsaglia.gpp");
  InferredTypes inf = infer_program_types(p);
  const auto& op = inf.signatures.at("Marsaglia").consume_op->second;
  GuidePtr a = guides::op_app(op, guides::end());
  CHECK(is_oplus_free(a, inf.typedefs));
  CHECK(!is_amp_free(a, inf.typedefs));
}

TEST_CASE("model guide compatibility verdicts") {
  Program p = corpus::load("toy_pair.gpp");

  CompatReport ok = check_model_guide(p, "Model", "Guide1");
  CHECK(ok.accept);
  CHECK(ok.channel == "latent");
  CHECK(guide_type_equal(ok.latent_type, g("preal /\\ (1 & (ureal /\\ 1))")));
  CHECK(guide_type_equal(ok.obs_type, g("real /\\ 1")));
  CHECK(check_model_guide(p, "Model", "Guide2").accept);
  CHECK(check_model_guide(p, "Model", "GuidePrior").accept);

  CompatReport bad1 = check_model_guide(p, "Model", "Guide1Bad");
  CHECK(!bad1.accept);
  CHECK(bad1.detail.find("nat") != std::string::npos);
  CHECK(bad1.detail.find("preal") != std::string::npos);

  CompatReport bad2 = check_model_guide(p, "Model", "Guide2Bad");
  CHECK(!bad2.accept);
  CHECK(bad2.detail.find("real") != std::string::npos);
  CHECK(bad2.detail.find("preal") != std::string::npos);
}

TEST_CASE("compatibility works across recursive pairs") {
  CHECK(check_model_guide(corpus::load("pcfg.gpp"), "Pcfg", "PcfgGuide").accept);
  CHECK(check_model_guide(corpus::load("ptrace.gpp"), "Ptrace", "PtraceGuide").accept);
  CHECK(check_model_guide(corpus::load("marsaglia.gpp"), "Marsaglia", "MarsagliaGuide").accept);
  CHECK(check_model_guide(corpus::load("branching.gpp"), "BranchModel", "BranchGuide").accept);
  CHECK(check_model_guide(corpus::load("cat_demo.gpp"), "CatModel", "CatGuide").accept);
  CHECK(check_model_guide(corpus::load("outlier.gpp"), "OutlierModel", "OutlierGuide").accept);
  CHECK(check_model_guide(corpus::load("toy_mh.gpp"), "ToyMhModel", "ToyMhGuide").accept);
}

TEST_CASE("channel mismatches raise instead of reporting") {
  Program p = parse_program(
      "proc M() consume lat provide . = x <- sample[recv](lat, unif); return ()\n"
      "proc G() consume . provide other = x <- sample[send](other, unif); return ()\n");
  CHECK_THROWS_AS(check_model_guide(p, "M", "G"), CompatError);
  CHECK_THROWS_AS(check_model_guide(p, "M", "Missing"), CompatError);
}

TEST_CASE("free guide parameters type against an ambient context") {
  Program p = corpus::load("nn_conjugate.gpp");
  CHECK_THROWS_AS(infer_program_types(p), TypeError);
  TypingContext ambient;
  ambient = ambient.bind("mu", types::real());
  InferredTypes inf = infer_program_types(p, ambient);
  CHECK(inf.signatures.count("NnGuide") == 1);
  CHECK(check_model_guide(p, "NnModel", "NnGuide", ambient).accept);
}
