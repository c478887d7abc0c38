#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gpp/source.hpp"

namespace gpp {

// ---------------------------------------------------------------------------
// Basic types and guide types
// ---------------------------------------------------------------------------

struct BaseType;
struct GuideType;
using TypePtr = std::shared_ptr<const BaseType>;
using GuidePtr = std::shared_ptr<const GuideType>;

enum class TypeKind {
  Unit,
  Bool,
  UnitReal,
  PosReal,
  Real,
  FinNat,  // naturals below a positive bound
  Nat,
  Arrow,
  Dist,
  TraceOf,  // first-class guidance traces (proposal parameters)
};

struct BaseType {
  TypeKind kind;
  std::uint64_t bound = 0;  // FinNat
  TypePtr t1, t2;           // Arrow arg/res; Dist carrier in t1
  GuidePtr protocol;        // TraceOf

  bool is_scalar() const {
    switch (kind) {
      case TypeKind::Unit:
      case TypeKind::Bool:
      case TypeKind::UnitReal:
      case TypeKind::PosReal:
      case TypeKind::Real:
      case TypeKind::FinNat:
      case TypeKind::Nat:
        return true;
      default:
        return false;
    }
  }
};

namespace types {

inline TypePtr make(TypeKind k) {
  auto t = std::make_shared<BaseType>();
  t->kind = k;
  return t;
}

inline const TypePtr& unit() { static TypePtr t = make(TypeKind::Unit); return t; }
inline const TypePtr& boolean() { static TypePtr t = make(TypeKind::Bool); return t; }
inline const TypePtr& ureal() { static TypePtr t = make(TypeKind::UnitReal); return t; }
inline const TypePtr& preal() { static TypePtr t = make(TypeKind::PosReal); return t; }
inline const TypePtr& real() { static TypePtr t = make(TypeKind::Real); return t; }
inline const TypePtr& nat() { static TypePtr t = make(TypeKind::Nat); return t; }

inline TypePtr fin_nat(std::uint64_t n) {
  auto t = std::make_shared<BaseType>();
  t->kind = TypeKind::FinNat;
  t->bound = n;
  return t;
}

inline TypePtr arrow(TypePtr arg, TypePtr res) {
  auto t = std::make_shared<BaseType>();
  t->kind = TypeKind::Arrow;
  t->t1 = std::move(arg);
  t->t2 = std::move(res);
  return t;
}

inline TypePtr dist(TypePtr carrier) {
  auto t = std::make_shared<BaseType>();
  t->kind = TypeKind::Dist;
  t->t1 = std::move(carrier);
  return t;
}

inline TypePtr trace_of(GuidePtr protocol) {
  auto t = std::make_shared<BaseType>();
  t->kind = TypeKind::TraceOf;
  t->protocol = std::move(protocol);
  return t;
}

}  // namespace types

enum class GuideKind {
  Var,      // type variable
  End,      // ended channel
  OpApp,    // operator instantiation T[A]
  SampleP,  // provider sends a sample:  tau /\ A
  SampleC,  // consumer sends a sample:  tau => A   (dual; never inferred)
  ChoiceP,  // provider sends selection: A (+) B    (dual; never inferred)
  ChoiceC,  // consumer sends selection: A & B
};

struct GuideType {
  GuideKind kind;
  std::string name;  // Var, OpApp operator
  TypePtr carrier;   // SampleP/SampleC
  GuidePtr g1, g2;
};

namespace guides {

inline GuidePtr end() {
  static GuidePtr g = [] {
    auto n = std::make_shared<GuideType>();
    n->kind = GuideKind::End;
    return n;
  }();
  return g;
}

inline GuidePtr var(std::string name) {
  auto n = std::make_shared<GuideType>();
  n->kind = GuideKind::Var;
  n->name = std::move(name);
  return n;
}

inline GuidePtr op_app(std::string op, GuidePtr arg) {
  auto n = std::make_shared<GuideType>();
  n->kind = GuideKind::OpApp;
  n->name = std::move(op);
  n->g1 = std::move(arg);
  return n;
}

inline GuidePtr sample_p(TypePtr carrier, GuidePtr cont) {
  auto n = std::make_shared<GuideType>();
  n->kind = GuideKind::SampleP;
  n->carrier = std::move(carrier);
  n->g1 = std::move(cont);
  return n;
}

inline GuidePtr sample_c(TypePtr carrier, GuidePtr cont) {
  auto n = std::make_shared<GuideType>();
  n->kind = GuideKind::SampleC;
  n->carrier = std::move(carrier);
  n->g1 = std::move(cont);
  return n;
}

inline GuidePtr choice_p(GuidePtr left, GuidePtr right) {
  auto n = std::make_shared<GuideType>();
  n->kind = GuideKind::ChoiceP;
  n->g1 = std::move(left);
  n->g2 = std::move(right);
  return n;
}

inline GuidePtr choice_c(GuidePtr left, GuidePtr right) {
  auto n = std::make_shared<GuideType>();
  n->kind = GuideKind::ChoiceC;
  n->g1 = std::move(left);
  n->g2 = std::move(right);
  return n;
}

}  // namespace guides

bool base_type_equal(const TypePtr& a, const TypePtr& b);

// Structural, nominal on operator names, no unfolding.
inline bool guide_type_equal(const GuidePtr& a, const GuidePtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case GuideKind::End:
      return true;
    case GuideKind::Var:
      return a->name == b->name;
    case GuideKind::OpApp:
      return a->name == b->name && guide_type_equal(a->g1, b->g1);
    case GuideKind::SampleP:
    case GuideKind::SampleC:
      return base_type_equal(a->carrier, b->carrier) && guide_type_equal(a->g1, b->g1);
    case GuideKind::ChoiceP:
    case GuideKind::ChoiceC:
      return guide_type_equal(a->g1, b->g1) && guide_type_equal(a->g2, b->g2);
  }
  return false;
}

inline bool base_type_equal(const TypePtr& a, const TypePtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case TypeKind::FinNat:
      return a->bound == b->bound;
    case TypeKind::Arrow:
      return base_type_equal(a->t1, b->t1) && base_type_equal(a->t2, b->t2);
    case TypeKind::Dist:
      return base_type_equal(a->t1, b->t1);
    case TypeKind::TraceOf:
      return guide_type_equal(a->protocol, b->protocol);
    default:
      return true;
  }
}

inline GuidePtr subst_guide(const GuidePtr& g, const std::string& var, const GuidePtr& replacement) {
  if (!g) return g;
  switch (g->kind) {
    case GuideKind::Var:
      return g->name == var ? replacement : g;
    case GuideKind::End:
      return g;
    case GuideKind::OpApp:
      return guides::op_app(g->name, subst_guide(g->g1, var, replacement));
    case GuideKind::SampleP:
      return guides::sample_p(g->carrier, subst_guide(g->g1, var, replacement));
    case GuideKind::SampleC:
      return guides::sample_c(g->carrier, subst_guide(g->g1, var, replacement));
    case GuideKind::ChoiceP:
      return guides::choice_p(subst_guide(g->g1, var, replacement),
                              subst_guide(g->g2, var, replacement));
    case GuideKind::ChoiceC:
      return guides::choice_c(subst_guide(g->g1, var, replacement),
                              subst_guide(g->g2, var, replacement));
  }
  return g;
}

inline void collect_free_guide_vars(const GuidePtr& g, std::set<std::string>& out) {
  if (!g) return;
  if (g->kind == GuideKind::Var) {
    out.insert(g->name);
    return;
  }
  collect_free_guide_vars(g->g1, out);
  collect_free_guide_vars(g->g2, out);
}

inline std::set<std::string> free_guide_vars(const GuidePtr& g) {
  std::set<std::string> out;
  collect_free_guide_vars(g, out);
  return out;
}

// ---------------------------------------------------------------------------
// Primitive distributions (parameter payload; operations live in
// gpp/distributions.hpp)
// ---------------------------------------------------------------------------

enum class DistKind { Ber, Unif, Beta, Gamma, Normal, Cat, Geo, Pois };

inline const char* dist_name(DistKind k) {
  switch (k) {
    case DistKind::Ber: return "ber";
    case DistKind::Unif: return "unif";
    case DistKind::Beta: return "beta";
    case DistKind::Gamma: return "gamma";
    case DistKind::Normal: return "normal";
    case DistKind::Cat: return "cat";
    case DistKind::Geo: return "geo";
    case DistKind::Pois: return "pois";
  }
  return "?";
}

struct PrimDist {
  DistKind kind;
  std::vector<double> params;  // Cat keeps one weight per entry
};

// ---------------------------------------------------------------------------
// Expressions
// ---------------------------------------------------------------------------

enum class BinOpKind { Add, Sub, Mul, Div, Lt, Le, Eq, And, Or };

inline const char* binop_name(BinOpKind k) {
  switch (k) {
    case BinOpKind::Add: return "+";
    case BinOpKind::Sub: return "-";
    case BinOpKind::Mul: return "*";
    case BinOpKind::Div: return "/";
    case BinOpKind::Lt: return "<";
    case BinOpKind::Le: return "<=";
    case BinOpKind::Eq: return "=";
    case BinOpKind::And: return "and";
    case BinOpKind::Or: return "or";
  }
  return "?";
}

enum class ExprKind {
  Var,
  Triv,
  True,
  False,
  Cond,
  RealLit,
  NatLit,
  BinOp,
  Lambda,
  App,
  Let,
  Dist,      // any primitive-distribution constructor
  TraceGet,  // first-class trace accessor
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  ExprKind kind;
  SourceSpan span;
  std::string name;           // Var; Lambda param; Let binder
  double real_value = 0.0;    // RealLit
  std::uint64_t nat_value = 0;// NatLit
  BinOpKind op = BinOpKind::Add;
  DistKind dist = DistKind::Unif;
  TypePtr type;               // Lambda param annotation; TraceGet annotation
  std::vector<ExprPtr> kids;
};

namespace exprs {

inline ExprPtr node(ExprKind k, std::vector<ExprPtr> kids = {}, SourceSpan span = {}) {
  auto e = std::make_shared<Expr>();
  e->kind = k;
  e->kids = std::move(kids);
  e->span = std::move(span);
  return e;
}

inline ExprPtr var(std::string name, SourceSpan span = {}) {
  auto e = node(ExprKind::Var, {}, std::move(span));
  const_cast<Expr&>(*e).name = std::move(name);
  return e;
}

inline ExprPtr triv(SourceSpan span = {}) { return node(ExprKind::Triv, {}, std::move(span)); }
inline ExprPtr truth(bool b, SourceSpan span = {}) {
  return node(b ? ExprKind::True : ExprKind::False, {}, std::move(span));
}

inline ExprPtr real_lit(double r, SourceSpan span = {}) {
  auto e = node(ExprKind::RealLit, {}, std::move(span));
  const_cast<Expr&>(*e).real_value = r;
  return e;
}

inline ExprPtr nat_lit(std::uint64_t n, SourceSpan span = {}) {
  auto e = node(ExprKind::NatLit, {}, std::move(span));
  const_cast<Expr&>(*e).nat_value = n;
  return e;
}

inline ExprPtr cond(ExprPtr c, ExprPtr t, ExprPtr f, SourceSpan span = {}) {
  return node(ExprKind::Cond, {std::move(c), std::move(t), std::move(f)}, std::move(span));
}

inline ExprPtr binop(BinOpKind op, ExprPtr l, ExprPtr r, SourceSpan span = {}) {
  auto e = node(ExprKind::BinOp, {std::move(l), std::move(r)}, std::move(span));
  const_cast<Expr&>(*e).op = op;
  return e;
}

inline ExprPtr lambda(std::string param, TypePtr type, ExprPtr body, SourceSpan span = {}) {
  auto e = node(ExprKind::Lambda, {std::move(body)}, std::move(span));
  const_cast<Expr&>(*e).name = std::move(param);
  const_cast<Expr&>(*e).type = std::move(type);
  return e;
}

inline ExprPtr app(ExprPtr fn, ExprPtr arg, SourceSpan span = {}) {
  return node(ExprKind::App, {std::move(fn), std::move(arg)}, std::move(span));
}

inline ExprPtr let(ExprPtr bound, std::string name, ExprPtr body, SourceSpan span = {}) {
  auto e = node(ExprKind::Let, {std::move(bound), std::move(body)}, std::move(span));
  const_cast<Expr&>(*e).name = std::move(name);
  return e;
}

inline ExprPtr dist(DistKind kind, std::vector<ExprPtr> args, SourceSpan span = {}) {
  auto e = node(ExprKind::Dist, std::move(args), std::move(span));
  const_cast<Expr&>(*e).dist = kind;
  return e;
}

inline ExprPtr trace_get(TypePtr annot, ExprPtr trace, ExprPtr index, SourceSpan span = {}) {
  auto e = node(ExprKind::TraceGet, {std::move(trace), std::move(index)}, std::move(span));
  const_cast<Expr&>(*e).type = std::move(annot);
  return e;
}

}  // namespace exprs

// ---------------------------------------------------------------------------
// Values, environments, traces
// ---------------------------------------------------------------------------

enum class ValueKind { Triv, Bool, Real, Nat, Closure, Dist, Trace };

struct ClosureData;
struct GuidanceTrace;

class Value {
public:
  Value() : kind_(ValueKind::Triv) {}

  static Value triv() { return Value(); }
  static Value boolean(bool b) {
    Value v;
    v.kind_ = ValueKind::Bool;
    v.bool_ = b;
    return v;
  }
  static Value real(double r) {
    Value v;
    v.kind_ = ValueKind::Real;
    v.real_ = r;
    return v;
  }
  static Value nat(std::uint64_t n) {
    Value v;
    v.kind_ = ValueKind::Nat;
    v.nat_ = n;
    return v;
  }
  static Value closure(std::shared_ptr<const ClosureData> c) {
    Value v;
    v.kind_ = ValueKind::Closure;
    v.closure_ = std::move(c);
    return v;
  }
  static Value dist(PrimDist d) {
    Value v;
    v.kind_ = ValueKind::Dist;
    v.dist_ = std::make_shared<const PrimDist>(std::move(d));
    return v;
  }
  static Value trace(std::shared_ptr<const GuidanceTrace> t) {
    Value v;
    v.kind_ = ValueKind::Trace;
    v.trace_ = std::move(t);
    return v;
  }

  ValueKind kind() const { return kind_; }
  bool as_bool() const { return bool_; }
  double as_real() const { return real_; }
  std::uint64_t as_nat() const { return nat_; }
  const ClosureData& as_closure() const { return *closure_; }
  const PrimDist& as_dist() const { return *dist_; }
  const GuidanceTrace& as_trace() const { return *trace_; }
  const std::shared_ptr<const GuidanceTrace>& trace_ptr() const { return trace_; }

  bool is_scalar() const {
    return kind_ == ValueKind::Triv || kind_ == ValueKind::Bool ||
           kind_ == ValueKind::Real || kind_ == ValueKind::Nat;
  }

private:
  ValueKind kind_;
  bool bool_ = false;
  double real_ = 0.0;
  std::uint64_t nat_ = 0;
  std::shared_ptr<const ClosureData> closure_;
  std::shared_ptr<const PrimDist> dist_;
  std::shared_ptr<const GuidanceTrace> trace_;
};

// Persistent environment; update shadows, lookup of an unbound name is the
// caller's error to raise.
class Env {
public:
  Env() = default;

  Env bind(const std::string& name, Value v) const {
    auto node = std::make_shared<Node>();
    node->name = name;
    node->value = std::move(v);
    node->next = head_;
    Env out;
    out.head_ = std::move(node);
    return out;
  }

  const Value* lookup(const std::string& name) const {
    for (const Node* n = head_.get(); n; n = n->next.get()) {
      if (n->name == name) return &n->value;
    }
    return nullptr;
  }

  // Bindings visible from this environment, innermost shadowing applied.
  std::map<std::string, Value> snapshot() const {
    std::map<std::string, Value> out;
    for (const Node* n = head_.get(); n; n = n->next.get()) out.emplace(n->name, n->value);
    return out;
  }

private:
  struct Node {
    std::string name;
    Value value;
    std::shared_ptr<const Node> next;
  };
  std::shared_ptr<const Node> head_;
};

struct ClosureData {
  Env env;
  std::string param;
  TypePtr param_type;
  ExprPtr body;
};

enum class MsgKind { PSample, CSample, PBranch, CBranch, Fold };

inline const char* msg_kind_name(MsgKind k) {
  switch (k) {
    case MsgKind::PSample: return "psample";
    case MsgKind::CSample: return "csample";
    case MsgKind::PBranch: return "pbranch";
    case MsgKind::CBranch: return "cbranch";
    case MsgKind::Fold: return "fold";
  }
  return "?";
}

struct Message {
  MsgKind kind;
  Value value;  // scalar for samples, Bool for branch selections, unused for Fold

  static Message psample(Value v) { return {MsgKind::PSample, std::move(v)}; }
  static Message csample(Value v) { return {MsgKind::CSample, std::move(v)}; }
  static Message pbranch(bool b) { return {MsgKind::PBranch, Value::boolean(b)}; }
  static Message cbranch(bool b) { return {MsgKind::CBranch, Value::boolean(b)}; }
  static Message fold() { return {MsgKind::Fold, Value::triv()}; }
};

struct GuidanceTrace {
  std::vector<Message> messages;

  std::size_t size() const { return messages.size(); }
  bool empty() const { return messages.empty(); }
};

inline GuidanceTrace concat_traces(const GuidanceTrace& s1, const GuidanceTrace& s2) {
  GuidanceTrace out;
  out.messages.reserve(s1.size() + s2.size());
  out.messages.insert(out.messages.end(), s1.messages.begin(), s1.messages.end());
  out.messages.insert(out.messages.end(), s2.messages.begin(), s2.messages.end());
  return out;
}

bool value_equal(const Value& a, const Value& b);

inline bool trace_equal(const GuidanceTrace& a, const GuidanceTrace& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.messages[i].kind != b.messages[i].kind) return false;
    if (!value_equal(a.messages[i].value, b.messages[i].value)) return false;
  }
  return true;
}

bool expr_equal(const ExprPtr& a, const ExprPtr& b);

inline bool value_equal(const Value& a, const Value& b) {
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case ValueKind::Triv:
      return true;
    case ValueKind::Bool:
      return a.as_bool() == b.as_bool();
    case ValueKind::Real:
      return a.as_real() == b.as_real();
    case ValueKind::Nat:
      return a.as_nat() == b.as_nat();
    case ValueKind::Dist: {
      const auto& da = a.as_dist();
      const auto& db = b.as_dist();
      return da.kind == db.kind && da.params == db.params;
    }
    case ValueKind::Trace:
      return trace_equal(a.as_trace(), b.as_trace());
    case ValueKind::Closure: {
      const auto& ca = a.as_closure();
      const auto& cb = b.as_closure();
      if (ca.param != cb.param || !base_type_equal(ca.param_type, cb.param_type) ||
          !expr_equal(ca.body, cb.body))
        return false;
      auto sa = ca.env.snapshot();
      auto sb = cb.env.snapshot();
      if (sa.size() != sb.size()) return false;
      for (auto ita = sa.begin(), itb = sb.begin(); ita != sa.end(); ++ita, ++itb) {
        if (ita->first != itb->first || !value_equal(ita->second, itb->second)) return false;
      }
      return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Commands, procedures, programs
// ---------------------------------------------------------------------------

enum class CmdKind { Ret, Bnd, Call, SampleRecv, SampleSend, BranchRecv, BranchSend };

struct Command;
using CmdPtr = std::shared_ptr<const Command>;

struct Command {
  CmdKind kind;
  SourceSpan span;
  ExprPtr expr;      // Ret value; Call argument; sample distribution; branch-send predicate
  std::string name;  // Bnd binder; Call target
  std::string chan;  // sample/branch channel
  CmdPtr m1, m2;     // Bnd first/rest; branch arms
};

namespace cmds {

inline CmdPtr node(CmdKind k, SourceSpan span = {}) {
  auto c = std::make_shared<Command>();
  c->kind = k;
  c->span = std::move(span);
  return c;
}

inline CmdPtr ret(ExprPtr e, SourceSpan span = {}) {
  auto c = node(CmdKind::Ret, std::move(span));
  const_cast<Command&>(*c).expr = std::move(e);
  return c;
}

inline CmdPtr bnd(CmdPtr first, std::string binder, CmdPtr rest, SourceSpan span = {}) {
  auto c = node(CmdKind::Bnd, std::move(span));
  auto& m = const_cast<Command&>(*c);
  m.m1 = std::move(first);
  m.name = std::move(binder);
  m.m2 = std::move(rest);
  return c;
}

inline CmdPtr call(std::string proc, ExprPtr arg, SourceSpan span = {}) {
  auto c = node(CmdKind::Call, std::move(span));
  auto& m = const_cast<Command&>(*c);
  m.name = std::move(proc);
  m.expr = std::move(arg);
  return c;
}

inline CmdPtr sample_recv(ExprPtr dist, std::string chan, SourceSpan span = {}) {
  auto c = node(CmdKind::SampleRecv, std::move(span));
  auto& m = const_cast<Command&>(*c);
  m.expr = std::move(dist);
  m.chan = std::move(chan);
  return c;
}

inline CmdPtr sample_send(ExprPtr dist, std::string chan, SourceSpan span = {}) {
  auto c = node(CmdKind::SampleSend, std::move(span));
  auto& m = const_cast<Command&>(*c);
  m.expr = std::move(dist);
  m.chan = std::move(chan);
  return c;
}

inline CmdPtr branch_recv(CmdPtr then_arm, CmdPtr else_arm, std::string chan, SourceSpan span = {}) {
  auto c = node(CmdKind::BranchRecv, std::move(span));
  auto& m = const_cast<Command&>(*c);
  m.m1 = std::move(then_arm);
  m.m2 = std::move(else_arm);
  m.chan = std::move(chan);
  return c;
}

inline CmdPtr branch_send(ExprPtr pred, CmdPtr then_arm, CmdPtr else_arm, std::string chan,
                          SourceSpan span = {}) {
  auto c = node(CmdKind::BranchSend, std::move(span));
  auto& m = const_cast<Command&>(*c);
  m.expr = std::move(pred);
  m.m1 = std::move(then_arm);
  m.m2 = std::move(else_arm);
  m.chan = std::move(chan);
  return c;
}

}  // namespace cmds

inline bool expr_equal(const ExprPtr& a, const ExprPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  if (a->kind != b->kind) return false;
  if (a->kids.size() != b->kids.size()) return false;
  switch (a->kind) {
    case ExprKind::Var:
    case ExprKind::Lambda:
    case ExprKind::Let:
      if (a->name != b->name) return false;
      break;
    case ExprKind::RealLit:
      if (a->real_value != b->real_value) return false;
      break;
    case ExprKind::NatLit:
      if (a->nat_value != b->nat_value) return false;
      break;
    case ExprKind::BinOp:
      if (a->op != b->op) return false;
      break;
    case ExprKind::Dist:
      if (a->dist != b->dist) return false;
      break;
    default:
      break;
  }
  if ((a->type || b->type) && !base_type_equal(a->type, b->type)) return false;
  for (std::size_t i = 0; i < a->kids.size(); ++i) {
    if (!expr_equal(a->kids[i], b->kids[i])) return false;
  }
  return true;
}

inline bool cmd_equal(const CmdPtr& a, const CmdPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  if (a->kind != b->kind || a->name != b->name || a->chan != b->chan) return false;
  if ((a->expr || b->expr) && !expr_equal(a->expr, b->expr)) return false;
  if ((a->m1 || b->m1) && !cmd_equal(a->m1, b->m1)) return false;
  if ((a->m2 || b->m2) && !cmd_equal(a->m2, b->m2)) return false;
  return true;
}

struct TypeDef {
  std::string op;     // operator name
  std::string param;  // type variable
  GuidePtr body;
  SourceSpan span;
};

struct ProcDecl {
  std::string name;
  std::string param;
  TypePtr arg_type;             // unit when the header has an empty parameter list
  TypePtr ret_type;             // null means "infer" (must resolve for recursion)
  std::optional<std::string> consume_chan;
  std::optional<std::string> provide_chan;
  CmdPtr body;
  SourceSpan span;
};

struct ProcSignature {
  TypePtr arg_type;
  TypePtr ret_type;
  // channel name paired with the type-operator name prescribing its protocol
  std::optional<std::pair<std::string, std::string>> consume_op;
  std::optional<std::pair<std::string, std::string>> provide_op;
};

struct Program {
  std::vector<TypeDef> typedefs;
  std::vector<ProcDecl> procs;

  const ProcDecl* find_proc(const std::string& name) const {
    for (const auto& p : procs)
      if (p.name == name) return &p;
    return nullptr;
  }
  const TypeDef* find_typedef(const std::string& op) const {
    for (const auto& d : typedefs)
      if (d.op == op) return &d;
    return nullptr;
  }
};

using TypeDefTable = std::vector<TypeDef>;

inline const TypeDef* find_typedef(const TypeDefTable& defs, const std::string& op) {
  for (const auto& d : defs)
    if (d.op == op) return &d;
  return nullptr;
}

bool guide_type_equal(const GuidePtr& a, const GuidePtr& b);

inline bool typedef_equal(const TypeDef& a, const TypeDef& b) {
  return a.op == b.op && a.param == b.param && guide_type_equal(a.body, b.body);
}

inline bool proc_equal(const ProcDecl& a, const ProcDecl& b) {
  return a.name == b.name && a.param == b.param && base_type_equal(a.arg_type, b.arg_type) &&
         ((!a.ret_type && !b.ret_type) ||
          (a.ret_type && b.ret_type && base_type_equal(a.ret_type, b.ret_type))) &&
         a.consume_chan == b.consume_chan && a.provide_chan == b.provide_chan &&
         cmd_equal(a.body, b.body);
}

inline bool program_equal(const Program& a, const Program& b) {
  if (a.typedefs.size() != b.typedefs.size() || a.procs.size() != b.procs.size()) return false;
  for (std::size_t i = 0; i < a.typedefs.size(); ++i)
    if (!typedef_equal(a.typedefs[i], b.typedefs[i])) return false;
  for (std::size_t i = 0; i < a.procs.size(); ++i)
    if (!proc_equal(a.procs[i], b.procs[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Structural validation
// ---------------------------------------------------------------------------

namespace detail {

inline void check_channels(const Command& m, const ProcDecl& proc, const Program& p,
                           std::vector<Diagnostic>& out) {
  auto known = [&](const std::string& c) {
    return (proc.consume_chan && *proc.consume_chan == c) ||
           (proc.provide_chan && *proc.provide_chan == c);
  };
  switch (m.kind) {
    case CmdKind::SampleRecv:
    case CmdKind::SampleSend:
    case CmdKind::BranchRecv:
    case CmdKind::BranchSend:
      if (!known(m.chan)) {
        out.push_back({m.span, proc.name,
                       "unknown channel '" + m.chan + "' (not in the procedure header)"});
      }
      break;
    case CmdKind::Call:
      if (!p.find_proc(m.name)) {
        out.push_back({m.span, proc.name, "call target '" + m.name + "' is not declared"});
      }
      break;
    default:
      break;
  }
  if (m.m1) check_channels(*m.m1, proc, p, out);
  if (m.m2) check_channels(*m.m2, proc, p, out);
}

}  // namespace detail

// Structural diagnostics only; empty result means the Program invariants hold.
inline std::vector<Diagnostic> validate_program(const Program& p) {
  std::vector<Diagnostic> out;
  std::set<std::string> proc_names;
  for (const auto& proc : p.procs) {
    if (!proc_names.insert(proc.name).second) {
      out.push_back({proc.span, proc.name, "duplicate procedure name"});
    }
    if (proc.consume_chan && proc.provide_chan && *proc.consume_chan == *proc.provide_chan) {
      out.push_back({proc.span, proc.name, "consumed and provided channels share a name"});
    }
    if (proc.body) detail::check_channels(*proc.body, proc, p, out);
  }
  std::set<std::string> ops;
  for (const auto& d : p.typedefs) {
    if (!ops.insert(d.op).second) {
      out.push_back({d.span, d.op, "duplicate type operator"});
    }
    auto fv = free_guide_vars(d.body);
    fv.erase(d.param);
    for (const auto& v : fv) {
      out.push_back({d.span, d.op, "type variable '" + v + "' is not the operator parameter"});
    }
  }
  return out;
}

}  // namespace gpp
