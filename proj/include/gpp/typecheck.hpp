#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gpp/distributions.hpp"
#include "gpp/ir.hpp"
#include "gpp/parser.hpp"
#include "gpp/source.hpp"

namespace gpp {

// ---------------------------------------------------------------------------
// Scalar subtyping
// ---------------------------------------------------------------------------

// Reflexive-transitive closure of ureal <= preal <= real and
// fin[m] <= fin[n] (m <= n) <= nat; arrows contra/co; dist and trace invariant.
inline bool subtype(const TypePtr& t1, const TypePtr& t2) {
  if (base_type_equal(t1, t2)) return true;
  if (!t1 || !t2) return false;
  switch (t2->kind) {
    case TypeKind::Real:
      return t1->kind == TypeKind::UnitReal || t1->kind == TypeKind::PosReal;
    case TypeKind::PosReal:
      return t1->kind == TypeKind::UnitReal;
    case TypeKind::Nat:
      return t1->kind == TypeKind::FinNat;
    case TypeKind::FinNat:
      return t1->kind == TypeKind::FinNat && t1->bound <= t2->bound;
    case TypeKind::Arrow:
      return t1->kind == TypeKind::Arrow && subtype(t2->t1, t1->t1) && subtype(t1->t2, t2->t2);
    default:
      return false;
  }
}

// Least upper bound within the scalar chains; null when none exists.
inline TypePtr join_types(const TypePtr& t1, const TypePtr& t2) {
  if (subtype(t1, t2)) return t2;
  if (subtype(t2, t1)) return t1;
  auto numeric_real = [](TypeKind k) {
    return k == TypeKind::UnitReal || k == TypeKind::PosReal || k == TypeKind::Real;
  };
  if (numeric_real(t1->kind) && numeric_real(t2->kind)) return types::real();
  if ((t1->kind == TypeKind::FinNat || t1->kind == TypeKind::Nat) &&
      (t2->kind == TypeKind::FinNat || t2->kind == TypeKind::Nat)) {
    if (t1->kind == TypeKind::FinNat && t2->kind == TypeKind::FinNat)
      return types::fin_nat(std::max(t1->bound, t2->bound));
    return types::nat();
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Typing context and signature table
// ---------------------------------------------------------------------------

class TypingContext {
public:
  TypingContext() = default;

  TypingContext bind(const std::string& name, TypePtr t) const {
    TypingContext out = *this;
    out.entries_.emplace_back(name, std::move(t));
    return out;
  }

  const TypePtr* lookup(const std::string& name) const {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->first == name) return &it->second;
    }
    return nullptr;
  }

private:
  std::vector<std::pair<std::string, TypePtr>> entries_;
};

using SignatureTable = std::map<std::string, ProcSignature>;

// ---------------------------------------------------------------------------
// Binary-operator table
// ---------------------------------------------------------------------------

struct BinOpEntry {
  TypePtr arg1, arg2, res;
};

// Overloads are tried in order; the first whose argument types admit the
// operands (by subtyping) wins. Mixed nat/real arithmetic promotes to real.
inline const std::vector<BinOpEntry>& binop_entries(BinOpKind op) {
  using namespace types;
  static const std::vector<BinOpEntry> add = {
      {nat(), nat(), nat()},
      {preal(), preal(), preal()},
      {real(), real(), real()},
      {nat(), real(), real()},
      {real(), nat(), real()},
  };
  static const std::vector<BinOpEntry> sub = {
      {real(), real(), real()},
      {nat(), nat(), real()},
      {nat(), real(), real()},
      {real(), nat(), real()},
  };
  static const std::vector<BinOpEntry> mul = {
      {nat(), nat(), nat()},
      {ureal(), ureal(), ureal()},
      {preal(), preal(), preal()},
      {real(), real(), real()},
      {nat(), real(), real()},
      {real(), nat(), real()},
  };
  static const std::vector<BinOpEntry> div = {
      {preal(), preal(), preal()},
      {real(), real(), real()},
      {nat(), nat(), real()},
      {nat(), real(), real()},
      {real(), nat(), real()},
  };
  static const std::vector<BinOpEntry> cmp = {
      {real(), real(), boolean()},
      {nat(), nat(), boolean()},
      {nat(), real(), boolean()},
      {real(), nat(), boolean()},
  };
  static const std::vector<BinOpEntry> eq = {
      {real(), real(), boolean()},
      {nat(), nat(), boolean()},
      {nat(), real(), boolean()},
      {real(), nat(), boolean()},
      {boolean(), boolean(), boolean()},
  };
  static const std::vector<BinOpEntry> logic = {
      {boolean(), boolean(), boolean()},
  };
  switch (op) {
    case BinOpKind::Add: return add;
    case BinOpKind::Sub: return sub;
    case BinOpKind::Mul: return mul;
    case BinOpKind::Div: return div;
    case BinOpKind::Lt:
    case BinOpKind::Le: return cmp;
    case BinOpKind::Eq: return eq;
    case BinOpKind::And:
    case BinOpKind::Or: return logic;
  }
  return logic;
}

inline const BinOpEntry* resolve_binop(BinOpKind op, const TypePtr& lhs, const TypePtr& rhs) {
  for (const auto& entry : binop_entries(op)) {
    if (subtype(lhs, entry.arg1) && subtype(rhs, entry.arg2)) return &entry;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Expression typing (forward pass; minimal types plus subsumption)
// ---------------------------------------------------------------------------

// Annotation well-formedness: distribution carriers must be scalar and
// first-class trace types may appear only where a procedure binds its
// proposal parameter.
inline void require_wf_type(const TypePtr& t, bool allow_trace, const SourceSpan& span) {
  if (!t) return;
  switch (t->kind) {
    case TypeKind::Dist:
      if (!t->t1 || !t->t1->is_scalar())
        throw TypeError(span, "distribution carrier must be a scalar type");
      break;
    case TypeKind::Arrow:
      require_wf_type(t->t1, false, span);
      require_wf_type(t->t2, false, span);
      break;
    case TypeKind::TraceOf:
      if (!allow_trace)
        throw TypeError(span, "trace types may only annotate procedure parameters");
      break;
    default:
      break;
  }
}

inline TypePtr minimal_real_type(double r) {
  if (r > 0.0 && r < 1.0) return types::ureal();
  if (r > 0.0) return types::preal();
  return types::real();
}

inline TypePtr minimal_nat_type(std::uint64_t n) {
  if (n == std::numeric_limits<std::uint64_t>::max()) return types::nat();
  return types::fin_nat(n + 1);
}

inline TypePtr type_of_expr(const TypingContext& ctx, const ExprPtr& e);

namespace detail {

inline TypePtr require_dist_param(const TypingContext& ctx, const ExprPtr& arg,
                                  const TypePtr& want, const char* family, const char* role) {
  TypePtr t = type_of_expr(ctx, arg);
  if (!subtype(t, want)) {
    throw TypeError(arg->span, std::string(family) + " " + role + " must be " +
                                   format_base_type(want) + ", got " + format_base_type(t));
  }
  return t;
}

}  // namespace detail

inline TypePtr type_of_expr(const TypingContext& ctx, const ExprPtr& e) {
  switch (e->kind) {
    case ExprKind::Var: {
      const TypePtr* t = ctx.lookup(e->name);
      if (!t) throw TypeError(e->span, "unbound variable '" + e->name + "'");
      return *t;
    }
    case ExprKind::Triv:
      return types::unit();
    case ExprKind::True:
    case ExprKind::False:
      return types::boolean();
    case ExprKind::RealLit:
      return minimal_real_type(e->real_value);
    case ExprKind::NatLit:
      return minimal_nat_type(e->nat_value);
    case ExprKind::Cond: {
      TypePtr c = type_of_expr(ctx, e->kids[0]);
      if (c->kind != TypeKind::Bool)
        throw TypeError(e->kids[0]->span,
                        "condition must be bool, got " + format_base_type(c));
      TypePtr t = type_of_expr(ctx, e->kids[1]);
      TypePtr f = type_of_expr(ctx, e->kids[2]);
      TypePtr j = join_types(t, f);
      if (!j)
        throw TypeError(e->span, "conditional arms have incompatible types " +
                                     format_base_type(t) + " and " + format_base_type(f));
      return j;
    }
    case ExprKind::BinOp: {
      TypePtr l = type_of_expr(ctx, e->kids[0]);
      TypePtr r = type_of_expr(ctx, e->kids[1]);
      const BinOpEntry* entry = resolve_binop(e->op, l, r);
      if (!entry)
        throw TypeError(e->span, std::string("operator '") + binop_name(e->op) +
                                     "' does not apply to " + format_base_type(l) + " and " +
                                     format_base_type(r));
      return entry->res;
    }
    case ExprKind::Lambda: {
      require_wf_type(e->type, false, e->span);
      TypePtr body = type_of_expr(ctx.bind(e->name, e->type), e->kids[0]);
      return types::arrow(e->type, body);
    }
    case ExprKind::App: {
      TypePtr fn = type_of_expr(ctx, e->kids[0]);
      if (fn->kind != TypeKind::Arrow)
        throw TypeError(e->kids[0]->span,
                        "application head must be a function, got " + format_base_type(fn));
      TypePtr arg = type_of_expr(ctx, e->kids[1]);
      if (!subtype(arg, fn->t1))
        throw TypeError(e->kids[1]->span, "argument type " + format_base_type(arg) +
                                              " does not match parameter type " +
                                              format_base_type(fn->t1));
      return fn->t2;
    }
    case ExprKind::Let: {
      TypePtr bound = type_of_expr(ctx, e->kids[0]);
      return type_of_expr(ctx.bind(e->name, bound), e->kids[1]);
    }
    case ExprKind::Dist: {
      using detail::require_dist_param;
      switch (e->dist) {
        case DistKind::Ber:
          require_dist_param(ctx, e->kids[0], types::ureal(), "ber", "probability");
          return types::dist(types::boolean());
        case DistKind::Unif:
          return types::dist(types::ureal());
        case DistKind::Beta:
          require_dist_param(ctx, e->kids[0], types::preal(), "beta", "shape a");
          require_dist_param(ctx, e->kids[1], types::preal(), "beta", "shape b");
          return types::dist(types::ureal());
        case DistKind::Gamma:
          require_dist_param(ctx, e->kids[0], types::preal(), "gamma", "shape");
          require_dist_param(ctx, e->kids[1], types::preal(), "gamma", "rate");
          return types::dist(types::preal());
        case DistKind::Normal:
          require_dist_param(ctx, e->kids[0], types::real(), "normal", "mean");
          require_dist_param(ctx, e->kids[1], types::preal(), "normal", "stddev");
          return types::dist(types::real());
        case DistKind::Cat:
          for (const auto& k : e->kids)
            require_dist_param(ctx, k, types::preal(), "cat", "weight");
          return types::dist(types::fin_nat(e->kids.size()));
        case DistKind::Geo:
          require_dist_param(ctx, e->kids[0], types::ureal(), "geo", "probability");
          return types::dist(types::nat());
        case DistKind::Pois:
          require_dist_param(ctx, e->kids[0], types::preal(), "pois", "rate");
          return types::dist(types::nat());
      }
      return nullptr;
    }
    case ExprKind::TraceGet: {
      if (!e->type || !e->type->is_scalar())
        throw TypeError(e->span, "trace-get annotation must be a scalar type");
      TypePtr t = type_of_expr(ctx, e->kids[0]);
      if (t->kind != TypeKind::TraceOf)
        throw TypeError(e->kids[0]->span,
                        "trace-get subject must be a trace, got " + format_base_type(t));
      TypePtr i = type_of_expr(ctx, e->kids[1]);
      if (!subtype(i, types::nat()))
        throw TypeError(e->kids[1]->span,
                        "trace-get index must be a natural, got " + format_base_type(i));
      return e->type;  // the position is checked at runtime
    }
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Value and trace typing
// ---------------------------------------------------------------------------

bool check_value(const Value& v, const TypePtr& t, const TypeDefTable& defs);

inline bool check_trace(const GuidanceTrace& s, const GuidePtr& a, const TypeDefTable& defs);

namespace detail {

inline TypePtr minimal_value_type(const Value& v) {
  switch (v.kind()) {
    case ValueKind::Triv: return types::unit();
    case ValueKind::Bool: return types::boolean();
    case ValueKind::Real: return minimal_real_type(v.as_real());
    case ValueKind::Nat: return minimal_nat_type(v.as_nat());
    case ValueKind::Dist: return types::dist(result_type(v.as_dist()));
    case ValueKind::Trace: return types::trace_of(guides::end());  // protocol not inferable
    case ValueKind::Closure: {
      const auto& c = v.as_closure();
      TypingContext ctx;
      for (const auto& [name, val] : c.env.snapshot()) ctx = ctx.bind(name, minimal_value_type(val));
      return types::arrow(c.param_type, type_of_expr(ctx.bind(c.param, c.param_type), c.body));
    }
  }
  return nullptr;
}

// σ : A with an explicit cursor; the derivation must consume the whole trace.
inline bool check_trace_from(const std::vector<Message>& msgs, std::size_t idx, const GuidePtr& a,
                             const TypeDefTable& defs, std::size_t* consumed) {
  switch (a->kind) {
    case GuideKind::End:
      *consumed = idx;
      return true;
    case GuideKind::Var:
      return false;  // open type: no trace inhabits a bare variable
    case GuideKind::SampleP:
    case GuideKind::SampleC: {
      if (idx >= msgs.size()) return false;
      const Message& m = msgs[idx];
      MsgKind want = a->kind == GuideKind::SampleP ? MsgKind::PSample : MsgKind::CSample;
      if (m.kind != want) return false;
      if (!check_value(m.value, a->carrier, defs)) return false;
      return check_trace_from(msgs, idx + 1, a->g1, defs, consumed);
    }
    case GuideKind::ChoiceP:
    case GuideKind::ChoiceC: {
      if (idx >= msgs.size()) return false;
      const Message& m = msgs[idx];
      MsgKind want = a->kind == GuideKind::ChoiceP ? MsgKind::PBranch : MsgKind::CBranch;
      if (m.kind != want || m.value.kind() != ValueKind::Bool) return false;
      const GuidePtr& arm = m.value.as_bool() ? a->g1 : a->g2;
      return check_trace_from(msgs, idx + 1, arm, defs, consumed);
    }
    case GuideKind::OpApp: {
      const TypeDef* def = find_typedef(defs, a->name);
      if (!def) throw TypeError({}, "unknown type operator '" + a->name + "'");
      if (idx >= msgs.size() || msgs[idx].kind != MsgKind::Fold) return false;
      GuidePtr unfolded = subst_guide(def->body, def->param, a->g1);
      return check_trace_from(msgs, idx + 1, unfolded, defs, consumed);
    }
  }
  return false;
}

}  // namespace detail

inline bool check_trace(const GuidanceTrace& s, const GuidePtr& a, const TypeDefTable& defs) {
  std::size_t consumed = 0;
  if (!detail::check_trace_from(s.messages, 0, a, defs, &consumed)) return false;
  return consumed == s.messages.size();
}

inline bool check_value(const Value& v, const TypePtr& t, const TypeDefTable& defs) {
  if (!t) return false;
  if (t->is_scalar()) return value_inhabits_scalar(v, *t);
  switch (t->kind) {
    case TypeKind::Dist:
      return v.kind() == ValueKind::Dist && base_type_equal(result_type(v.as_dist()), t->t1);
    case TypeKind::TraceOf:
      return v.kind() == ValueKind::Trace && check_trace(v.as_trace(), t->protocol, defs);
    case TypeKind::Arrow: {
      if (v.kind() != ValueKind::Closure) return false;
      try {
        return subtype(detail::minimal_value_type(v), t);
      } catch (const TypeError&) {
        return false;
      }
    }
    default:
      return false;
  }
}

inline bool check_value(const Value& v, const TypePtr& t) { return check_value(v, t, {}); }

// ---------------------------------------------------------------------------
// Command typing: forward basic-type pass
// ---------------------------------------------------------------------------

inline TypePtr base_type_of_cmd(const SignatureTable& sigs, const TypingContext& ctx,
                                const CmdPtr& m) {
  switch (m->kind) {
    case CmdKind::Ret:
      return type_of_expr(ctx, m->expr);
    case CmdKind::Bnd: {
      TypePtr t1 = base_type_of_cmd(sigs, ctx, m->m1);
      return base_type_of_cmd(sigs, ctx.bind(m->name, t1), m->m2);
    }
    case CmdKind::Call: {
      auto it = sigs.find(m->name);
      if (it == sigs.end())
        throw TypeError(m->span, "call target '" + m->name + "' has no signature");
      const ProcSignature& sig = it->second;
      TypePtr arg = type_of_expr(ctx, m->expr);
      if (!subtype(arg, sig.arg_type))
        throw TypeError(m->expr->span, "argument type " + format_base_type(arg) +
                                           " does not match parameter type " +
                                           format_base_type(sig.arg_type) + " of '" + m->name +
                                           "'");
      if (!sig.ret_type)
        throw TypeError(m->span, "return type of '" + m->name +
                                     "' is not yet known; annotate the procedure header");
      return sig.ret_type;
    }
    case CmdKind::SampleRecv:
    case CmdKind::SampleSend: {
      TypePtr d = type_of_expr(ctx, m->expr);
      if (d->kind != TypeKind::Dist)
        throw TypeError(m->expr->span,
                        "sample argument must be a distribution, got " + format_base_type(d));
      return d->t1;
    }
    case CmdKind::BranchSend: {
      TypePtr p = type_of_expr(ctx, m->expr);
      if (p->kind != TypeKind::Bool)
        throw TypeError(m->expr->span,
                        "branch predicate must be bool, got " + format_base_type(p));
      [[fallthrough]];
    }
    case CmdKind::BranchRecv: {
      TypePtr t1 = base_type_of_cmd(sigs, ctx, m->m1);
      TypePtr t2 = base_type_of_cmd(sigs, ctx, m->m2);
      TypePtr j = join_types(t1, t2);
      if (!j)
        throw TypeError(m->span, "branch arms have incompatible types " + format_base_type(t1) +
                                     " and " + format_base_type(t2));
      return j;
    }
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Backward guide-type inference for commands
// ---------------------------------------------------------------------------

struct ChannelPair {
  GuidePtr a;  // consumed channel
  GuidePtr b;  // provided channel
};

inline ChannelPair infer_cmd_pre(const SignatureTable& sigs, const TypingContext& ctx,
                                 const CmdPtr& m, const std::optional<std::string>& a,
                                 const std::optional<std::string>& b, const GuidePtr& a_post,
                                 const GuidePtr& b_post) {
  auto on_consumed = [&](const std::string& chan) { return a && *a == chan; };
  auto on_provided = [&](const std::string& chan) { return b && *b == chan; };

  switch (m->kind) {
    case CmdKind::Ret:
      type_of_expr(ctx, m->expr);
      return {a_post, b_post};

    case CmdKind::Bnd: {
      TypePtr t1 = base_type_of_cmd(sigs, ctx, m->m1);
      ChannelPair mid = infer_cmd_pre(sigs, ctx.bind(m->name, t1), m->m2, a, b, a_post, b_post);
      return infer_cmd_pre(sigs, ctx, m->m1, a, b, mid.a, mid.b);
    }

    case CmdKind::SampleRecv: {
      TypePtr d = type_of_expr(ctx, m->expr);
      if (d->kind != TypeKind::Dist)
        throw TypeError(m->expr->span,
                        "sample argument must be a distribution, got " + format_base_type(d));
      if (on_consumed(m->chan)) return {guides::sample_p(d->t1, a_post), b_post};
      if (on_provided(m->chan))
        throw TypeError(m->span,
                        "receive-sample on the provided channel would need a dual protocol; "
                        "no surface command produces one");
      throw TypeError(m->span, "sample on absent channel '" + m->chan + "'");
    }

    case CmdKind::SampleSend: {
      TypePtr d = type_of_expr(ctx, m->expr);
      if (d->kind != TypeKind::Dist)
        throw TypeError(m->expr->span,
                        "sample argument must be a distribution, got " + format_base_type(d));
      if (on_provided(m->chan)) return {a_post, guides::sample_p(d->t1, b_post)};
      if (on_consumed(m->chan))
        throw TypeError(m->span,
                        "send-sample on the consumed channel would need a dual protocol; "
                        "no surface command produces one");
      throw TypeError(m->span, "sample on absent channel '" + m->chan + "'");
    }

    case CmdKind::BranchSend: {
      TypePtr p = type_of_expr(ctx, m->expr);
      if (p->kind != TypeKind::Bool)
        throw TypeError(m->expr->span,
                        "branch predicate must be bool, got " + format_base_type(p));
      if (!on_consumed(m->chan)) {
        if (on_provided(m->chan))
          throw TypeError(m->span,
                          "branch-send on the provided channel would need a dual protocol; "
                          "no surface command produces one");
        throw TypeError(m->span, "branch on absent channel '" + m->chan + "'");
      }
      ChannelPair arm1 = infer_cmd_pre(sigs, ctx, m->m1, a, b, a_post, b_post);
      ChannelPair arm2 = infer_cmd_pre(sigs, ctx, m->m2, a, b, a_post, b_post);
      if (!guide_type_equal(arm1.b, arm2.b))
        throw TypeError(m->span, "branch arms disagree on the provided channel: " +
                                     format_guide_type(arm1.b) + " vs " +
                                     format_guide_type(arm2.b));
      return {guides::choice_c(arm1.a, arm2.a), arm1.b};
    }

    case CmdKind::BranchRecv: {
      if (!on_provided(m->chan)) {
        if (on_consumed(m->chan))
          throw TypeError(m->span,
                          "branch-receive on the consumed channel would need a dual protocol; "
                          "no surface command produces one");
        throw TypeError(m->span, "branch on absent channel '" + m->chan + "'");
      }
      ChannelPair arm1 = infer_cmd_pre(sigs, ctx, m->m1, a, b, a_post, b_post);
      ChannelPair arm2 = infer_cmd_pre(sigs, ctx, m->m2, a, b, a_post, b_post);
      if (!guide_type_equal(arm1.a, arm2.a))
        throw TypeError(m->span, "branch arms disagree on the consumed channel: " +
                                     format_guide_type(arm1.a) + " vs " +
                                     format_guide_type(arm2.a));
      return {arm1.a, guides::choice_c(arm1.b, arm2.b)};
    }

    case CmdKind::Call: {
      auto it = sigs.find(m->name);
      if (it == sigs.end())
        throw TypeError(m->span, "call target '" + m->name + "' has no signature");
      const ProcSignature& sig = it->second;
      TypePtr arg = type_of_expr(ctx, m->expr);
      if (!subtype(arg, sig.arg_type))
        throw TypeError(m->expr->span, "argument type " + format_base_type(arg) +
                                           " does not match parameter type " +
                                           format_base_type(sig.arg_type) + " of '" + m->name +
                                           "'");
      GuidePtr a_pre = a_post;
      GuidePtr b_pre = b_post;
      if (sig.consume_op) {
        if (!a)
          throw TypeError(m->span, "'" + m->name +
                                       "' consumes a channel but the caller declares none");
        a_pre = guides::op_app(sig.consume_op->second, a_post);
      }
      if (sig.provide_op) {
        if (!b)
          throw TypeError(m->span, "'" + m->name +
                                       "' provides a channel but the caller declares none");
        b_pre = guides::op_app(sig.provide_op->second, b_post);
      }
      return {a_pre, b_pre};
    }
  }
  return {a_post, b_post};
}

// ---------------------------------------------------------------------------
// Whole-program inference
// ---------------------------------------------------------------------------

struct InferredTypes {
  SignatureTable signatures;
  TypeDefTable typedefs;  // program-declared operators plus the inferred ones
};

// Creates one fresh operator per declared channel, resolves basic return
// types (annotations are required only for recursion), and records a typedef
// with the procedure body's backward-derived pre-type.
inline InferredTypes infer_program_types(const Program& p,
                                         const TypingContext& ambient = {}) {
  auto diags = validate_program(p);
  if (!diags.empty()) throw TypeError(diags.front().span, diags.front().str());

  InferredTypes out;
  out.typedefs = p.typedefs;

  std::set<std::string> used_ops;
  for (const auto& d : p.typedefs) used_ops.insert(d.op);
  auto fresh_op = [&used_ops](const std::string& base) {
    std::string name = base;
    int i = 1;
    while (used_ops.count(name)) name = base + "_" + std::to_string(++i);
    used_ops.insert(name);
    return name;
  };

  for (const auto& proc : p.procs) {
    require_wf_type(proc.arg_type, /*allow_trace=*/true, proc.span);
    require_wf_type(proc.ret_type, /*allow_trace=*/false, proc.span);
    ProcSignature sig;
    sig.arg_type = proc.arg_type;
    sig.ret_type = proc.ret_type;  // may be null for now
    if (proc.consume_chan)
      sig.consume_op = {*proc.consume_chan, fresh_op(proc.name + "_" + *proc.consume_chan)};
    if (proc.provide_chan)
      sig.provide_op = {*proc.provide_chan, fresh_op(proc.name + "_" + *proc.provide_chan)};
    out.signatures.emplace(proc.name, std::move(sig));
  }

  // Resolve unannotated return types by forward passes until a fixpoint.
  for (bool progress = true; progress;) {
    progress = false;
    for (const auto& proc : p.procs) {
      ProcSignature& sig = out.signatures.at(proc.name);
      if (sig.ret_type) continue;
      try {
        sig.ret_type =
            base_type_of_cmd(out.signatures, ambient.bind(proc.param, proc.arg_type), proc.body);
        progress = true;
      } catch (const TypeError&) {
        // try again once callees are resolved
      }
    }
  }

  for (const auto& proc : p.procs) {
    const ProcSignature& sig = out.signatures.at(proc.name);
    TypingContext ctx = ambient.bind(proc.param, proc.arg_type);
    TypePtr body_type;
    try {
      body_type = base_type_of_cmd(out.signatures, ctx, proc.body);
    } catch (TypeError& err) {
      throw TypeError(err.span, err.message, proc.name);
    }
    if (!sig.ret_type)
      throw TypeError(proc.span,
                      "cannot resolve the return type of a recursive procedure; annotate it",
                      proc.name);
    if (!subtype(body_type, sig.ret_type))
      throw TypeError(proc.span, "body type " + format_base_type(body_type) +
                                     " does not match declared return type " +
                                     format_base_type(sig.ret_type),
                      proc.name);

    GuidePtr a_post = guides::var("X");
    GuidePtr b_post = guides::var("Y");
    ChannelPair pre;
    try {
      pre = infer_cmd_pre(out.signatures, ctx, proc.body, proc.consume_chan, proc.provide_chan,
                          a_post, b_post);
    } catch (TypeError& err) {
      throw TypeError(err.span, err.message, proc.name);
    }
    if (sig.consume_op)
      out.typedefs.push_back({sig.consume_op->second, "X", pre.a, proc.span});
    if (sig.provide_op)
      out.typedefs.push_back({sig.provide_op->second, "Y", pre.b, proc.span});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Freeness of choice constructors
// ---------------------------------------------------------------------------

namespace detail {

inline bool guide_free_of(const GuidePtr& g, GuideKind bad, const TypeDefTable& defs,
                          std::set<std::string>& visited) {
  if (!g) return true;
  if (g->kind == bad) return false;
  switch (g->kind) {
    case GuideKind::OpApp: {
      if (!visited.insert(g->name).second) return guide_free_of(g->g1, bad, defs, visited);
      const TypeDef* def = find_typedef(defs, g->name);
      if (!def) throw TypeError({}, "unknown type operator '" + g->name + "'");
      return guide_free_of(def->body, bad, defs, visited) &&
             guide_free_of(g->g1, bad, defs, visited);
    }
    default:
      return guide_free_of(g->g1, bad, defs, visited) &&
             guide_free_of(g->g2, bad, defs, visited);
  }
}

}  // namespace detail

inline bool is_oplus_free(const GuidePtr& g, const TypeDefTable& defs = {}) {
  std::set<std::string> visited;
  return detail::guide_free_of(g, GuideKind::ChoiceP, defs, visited);
}

inline bool is_amp_free(const GuidePtr& g, const TypeDefTable& defs = {}) {
  std::set<std::string> visited;
  return detail::guide_free_of(g, GuideKind::ChoiceC, defs, visited);
}

// ---------------------------------------------------------------------------
// Model/guide compatibility
// ---------------------------------------------------------------------------

// Equality up to a consistent renaming of operators and type variables;
// operator bodies are compared once per (left, right) pair.
namespace detail {

struct RenameState {
  std::map<std::string, std::string> ops;   // left op -> right op
  std::map<std::string, std::string> vars;  // left var -> right var
  std::set<std::pair<std::string, std::string>> assumed;
  std::string mismatch;
};

inline bool guide_equal_upto(const GuidePtr& a, const TypeDefTable& defs_a, const GuidePtr& b,
                             const TypeDefTable& defs_b, RenameState& st) {
  if (!a || !b) return a == b;
  if (a->kind != b->kind) {
    st.mismatch = "protocol shape mismatch: " + format_guide_type(a) + " vs " +
                  format_guide_type(b);
    return false;
  }
  switch (a->kind) {
    case GuideKind::End:
      return true;
    case GuideKind::Var: {
      auto it = st.vars.find(a->name);
      if (it != st.vars.end()) {
        if (it->second != b->name) {
          st.mismatch = "type variables diverge: " + a->name + " vs " + b->name;
          return false;
        }
        return true;
      }
      st.vars.emplace(a->name, b->name);
      return true;
    }
    case GuideKind::SampleP:
    case GuideKind::SampleC:
      if (!base_type_equal(a->carrier, b->carrier)) {
        st.mismatch = "carrier mismatch: " + format_base_type(a->carrier) + " vs " +
                      format_base_type(b->carrier);
        return false;
      }
      return guide_equal_upto(a->g1, defs_a, b->g1, defs_b, st);
    case GuideKind::ChoiceP:
    case GuideKind::ChoiceC:
      return guide_equal_upto(a->g1, defs_a, b->g1, defs_b, st) &&
             guide_equal_upto(a->g2, defs_a, b->g2, defs_b, st);
    case GuideKind::OpApp: {
      auto it = st.ops.find(a->name);
      if (it != st.ops.end() && it->second != b->name) {
        st.mismatch = "operators diverge: " + a->name + " vs " + b->name;
        return false;
      }
      if (it == st.ops.end()) st.ops.emplace(a->name, b->name);
      if (st.assumed.insert({a->name, b->name}).second) {
        const TypeDef* da = find_typedef(defs_a, a->name);
        const TypeDef* db = find_typedef(defs_b, b->name);
        if (!da || !db) throw TypeError({}, "unknown type operator in comparison");
        auto saved_vars = st.vars;
        st.vars.emplace(da->param, db->param);
        if (!guide_equal_upto(da->body, defs_a, db->body, defs_b, st)) return false;
        st.vars = std::move(saved_vars);
      }
      return guide_equal_upto(a->g1, defs_a, b->g1, defs_b, st);
    }
  }
  return false;
}

}  // namespace detail

inline bool guide_type_equal_upto_renaming(const GuidePtr& a, const TypeDefTable& defs_a,
                                           const GuidePtr& b, const TypeDefTable& defs_b,
                                           std::string* mismatch = nullptr) {
  detail::RenameState st;
  bool ok = detail::guide_equal_upto(a, defs_a, b, defs_b, st);
  if (!ok && mismatch) *mismatch = st.mismatch;
  return ok;
}

class CompatError : public Error {
public:
  using Error::Error;
};

struct CompatReport {
  std::string channel;   // shared latent channel
  GuidePtr latent_type;  // A, from the guide's provided protocol
  GuidePtr obs_type;     // B, from the model's provided protocol (End if absent)
  TypeDefTable typedefs; // context for the two types
  bool oplus_free_a = false;
  bool amp_free_b = false;
  bool types_agree = false;
  bool accept = false;
  std::string detail;

  std::string verdict() const { return accept ? "accept" : "reject"; }
};

inline CompatReport check_model_guide(const Program& p, const std::string& model_name,
                                      const std::string& guide_name,
                                      const TypingContext& ambient = {}) {
  const ProcDecl* model = p.find_proc(model_name);
  const ProcDecl* guide = p.find_proc(guide_name);
  if (!model) throw CompatError("model procedure '" + model_name + "' not found");
  if (!guide) throw CompatError("guide procedure '" + guide_name + "' not found");
  if (!guide->provide_chan)
    throw CompatError("guide '" + guide_name + "' does not provide a channel");
  if (!model->consume_chan)
    throw CompatError("model '" + model_name + "' does not consume a channel");
  if (*guide->provide_chan != *model->consume_chan)
    throw CompatError("channel mismatch: guide provides '" + *guide->provide_chan +
                      "' but model consumes '" + *model->consume_chan + "'");

  CompatReport report;
  report.channel = *model->consume_chan;

  InferredTypes inferred = infer_program_types(p, ambient);
  report.typedefs = inferred.typedefs;

  if (guide->consume_chan) {
    report.detail = "guide must not consume a channel";
    return report;
  }

  auto instantiated = [&](const std::pair<std::string, std::string>& chan_op) {
    const TypeDef* def = find_typedef(inferred.typedefs, chan_op.second);
    return subst_guide(def->body, def->param, guides::end());
  };

  report.latent_type = instantiated(*inferred.signatures.at(guide_name).provide_op);
  GuidePtr model_latent = instantiated(*inferred.signatures.at(model_name).consume_op);
  const auto& model_sig = inferred.signatures.at(model_name);
  report.obs_type =
      model_sig.provide_op ? instantiated(*model_sig.provide_op) : guides::end();

  std::string mismatch;
  report.types_agree = guide_type_equal_upto_renaming(
      report.latent_type, inferred.typedefs, model_latent, inferred.typedefs, &mismatch);
  if (!report.types_agree)
    report.detail = "latent protocols disagree: " + mismatch;

  report.oplus_free_a = is_oplus_free(report.latent_type, inferred.typedefs);
  report.amp_free_b = is_amp_free(report.obs_type, inferred.typedefs);
  if (report.types_agree) {
    if (!report.oplus_free_a)
      report.detail = "latent protocol contains a provider choice ((+))";
    else if (!report.amp_free_b)
      report.detail = "observation protocol contains a consumer choice (&)";
  }

  report.accept = report.types_agree && report.oplus_free_a && report.amp_free_b;
  return report;
}

}  // namespace gpp
