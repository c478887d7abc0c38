#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gpp/distributions.hpp"
#include "gpp/ir.hpp"
#include "gpp/parser.hpp"
#include "gpp/rng.hpp"
#include "gpp/source.hpp"
#include "gpp/weight.hpp"

namespace gpp {

inline std::string format_value(const Value& v) {
  switch (v.kind()) {
    case ValueKind::Triv: return "()";
    case ValueKind::Bool: return v.as_bool() ? "true" : "false";
    case ValueKind::Real: return format_real(v.as_real());
    case ValueKind::Nat: return std::to_string(v.as_nat());
    case ValueKind::Closure: return "<closure>";
    case ValueKind::Dist: {
      std::string s = dist_name(v.as_dist().kind);
      s += "(";
      for (std::size_t i = 0; i < v.as_dist().params.size(); ++i) {
        if (i) s += ", ";
        s += format_real(v.as_dist().params[i]);
      }
      return s + ")";
    }
    case ValueKind::Trace: {
      std::string s = "[";
      for (std::size_t i = 0; i < v.as_trace().size(); ++i) {
        if (i) s += ", ";
        const Message& m = v.as_trace().messages[i];
        s += msg_kind_name(m.kind);
        if (m.kind != MsgKind::Fold) s += " " + format_value(m.value);
      }
      return s + "]";
    }
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Expression evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline double value_as_number(const Value& v, const SourceSpan& span, const char* what) {
  if (v.kind() == ValueKind::Real) return v.as_real();
  if (v.kind() == ValueKind::Nat) return static_cast<double>(v.as_nat());
  throw EvalError(span.str() + ": " + what + " must be numeric, got " + format_value(v));
}

inline Value eval_binop(BinOpKind op, const Value& l, const Value& r, const SourceSpan& span) {
  bool both_nat = l.kind() == ValueKind::Nat && r.kind() == ValueKind::Nat;
  switch (op) {
    case BinOpKind::Add:
      if (both_nat) return Value::nat(l.as_nat() + r.as_nat());
      return Value::real(value_as_number(l, span, "operand") + value_as_number(r, span, "operand"));
    case BinOpKind::Mul:
      if (both_nat) return Value::nat(l.as_nat() * r.as_nat());
      return Value::real(value_as_number(l, span, "operand") * value_as_number(r, span, "operand"));
    case BinOpKind::Sub:
      return Value::real(value_as_number(l, span, "operand") - value_as_number(r, span, "operand"));
    case BinOpKind::Div:
      return Value::real(value_as_number(l, span, "operand") / value_as_number(r, span, "operand"));
    case BinOpKind::Lt:
      if (both_nat) return Value::boolean(l.as_nat() < r.as_nat());
      return Value::boolean(value_as_number(l, span, "operand") < value_as_number(r, span, "operand"));
    case BinOpKind::Le:
      if (both_nat) return Value::boolean(l.as_nat() <= r.as_nat());
      return Value::boolean(value_as_number(l, span, "operand") <=
                            value_as_number(r, span, "operand"));
    case BinOpKind::Eq:
      if (l.kind() == ValueKind::Bool && r.kind() == ValueKind::Bool)
        return Value::boolean(l.as_bool() == r.as_bool());
      if (both_nat) return Value::boolean(l.as_nat() == r.as_nat());
      return Value::boolean(value_as_number(l, span, "operand") ==
                            value_as_number(r, span, "operand"));
    case BinOpKind::And:
    case BinOpKind::Or: {
      if (l.kind() != ValueKind::Bool || r.kind() != ValueKind::Bool)
        throw EvalError(span.str() + ": logical operands must be bool");
      return Value::boolean(op == BinOpKind::And ? (l.as_bool() && r.as_bool())
                                                 : (l.as_bool() || r.as_bool()));
    }
  }
  return Value::triv();
}

}  // namespace detail

inline Value eval_expr(const Env& env, const ExprPtr& e) {
  switch (e->kind) {
    case ExprKind::Var: {
      const Value* v = env.lookup(e->name);
      if (!v) throw EvalError(e->span.str() + ": unbound variable '" + e->name + "'");
      return *v;
    }
    case ExprKind::Triv:
      return Value::triv();
    case ExprKind::True:
      return Value::boolean(true);
    case ExprKind::False:
      return Value::boolean(false);
    case ExprKind::RealLit:
      return Value::real(e->real_value);
    case ExprKind::NatLit:
      return Value::nat(e->nat_value);
    case ExprKind::Cond: {
      Value c = eval_expr(env, e->kids[0]);
      if (c.kind() != ValueKind::Bool)
        throw EvalError(e->kids[0]->span.str() + ": condition must be bool");
      return eval_expr(env, e->kids[c.as_bool() ? 1 : 2]);
    }
    case ExprKind::BinOp:
      return detail::eval_binop(e->op, eval_expr(env, e->kids[0]), eval_expr(env, e->kids[1]),
                                e->span);
    case ExprKind::Lambda: {
      auto c = std::make_shared<ClosureData>();
      c->env = env;
      c->param = e->name;
      c->param_type = e->type;
      c->body = e->kids[0];
      return Value::closure(std::move(c));
    }
    case ExprKind::App: {
      Value fn = eval_expr(env, e->kids[0]);
      if (fn.kind() != ValueKind::Closure)
        throw EvalError(e->kids[0]->span.str() + ": application head is not a function");
      Value arg = eval_expr(env, e->kids[1]);
      const ClosureData& c = fn.as_closure();
      return eval_expr(c.env.bind(c.param, std::move(arg)), c.body);
    }
    case ExprKind::Let: {
      Value bound = eval_expr(env, e->kids[0]);
      return eval_expr(env.bind(e->name, std::move(bound)), e->kids[1]);
    }
    case ExprKind::Dist: {
      std::vector<double> params;
      params.reserve(e->kids.size());
      for (const auto& k : e->kids)
        params.push_back(detail::value_as_number(eval_expr(env, k), k->span, "parameter"));
      try {
        return Value::dist(make_dist(e->dist, std::move(params)));
      } catch (const EvalError& err) {
        throw EvalError(e->span.str() + ": " + err.what());
      }
    }
    case ExprKind::TraceGet: {
      Value t = eval_expr(env, e->kids[0]);
      if (t.kind() != ValueKind::Trace)
        throw EvalError(e->kids[0]->span.str() + ": trace-get subject is not a trace");
      Value i = eval_expr(env, e->kids[1]);
      if (i.kind() != ValueKind::Nat)
        throw EvalError(e->kids[1]->span.str() + ": trace-get index is not a natural");
      const GuidanceTrace& tr = t.as_trace();
      if (i.as_nat() >= tr.size())
        throw EvalError(e->span.str() + ": trace-get index " + std::to_string(i.as_nat()) +
                        " out of bounds for trace of length " + std::to_string(tr.size()));
      const Message& msg = tr.messages[i.as_nat()];
      if (msg.kind == MsgKind::Fold)
        throw EvalError(e->span.str() + ": trace position " + std::to_string(i.as_nat()) +
                        " holds a fold marker, not a value");
      if (!value_inhabits_scalar(msg.value, *e->type))
        throw EvalError(e->span.str() + ": trace value " + format_value(msg.value) +
                        " does not inhabit " + format_base_type(e->type));
      return msg.value;
    }
  }
  return Value::triv();
}

// ---------------------------------------------------------------------------
// Trace-scored command evaluation (the weighted big-step semantics)
// ---------------------------------------------------------------------------

struct EvalResult {
  LogWeight weight;
  Value value;
};

namespace detail {

struct Cursor {
  const std::vector<Message>* msgs = nullptr;  // null when the channel is absent
  std::size_t pos = 0;
  std::string name;  // for error reports

  bool absent() const { return msgs == nullptr; }
  bool exhausted() const { return absent() || pos >= msgs->size(); }
  std::size_t remaining() const { return absent() ? 0 : msgs->size() - pos; }
};

[[noreturn]] inline void mismatch(const Cursor& c, const std::string& reason) {
  throw TraceMismatchError(reason, c.name, c.pos);
}

inline const Message& take_message(Cursor& c, MsgKind want) {
  if (c.absent()) mismatch(c, std::string("needs a ") + msg_kind_name(want) +
                                  " but the channel is absent");
  if (c.pos >= c.msgs->size())
    mismatch(c, std::string("needs a ") + msg_kind_name(want) + " but the trace is exhausted");
  const Message& m = (*c.msgs)[c.pos];
  if (m.kind != want)
    mismatch(c, std::string("expected ") + msg_kind_name(want) + ", found " +
                    msg_kind_name(m.kind));
  ++c.pos;
  return m;
}

enum class Side { Consumed, Provided };

inline Side resolve_side(const Command& m, const std::optional<std::string>& a,
                         const std::optional<std::string>& b) {
  if (a && m.chan == *a) return Side::Consumed;
  if (b && m.chan == *b) return Side::Provided;
  throw EvalError(m.span.str() + ": channel '" + m.chan + "' is not declared by the procedure");
}

// Weighted evaluation with per-channel cursors; consumption is left-to-right,
// which uniquely realizes the trace split of the sequencing rule.
inline EvalResult eval_cmd_at(const Program& p, const Env& env, Cursor& ca, Cursor& cb,
                              const std::optional<std::string>& a,
                              const std::optional<std::string>& b, const CmdPtr& m) {
  switch (m->kind) {
    case CmdKind::Ret:
      return {LogWeight::zero(), eval_expr(env, m->expr)};

    case CmdKind::Bnd: {
      EvalResult r1 = eval_cmd_at(p, env, ca, cb, a, b, m->m1);
      EvalResult r2 = eval_cmd_at(p, env.bind(m->name, r1.value), ca, cb, a, b, m->m2);
      return {r1.weight + r2.weight, r2.value};
    }

    case CmdKind::SampleRecv:
    case CmdKind::SampleSend: {
      Value dv = eval_expr(env, m->expr);
      if (dv.kind() != ValueKind::Dist)
        throw EvalError(m->expr->span.str() + ": sample argument is not a distribution");
      Side side = resolve_side(*m, a, b);
      // the provider's sample markers sit on its provided channel; receive on
      // the consumed channel reads the same provider-sent message
      bool provider_msg = (m->kind == CmdKind::SampleRecv && side == Side::Consumed) ||
                          (m->kind == CmdKind::SampleSend && side == Side::Provided);
      Cursor& c = side == Side::Consumed ? ca : cb;
      const Message& msg = take_message(c, provider_msg ? MsgKind::PSample : MsgKind::CSample);
      if (!support_contains(dv.as_dist(), msg.value)) {
        --c.pos;
        mismatch(c, "value " + format_value(msg.value) + " is outside the support of " +
                        format_value(dv));
      }
      return {log_density(dv.as_dist(), msg.value), msg.value};
    }

    case CmdKind::BranchSend: {
      Value pred = eval_expr(env, m->expr);
      if (pred.kind() != ValueKind::Bool)
        throw EvalError(m->expr->span.str() + ": branch predicate is not bool");
      Side side = resolve_side(*m, a, b);
      Cursor& c = side == Side::Consumed ? ca : cb;
      // selections sent by this command: consumer direction on the consumed
      // channel, provider direction on the provided one
      const Message& msg =
          take_message(c, side == Side::Consumed ? MsgKind::CBranch : MsgKind::PBranch);
      bool chosen = msg.value.as_bool();
      EvalResult r = eval_cmd_at(p, env, ca, cb, a, b, chosen ? m->m1 : m->m2);
      if (chosen != pred.as_bool()) r.weight = LogWeight::impossible();
      return r;
    }

    case CmdKind::BranchRecv: {
      Side side = resolve_side(*m, a, b);
      Cursor& c = side == Side::Consumed ? ca : cb;
      const Message& msg =
          take_message(c, side == Side::Consumed ? MsgKind::PBranch : MsgKind::CBranch);
      return eval_cmd_at(p, env, ca, cb, a, b, msg.value.as_bool() ? m->m1 : m->m2);
    }

    case CmdKind::Call: {
      const ProcDecl* callee = p.find_proc(m->name);
      if (!callee) throw EvalError(m->span.str() + ": unknown procedure '" + m->name + "'");
      Value arg = eval_expr(env, m->expr);
      if (callee->consume_chan) take_message(ca, MsgKind::Fold);
      if (callee->provide_chan) take_message(cb, MsgKind::Fold);
      Env fresh;  // callee bodies see only their parameter
      return eval_cmd_at(p, fresh.bind(callee->param, std::move(arg)), ca, cb,
                         callee->consume_chan, callee->provide_chan, callee->body);
    }
  }
  throw EvalError("unreachable command kind");
}

}  // namespace detail

// Top-level evaluation: both traces must be consumed exactly.
inline EvalResult eval_cmd(const Program& p, const Env& env, const GuidanceTrace& sa,
                           const GuidanceTrace& sb, const CmdPtr& m,
                           const std::optional<std::string>& a,
                           const std::optional<std::string>& b) {
  if (!a && !sa.empty())
    throw TraceMismatchError("messages supplied for an absent channel", "-", 0);
  if (!b && !sb.empty())
    throw TraceMismatchError("messages supplied for an absent channel", "-", 0);
  detail::Cursor ca{a ? &sa.messages : nullptr, 0, a ? *a : "-"};
  detail::Cursor cb{b ? &sb.messages : nullptr, 0, b ? *b : "-"};
  EvalResult r = detail::eval_cmd_at(p, env, ca, cb, a, b, m);
  if (!ca.exhausted())
    detail::mismatch(ca, std::to_string(ca.remaining()) + " message(s) remain after return");
  if (!cb.exhausted())
    detail::mismatch(cb, std::to_string(cb.remaining()) + " message(s) remain after return");
  return r;
}

inline EvalResult eval_proc(const Program& p, const ProcDecl& proc, const Value& arg,
                            const GuidanceTrace& sa, const GuidanceTrace& sb,
                            const Env& extra = {}) {
  return eval_cmd(p, extra.bind(proc.param, arg), sa, sb, proc.body, proc.consume_chan,
                  proc.provide_chan);
}

// P_m as a total function: the log weight when a derivation exists, otherwise
// the impossible weight.
inline LogWeight model_log_density(const Program& p, const std::string& model, const GuidanceTrace& so,
                                   const GuidanceTrace& sl, const Value& arg = Value::triv()) {
  const ProcDecl* proc = p.find_proc(model);
  if (!proc) throw EvalError("unknown procedure '" + model + "'");
  try {
    return eval_proc(p, *proc, arg, sl, so).weight;
  } catch (const TraceMismatchError&) {
    return LogWeight::impossible();
  }
}

// ---------------------------------------------------------------------------
// Probability-erased reduction
// ---------------------------------------------------------------------------

struct ReduceResult {
  std::optional<Value> value;
  std::string stuck_reason;
  std::size_t pos_a = 0, pos_b = 0;

  bool ok() const { return value.has_value(); }
};

namespace detail {

struct StuckError {
  std::string reason;
};

inline const Message& reduce_take(Cursor& c, MsgKind want) {
  if (c.absent())
    throw StuckError{std::string("needs a ") + msg_kind_name(want) +
                     " but channel '" + c.name + "' is absent"};
  if (c.pos >= c.msgs->size())
    throw StuckError{std::string("needs a ") + msg_kind_name(want) + " but '" + c.name +
                     "' is exhausted"};
  const Message& m = (*c.msgs)[c.pos];
  if (m.kind != want)
    throw StuckError{std::string("expected ") + msg_kind_name(want) + " on '" + c.name +
                     "', found " + msg_kind_name(m.kind)};
  ++c.pos;
  return m;
}

inline Value reduce_cmd_at(const Program& p, const Env& env, Cursor& ca, Cursor& cb,
                           const std::optional<std::string>& a,
                           const std::optional<std::string>& b, const CmdPtr& m) {
  switch (m->kind) {
    case CmdKind::Ret:
      return eval_expr(env, m->expr);

    case CmdKind::Bnd: {
      Value v1 = reduce_cmd_at(p, env, ca, cb, a, b, m->m1);
      return reduce_cmd_at(p, env.bind(m->name, v1), ca, cb, a, b, m->m2);
    }

    case CmdKind::SampleRecv:
    case CmdKind::SampleSend: {
      Value dv = eval_expr(env, m->expr);
      if (dv.kind() != ValueKind::Dist)
        throw EvalError(m->expr->span.str() + ": sample argument is not a distribution");
      Side side = resolve_side(*m, a, b);
      bool provider_msg = (m->kind == CmdKind::SampleRecv && side == Side::Consumed) ||
                          (m->kind == CmdKind::SampleSend && side == Side::Provided);
      Cursor& c = side == Side::Consumed ? ca : cb;
      const Message& msg = reduce_take(c, provider_msg ? MsgKind::PSample : MsgKind::CSample);
      if (!support_contains(dv.as_dist(), msg.value))
        throw StuckError{"value " + format_value(msg.value) + " is outside the support of " +
                         format_value(dv)};
      return msg.value;
    }

    case CmdKind::BranchSend: {
      // reduction follows the evaluated predicate; the recorded selection
      // must match it, otherwise no rule applies
      Value pred = eval_expr(env, m->expr);
      if (pred.kind() != ValueKind::Bool)
        throw EvalError(m->expr->span.str() + ": branch predicate is not bool");
      Side side = resolve_side(*m, a, b);
      Cursor& c = side == Side::Consumed ? ca : cb;
      const Message& msg =
          reduce_take(c, side == Side::Consumed ? MsgKind::CBranch : MsgKind::PBranch);
      if (msg.value.as_bool() != pred.as_bool())
        throw StuckError{"recorded selection disagrees with the branch predicate"};
      return reduce_cmd_at(p, env, ca, cb, a, b, pred.as_bool() ? m->m1 : m->m2);
    }

    case CmdKind::BranchRecv: {
      Side side = resolve_side(*m, a, b);
      Cursor& c = side == Side::Consumed ? ca : cb;
      const Message& msg =
          reduce_take(c, side == Side::Consumed ? MsgKind::PBranch : MsgKind::CBranch);
      return reduce_cmd_at(p, env, ca, cb, a, b, msg.value.as_bool() ? m->m1 : m->m2);
    }

    case CmdKind::Call: {
      const ProcDecl* callee = p.find_proc(m->name);
      if (!callee) throw EvalError(m->span.str() + ": unknown procedure '" + m->name + "'");
      Value arg = eval_expr(env, m->expr);
      if (callee->consume_chan) reduce_take(ca, MsgKind::Fold);
      if (callee->provide_chan) reduce_take(cb, MsgKind::Fold);
      Env fresh;
      return reduce_cmd_at(p, fresh.bind(callee->param, std::move(arg)), ca, cb,
                           callee->consume_chan, callee->provide_chan, callee->body);
    }
  }
  throw EvalError("unreachable command kind");
}

}  // namespace detail

inline ReduceResult reduce_cmd(const Program& p, const Env& env, const GuidanceTrace& sa,
                               const GuidanceTrace& sb, const CmdPtr& m,
                               const std::optional<std::string>& a,
                               const std::optional<std::string>& b) {
  detail::Cursor ca{a ? &sa.messages : nullptr, 0, a ? *a : "-"};
  detail::Cursor cb{b ? &sb.messages : nullptr, 0, b ? *b : "-"};
  ReduceResult out;
  try {
    if (!a && !sa.empty())
      throw detail::StuckError{"messages supplied for an absent channel"};
    if (!b && !sb.empty())
      throw detail::StuckError{"messages supplied for an absent channel"};
    Value v = detail::reduce_cmd_at(p, env, ca, cb, a, b, m);
    if (!ca.exhausted())
      throw detail::StuckError{std::to_string(ca.remaining()) + " message(s) remain on '" +
                               ca.name + "'"};
    if (!cb.exhausted())
      throw detail::StuckError{std::to_string(cb.remaining()) + " message(s) remain on '" +
                               cb.name + "'"};
    out.value = std::move(v);
  } catch (const detail::StuckError& s) {
    out.stuck_reason = s.reason;
  }
  out.pos_a = ca.pos;
  out.pos_b = cb.pos;
  return out;
}

inline ReduceResult reduce_proc(const Program& p, const ProcDecl& proc, const Value& arg,
                                const GuidanceTrace& sa, const GuidanceTrace& sb,
                                const Env& extra = {}) {
  return reduce_cmd(p, extra.bind(proc.param, arg), sa, sb, proc.body, proc.consume_chan,
                    proc.provide_chan);
}

// ---------------------------------------------------------------------------
// Joint guide/model execution
// ---------------------------------------------------------------------------

struct ExecutionRecord {
  GuidanceTrace latent;
  GuidanceTrace obs;
  LogWeight log_guide;
  LogWeight log_model;
  Value guide_result;
  Value model_result;
};

struct JointOptions {
  Env guide_extra;                 // bindings visible to the guide's top frame (VI parameters)
  std::size_t max_messages = 0;    // 0 = unbounded; guards runaway recursion
  bool simulate_obs = false;       // draw observations instead of replaying them
};

namespace detail {

struct Cont {
  std::string binder;
  CmdPtr rest;
  Env env;
  const ProcDecl* owner;
};

struct Strand {
  const ProcDecl* proc = nullptr;
  CmdPtr current_cmd;
  Env current_env;
  const ProcDecl* current_owner = nullptr;
  std::vector<Cont> conts;
  std::optional<Value> result;
  LogWeight logw = LogWeight::zero();
  std::size_t shared_cursor = 0;

  bool finished() const { return result.has_value(); }
};

class JointMachine {
public:
  JointMachine(const Program& p, const ProcDecl& guide, const ProcDecl& model,
               const Value& guide_arg, const Value& model_arg, const GuidanceTrace* so, Rng& rng,
               const JointOptions& opts)
      : p_(p), rng_(rng), opts_(opts), so_(so) {
    if (!guide.provide_chan)
      throw JointError("guide '" + guide.name + "' does not provide a channel");
    if (guide.consume_chan)
      throw JointError("guide '" + guide.name + "' must not consume a channel");
    if (!model.consume_chan)
      throw JointError("model '" + model.name + "' does not consume a channel");
    guide_.proc = &guide;
    guide_.current_cmd = guide.body;
    guide_.current_env = opts.guide_extra.bind(guide.param, guide_arg);
    guide_.current_owner = &guide;
    model_.proc = &model;
    model_.current_cmd = model.body;
    Env menv;
    model_.current_env = menv.bind(model.param, model_arg);
    model_.current_owner = &model;
  }

  ExecutionRecord run() {
    for (;;) {
      bool moved = step(guide_, /*is_guide=*/true);
      moved |= step(model_, /*is_guide=*/false);
      if (guide_.finished() && model_.finished()) break;
      if (!moved)
        throw JointError("deadlock: both coroutines are blocked (cursor " +
                         std::to_string(guide_.shared_cursor) + "/" +
                         std::to_string(model_.shared_cursor) + " of " +
                         std::to_string(shared_.size()) + " shared messages)");
    }
    if (guide_.shared_cursor != shared_.size())
      throw JointError("guide finished with unconsumed shared messages");
    if (model_.shared_cursor != shared_.size())
      throw JointError("model finished with unconsumed shared messages");
    if (!opts_.simulate_obs && so_ && obs_cursor_ != so_->size())
      throw JointError("observation trace has " + std::to_string(so_->size() - obs_cursor_) +
                       " unconsumed message(s)");
    ExecutionRecord rec;
    rec.latent.messages = shared_;
    rec.obs = opts_.simulate_obs ? generated_obs_ : (so_ ? *so_ : GuidanceTrace{});
    rec.log_guide = guide_.logw;
    rec.log_model = model_.logw;
    rec.guide_result = *guide_.result;
    rec.model_result = *model_.result;
    return rec;
  }

private:
  enum class Feed { Ran, Blocked };

  bool step(Strand& s, bool is_guide) {
    bool progressed = false;
    while (!s.finished()) {
      if (!s.current_cmd) break;
      Feed f = exec(s, is_guide, s.current_cmd);
      if (f == Feed::Blocked) break;
      progressed = true;
    }
    return progressed;
  }

  void complete(Strand& s, Value v) {
    if (s.conts.empty()) {
      s.result = std::move(v);
      s.current_cmd = nullptr;
      return;
    }
    Cont c = std::move(s.conts.back());
    s.conts.pop_back();
    s.current_env = c.env.bind(c.binder, std::move(v));
    s.current_cmd = c.rest;
    s.current_owner = c.owner;
  }

  // Shared-channel primitives ----------------------------------------------

  bool at_frontier(const Strand& s) const { return s.shared_cursor == shared_.size(); }

  void append_shared(Strand& s, Message m) {
    if (opts_.max_messages && shared_.size() >= opts_.max_messages)
      throw JointError("joint execution exceeded the message budget of " +
                       std::to_string(opts_.max_messages));
    shared_.push_back(std::move(m));
    ++s.shared_cursor;
  }

  const Message* peek_shared(const Strand& s) const {
    return s.shared_cursor < shared_.size() ? &shared_[s.shared_cursor] : nullptr;
  }

  // Execution of one command; returns Blocked when the strand must wait.
  Feed exec(Strand& s, bool is_guide, const CmdPtr& m) {
    const ProcDecl& owner = *s.current_owner;
    auto is_shared = [&](const std::string& chan) {
      return is_guide ? (owner.provide_chan && *owner.provide_chan == chan)
                      : (owner.consume_chan && *owner.consume_chan == chan);
    };
    auto is_obs = [&](const std::string& chan) {
      return !is_guide && owner.provide_chan && *owner.provide_chan == chan;
    };

    switch (m->kind) {
      case CmdKind::Ret:
        complete(s, eval_expr(s.current_env, m->expr));
        return Feed::Ran;

      case CmdKind::Bnd:
        s.conts.push_back({m->name, m->m2, s.current_env, s.current_owner});
        s.current_cmd = m->m1;
        return Feed::Ran;

      case CmdKind::Call: {
        const ProcDecl* callee = p_.find_proc(m->name);
        if (!callee) throw JointError("unknown procedure '" + m->name + "'");
        Value arg = eval_expr(s.current_env, m->expr);
        // fold markers: one per channel the callee declares; on the shared
        // channel the first strand to arrive materializes it
        if (is_guide ? callee->provide_chan.has_value() : callee->consume_chan.has_value()) {
          if (at_frontier(s)) {
            append_shared(s, Message::fold());
          } else {
            const Message* next = peek_shared(s);
            if (next->kind != MsgKind::Fold)
              throw JointError("protocol violation: expected fold on the shared channel, found " +
                               std::string(msg_kind_name(next->kind)));
            ++s.shared_cursor;
          }
        }
        if (is_guide ? callee->consume_chan.has_value() : false)
          throw JointError("guide calls a procedure that consumes a channel");
        if (!is_guide && callee->provide_chan) obs_fold();
        Env fresh;
        s.current_env = fresh.bind(callee->param, std::move(arg));
        s.current_cmd = callee->body;
        s.current_owner = callee;
        return Feed::Ran;
      }

      case CmdKind::SampleSend: {
        Value dv = eval_expr(s.current_env, m->expr);
        if (dv.kind() != ValueKind::Dist)
          throw EvalError(m->expr->span.str() + ": sample argument is not a distribution");
        if (is_shared(m->chan)) {
          if (!is_guide)
            throw JointError("model send-sample on the consumed channel is unsupported");
          if (!at_frontier(s)) {
            const Message* next = peek_shared(s);
            throw JointError("protocol violation: guide sends a sample but the channel holds " +
                             std::string(msg_kind_name(next->kind)));
          }
          Value v = sample(dv.as_dist(), rng_);
          s.logw += log_density(dv.as_dist(), v);
          append_shared(s, Message::psample(v));
          complete(s, std::move(v));
          return Feed::Ran;
        }
        if (is_obs(m->chan)) {
          Value v = obs_sample_send(s, dv.as_dist());
          complete(s, std::move(v));
          return Feed::Ran;
        }
        throw JointError("sample on channel '" + m->chan + "' which is not live here");
      }

      case CmdKind::SampleRecv: {
        Value dv = eval_expr(s.current_env, m->expr);
        if (dv.kind() != ValueKind::Dist)
          throw EvalError(m->expr->span.str() + ": sample argument is not a distribution");
        if (is_shared(m->chan)) {
          if (is_guide)
            throw JointError("guide receive-sample on the provided channel is unsupported");
          const Message* next = peek_shared(s);
          if (!next) return Feed::Blocked;  // guide has not produced it yet
          if (next->kind != MsgKind::PSample)
            throw JointError("protocol violation: model expects a sample, channel holds " +
                             std::string(msg_kind_name(next->kind)));
          if (!support_contains(dv.as_dist(), next->value))
            throw JointError("guide sample " + format_value(next->value) +
                             " is outside the model's support for " + format_value(dv) +
                             " (the pair is not compatibility-checked?)");
          s.logw += log_density(dv.as_dist(), next->value);
          Value v = next->value;
          ++s.shared_cursor;
          complete(s, std::move(v));
          return Feed::Ran;
        }
        if (is_obs(m->chan)) {
          if (opts_.simulate_obs)
            throw JointError("cannot simulate consumer-sent observation samples");
          const Message& msg = obs_take(MsgKind::CSample);
          if (!support_contains(dv.as_dist(), msg.value))
            throw JointError("observation value outside the distribution support");
          s.logw += log_density(dv.as_dist(), msg.value);
          complete(s, msg.value);
          return Feed::Ran;
        }
        throw JointError("sample on channel '" + m->chan + "' which is not live here");
      }

      case CmdKind::BranchSend: {
        Value pred = eval_expr(s.current_env, m->expr);
        if (pred.kind() != ValueKind::Bool)
          throw EvalError(m->expr->span.str() + ": branch predicate is not bool");
        if (is_shared(m->chan)) {
          if (is_guide)
            throw JointError("guide branch-send on the provided channel is unsupported");
          if (!at_frontier(s)) {
            const Message* next = peek_shared(s);
            throw JointError("protocol violation: model sends a selection but the channel holds " +
                             std::string(msg_kind_name(next->kind)));
          }
          append_shared(s, Message::cbranch(pred.as_bool()));
          s.current_cmd = pred.as_bool() ? m->m1 : m->m2;
          return Feed::Ran;
        }
        if (is_obs(m->chan)) {
          if (opts_.simulate_obs) {
            generated_obs_.messages.push_back(Message::cbranch(pred.as_bool()));
            s.current_cmd = pred.as_bool() ? m->m1 : m->m2;
            return Feed::Ran;
          }
          const Message& msg = obs_take(MsgKind::CBranch);
          bool chosen = msg.value.as_bool();
          if (chosen != pred.as_bool()) s.logw = LogWeight::impossible();
          s.current_cmd = chosen ? m->m1 : m->m2;
          return Feed::Ran;
        }
        throw JointError("branch on channel '" + m->chan + "' which is not live here");
      }

      case CmdKind::BranchRecv: {
        if (is_shared(m->chan)) {
          if (!is_guide)
            throw JointError("model branch-receive on the consumed channel is unsupported");
          const Message* next = peek_shared(s);
          if (!next) return Feed::Blocked;  // model has not selected yet
          if (next->kind != MsgKind::CBranch)
            throw JointError("protocol violation: guide expects a selection, channel holds " +
                             std::string(msg_kind_name(next->kind)));
          bool chosen = next->value.as_bool();
          ++s.shared_cursor;
          s.current_cmd = chosen ? m->m1 : m->m2;
          return Feed::Ran;
        }
        if (is_obs(m->chan)) {
          if (opts_.simulate_obs)
            throw JointError("cannot simulate consumer-sent observation selections");
          const Message& msg = obs_take(MsgKind::CBranch);
          s.current_cmd = msg.value.as_bool() ? m->m1 : m->m2;
          return Feed::Ran;
        }
        throw JointError("branch on channel '" + m->chan + "' which is not live here");
      }
    }
    throw JointError("unreachable command kind");
  }

  // Observation-channel primitives ------------------------------------------

  const Message& obs_take(MsgKind want) {
    if (!so_) throw JointError("the model uses its provided channel but no observation trace "
                               "was supplied");
    if (obs_cursor_ >= so_->size())
      throw JointError("observation trace exhausted: needs a " +
                       std::string(msg_kind_name(want)));
    const Message& m = so_->messages[obs_cursor_];
    if (m.kind != want)
      throw JointError("observation mismatch: expected " + std::string(msg_kind_name(want)) +
                       ", found " + msg_kind_name(m.kind));
    ++obs_cursor_;
    return m;
  }

  void obs_fold() {
    if (opts_.simulate_obs) {
      generated_obs_.messages.push_back(Message::fold());
      return;
    }
    obs_take(MsgKind::Fold);
  }

  Value obs_sample_send(Strand& s, const PrimDist& d) {
    if (opts_.simulate_obs) {
      Value v = sample(d, rng_);
      s.logw += log_density(d, v);
      generated_obs_.messages.push_back(Message::psample(v));
      return v;
    }
    const Message& msg = obs_take(MsgKind::PSample);
    if (!support_contains(d, msg.value))
      throw JointError("observation mismatch: value " + format_value(msg.value) +
                       " is outside the support of " + dist_name(d.kind));
    s.logw += log_density(d, msg.value);
    return msg.value;
  }

  const Program& p_;
  Rng& rng_;
  JointOptions opts_;
  const GuidanceTrace* so_;
  std::vector<Message> shared_;
  GuidanceTrace generated_obs_;
  std::size_t obs_cursor_ = 0;
  Strand guide_;
  Strand model_;
};

}  // namespace detail

// Cooperative interleaving of a guide/model pair against a fixed observation
// trace. The record is replay-consistent: scoring the model body on
// (latent, obs) and the guide body on latent reproduces the two log-weights.
inline ExecutionRecord joint_execute(const Program& p, const std::string& guide,
                                     const std::string& model, const Value& guide_arg,
                                     const Value& model_arg, const GuidanceTrace& so, Rng& rng,
                                     const JointOptions& opts = {}) {
  const ProcDecl* g = p.find_proc(guide);
  const ProcDecl* m = p.find_proc(model);
  if (!g) throw JointError("unknown guide procedure '" + guide + "'");
  if (!m) throw JointError("unknown model procedure '" + model + "'");
  detail::JointMachine machine(p, *g, *m, guide_arg, model_arg, &so, rng, opts);
  return machine.run();
}

// Same interleaving, with the model's observation sends drawn from their
// distributions instead of replayed; yields a full (latent, obs) pair.
inline ExecutionRecord joint_simulate(const Program& p, const std::string& guide,
                                      const std::string& model, const Value& guide_arg,
                                      const Value& model_arg, Rng& rng,
                                      const JointOptions& opts = {}) {
  const ProcDecl* g = p.find_proc(guide);
  const ProcDecl* m = p.find_proc(model);
  if (!g) throw JointError("unknown guide procedure '" + guide + "'");
  if (!m) throw JointError("unknown model procedure '" + model + "'");
  JointOptions sim = opts;
  sim.simulate_obs = true;
  detail::JointMachine machine(p, *g, *m, guide_arg, model_arg, nullptr, rng, sim);
  return machine.run();
}

}  // namespace gpp
