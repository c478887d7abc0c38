#pragma once

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gpp/ir.hpp"
#include "gpp/source.hpp"

namespace gpp {

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

enum class Tok {
  Ident,
  Number,
  LParen,
  RParen,
  LBracket,
  RBracket,
  LBrace,
  RBrace,
  Comma,
  Semi,
  Colon,
  Dot,
  Star,
  Plus,
  Minus,
  Slash,
  Amp,
  OPlus,    // (+)
  Lt,
  Le,
  Eq,
  Bind,     // <-
  FatArrow, // =>
  Arrow,    // ->
  Wedge,    // the sample connective, slash-backslash
  Eof,
};

struct Token {
  Tok tok;
  std::string text;
  SourceSpan span;
  bool number_is_real = false;  // decimal point or exponent present
};

class Lexer {
public:
  Lexer(std::string text, std::string file) : text_(std::move(text)), file_(std::move(file)) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_ws();
      if (pos_ >= text_.size()) {
        out.push_back(make(Tok::Eof, "", line_, col_, line_, col_));
        return out;
      }
      out.push_back(next());
    }
  }

private:
  Token next() {
    int sl = line_, sc = col_;
    char c = text_[pos_];
    if (is_ident_start(c)) {
      std::string s;
      while (pos_ < text_.size() && is_ident_char(text_[pos_])) s += take();
      return make(Tok::Ident, s, sl, sc, line_, col_ - 1);
    }
    if (is_digit(c)) return lex_number(sl, sc);
    // multi-char symbols first
    if (starts_with("(+)")) return sym(Tok::OPlus, "(+)", sl, sc);
    if (starts_with("<-")) return sym(Tok::Bind, "<-", sl, sc);
    if (starts_with("<=")) return sym(Tok::Le, "<=", sl, sc);
    if (starts_with("=>")) return sym(Tok::FatArrow, "=>", sl, sc);
    if (starts_with("->")) return sym(Tok::Arrow, "->", sl, sc);
    if (starts_with("/\\")) return sym(Tok::Wedge, "/\\", sl, sc);
    switch (c) {
      case '(': return sym(Tok::LParen, "(", sl, sc);
      case ')': return sym(Tok::RParen, ")", sl, sc);
      case '[': return sym(Tok::LBracket, "[", sl, sc);
      case ']': return sym(Tok::RBracket, "]", sl, sc);
      case '{': return sym(Tok::LBrace, "{", sl, sc);
      case '}': return sym(Tok::RBrace, "}", sl, sc);
      case ',': return sym(Tok::Comma, ",", sl, sc);
      case ';': return sym(Tok::Semi, ";", sl, sc);
      case ':': return sym(Tok::Colon, ":", sl, sc);
      case '.': return sym(Tok::Dot, ".", sl, sc);
      case '*': return sym(Tok::Star, "*", sl, sc);
      case '+': return sym(Tok::Plus, "+", sl, sc);
      case '-': return sym(Tok::Minus, "-", sl, sc);
      case '/': return sym(Tok::Slash, "/", sl, sc);
      case '&': return sym(Tok::Amp, "&", sl, sc);
      case '<': return sym(Tok::Lt, "<", sl, sc);
      case '=': return sym(Tok::Eq, "=", sl, sc);
    }
    throw ParseError(SourceSpan::point(file_, sl, sc),
                     std::string("unexpected character '") + c + "'");
  }

  Token lex_number(int sl, int sc) {
    std::string s;
    bool real = false;
    while (pos_ < text_.size() && is_digit(text_[pos_])) s += take();
    if (pos_ + 1 < text_.size() && text_[pos_] == '.' && is_digit(text_[pos_ + 1])) {
      real = true;
      s += take();
      while (pos_ < text_.size() && is_digit(text_[pos_])) s += take();
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t save = pos_;
      int save_line = line_, save_col = col_;
      std::string exp;
      exp += take();
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) exp += take();
      if (pos_ < text_.size() && is_digit(text_[pos_])) {
        while (pos_ < text_.size() && is_digit(text_[pos_])) exp += take();
        s += exp;
        real = true;
      } else {
        pos_ = save;
        line_ = save_line;
        col_ = save_col;
      }
    }
    Token t = make(Tok::Number, s, sl, sc, line_, col_ - 1);
    t.number_is_real = real;
    return t;
  }

  void skip_ws() {
    for (;;) {
      while (pos_ < text_.size() &&
             (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r' ||
              text_[pos_] == '\n'))
        take();
      if (pos_ < text_.size() && text_[pos_] == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') take();
        continue;
      }
      return;
    }
  }

  char take() {
    char c = text_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  bool starts_with(const char* s) {
    std::size_t n = std::char_traits<char>::length(s);
    if (text_.compare(pos_, n, s) != 0) return false;
    return true;
  }

  Token sym(Tok t, const std::string& s, int sl, int sc) {
    for (std::size_t i = 0; i < s.size(); ++i) take();
    return make(t, s, sl, sc, line_, col_ - 1);
  }

  Token make(Tok t, std::string s, int sl, int sc, int el, int ec) {
    Token tok;
    tok.tok = t;
    tok.text = std::move(s);
    tok.span.file = file_;
    tok.span.start = {sl, sc};
    tok.span.end = {el, ec < sc && el == sl ? sc : ec};
    return tok;
  }

  static bool is_digit(char c) { return c >= '0' && c <= '9'; }
  static bool is_ident_start(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
  }
  static bool is_ident_char(char c) { return is_ident_start(c) || is_digit(c) || c == '\''; }

  std::string text_;
  std::string file_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

class Parser {
public:
  Parser(std::string text, std::string file)
      : file_(file), toks_(Lexer(std::move(text), std::move(file)).run()) {}

  Program parse_program() {
    Program p;
    while (!at(Tok::Eof)) {
      if (at_kw("type")) {
        p.typedefs.push_back(parse_typedef());
      } else if (at_kw("proc")) {
        p.procs.push_back(parse_proc());
      } else {
        fail("expected 'proc' or 'type' declaration", {"proc", "type"});
      }
    }
    return p;
  }

  GuidePtr parse_guide_type_only() {
    auto g = parse_guide_type();
    expect(Tok::Eof, "end of input");
    return g;
  }

  TypePtr parse_base_type_only() {
    auto t = parse_base_type();
    expect(Tok::Eof, "end of input");
    return t;
  }

private:
  // --- declarations ---

  TypeDef parse_typedef() {
    TypeDef d;
    d.span = peek().span;
    expect_kw("type");
    d.op = expect_ident("type operator name");
    expect(Tok::LBracket, "'['");
    d.param = expect_ident("type variable");
    expect(Tok::RBracket, "']'");
    expect(Tok::Eq, "'='");
    d.body = parse_guide_type();
    return d;
  }

  ProcDecl parse_proc() {
    ProcDecl p;
    p.span = peek().span;
    expect_kw("proc");
    p.name = expect_ident("procedure name");
    expect(Tok::LParen, "'('");
    if (at(Tok::RParen)) {
      advance();
      p.param = "_";
      p.arg_type = types::unit();
    } else {
      p.param = expect_ident("parameter name");
      expect(Tok::Colon, "':'");
      p.arg_type = parse_base_type();
      expect(Tok::RParen, "')'");
    }
    if (at(Tok::Colon)) {
      advance();
      p.ret_type = parse_base_type();
    }
    expect_kw("consume");
    p.consume_chan = parse_channel();
    expect_kw("provide");
    p.provide_chan = parse_channel();
    expect(Tok::Eq, "'='");
    p.body = parse_cmd();
    return p;
  }

  std::optional<std::string> parse_channel() {
    if (at(Tok::Dot)) {
      advance();
      return std::nullopt;
    }
    return expect_ident("channel name or '.'");
  }

  // --- commands ---

  CmdPtr parse_cmd() {
    // binder lookahead: IDENT '<-' starts a bind
    if (at(Tok::Ident) && peek(1).tok == Tok::Bind) {
      SourceSpan sp = peek().span;
      std::string binder = expect_ident("binder");
      expect(Tok::Bind, "'<-'");
      CmdPtr first = parse_simple_cmd();
      expect(Tok::Semi, "';'");
      CmdPtr rest = parse_cmd();
      return cmds::bnd(std::move(first), std::move(binder), std::move(rest), sp);
    }
    return parse_simple_cmd();
  }

  CmdPtr parse_simple_cmd() {
    SourceSpan sp = peek().span;
    if (at_kw("return")) {
      advance();
      return cmds::ret(parse_expr(), sp);
    }
    if (at_kw("call")) {
      advance();
      std::string target = expect_ident("procedure name");
      expect(Tok::LParen, "'('");
      ExprPtr arg = at(Tok::RParen) ? exprs::triv(peek().span) : parse_expr();
      expect(Tok::RParen, "')'");
      return cmds::call(std::move(target), std::move(arg), sp);
    }
    if (at_kw("sample")) {
      advance();
      expect(Tok::LBracket, "'['");
      bool recv;
      if (at_kw("recv")) {
        recv = true;
      } else if (at_kw("send")) {
        recv = false;
      } else {
        fail("expected 'recv' or 'send'", {"recv", "send"});
        recv = false;
      }
      advance();
      expect(Tok::RBracket, "']'");
      expect(Tok::LParen, "'('");
      std::string chan = expect_ident("channel name");
      expect(Tok::Comma, "','");
      ExprPtr d = parse_expr();
      expect(Tok::RParen, "')'");
      return recv ? cmds::sample_recv(std::move(d), std::move(chan), sp)
                  : cmds::sample_send(std::move(d), std::move(chan), sp);
    }
    if (at_kw("observe")) {  // sugar for sample[send]
      advance();
      expect(Tok::LParen, "'('");
      std::string chan = expect_ident("channel name");
      expect(Tok::Comma, "','");
      ExprPtr d = parse_expr();
      expect(Tok::RParen, "')'");
      return cmds::sample_send(std::move(d), std::move(chan), sp);
    }
    if (at_kw("if") && peek(1).tok == Tok::LBracket) {
      advance();
      expect(Tok::LBracket, "'['");
      bool send;
      if (at_kw("send")) {
        send = true;
      } else if (at_kw("recv")) {
        send = false;
      } else {
        fail("expected 'send' or 'recv'", {"send", "recv"});
        send = false;
      }
      advance();
      std::string chan = expect_ident("channel name");
      expect(Tok::RBracket, "']'");
      ExprPtr pred;
      if (send) {
        pred = parse_expr();
      } else {
        expect(Tok::Star, "'*'");
      }
      expect_kw("then");
      CmdPtr then_arm = parse_simple_cmd();
      expect_kw("else");
      CmdPtr else_arm = parse_simple_cmd();
      return send ? cmds::branch_send(std::move(pred), std::move(then_arm), std::move(else_arm),
                                      std::move(chan), sp)
                  : cmds::branch_recv(std::move(then_arm), std::move(else_arm), std::move(chan), sp);
    }
    if (at(Tok::LBrace)) {
      advance();
      CmdPtr m = parse_cmd();
      expect(Tok::RBrace, "'}'");
      return m;
    }
    if (at(Tok::LParen) && looks_like_cmd_paren()) {
      advance();
      CmdPtr m = parse_cmd();
      expect(Tok::RParen, "')'");
      return m;
    }
    fail("expected a command",
         {"return", "call", "sample", "observe", "if", "{"});
    return nullptr;
  }

  bool looks_like_cmd_paren() const {
    const Token& t = peek(1);
    if (t.tok != Tok::Ident) return false;
    return t.text == "return" || t.text == "call" || t.text == "sample" ||
           t.text == "observe" || t.text == "if" || (peek(2).tok == Tok::Bind);
  }

  // --- expressions ---

  ExprPtr parse_expr() { return parse_or(); }

  ExprPtr parse_or() {
    ExprPtr e = parse_and();
    while (at_kw("or")) {
      SourceSpan sp = peek().span;
      advance();
      e = exprs::binop(BinOpKind::Or, e, parse_and(), sp);
    }
    return e;
  }

  ExprPtr parse_and() {
    ExprPtr e = parse_cmp();
    while (at_kw("and")) {
      SourceSpan sp = peek().span;
      advance();
      e = exprs::binop(BinOpKind::And, e, parse_cmp(), sp);
    }
    return e;
  }

  ExprPtr parse_cmp() {
    ExprPtr e = parse_add();
    if (at(Tok::Lt) || at(Tok::Le) || at(Tok::Eq)) {
      BinOpKind op = at(Tok::Lt) ? BinOpKind::Lt : at(Tok::Le) ? BinOpKind::Le : BinOpKind::Eq;
      SourceSpan sp = peek().span;
      advance();
      e = exprs::binop(op, e, parse_add(), sp);
    }
    return e;
  }

  ExprPtr parse_add() {
    ExprPtr e = parse_mul();
    while (at(Tok::Plus) || at(Tok::Minus)) {
      BinOpKind op = at(Tok::Plus) ? BinOpKind::Add : BinOpKind::Sub;
      SourceSpan sp = peek().span;
      advance();
      e = exprs::binop(op, e, parse_mul(), sp);
    }
    return e;
  }

  ExprPtr parse_mul() {
    ExprPtr e = parse_app();
    while (at(Tok::Star) || at(Tok::Slash)) {
      BinOpKind op = at(Tok::Star) ? BinOpKind::Mul : BinOpKind::Div;
      SourceSpan sp = peek().span;
      advance();
      e = exprs::binop(op, e, parse_app(), sp);
    }
    return e;
  }

  ExprPtr parse_app() {
    ExprPtr e = parse_atom();
    while (starts_atom()) {
      SourceSpan sp = peek().span;
      e = exprs::app(e, parse_atom(), sp);
    }
    return e;
  }

  bool starts_atom() const {
    const Token& t = peek();
    switch (t.tok) {
      case Tok::Number:
      case Tok::LParen:
        return true;
      case Tok::Ident:
        // keywords that begin expressions still count; structural keywords do not
        return t.text != "then" && t.text != "else" && t.text != "in" && t.text != "and" &&
               t.text != "or" && t.text != "proc" && t.text != "type" && t.text != "consume" &&
               t.text != "provide" && t.text != "return" && t.text != "call" &&
               t.text != "sample" && t.text != "observe";
      default:
        return false;
    }
  }

  ExprPtr parse_atom() {
    SourceSpan sp = peek().span;
    if (at(Tok::Minus)) {
      advance();
      const Token& n = peek();
      if (n.tok != Tok::Number) fail("expected a numeric literal after '-'", {"number"});
      advance();
      return exprs::real_lit(-std::strtod(n.text.c_str(), nullptr), sp);
    }
    if (at(Tok::Number)) {
      Token n = peek();
      advance();
      if (n.number_is_real) return exprs::real_lit(std::strtod(n.text.c_str(), nullptr), sp);
      errno = 0;
      char* end = nullptr;
      unsigned long long v = std::strtoull(n.text.c_str(), &end, 10);
      if (errno != 0) fail("natural literal out of range", {});
      return exprs::nat_lit(v, sp);
    }
    if (at(Tok::LParen)) {
      advance();
      if (at(Tok::RParen)) {
        advance();
        return exprs::triv(sp);
      }
      ExprPtr e = parse_expr();
      expect(Tok::RParen, "')'");
      return e;
    }
    if (at_kw("true")) {
      advance();
      return exprs::truth(true, sp);
    }
    if (at_kw("false")) {
      advance();
      return exprs::truth(false, sp);
    }
    if (at_kw("if")) {
      advance();
      ExprPtr c = parse_expr();
      expect_kw("then");
      ExprPtr t = parse_expr();
      expect_kw("else");
      ExprPtr f = parse_expr();
      return exprs::cond(std::move(c), std::move(t), std::move(f), sp);
    }
    if (at_kw("fn")) {
      advance();
      expect(Tok::LParen, "'('");
      std::string param = expect_ident("parameter name");
      expect(Tok::Colon, "':'");
      TypePtr ty = parse_base_type();
      expect(Tok::RParen, "')'");
      expect(Tok::FatArrow, "'=>'");
      ExprPtr body = parse_expr();
      return exprs::lambda(std::move(param), std::move(ty), std::move(body), sp);
    }
    if (at_kw("let")) {
      advance();
      std::string name = expect_ident("binder name");
      expect(Tok::Eq, "'='");
      ExprPtr bound = parse_expr();
      expect_kw("in");
      ExprPtr body = parse_expr();
      return exprs::let(std::move(bound), std::move(name), std::move(body), sp);
    }
    if (at_kw("get")) {
      advance();
      expect(Tok::LBracket, "'['");
      TypePtr annot = parse_base_type();
      expect(Tok::RBracket, "']'");
      expect(Tok::LParen, "'('");
      ExprPtr trace = parse_expr();
      expect(Tok::Comma, "','");
      ExprPtr index = parse_expr();
      expect(Tok::RParen, "')'");
      return exprs::trace_get(std::move(annot), std::move(trace), std::move(index), sp);
    }
    if (auto dk = dist_kind_of(peek())) {
      advance();
      std::vector<ExprPtr> args;
      if (*dk != DistKind::Unif) {
        expect(Tok::LParen, "'('");
        args.push_back(parse_expr());
        while (at(Tok::Comma)) {
          advance();
          args.push_back(parse_expr());
        }
        expect(Tok::RParen, "')'");
      }
      return exprs::dist(*dk, std::move(args), sp);
    }
    if (at(Tok::Ident)) {
      std::string name = peek().text;
      advance();
      return exprs::var(std::move(name), sp);
    }
    fail("expected an expression", {"literal", "identifier", "'('"});
    return nullptr;
  }

  static std::optional<DistKind> dist_kind_of(const Token& t) {
    if (t.tok != Tok::Ident) return std::nullopt;
    if (t.text == "ber") return DistKind::Ber;
    if (t.text == "unif") return DistKind::Unif;
    if (t.text == "beta") return DistKind::Beta;
    if (t.text == "gamma") return DistKind::Gamma;
    if (t.text == "normal") return DistKind::Normal;
    if (t.text == "cat") return DistKind::Cat;
    if (t.text == "geo") return DistKind::Geo;
    if (t.text == "pois") return DistKind::Pois;
    return std::nullopt;
  }

  // --- types ---

  TypePtr parse_base_type() {
    TypePtr t = parse_base_atom();
    if (at(Tok::Arrow)) {
      advance();
      return types::arrow(std::move(t), parse_base_type());
    }
    return t;
  }

  TypePtr parse_base_atom() {
    if (at(Tok::LParen)) {
      advance();
      TypePtr t = parse_base_type();
      expect(Tok::RParen, "')'");
      return t;
    }
    if (at_kw("unit")) { advance(); return types::unit(); }
    if (at_kw("bool")) { advance(); return types::boolean(); }
    if (at_kw("ureal")) { advance(); return types::ureal(); }
    if (at_kw("preal")) { advance(); return types::preal(); }
    if (at_kw("real")) { advance(); return types::real(); }
    if (at_kw("nat")) { advance(); return types::nat(); }
    if (at_kw("fin")) {
      advance();
      expect(Tok::LBracket, "'['");
      const Token& n = peek();
      if (n.tok != Tok::Number || n.number_is_real) fail("expected a natural bound", {"number"});
      advance();
      std::uint64_t bound = std::strtoull(n.text.c_str(), nullptr, 10);
      if (bound == 0) fail("fin bound must be at least 1", {});
      expect(Tok::RBracket, "']'");
      return types::fin_nat(bound);
    }
    if (at_kw("dist")) {
      advance();
      expect(Tok::LBracket, "'['");
      TypePtr carrier = parse_base_type();
      expect(Tok::RBracket, "']'");
      return types::dist(std::move(carrier));
    }
    if (at_kw("trace")) {
      advance();
      expect(Tok::LBracket, "'['");
      GuidePtr protocol = parse_guide_type();
      expect(Tok::RBracket, "']'");
      return types::trace_of(std::move(protocol));
    }
    fail("expected a type", {"unit", "bool", "ureal", "preal", "real", "nat", "fin", "dist",
                             "trace", "("});
    return nullptr;
  }

  bool at_scalar_keyword() const {
    const Token& t = peek();
    if (t.tok != Tok::Ident) return false;
    return t.text == "unit" || t.text == "bool" || t.text == "ureal" || t.text == "preal" ||
           t.text == "real" || t.text == "nat" || t.text == "fin";
  }

  // guidetype := sampletype [('&' | '(+)') guidetype]
  GuidePtr parse_guide_type() {
    GuidePtr g = parse_sample_type();
    if (at(Tok::Amp)) {
      advance();
      return guides::choice_c(std::move(g), parse_guide_type());
    }
    if (at(Tok::OPlus)) {
      advance();
      return guides::choice_p(std::move(g), parse_guide_type());
    }
    return g;
  }

  // sampletype := scalar ('/\' | '=>') sampletype | gatom
  GuidePtr parse_sample_type() {
    if (at_scalar_keyword()) {
      TypePtr carrier = parse_base_atom();
      if (at(Tok::Wedge)) {
        advance();
        return guides::sample_p(std::move(carrier), parse_sample_type());
      }
      if (at(Tok::FatArrow)) {
        advance();
        return guides::sample_c(std::move(carrier), parse_sample_type());
      }
      fail("expected '/\\' or '=>' after a carrier type", {"/\\", "=>"});
    }
    return parse_guide_atom();
  }

  GuidePtr parse_guide_atom() {
    if (at(Tok::Number) && !peek().number_is_real && peek().text == "1") {
      advance();
      return guides::end();
    }
    if (at(Tok::LParen)) {
      advance();
      GuidePtr g = parse_guide_type();
      expect(Tok::RParen, "')'");
      return g;
    }
    if (at(Tok::Ident)) {
      std::string name = peek().text;
      advance();
      if (at(Tok::LBracket)) {
        advance();
        GuidePtr arg = parse_guide_type();
        expect(Tok::RBracket, "']'");
        return guides::op_app(std::move(name), std::move(arg));
      }
      return guides::var(std::move(name));
    }
    fail("expected a guide type", {"1", "identifier", "carrier type", "("});
    return nullptr;
  }

  // --- plumbing ---

  const Token& peek(std::size_t k = 0) const {
    std::size_t i = pos_ + k;
    return i < toks_.size() ? toks_[i] : toks_.back();
  }

  bool at(Tok t) const { return peek().tok == t; }
  bool at_kw(const char* kw) const { return peek().tok == Tok::Ident && peek().text == kw; }

  void advance() {
    if (pos_ + 1 < toks_.size()) ++pos_;
  }

  void expect(Tok t, const std::string& what) {
    if (!at(t)) fail("expected " + what, {what});
    advance();
  }

  void expect_kw(const char* kw) {
    if (!at_kw(kw)) fail(std::string("expected '") + kw + "'", {kw});
    advance();
  }

  std::string expect_ident(const std::string& what) {
    if (!at(Tok::Ident)) fail("expected " + what, {what});
    std::string s = peek().text;
    advance();
    return s;
  }

  [[noreturn]] void fail(const std::string& msg, std::vector<std::string> expected) const {
    const Token& t = peek();
    std::string found = t.tok == Tok::Eof ? "end of input" : "'" + t.text + "'";
    throw ParseError(t.span, msg + ", found " + found, std::move(expected));
  }

  std::string file_;
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

inline Program parse_program(const std::string& text, const std::string& file = "<input>") {
  return Parser(text, file).parse_program();
}

inline GuidePtr parse_guide_type(const std::string& text, const std::string& file = "<input>") {
  return Parser(text, file).parse_guide_type_only();
}

inline TypePtr parse_base_type(const std::string& text, const std::string& file = "<input>") {
  return Parser(text, file).parse_base_type_only();
}

// ---------------------------------------------------------------------------
// Pretty printing
// ---------------------------------------------------------------------------

inline std::string format_real(double r) {
  if (std::isinf(r)) return r > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), r);
  std::string s(buf, res.ptr);
  // keep real literals lexically real
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
      s.find("inf") == std::string::npos && s.find("nan") == std::string::npos) {
    s += ".0";
  }
  return s;
}

std::string format_guide_type(const GuidePtr& g);

inline std::string format_base_type(const TypePtr& t) {
  if (!t) return "?";
  switch (t->kind) {
    case TypeKind::Unit: return "unit";
    case TypeKind::Bool: return "bool";
    case TypeKind::UnitReal: return "ureal";
    case TypeKind::PosReal: return "preal";
    case TypeKind::Real: return "real";
    case TypeKind::Nat: return "nat";
    case TypeKind::FinNat: return "fin[" + std::to_string(t->bound) + "]";
    case TypeKind::Dist: return "dist[" + format_base_type(t->t1) + "]";
    case TypeKind::TraceOf: return "trace[" + format_guide_type(t->protocol) + "]";
    case TypeKind::Arrow: {
      std::string lhs = format_base_type(t->t1);
      if (t->t1 && t->t1->kind == TypeKind::Arrow) lhs = "(" + lhs + ")";
      return lhs + " -> " + format_base_type(t->t2);
    }
  }
  return "?";
}

inline std::string format_guide_type(const GuidePtr& g) {
  if (!g) return "?";
  auto is_choice = [](const GuidePtr& x) {
    return x && (x->kind == GuideKind::ChoiceC || x->kind == GuideKind::ChoiceP);
  };
  switch (g->kind) {
    case GuideKind::End: return "1";
    case GuideKind::Var: return g->name;
    case GuideKind::OpApp: return g->name + "[" + format_guide_type(g->g1) + "]";
    case GuideKind::SampleP:
    case GuideKind::SampleC: {
      std::string cont = format_guide_type(g->g1);
      if (is_choice(g->g1)) cont = "(" + cont + ")";
      return format_base_type(g->carrier) + (g->kind == GuideKind::SampleP ? " /\\ " : " => ") +
             cont;
    }
    case GuideKind::ChoiceC:
    case GuideKind::ChoiceP: {
      std::string lhs = format_guide_type(g->g1);
      if (is_choice(g->g1)) lhs = "(" + lhs + ")";
      return lhs + (g->kind == GuideKind::ChoiceC ? " & " : " (+) ") + format_guide_type(g->g2);
    }
  }
  return "?";
}

namespace detail {

// precedence levels: 0 open (if/fn/let), 1 or, 2 and, 3 cmp, 4 add, 5 mul, 6 app, 7 atom
inline int expr_prec(const Expr& e) {
  switch (e.kind) {
    case ExprKind::Cond:
    case ExprKind::Lambda:
    case ExprKind::Let:
      return 0;
    case ExprKind::BinOp:
      switch (e.op) {
        case BinOpKind::Or: return 1;
        case BinOpKind::And: return 2;
        case BinOpKind::Lt:
        case BinOpKind::Le:
        case BinOpKind::Eq: return 3;
        case BinOpKind::Add:
        case BinOpKind::Sub: return 4;
        case BinOpKind::Mul:
        case BinOpKind::Div: return 5;
      }
      return 4;
    case ExprKind::App:
      return 6;
    case ExprKind::RealLit:
      // a leading minus must not melt into a subtraction when juxtaposed
      return std::signbit(e.real_value) ? 6 : 7;
    default:
      return 7;
  }
}

inline void format_expr_into(const Expr& e, std::string& out, int min_prec) {
  int prec = expr_prec(e);
  bool paren = prec < min_prec;
  if (paren) out += "(";
  switch (e.kind) {
    case ExprKind::Var:
      out += e.name;
      break;
    case ExprKind::Triv:
      out += "()";
      break;
    case ExprKind::True:
      out += "true";
      break;
    case ExprKind::False:
      out += "false";
      break;
    case ExprKind::RealLit:
      out += format_real(e.real_value);
      break;
    case ExprKind::NatLit:
      out += std::to_string(e.nat_value);
      break;
    case ExprKind::Cond:
      out += "if ";
      format_expr_into(*e.kids[0], out, 1);
      out += " then ";
      format_expr_into(*e.kids[1], out, 1);
      out += " else ";
      format_expr_into(*e.kids[2], out, 0);
      break;
    case ExprKind::BinOp: {
      // comparisons are non-associative; both operands must bind tighter
      bool cmp = e.op == BinOpKind::Lt || e.op == BinOpKind::Le || e.op == BinOpKind::Eq;
      format_expr_into(*e.kids[0], out, cmp ? prec + 1 : prec);
      out += " ";
      out += binop_name(e.op);
      out += " ";
      format_expr_into(*e.kids[1], out, prec + 1);
      break;
    }
    case ExprKind::Lambda:
      out += "fn (" + e.name + " : " + format_base_type(e.type) + ") => ";
      format_expr_into(*e.kids[0], out, 0);
      break;
    case ExprKind::App:
      format_expr_into(*e.kids[0], out, 6);
      out += " ";
      format_expr_into(*e.kids[1], out, 7);
      break;
    case ExprKind::Let:
      out += "let " + e.name + " = ";
      format_expr_into(*e.kids[0], out, 1);
      out += " in ";
      format_expr_into(*e.kids[1], out, 0);
      break;
    case ExprKind::Dist:
      out += dist_name(e.dist);
      if (e.dist != DistKind::Unif) {
        out += "(";
        for (std::size_t i = 0; i < e.kids.size(); ++i) {
          if (i) out += ", ";
          format_expr_into(*e.kids[i], out, 1);
        }
        out += ")";
      }
      break;
    case ExprKind::TraceGet:
      out += "get[" + format_base_type(e.type) + "](";
      format_expr_into(*e.kids[0], out, 1);
      out += ", ";
      format_expr_into(*e.kids[1], out, 1);
      out += ")";
      break;
  }
  if (paren) out += ")";
}

inline void indent(std::string& out, int n) { out.append(static_cast<std::size_t>(n), ' '); }

inline void format_cmd_into(const Command& m, std::string& out, int ind);

inline void format_simple_cmd(const Command& m, std::string& out, int ind) {
  if (m.kind == CmdKind::Bnd) {
    out += "{\n";
    indent(out, ind + 2);
    format_cmd_into(m, out, ind + 2);
    out += "\n";
    indent(out, ind);
    out += "}";
  } else {
    format_cmd_into(m, out, ind);
  }
}

inline void format_cmd_into(const Command& m, std::string& out, int ind) {
  switch (m.kind) {
    case CmdKind::Ret:
      out += "return ";
      format_expr_into(*m.expr, out, 1);
      break;
    case CmdKind::Bnd:
      out += m.name + " <- ";
      format_simple_cmd(*m.m1, out, ind);
      out += ";\n";
      indent(out, ind);
      format_cmd_into(*m.m2, out, ind);
      break;
    case CmdKind::Call:
      out += "call " + m.name + "(";
      if (m.expr->kind != ExprKind::Triv) format_expr_into(*m.expr, out, 1);
      out += ")";
      break;
    case CmdKind::SampleRecv:
    case CmdKind::SampleSend:
      out += m.kind == CmdKind::SampleRecv ? "sample[recv](" : "sample[send](";
      out += m.chan + ", ";
      format_expr_into(*m.expr, out, 1);
      out += ")";
      break;
    case CmdKind::BranchSend:
      out += "if[send " + m.chan + "] ";
      format_expr_into(*m.expr, out, 1);
      out += " then ";
      format_simple_cmd(*m.m1, out, ind);
      out += " else ";
      format_simple_cmd(*m.m2, out, ind);
      break;
    case CmdKind::BranchRecv:
      out += "if[recv " + m.chan + "] * then ";
      format_simple_cmd(*m.m1, out, ind);
      out += " else ";
      format_simple_cmd(*m.m2, out, ind);
      break;
  }
}

}  // namespace detail

inline std::string format_expr(const ExprPtr& e) {
  std::string out;
  detail::format_expr_into(*e, out, 0);
  return out;
}

inline std::string format_cmd(const CmdPtr& m, int indent = 0) {
  std::string out;
  detail::format_cmd_into(*m, out, indent);
  return out;
}

inline std::string format_program(const Program& p) {
  std::string out;
  for (const auto& d : p.typedefs) {
    out += "type " + d.op + "[" + d.param + "] = " + format_guide_type(d.body) + "\n\n";
  }
  for (const auto& proc : p.procs) {
    out += "proc " + proc.name + "(";
    if (!(proc.arg_type && proc.arg_type->kind == TypeKind::Unit && proc.param == "_")) {
      out += proc.param + " : " + format_base_type(proc.arg_type);
    }
    out += ")";
    if (proc.ret_type) out += " : " + format_base_type(proc.ret_type);
    out += " consume " + (proc.consume_chan ? *proc.consume_chan : ".");
    out += " provide " + (proc.provide_chan ? *proc.provide_chan : ".");
    out += " =\n  ";
    detail::format_cmd_into(*proc.body, out, 2);
    out += "\n\n";
  }
  return out;
}

}  // namespace gpp
