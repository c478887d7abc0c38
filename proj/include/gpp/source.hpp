#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpp {

// Half-open character positions are not tracked; spans are inclusive
// line/column ranges, 1-based, as editors report them.
struct SourcePos {
  int line = 1;
  int col = 1;
};

inline bool operator<=(SourcePos a, SourcePos b) {
  return a.line < b.line || (a.line == b.line && a.col <= b.col);
}
inline bool operator==(SourcePos a, SourcePos b) {
  return a.line == b.line && a.col == b.col;
}

struct SourceSpan {
  std::string file;
  SourcePos start;
  SourcePos end;

  static SourceSpan point(std::string file, int line, int col) {
    SourceSpan s;
    s.file = std::move(file);
    s.start = {line, col};
    s.end = {line, col};
    return s;
  }

  std::string str() const {
    return file + ":" + std::to_string(start.line) + ":" + std::to_string(start.col);
  }
};

inline SourceSpan join_spans(const SourceSpan& a, const SourceSpan& b) {
  SourceSpan s = a;
  if (s.end <= b.end) s.end = b.end;
  return s;
}

struct Diagnostic {
  SourceSpan span;
  std::string decl;     // offending declaration, when known
  std::string message;

  std::string str() const {
    std::string out = span.str() + ": ";
    if (!decl.empty()) out += "[" + decl + "] ";
    return out + message;
  }
};

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ParseError : public Error {
public:
  ParseError(SourceSpan span, std::string message, std::vector<std::string> expected = {})
      : Error(span.str() + ": parse error: " + message), span(std::move(span)),
        message(std::move(message)), expected(std::move(expected)) {}
  SourceSpan span;
  std::string message;
  std::vector<std::string> expected;
};

class TypeError : public Error {
public:
  TypeError(SourceSpan span, std::string message, std::string proc = "")
      : Error(span.str() + ": type error: " + (proc.empty() ? "" : "[" + proc + "] ") + message),
        span(std::move(span)), message(std::move(message)), proc(std::move(proc)) {}
  SourceSpan span;
  std::string message;
  std::string proc;
};

// Runtime faults of deterministic expression evaluation.
class EvalError : public Error {
public:
  using Error::Error;
};

// An (command, trace) pairing that admits no evaluation derivation:
// wrong message kind or direction, value outside a distribution's support,
// or leftover messages. Distinct from a zero branch indicator, which is a
// valid evaluation result with impossible weight.
class TraceMismatchError : public Error {
public:
  TraceMismatchError(std::string reason, std::string channel, std::size_t position)
      : Error("trace mismatch on channel '" + channel + "' at message " +
              std::to_string(position) + ": " + reason),
        reason(std::move(reason)), channel(std::move(channel)), position(position) {}
  std::string reason;
  std::string channel;
  std::size_t position;
};

// Faults of the joint guide/model execution.
class JointError : public Error {
public:
  using Error::Error;
};

class InferenceError : public Error {
public:
  using Error::Error;
};

}  // namespace gpp
