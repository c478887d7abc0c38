#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "gpp/ir.hpp"
#include "gpp/source.hpp"

namespace gpp {

// Wire format: a trace is a JSON array of {kind, value?} objects with kind in
// psample|csample|pbranch|cbranch|fold. Sample values are booleans, integers
// (naturals) or doubles (reals); branch values are booleans.

inline nlohmann::json value_to_json(const Value& v) {
  switch (v.kind()) {
    case ValueKind::Bool: return v.as_bool();
    case ValueKind::Real: return v.as_real();
    case ValueKind::Nat: return v.as_nat();
    default:
      throw Error("only scalar sample values serialize to JSON");
  }
}

inline Value value_from_json(const nlohmann::json& j) {
  if (j.is_boolean()) return Value::boolean(j.get<bool>());
  if (j.is_number_unsigned()) return Value::nat(j.get<std::uint64_t>());
  if (j.is_number_integer()) {
    auto n = j.get<std::int64_t>();
    if (n < 0) return Value::real(static_cast<double>(n));
    return Value::nat(static_cast<std::uint64_t>(n));
  }
  if (j.is_number_float()) return Value::real(j.get<double>());
  throw Error("trace value must be a boolean or a number");
}

inline nlohmann::json trace_to_json(const GuidanceTrace& t) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Message& m : t.messages) {
    nlohmann::json obj;
    obj["kind"] = msg_kind_name(m.kind);
    if (m.kind != MsgKind::Fold) obj["value"] = value_to_json(m.value);
    arr.push_back(std::move(obj));
  }
  return arr;
}

inline GuidanceTrace trace_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw Error("a trace must be a JSON array");
  GuidanceTrace t;
  for (const auto& obj : arr) {
    if (!obj.is_object() || !obj.contains("kind"))
      throw Error("each trace entry needs a 'kind' field");
    std::string kind = obj.at("kind").get<std::string>();
    if (kind == "fold") {
      t.messages.push_back(Message::fold());
      continue;
    }
    if (!obj.contains("value")) throw Error("trace entry of kind '" + kind + "' needs a value");
    Value v = value_from_json(obj.at("value"));
    if (kind == "psample") {
      t.messages.push_back(Message::psample(std::move(v)));
    } else if (kind == "csample") {
      t.messages.push_back(Message::csample(std::move(v)));
    } else if (kind == "pbranch" || kind == "cbranch") {
      if (v.kind() != ValueKind::Bool)
        throw Error("branch selections must be booleans");
      t.messages.push_back(kind == "pbranch" ? Message::pbranch(v.as_bool())
                                             : Message::cbranch(v.as_bool()));
    } else {
      throw Error("unknown message kind '" + kind + "'");
    }
  }
  return t;
}

inline GuidanceTrace load_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("malformed JSON in '" + path + "': " + e.what());
  }
  return trace_from_json(j);
}

inline void save_trace_file(const std::string& path, const GuidanceTrace& t) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trace file '" + path + "'");
  out << trace_to_json(t).dump() << "\n";
}

}  // namespace gpp
