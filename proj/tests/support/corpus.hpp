#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "gpp/gpp.hpp"

#ifndef GPP_CORPUS_DIR
#define GPP_CORPUS_DIR "corpus"
#endif

namespace corpus {

inline std::string path(const std::string& rel) {
  return std::string(GPP_CORPUS_DIR) + "/" + rel;
}

inline std::string slurp(const std::string& rel) {
  std::ifstream in(path(rel));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline gpp::Program load(const std::string& rel) {
  return gpp::parse_program(slurp(rel), rel);
}

}  // namespace corpus
