#pragma once

#include "gpp/distributions.hpp"
#include "gpp/inference.hpp"
#include "gpp/interpreter.hpp"
#include "gpp/ir.hpp"
#include "gpp/parser.hpp"
#include "gpp/rng.hpp"
#include "gpp/source.hpp"
#include "gpp/trace_json.hpp"
#include "gpp/typecheck.hpp"
#include "gpp/weight.hpp"
