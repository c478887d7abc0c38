#pragma once

#include <cmath>
#include <numeric>
#include <string>

#include "gpp/ir.hpp"
#include "gpp/rng.hpp"
#include "gpp/source.hpp"
#include "gpp/weight.hpp"

namespace gpp {

// Parameter-domain check; returns a human-readable violation or empty string.
inline std::string dist_param_violation(const PrimDist& d) {
  auto in01 = [](double x) { return std::isfinite(x) && x > 0.0 && x < 1.0; };
  auto pos = [](double x) { return std::isfinite(x) && x > 0.0; };
  switch (d.kind) {
    case DistKind::Ber:
      if (d.params.size() != 1 || !in01(d.params[0])) return "ber needs p in (0,1)";
      break;
    case DistKind::Unif:
      if (!d.params.empty()) return "unif takes no parameters";
      break;
    case DistKind::Beta:
      if (d.params.size() != 2 || !pos(d.params[0]) || !pos(d.params[1]))
        return "beta needs a > 0 and b > 0";
      break;
    case DistKind::Gamma:
      if (d.params.size() != 2 || !pos(d.params[0]) || !pos(d.params[1]))
        return "gamma needs shape > 0 and rate > 0";
      break;
    case DistKind::Normal:
      if (d.params.size() != 2 || !std::isfinite(d.params[0]) || !pos(d.params[1]))
        return "normal needs a finite mean and stddev > 0";
      break;
    case DistKind::Cat:
      if (d.params.empty()) return "cat needs at least one weight";
      for (double w : d.params)
        if (!pos(w)) return "cat weights must be positive";
      break;
    case DistKind::Geo:
      if (d.params.size() != 1 || !in01(d.params[0])) return "geo needs p in (0,1)";
      break;
    case DistKind::Pois:
      if (d.params.size() != 1 || !pos(d.params[0])) return "pois needs rate > 0";
      break;
  }
  return "";
}

inline PrimDist make_dist(DistKind kind, std::vector<double> params) {
  PrimDist d{kind, std::move(params)};
  auto why = dist_param_violation(d);
  if (!why.empty()) throw EvalError("distribution parameter out of domain: " + why);
  return d;
}

// Carrier type per the distribution typing rules.
inline TypePtr result_type(const PrimDist& d) {
  switch (d.kind) {
    case DistKind::Ber: return types::boolean();
    case DistKind::Unif:
    case DistKind::Beta: return types::ureal();
    case DistKind::Gamma: return types::preal();
    case DistKind::Normal: return types::real();
    case DistKind::Cat: return types::fin_nat(d.params.size());
    case DistKind::Geo:
    case DistKind::Pois: return types::nat();
  }
  return types::real();
}

// Scalar-value membership in a scalar type; the support of every primitive
// distribution is exactly the set of inhabitants of its carrier type.
inline bool value_inhabits_scalar(const Value& v, const BaseType& t) {
  switch (t.kind) {
    case TypeKind::Unit:
      return v.kind() == ValueKind::Triv;
    case TypeKind::Bool:
      return v.kind() == ValueKind::Bool;
    case TypeKind::UnitReal:
      return v.kind() == ValueKind::Real && v.as_real() > 0.0 && v.as_real() < 1.0;
    case TypeKind::PosReal:
      return v.kind() == ValueKind::Real && std::isfinite(v.as_real()) && v.as_real() > 0.0;
    case TypeKind::Real:
      return v.kind() == ValueKind::Real && std::isfinite(v.as_real());
    case TypeKind::FinNat:
      return v.kind() == ValueKind::Nat && v.as_nat() < t.bound;
    case TypeKind::Nat:
      return v.kind() == ValueKind::Nat;
    default:
      return false;
  }
}

inline bool support_contains(const PrimDist& d, const Value& v) {
  return value_inhabits_scalar(v, *result_type(d));
}

namespace detail {

inline double cat_log_norm(const PrimDist& d) {
  double total = std::accumulate(d.params.begin(), d.params.end(), 0.0);
  return std::log(total);
}

}  // namespace detail

// Log of the standard pdf/pmf against the carrier's stock measure; weights of
// categorical distributions are normalized by their sum.
inline LogWeight log_density(const PrimDist& d, const Value& v) {
  if (!support_contains(d, v)) return LogWeight::impossible();
  switch (d.kind) {
    case DistKind::Ber: {
      double p = d.params[0];
      return LogWeight(std::log(v.as_bool() ? p : 1.0 - p));
    }
    case DistKind::Unif:
      return LogWeight(0.0);
    case DistKind::Beta: {
      double a = d.params[0], b = d.params[1], x = v.as_real();
      double log_b = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
      return LogWeight((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_b);
    }
    case DistKind::Gamma: {
      double k = d.params[0], rate = d.params[1], x = v.as_real();
      return LogWeight(k * std::log(rate) - std::lgamma(k) + (k - 1.0) * std::log(x) - rate * x);
    }
    case DistKind::Normal: {
      double m = d.params[0], s = d.params[1], x = v.as_real();
      double z = (x - m) / s;
      return LogWeight(-0.5 * z * z - std::log(s) - 0.5 * std::log(2.0 * M_PI));
    }
    case DistKind::Cat: {
      return LogWeight(std::log(d.params[v.as_nat()]) - detail::cat_log_norm(d));
    }
    case DistKind::Geo: {
      double p = d.params[0];
      double k = static_cast<double>(v.as_nat());
      return LogWeight(std::log(p) + k * std::log1p(-p));
    }
    case DistKind::Pois: {
      double rate = d.params[0];
      double k = static_cast<double>(v.as_nat());
      return LogWeight(k * std::log(rate) - rate - std::lgamma(k + 1.0));
    }
  }
  return LogWeight::impossible();
}

namespace detail {

inline double sample_standard_normal(Rng& rng) {
  // Marsaglia polar method.
  for (;;) {
    double u = 2.0 * rng.uniform_open01() - 1.0;
    double v = 2.0 * rng.uniform_open01() - 1.0;
    double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

// Marsaglia-Tsang; shapes below one are boosted through the k+1 recurrence.
inline double sample_gamma(Rng& rng, double shape, double rate) {
  if (shape < 1.0) {
    double u = rng.uniform_open01();
    return sample_gamma(rng, shape + 1.0, rate) * std::pow(u, 1.0 / shape);
  }
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = sample_standard_normal(rng);
    double t = 1.0 + c * x;
    if (t <= 0.0) continue;
    double v = t * t * t;
    double u = rng.uniform_open01();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
      double out = d * v / rate;
      return out > 0.0 ? out : std::numeric_limits<double>::min();
    }
  }
}

inline double clamp_open01(double x) {
  if (x <= 0.0) return std::numeric_limits<double>::min();
  if (x >= 1.0) return std::nexttoward(1.0, 0.0);
  return x;
}

}  // namespace detail

inline Value sample(const PrimDist& d, Rng& rng) {
  switch (d.kind) {
    case DistKind::Ber:
      return Value::boolean(rng.bernoulli(d.params[0]));
    case DistKind::Unif:
      return Value::real(rng.uniform_open01());
    case DistKind::Beta: {
      double x = detail::sample_gamma(rng, d.params[0], 1.0);
      double y = detail::sample_gamma(rng, d.params[1], 1.0);
      return Value::real(detail::clamp_open01(x / (x + y)));
    }
    case DistKind::Gamma:
      return Value::real(detail::sample_gamma(rng, d.params[0], d.params[1]));
    case DistKind::Normal:
      return Value::real(d.params[0] + d.params[1] * detail::sample_standard_normal(rng));
    case DistKind::Cat: {
      double total = std::accumulate(d.params.begin(), d.params.end(), 0.0);
      double u = rng.uniform_open01() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < d.params.size(); ++i) {
        acc += d.params[i];
        if (u < acc) return Value::nat(i);
      }
      return Value::nat(d.params.size() - 1);
    }
    case DistKind::Geo: {
      // Inverse CDF: P(K >= k) = (1-p)^k.
      double u = rng.uniform_open01();
      double k = std::floor(std::log(u) / std::log1p(-d.params[0]));
      return Value::nat(k < 0.0 ? 0 : static_cast<std::uint64_t>(k));
    }
    case DistKind::Pois: {
      // Inverse CDF over the pmf recurrence; fine at the rates this
      // interpreter meets (underflows only past rate ~700).
      double rate = d.params[0];
      double u = rng.uniform_open01();
      double pmf = std::exp(-rate);
      double cdf = pmf;
      std::uint64_t k = 0;
      while (u > cdf && k < 100000000ULL) {
        ++k;
        pmf *= rate / static_cast<double>(k);
        cdf += pmf;
      }
      return Value::nat(k);
    }
  }
  return Value::triv();
}

}  // namespace gpp
