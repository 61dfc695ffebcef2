#pragma once

// Beta and Dirichlet densities, entropies and samplers, both as plain values
// and as tape expressions so gradients reach the policy heads.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "planforge/diffmath/special.hpp"
#include "planforge/diffmath/tape.hpp"
#include "planforge/error.hpp"

namespace planforge::policy {

using diffmath::Tape;
using diffmath::Tensor2;
using diffmath::Var;

inline constexpr double kInteriorEps = 1e-6;

inline double clamp_unit(double s) { return std::clamp(s, kInteriorEps, 1.0 - kInteriorEps); }

/// Lifts every component to at least eps and renormalises.
inline std::vector<double> clamp_simplex(std::span<const double> p) {
  std::vector<double> q(p.begin(), p.end());
  double s = 0.0;
  for (double& v : q) s += (v = std::max(v, kInteriorEps));
  for (double& v : q) v /= s;
  return q;
}

namespace detail {
inline void require_positive_params(double a, const char* what) {
  if (!(a > 0.0) || !std::isfinite(a)) throw NumericError(std::string(what) + ": parameters must be positive and finite");
}
}  // namespace detail

// ---- values ----

inline double beta_log_pdf(double a, double b, double s) {
  detail::require_positive_params(a, "beta_log_pdf");
  detail::require_positive_params(b, "beta_log_pdf");
  s = clamp_unit(s);
  using diffmath::lgamma;
  return lgamma(a + b) - lgamma(a) - lgamma(b) + (a - 1.0) * std::log(s) + (b - 1.0) * std::log1p(-s);
}

inline double beta_entropy(double a, double b) {
  detail::require_positive_params(a, "beta_entropy");
  detail::require_positive_params(b, "beta_entropy");
  using diffmath::digamma;
  using diffmath::lgamma;
  return lgamma(a) + lgamma(b) - lgamma(a + b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) +
         (a + b - 2.0) * digamma(a + b);
}

inline double dirichlet_log_pdf(std::span<const double> eta, std::span<const double> p) {
  if (eta.size() != p.size() || eta.size() < 2) throw DimensionError("dirichlet_log_pdf: size mismatch or K < 2");
  const auto q = clamp_simplex(p);
  double a0 = 0.0, out = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    detail::require_positive_params(eta[i], "dirichlet_log_pdf");
    a0 += eta[i];
    out += (eta[i] - 1.0) * std::log(q[i]) - diffmath::lgamma(eta[i]);
  }
  return out + diffmath::lgamma(a0);
}

inline double dirichlet_entropy(std::span<const double> eta) {
  if (eta.size() < 2) throw DimensionError("dirichlet_entropy: K < 2");
  double a0 = 0.0, out = 0.0;
  for (double a : eta) {
    detail::require_positive_params(a, "dirichlet_entropy");
    a0 += a;
    out += diffmath::lgamma(a) - (a - 1.0) * diffmath::digamma(a);
  }
  const double k = static_cast<double>(eta.size());
  return out - diffmath::lgamma(a0) + (a0 - k) * diffmath::digamma(a0);
}

template <class Rng>
double sample_beta(double a, double b, Rng& rng) {
  detail::require_positive_params(a, "sample_beta");
  detail::require_positive_params(b, "sample_beta");
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

template <class Rng>
std::vector<double> sample_dirichlet(std::span<const double> eta, Rng& rng) {
  std::vector<double> g(eta.size());
  double s = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    detail::require_positive_params(eta[i], "sample_dirichlet");
    s += (g[i] = std::gamma_distribution<double>(eta[i], 1.0)(rng));
  }
  if (s == 0.0) return std::vector<double>(eta.size(), 1.0 / static_cast<double>(eta.size()));
  for (double& v : g) v /= s;
  return g;
}

// ---- tape expressions; a, b are 1x1 and eta is 1xK ----

inline Var beta_log_pdf(const Var& a, const Var& b, double s) {
  s = clamp_unit(s);
  using diffmath::lgamma;
  return lgamma(a + b) - lgamma(a) - lgamma(b) + (a - 1.0) * std::log(s) + (b - 1.0) * std::log1p(-s);
}

inline Var beta_entropy(const Var& a, const Var& b) {
  using diffmath::digamma;
  using diffmath::lgamma;
  const Var ab = a + b;
  return lgamma(a) + lgamma(b) - lgamma(ab) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) +
         (ab - 2.0) * digamma(ab);
}

inline Var dirichlet_log_pdf(const Var& eta, std::span<const double> p) {
  if (eta.cols() != p.size() || eta.rows() != 1) throw DimensionError("dirichlet_log_pdf: size mismatch");
  const auto q = clamp_simplex(p);
  Tensor2 logp(1, q.size());
  for (std::size_t i = 0; i < q.size(); ++i) logp[i] = std::log(q[i]);
  Tape& t = *eta.tape();
  using diffmath::lgamma;
  using diffmath::sum;
  return lgamma(sum(eta)) - sum(lgamma(eta)) + sum((eta - 1.0) * t.constant(std::move(logp)));
}

inline Var dirichlet_entropy(const Var& eta) {
  using diffmath::digamma;
  using diffmath::lgamma;
  using diffmath::sum;
  const Var a0 = sum(eta);
  const double k = static_cast<double>(eta.cols());
  return sum(lgamma(eta)) - lgamma(a0) + (a0 - k) * digamma(a0) - sum((eta - 1.0) * digamma(eta));
}

}  // namespace planforge::policy
