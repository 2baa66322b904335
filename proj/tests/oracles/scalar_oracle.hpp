#pragma once

// Straight-line reference for the surrogate objectives and the proximal
// interpolation. No autodiff, no shared code with the library; gradients are
// derived by hand per branch.
//
// Per token, with ratio q and advantage A:
//   u = q A,  c = clamp(q, 1 - eps, 1 + eps) A,  f = min(u, c)
//   df/dq = A when u <= c (unclipped branch active, ties included)
//         = 0 otherwise (clipped branch is constant in q)
// and dq/dlogp_theta = q, so the token gradient is q A or 0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace oracle {

struct Result {
  double objective = 0.0;
  std::vector<double> grad;  // d objective / d logp_theta
  std::size_t clipped = 0;
  double iw_max = 0.0;
  double iw_min = 0.0;
};

inline double clamp_scalar(double x, double lo, double hi) {
  if (x < lo) return lo;
  if (x > hi) return hi;
  return x;
}

// Weighted clipped surrogate of one token; returns value, writes dvalue/dq.
inline double token_surrogate(double q, double a, double eps, double& dq, bool& clipped) {
  const double u = q * a;
  const double c = clamp_scalar(q, 1.0 - eps, 1.0 + eps) * a;
  if (u <= c) {
    dq = a;
    clipped = false;
    return u;
  }
  dq = 0.0;
  clipped = true;
  return c;
}

inline Result coupled(const std::vector<double>& theta, const std::vector<double>& old,
                      const std::vector<double>& adv, double eps) {
  const std::size_t n = theta.size();
  Result r;
  r.grad.assign(n, 0.0);
  r.iw_max = -INFINITY;
  r.iw_min = INFINITY;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::exp(theta[i] - old[i]);
    double dq = 0.0;
    bool clipped = false;
    total += token_surrogate(q, adv[i], eps, dq, clipped);
    r.grad[i] = dq * q / static_cast<double>(n);
    r.clipped += clipped ? 1 : 0;
    r.iw_max = std::max(r.iw_max, q);
    r.iw_min = std::min(r.iw_min, q);
  }
  r.objective = total / static_cast<double>(n);
  return r;
}

inline Result decoupled(const std::vector<double>& theta, const std::vector<double>& prox,
                        const std::vector<double>& behav, const std::vector<double>& adv,
                        double eps) {
  const std::size_t n = theta.size();
  Result r;
  r.grad.assign(n, 0.0);
  r.iw_max = -INFINITY;
  r.iw_min = INFINITY;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = std::exp(prox[i] - behav[i]);
    const double rho = std::exp(theta[i] - prox[i]);
    double drho = 0.0;
    bool clipped = false;
    total += w * token_surrogate(rho, adv[i], eps, drho, clipped);
    r.grad[i] = w * drho * rho / static_cast<double>(n);
    r.clipped += clipped ? 1 : 0;
    const double e2e = std::exp(theta[i] - behav[i]);
    r.iw_max = std::max(r.iw_max, e2e);
    r.iw_min = std::min(r.iw_min, e2e);
  }
  r.objective = total / static_cast<double>(n);
  return r;
}

inline double alpha(std::int64_t s) { return s == 0 ? 0.0 : 1.0 / static_cast<double>(s); }

inline std::vector<double> loglinear_prox(const std::vector<double>& behav,
                                          const std::vector<double>& cur,
                                          const std::vector<std::int64_t>& versions,
                                          std::int64_t current) {
  std::vector<double> out(behav.size());
  for (std::size_t i = 0; i < behav.size(); ++i) {
    const double a = alpha(current - versions[i]);
    out[i] = a * behav[i] + (1.0 - a) * cur[i];
  }
  return out;
}

}  // namespace oracle
