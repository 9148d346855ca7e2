#pragma once

// Test-only reference computations. Nothing here calls into the code paths
// it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "atm/rng.hpp"
#include "atm/tensor.hpp"

namespace oracle {

inline atm::Tensor random_tensor(atm::Rng& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0,
                                 bool requires_grad = false) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(lo, hi);
  return atm::Tensor(r, c, std::move(v), requires_grad);
}

// Central differences of `loss` with respect to every entry of `param`,
// perturbing the parameter storage in place.
inline std::vector<double> central_difference(const std::function<double()>& loss, atm::Tensor& param,
                                              double h = 1e-6) {
  std::vector<double> out(param.size());
  auto data = param.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + h;
    const double fp = loss();
    data[i] = orig - h;
    const double fm = loss();
    data[i] = orig;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

inline double max_rel_error(std::span<const double> analytic, std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

inline double sqdist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// All-pairs finite-sample MDD written as three independent loops.
inline double mdd_triple_loop(const std::vector<std::vector<double>>& s, const std::vector<std::vector<double>>& t) {
  const std::size_t d = s[0].size();
  double cross = 0.0, ss = 0.0, tt = 0.0;
  for (const auto& a : s)
    for (const auto& b : t) cross += sqdist(a.data(), b.data(), d);
  for (const auto& a : s)
    for (const auto& b : s) ss += sqdist(a.data(), b.data(), d);
  for (const auto& a : t)
    for (const auto& b : t) tt += sqdist(a.data(), b.data(), d);
  const double ns = static_cast<double>(s.size()), nt = static_cast<double>(t.size());
  return cross / (ns * nt) + ss / (ns * ns) + tt / (nt * nt);
}

// Batch MDD by direct summation: paired cross term plus same-label means.
inline double mdd_batch_direct(const std::vector<std::vector<double>>& sf, const std::vector<std::vector<double>>& tf,
                               const std::vector<int>& ys, const std::vector<int>& yt,
                               std::array<bool, 3> mask = {true, true, true}) {
  const std::size_t n = sf.size(), d = sf[0].size();
  double total = 0.0;
  if (mask[0]) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += sqdist(sf[i].data(), tf[i].data(), d);
    total += s / static_cast<double>(n);
  }
  auto intra = [&](const std::vector<std::vector<double>>& x, const std::vector<int>& y) {
    double s = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (y[i] == y[j]) {
          s += sqdist(x[i].data(), x[j].data(), d);
          ++count;
        }
    return count ? s / static_cast<double>(count) : 0.0;
  };
  if (mask[1]) total += intra(sf, ys);
  if (mask[2]) total += intra(tf, yt);
  return total;
}

}  // namespace oracle
