#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "optbench/rng.hpp"
#include "optbench/tensor.hpp"

namespace optbench {

struct FdReport {
  double max_rel_err = 0.0;
  std::int64_t coords_checked = 0;
  bool loss_finite = true;
};

// Central-difference comparison of already-computed analytic gradients
// (params[i]->grad) against fresh 64-bit loss evaluations. `loss_fn` must
// re-evaluate the loss at the params' current values. Checks all coordinates
// when the parameter count is small, otherwise a random subset of
// `max_coords` drawn from `rng`. Tolerates an empty parameter list.
inline FdReport central_difference_check(std::span<Tensor<double>* const> params,
                                         const std::function<double()>& loss_fn,
                                         std::int64_t max_coords, double h,
                                         Philox& rng) {
  FdReport report;
  std::int64_t total = 0;
  for (const Tensor<double>* p : params) total += p->numel();
  if (total == 0) return report;

  auto coord_of = [&](std::int64_t flat) -> std::pair<Tensor<double>*, std::int64_t> {
    for (Tensor<double>* p : params) {
      if (flat < p->numel()) return {p, flat};
      flat -= p->numel();
    }
    return {nullptr, 0};
  };

  std::vector<std::int64_t> coords;
  if (total <= max_coords) {
    coords.resize(static_cast<size_t>(total));
    for (std::int64_t i = 0; i < total; ++i) coords[static_cast<size_t>(i)] = i;
  } else {
    coords.reserve(static_cast<size_t>(max_coords));
    while (static_cast<std::int64_t>(coords.size()) < max_coords) {
      std::int64_t c = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total)));
      bool dup = false;
      for (std::int64_t seen : coords) {
        if (seen == c) { dup = true; break; }
      }
      if (!dup) coords.push_back(c);
    }
  }

  for (std::int64_t flat : coords) {
    auto [p, i] = coord_of(flat);
    double saved = p->values[static_cast<size_t>(i)];
    p->values[static_cast<size_t>(i)] = saved + h;
    double up = loss_fn();
    p->values[static_cast<size_t>(i)] = saved - h;
    double down = loss_fn();
    p->values[static_cast<size_t>(i)] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      report.loss_finite = false;
      continue;
    }
    double fd = (up - down) / (2.0 * h);
    double analytic = p->grad.empty() ? 0.0 : p->grad[static_cast<size_t>(i)];
    double denom = std::max({std::abs(fd), std::abs(analytic), 1.0});
    double rel = std::abs(fd - analytic) / denom;
    report.max_rel_err = std::max(report.max_rel_err, rel);
    ++report.coords_checked;
  }
  return report;
}

}  // namespace optbench
