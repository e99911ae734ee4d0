#pragma once

// Pair-rate optimization: find mu maximizing the predicted secure key rate
// and the band of mu over which the rate stays within 90% of that maximum.

#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "qkdsim/link_model.hpp"
#include "qkdsim/parallel.hpp"

namespace qkdsim {

struct MuBounds {
  double lo = 1e-5;
  double hi = 1.0;
};

struct Optimum {
  double mu_opt = 0.0;
  double pair_rate_opt = 0.0;  ///< pairs/s
  double skr_max = 0.0;        ///< bits/s
  double band_lo = 0.0;        ///< smallest mu with skr >= 0.9 skr_max
  double band_hi = 0.0;        ///< largest mu with skr >= 0.9 skr_max
};

struct GoldenSectionResult {
  double x = 0.0;
  double value = 0.0;
  int evaluations = 0;
};

/// Maximizes a unimodal f on [lo, hi] until the bracket is narrower than tol.
template <typename F>
GoldenSectionResult golden_section_maximize(F&& f, double lo, double hi, double tol, int max_iter = 200) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = f(c), fd = f(d);
  int evals = 2;
  for (int i = 0; i < max_iter && (hi - lo) > tol; ++i) {
    // ties move towards lo so plateaus resolve to the smaller argument
    if (fc >= fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = f(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = f(d);
    }
    ++evals;
  }
  return fc >= fd ? GoldenSectionResult{c, fc, evals} : GoldenSectionResult{d, fd, evals};
}

namespace detail {

// Bisection for g(x) = 0 with g(inside) >= 0 > g(outside).
template <typename G>
double bisect_crossing(G&& g, double inside, double outside, int iters = 200) {
  for (int i = 0; i < iters; ++i) {
    const double mid = 0.5 * (inside + outside);
    if (mid == inside || mid == outside) break;
    if (g(mid) >= 0.0) inside = mid; else outside = mid;
  }
  return inside;
}

}  // namespace detail

inline constexpr int kBracketGridPoints = 64;
inline constexpr double kLogMuTolerance = 1e-4;

/// Generic form over any key-rate function of mu. `loss_db` only labels the
/// no-key error.
template <typename SkrOfMu>
Optimum optimize_mu(SkrOfMu&& skr_of_mu, MuBounds bounds, double window, double loss_db) {
  if (!(bounds.lo > 0.0 && bounds.hi > bounds.lo && std::isfinite(bounds.hi))) {
    throw UsageError("optimize_pair_rate: bounds must satisfy 0 < lo < hi");
  }
  auto f = [&](double log_mu) { return skr_of_mu(std::exp(log_mu)); };
  const double a = std::log(bounds.lo), b = std::log(bounds.hi);

  std::vector<double> grid(kBracketGridPoints), values(kBracketGridPoints);
  std::size_t best = 0;
  for (int i = 0; i < kBracketGridPoints; ++i) {
    grid[i] = i == kBracketGridPoints - 1 ? b : a + (b - a) * i / (kBracketGridPoints - 1);
    values[i] = f(grid[i]);
    if (values[i] > values[best]) best = static_cast<std::size_t>(i);
  }
  if (!(values[best] > 0.0)) {
    throw NoKeyError(detail::concat("no positive key rate for mu in [", bounds.lo, ", ", bounds.hi,
                                    "] at total loss ", loss_db, " dB: loss beyond reach"),
                     loss_db);
  }

  const std::size_t lo_i = best == 0 ? 0 : best - 1;
  const std::size_t hi_i = std::min<std::size_t>(best + 1, kBracketGridPoints - 1);
  auto gs = golden_section_maximize(f, grid[lo_i], grid[hi_i], kLogMuTolerance);

  double x_best = grid[best], f_best = values[best];
  const double candidates[] = {gs.x, grid[lo_i], grid[hi_i]};
  for (double x : candidates) {
    const double v = x == gs.x ? gs.value : f(x);
    if (v > f_best || (v == f_best && x < x_best)) {
      x_best = x;
      f_best = v;
    }
  }

  Optimum out;
  out.mu_opt = std::exp(x_best);
  out.pair_rate_opt = out.mu_opt / window;
  out.skr_max = f_best;
  const double target = 0.9 * f_best;
  auto g = [&](double x) { return f(x) - target; };
  out.band_lo = g(a) >= 0.0 ? bounds.lo : std::exp(detail::bisect_crossing(g, x_best, a));
  out.band_hi = g(b) >= 0.0 ? bounds.hi : std::exp(detail::bisect_crossing(g, x_best, b));
  return out;
}

inline Optimum optimize_pair_rate(const LinkModel& link, MuBounds bounds = {}) {
  link.validate();
  return optimize_mu([&](double mu) { return predict(link.with_mu(mu)).skr; }, bounds,
                     link.protocol.coincidence_window, link.total_loss_db());
}

struct OptimumAtLoss {
  double loss_db = 0.0;
  std::optional<Optimum> optimum;  ///< empty when no key is reachable
  std::string error;
};

inline std::vector<OptimumAtLoss> optimum_vs_loss(const LinkModel& link, const std::vector<double>& loss_grid,
                                                  MuBounds bounds = {}) {
  if (loss_grid.empty()) throw UsageError("optimum_vs_loss: empty grid");
  for (std::size_t i = 1; i < loss_grid.size(); ++i) {
    if (!(loss_grid[i] > loss_grid[i - 1])) throw UsageError("optimum_vs_loss: grid must be strictly increasing");
  }
  std::vector<OptimumAtLoss> out(loss_grid.size());
  parallel_for(loss_grid.size(), [&](std::size_t i) {
    out[i].loss_db = loss_grid[i];
    try {
      out[i].optimum = optimize_pair_rate(link.with_total_loss(loss_grid[i]), bounds);
    } catch (const NoKeyError& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

inline void write_optimum_csv(std::ostream& os, const std::vector<OptimumAtLoss>& series) {
  os << "loss_db_total,mu_opt,pair_rate_opt_pps,skr_max_bps,band_lo_mu,band_hi_mu\n";
  os.precision(10);
  for (const auto& row : series) {
    os << row.loss_db << ',';
    if (row.optimum) {
      const auto& o = *row.optimum;
      os << o.mu_opt << ',' << o.pair_rate_opt << ',' << o.skr_max << ',' << o.band_lo << ',' << o.band_hi << '\n';
    } else {
      os << "nan,nan,0,nan,nan\n";
    }
  }
}

}  // namespace qkdsim
