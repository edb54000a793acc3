#pragma once

// Central finite-difference oracle for gradient verification. Kept in test
// code so the checks stay independent of the tape implementation they verify.

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "hdformer/ops.hpp"
#include "hdformer/tensor.hpp"

namespace gradcheck {

struct Report {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Relative error against a max(1, |analytic|) denominator.
inline double rel_err(double analytic, double fd) {
  return std::abs(fd - analytic) / std::max(1.0, std::abs(analytic));
}

// `build` must recompute the scalar output from the current leaf values.
// `tape` is cleared before every evaluation, so repeated builds do not
// accumulate stale entries. When max_coords_per_leaf > 0, only that many
// randomly chosen coordinates per leaf are perturbed.
inline Report check(hdf::Tape& tape, const std::function<hdf::Tensor()>& build,
                    std::span<hdf::Tensor> leaves, double step = 1e-5,
                    std::int64_t max_coords_per_leaf = 0,
                    std::uint64_t coord_seed = 17) {
  tape.clear();
  for (auto& leaf : leaves) leaf.zero_grad();
  hdf::Tensor out = build();
  tape.backward(out);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());

  std::mt19937_64 rng(coord_seed);
  Report rep;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& data = leaves[l].raw();
    std::vector<std::size_t> coords(data.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords_per_leaf > 0 &&
        coords.size() > static_cast<std::size_t>(max_coords_per_leaf)) {
      // Fisher-Yates prefix shuffle, then truncate.
      for (std::size_t i = 0; i < static_cast<std::size_t>(max_coords_per_leaf);
           ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(rng() % (coords.size() - i));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(static_cast<std::size_t>(max_coords_per_leaf));
    }
    for (std::size_t ci : coords) {
      const double orig = data[ci];
      data[ci] = orig + step;
      tape.clear();
      const double fplus = build().scalar_value();
      data[ci] = orig - step;
      tape.clear();
      const double fminus = build().scalar_value();
      data[ci] = orig;
      const double fd = (fplus - fminus) / (2.0 * step);
      rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic[l][ci], fd));
      ++rep.checked;
    }
  }
  tape.clear();
  return rep;
}

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng,
                                         double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& e : v) e = hdf::uniform_range(rng, lo, hi);
  return v;
}

}  // namespace gradcheck
