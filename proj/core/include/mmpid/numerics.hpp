#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mmpid/matrix.hpp"

namespace mmpid {

// Y(i,j) = exp(Z(i,j)) / sum_i exp(Z(i,j)). Each column is normalized over its
// rows, with the column max subtracted first. Throws std::invalid_argument on
// non-finite input.
Matrix column_softmax(const Matrix& z);

// In-place stable softmax of a vector.
void softmax_inplace(std::span<double> logits);

// F^T F for a (reduced-dim x slots) feature map.
Matrix gram(const Matrix& f);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using ScalarFunction = std::function<double(std::span<const double>)>;

// Compares `analytic` against central differences of `f` at `x`, one
// coordinate at a time. The error per coordinate is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
// Throws std::runtime_error naming the coordinate if f is non-finite.
GradCheckResult grad_check(const ScalarFunction& f, std::span<const double> x,
                           std::span<const double> analytic, double eps = 1e-5);

// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
// concurrency). Iterations must be independent.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

std::size_t resolve_threads(std::size_t requested);

}  // namespace mmpid
