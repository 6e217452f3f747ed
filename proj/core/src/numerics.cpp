#include "mmpid/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

namespace mmpid {

Matrix column_softmax(const Matrix& z) {
  if (!z.all_finite()) throw std::invalid_argument("column_softmax: non-finite input");
  Matrix y(z.rows(), z.cols());
  for (std::size_t j = 0; j < z.cols(); ++j) {
    double mx = z(0, j);
    for (std::size_t i = 1; i < z.rows(); ++i) mx = std::max(mx, z(i, j));
    double sum = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const double e = std::exp(z(i, j) - mx);
      y(i, j) = e;
      sum += e;
    }
    for (std::size_t i = 0; i < z.rows(); ++i) y(i, j) /= sum;
  }
  return y;
}

void softmax_inplace(std::span<double> logits) {
  if (logits.empty()) return;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : logits) v /= sum;
}

Matrix gram(const Matrix& f) { return matmul_tn(f, f); }

GradCheckResult grad_check(const ScalarFunction& f, std::span<const double> x,
                           std::span<const double> analytic, double eps) {
  if (x.size() != analytic.size()) {
    throw std::invalid_argument("grad_check: gradient length does not match point");
  }
  std::vector<double> probe(x.begin(), x.end());
  GradCheckResult result;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const double saved = probe[k];
    probe[k] = saved + eps;
    const double fp = f(probe);
    probe[k] = saved - eps;
    const double fm = f(probe);
    probe[k] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("grad_check: non-finite function value at coordinate " +
                               std::to_string(k));
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({1.0, std::abs(analytic[k]), std::abs(numeric)});
    const double err = std::abs(analytic[k] - numeric) / denom;
    if (err > result.max_rel_error || k == 0) {
      result = {err, k, analytic[k], numeric};
    }
  }
  return result;
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(resolve_threads(threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace mmpid
