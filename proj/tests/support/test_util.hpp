#pragma once

// Shared helpers for the test suites: seeded generators and independent
// reference implementations (deliberately written without library kernels).

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "emasam/linalg.hpp"
#include "emasam/rng.hpp"

namespace testutil {

using emasam::CounterRng;
using emasam::Mat;
using emasam::Vec;

inline Mat random_mat(std::size_t r, std::size_t c, CounterRng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (auto& v : m.span()) v = scale * rng.normal();
  return m;
}

inline Vec random_vec(std::size_t d, CounterRng& rng, double scale = 1.0) {
  Vec v(d);
  for (auto& x : v.span()) x = scale * rng.normal();
  return v;
}

inline int random_int(CounterRng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.uniform() * (hi - lo + 1));
}

/// Straight double loop: out_i = sum_j w_ij v_j with w_i = softmax(scale q_i . k_j).
inline Mat brute_attention(const Mat& q, const Mat& k, const Mat& v, double scale) {
  Mat out(q.rows(), v.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<long double> s(k.rows());
    long double mx = -INFINITY;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      long double acc = 0;
      for (std::size_t c = 0; c < q.cols(); ++c) acc += static_cast<long double>(q(i, c)) * k(j, c);
      s[j] = acc * scale;
      if (s[j] > mx) mx = s[j];
    }
    long double z = 0;
    for (auto& x : s) {
      x = std::exp(x - mx);
      z += x;
    }
    for (std::size_t c = 0; c < v.cols(); ++c) {
      long double acc = 0;
      for (std::size_t j = 0; j < k.rows(); ++j) acc += s[j] / z * v(j, c);
      out(i, c) = static_cast<double>(acc);
    }
  }
  return out;
}

/// Central difference of f with respect to *x.
inline double central_difference(const std::function<double()>& f, double* x, double h = 1e-5) {
  const double saved = *x;
  *x = saved + h;
  const double up = f();
  *x = saved - h;
  const double down = f();
  *x = saved;
  return (up - down) / (2.0 * h);
}

/// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testutil
