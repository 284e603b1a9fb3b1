#ifndef RPCOVA_TESTS_HELPERS_HPP
#define RPCOVA_TESTS_HELPERS_HPP

#include "rpcova/simlab.hpp"

namespace testing {

using rpcova::Index;
using rpcova::MatrixXd;
using rpcova::VectorXd;

inline MatrixXd uniform_matrix(rpcova::Rng& rng, Index n, Index d, double lo, double hi) {
  MatrixXd X(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) X(i, j) = lo + (hi - lo) * rng.uniform();
  }
  return X;
}

inline VectorXd normal_vector(rpcova::Rng& rng, Index n) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

inline MatrixXd normal_matrix(rpcova::Rng& rng, Index n, Index d) {
  MatrixXd X(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) X(i, j) = rng.normal();
  }
  return X;
}

inline VectorXd bernoulli_vector(rpcova::Rng& rng, Index n, double p) {
  VectorXd z(n);
  for (Index i = 0; i < n; ++i) z(i) = rng.bernoulli(p) ? 1.0 : 0.0;
  return z;
}

inline rpcova::DgpSpec dgp(rpcova::ModelId model, Index n, int d, std::uint64_t seed) {
  rpcova::DgpSpec spec;
  spec.model = model;
  spec.n = n;
  spec.d = d;
  spec.seed = seed;
  return spec;
}

inline double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace testing

#endif
