#pragma once

#include <memory>
#include <vector>

#include "mlestruct/common.hpp"
#include "mlestruct/exact.hpp"
#include "mlestruct/model.hpp"

namespace mlestruct {

enum class SynthRegime { HighSNR, LowSNR, Custom };

inline const char* to_string(SynthRegime r) {
  switch (r) {
    case SynthRegime::HighSNR: return "high_snr";
    case SynthRegime::LowSNR: return "low_snr";
    case SynthRegime::Custom: return "custom";
  }
  return "?";
}

struct SynthSpec {
  SynthRegime regime = SynthRegime::HighSNR;
  int n = 10;
  int num_samples = 100;
  Matrix custom_w;  // used when regime == Custom
};

/// Ground-truth weight matrices of the synthetic bipartite regimes:
/// zero diagonal with -2 (high SNR) or -0.5 (low SNR) off-diagonal.
inline Matrix regime_weight_matrix(const SynthSpec& spec) {
  if (spec.regime == SynthRegime::Custom) {
    if (spec.custom_w.rows() != spec.n || spec.custom_w.cols() != spec.n)
      throw StructuralError("custom weight matrix does not match n");
    return spec.custom_w;
  }
  const double off = spec.regime == SynthRegime::HighSNR ? -2.0 : -0.5;
  Matrix w(spec.n, spec.n, off);
  for (int i = 0; i < spec.n; ++i) w(i, i) = 0.0;
  return w;
}

/// Draws one permutation exactly from p(Y) ~ exp(sum_i W_{i, Y(i)}) by
/// sequential conditional sampling with permanent ratios: row i maps to j
/// with probability exp(W_ij) per(minor_ij) / per(remaining), no MCMC.
inline std::vector<int> sample_permutation_exact(const Matrix& w, Rng& rng) {
  const int n = w.rows();
  if (n != w.cols() || n < 1) throw StructuralError("weight matrix must be square");
  std::vector<int> cols(n);
  for (int j = 0; j < n; ++j) cols[j] = j;
  std::vector<int> perm(n, -1);
  Matrix rem = w;
  for (int i = 0; i < n; ++i) {
    const int k = rem.rows();
    std::vector<double> logw(k);
    if (k == 1) {
      logw[0] = 0.0;
    } else {
      for (int j = 0; j < k; ++j)
        logw[j] = rem(0, j) + log_permanent_of_exp(detail::log_weight_minor(rem, 0, j));
    }
    const double lse = logsumexp(logw);
    const double u = rng.uniform();
    double acc = 0.0;
    int pick = k - 1;
    for (int j = 0; j < k; ++j) {
      acc += std::exp(logw[j] - lse);
      if (u < acc) {
        pick = j;
        break;
      }
    }
    perm[i] = cols[pick];
    cols.erase(cols.begin() + pick);
    rem = detail::log_weight_minor(rem, 0, pick);
  }
  return perm;
}

/// K = n^2 indicator feature matrices, so theta is the weight matrix itself
/// (the generative parameterization).
inline std::shared_ptr<const Features> identity_features(int n) {
  auto f = std::make_shared<Features>();
  f->matching.reserve(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Matrix e(n, n);
      e(i, j) = 1.0;
      f->matching.push_back(std::move(e));
    }
  return f;
}

/// Synthetic bipartite dataset: exact samples from the regime distribution
/// with shared identity features. Exact sampling is capped at n = 10.
inline Dataset synth_bipartite_dataset(const SynthSpec& spec, uint64_t seed) {
  if (spec.n < 1 || spec.n > 10)
    throw SizeCapError("exact synthetic sampling capped at n = 10");
  if (spec.num_samples < 1) throw StructuralError("need at least one sample");
  const Matrix w = regime_weight_matrix(spec);
  Dataset data;
  auto features = identity_features(spec.n);
  data.base = make_bipartite_model(spec.n, features);
  Rng rng(seed);
  data.features.reserve(spec.num_samples);
  data.observations.reserve(spec.num_samples);
  for (int m = 0; m < spec.num_samples; ++m) {
    data.features.push_back(features);
    data.observations.push_back(sample_permutation_exact(w, rng));
  }
  return data;
}

}  // namespace mlestruct
