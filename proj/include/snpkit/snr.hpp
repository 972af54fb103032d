#pragma once

#include <stdexcept>
#include <vector>

#include "snpkit/cluster.hpp"

namespace snpkit {

class SnrError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SnrReport {
  double signal = 0.0;
  double noise_i = 0.0;
  double noise_e = 0.0;
  double snr = 0.0;
  double snr_approx = 0.0;  // C_s * N_c * N_l / n
  double snr_min = -1.0;    // -1 when label histograms were unavailable
  double threshold = 0.0;
};

// signal = diag * N_M / N_l (measured mean diagonal, not the C_s*N_c product)
double signal_of(const LayerStats& ls);

// (C_s - 1) / (N_l - 1) * signal, clamped to 0 for C_s < 1
double noise_internal(const LayerStats& ls, double signal);

// n * N_M / N_l^2; exact_denominator uses N_l^2 - C_s^2 * N_c instead
double noise_external(const LayerStats& ls, bool exact_denominator = false);

// Throws SnrError on a noiseless layer with positive signal.
SnrReport snr(const LayerStats& ls, bool exact_denominator = false);

// Replaces the signal by the least-represented label's appearance count.
double snr_min(const std::vector<double>& appearances, const LayerStats& ls);

struct SweepCurve {
  std::vector<double> thresholds;
  std::vector<SnrReport> reports;
  std::vector<LayerStats> stats;
};

// Reclips, reclusters and recomputes the report at each threshold. A
// noiseless point is recorded as snr = +inf rather than an error.
SweepCurve threshold_sweep(const SnpSet& set,
                           const std::vector<double>& thresholds,
                           ClusterRule rule = ClusterRule::mutual);

enum class WidthDiag { pass, warn };

// warn when N_M * diag < 10 * N_l (each label must appear multiple times)
WidthDiag width_diagnostic(int n_m, double diag, int n_l);

}  // namespace snpkit
