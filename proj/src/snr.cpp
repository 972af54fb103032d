#include "snpkit/snr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace snpkit {

double signal_of(const LayerStats& ls) {
  if (ls.n_l <= 0) throw SnrError("N_l must be positive");
  return ls.diag * ls.n_m / static_cast<double>(ls.n_l);
}

double noise_internal(const LayerStats& ls, double signal) {
  if (ls.n_l <= 1) throw SnrError("N_l must exceed 1 for internal noise");
  if (ls.c_s < 1.0) return 0.0;
  return (ls.c_s - 1.0) / (ls.n_l - 1.0) * signal;
}

double noise_external(const LayerStats& ls, bool exact_denominator) {
  if (ls.n_l <= 0) throw SnrError("N_l must be positive");
  double denom = static_cast<double>(ls.n_l) * ls.n_l;
  if (exact_denominator) denom -= ls.c_s * ls.c_s * ls.n_c;
  return ls.n * ls.n_m / denom;
}

SnrReport snr(const LayerStats& ls, bool exact_denominator) {
  SnrReport r;
  r.threshold = ls.threshold;
  r.signal = signal_of(ls);
  r.noise_i = noise_internal(ls, r.signal);
  r.noise_e = noise_external(ls, exact_denominator);
  const double total = r.noise_i + r.noise_e;
  if (total <= 0.0) {
    if (r.signal > 0.0) throw SnrError("noiseless layer");
    r.snr = 0.0;
  } else {
    r.snr = r.signal / total;
  }
  r.snr_approx = ls.n > 0.0 ? ls.c_s * ls.n_c * ls.n_l / ls.n
                            : std::numeric_limits<double>::infinity();
  return r;
}

double snr_min(const std::vector<double>& appearances, const LayerStats& ls) {
  if (appearances.empty()) throw SnrError("no label histogram");
  const double minimum =
      *std::min_element(appearances.begin(), appearances.end());
  const double sig = signal_of(ls);
  const double total = noise_internal(ls, sig) + noise_external(ls);
  if (total <= 0.0) {
    if (minimum > 0.0) throw SnrError("noiseless layer");
    return 0.0;
  }
  return minimum / total;
}

SweepCurve threshold_sweep(const SnpSet& set,
                           const std::vector<double>& thresholds,
                           ClusterRule rule) {
  for (std::size_t i = 0; i + 1 < thresholds.size(); ++i)
    if (thresholds[i + 1] <= thresholds[i])
      throw SnrError("thresholds must be strictly increasing");
  SweepCurve curve;
  for (double th : thresholds) {
    const LayerAnalysis la = analyze_layer(set, th, rule);
    SnrReport r;
    r.threshold = th;
    r.signal = signal_of(la.stats);
    r.noise_i = noise_internal(la.stats, r.signal);
    r.noise_e = noise_external(la.stats);
    const double total = r.noise_i + r.noise_e;
    const double minimum =
        la.histograms.appearances.empty()
            ? 0.0
            : *std::min_element(la.histograms.appearances.begin(),
                                la.histograms.appearances.end());
    if (total > 0.0) {
      r.snr = r.signal / total;
      r.snr_min = minimum / total;
    } else {
      r.snr = r.signal > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
      r.snr_min = minimum > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
    r.snr_approx = la.stats.n > 0.0
                       ? la.stats.c_s * la.stats.n_c * la.stats.n_l / la.stats.n
                       : std::numeric_limits<double>::infinity();
    curve.thresholds.push_back(th);
    curve.reports.push_back(r);
    curve.stats.push_back(la.stats);
  }
  return curve;
}

WidthDiag width_diagnostic(int n_m, double diag, int n_l) {
  return (static_cast<double>(n_m) * diag < 10.0 * n_l) ? WidthDiag::warn
                                                        : WidthDiag::pass;
}

}  // namespace snpkit
