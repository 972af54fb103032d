#include "snpkit/heads.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "snpkit/kernels.hpp"
#include "snpkit/rng.hpp"

namespace snpkit {

std::vector<HeadProfile> head_label_counts(
    const std::vector<ClusterSet>& clusters, int n_labels, int num_heads) {
  const int n_m = static_cast<int>(clusters.size());
  if (num_heads <= 0 || n_m % num_heads != 0)
    throw std::invalid_argument("matrix count " + std::to_string(n_m) +
                                " not divisible by " +
                                std::to_string(num_heads) + " heads");
  const int per_head = n_m / num_heads;
  std::vector<HeadProfile> profiles(num_heads);
  for (int h = 0; h < num_heads; ++h) {
    profiles[h].head = h + 1;
    profiles[h].node_lo = h * per_head;
    profiles[h].node_hi = (h + 1) * per_head;
    profiles[h].counts.assign(n_labels, 0);
    for (int m = profiles[h].node_lo; m < profiles[h].node_hi; ++m)
      for (const auto& c : clusters[m].clusters)
        for (int l : c) profiles[h].counts[l]++;
  }
  return profiles;
}

void assign_labels(std::vector<HeadProfile>& profiles, double th_ratio) {
  if (th_ratio <= 1.0)
    throw std::invalid_argument("Th_Ratio must exceed 1");
  if (profiles.empty()) return;
  const int n_labels = static_cast<int>(profiles[0].counts.size());
  for (auto& p : profiles) p.assigned.clear();
  for (int l = 0; l < n_labels; ++l) {
    for (std::size_t h = 0; h < profiles.size(); ++h) {
      const int mine = profiles[h].counts[l];
      if (mine <= 0) continue;
      int best_other = 0;
      for (std::size_t h2 = 0; h2 < profiles.size(); ++h2)
        if (h2 != h) best_other = std::max(best_other, profiles[h2].counts[l]);
      if (static_cast<double>(mine) >= th_ratio * best_other) {
        profiles[h].assigned.push_back(l);
        break;  // at most one head can satisfy the criterion for ratio > 1
      }
    }
  }
}

Matrix per_head_accuracy(const std::vector<Matrix>& features,
                         const ClassifierHead& head_classifier,
                         const Dataset& ds, int num_heads, Split split) {
  if (head_classifier.width % num_heads != 0)
    throw std::invalid_argument("classifier width not divisible by head count");
  const int per_head = head_classifier.width / num_heads;
  const auto idx = ds.indices(split);
  if (idx.empty()) throw DataError("split " + to_string(split) + " is empty");

  Matrix correct(num_heads, ds.n_labels);
  std::vector<double> total(ds.n_labels, 0.0);
  std::vector<double> logits(ds.n_labels);
  for (auto i : idx) {
    const auto pooled = head_classifier.pooled(features[i]);
    total[ds.labels[i]] += 1.0;
    for (int h = 0; h < num_heads; ++h) {
      const int lo = h * per_head, hi = (h + 1) * per_head;
      for (int j = 0; j < ds.n_labels; ++j) {
        double acc = head_classifier.fc_b[j];
        const double* wj = head_classifier.fc_w.row(j);
        for (int a = lo; a < hi; ++a) acc += wj[a] * pooled[a];
        logits[j] = acc;
      }
      const int pred = static_cast<int>(
          std::max_element(logits.begin(), logits.end()) - logits.begin());
      if (pred == ds.labels[i]) correct(h, ds.labels[i]) += 1.0;
    }
  }
  Matrix acc(num_heads, ds.n_labels);
  for (int h = 0; h < num_heads; ++h)
    for (int l = 0; l < ds.n_labels; ++l)
      if (total[l] > 0.0) acc(h, l) = correct(h, l) / total[l];
  return acc;
}

std::vector<double> superclass_occupancy(const std::vector<int>& labels,
                                         const SuperclassMap& map) {
  const int L = map.labels_per_class;
  std::vector<int> fill(map.classes, 0);
  std::set<int> seen;
  for (int l : labels) {
    if (l < 0 || l >= static_cast<int>(map.super_of.size()))
      throw std::out_of_range("label " + std::to_string(l) + " out of range");
    if (seen.insert(l).second) fill[map.super_of[l]]++;
  }
  std::vector<double> counts(L, 0.0);
  for (int f : fill)
    if (f >= 1) counts[f - 1] += 1.0;
  return counts;
}

namespace {

double log_choose(int n, int k) {
  if (k < 0 || k > n) return -HUGE_VAL;
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace

std::vector<double> occupancy_exact(int n, const SuperclassMap& map,
                                    int total_labels) {
  const int L = map.labels_per_class;
  const int S = map.classes;
  std::vector<double> expect(L, 0.0);
  if (n < 0 || n > total_labels)
    throw std::invalid_argument("drawn label count out of range");
  for (int k = 1; k <= L; ++k) {
    const double lg = log_choose(L, k) + log_choose(total_labels - L, n - k) -
                      log_choose(total_labels, n);
    expect[k - 1] = lg == -HUGE_VAL ? 0.0 : S * std::exp(lg);
  }
  return expect;
}

std::vector<double> occupancy_mc(int n, const SuperclassMap& map,
                                 int total_labels, int samples,
                                 std::uint64_t seed) {
  const int L = map.labels_per_class;
  std::vector<double> acc(L, 0.0);
  if (n == 0 || samples <= 0) return acc;
  Rng rng(seed);
  std::vector<int> fill(map.classes);
  for (int s = 0; s < samples; ++s) {
    std::fill(fill.begin(), fill.end(), 0);
    for (auto l : rng.sample_without_replacement(total_labels, n))
      fill[map.super_of[l]]++;
    for (int f : fill)
      if (f >= 1) acc[f - 1] += 1.0;
  }
  for (auto& v : acc) v /= samples;
  return acc;
}

std::pair<double, double> sb_accuracy_split(
    const std::vector<double>& per_label_acc, const std::vector<int>& assigned) {
  std::vector<bool> is_sb(per_label_acc.size(), false);
  for (int l : assigned) is_sb[l] = true;
  double sb_sum = 0.0, rest_sum = 0.0;
  int sb_n = 0, rest_n = 0;
  for (std::size_t l = 0; l < per_label_acc.size(); ++l) {
    if (is_sb[l]) {
      sb_sum += per_label_acc[l];
      ++sb_n;
    } else {
      rest_sum += per_label_acc[l];
      ++rest_n;
    }
  }
  if (sb_n == 0 || rest_n == 0)
    throw std::invalid_argument("one side of the accuracy split is empty");
  return {sb_sum / sb_n, rest_sum / rest_n};
}

std::vector<int> th_ratio_sweep(std::vector<HeadProfile> profiles,
                                const std::vector<double>& ratios) {
  for (std::size_t i = 0; i + 1 < ratios.size(); ++i)
    if (ratios[i + 1] <= ratios[i])
      throw std::invalid_argument("ratios must be strictly increasing");
  std::vector<int> totals;
  for (double r : ratios) {
    assign_labels(profiles, r);
    int total = 0;
    for (const auto& p : profiles) total += static_cast<int>(p.assigned.size());
    totals.push_back(total);
  }
  return totals;
}

}  // namespace snpkit
