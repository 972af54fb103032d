#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "snpkit/cluster.hpp"
#include "snpkit/dataset.hpp"
#include "snpkit/model.hpp"

namespace snpkit {

struct HeadProfile {
  int head = 0;  // 1-based
  int node_lo = 0, node_hi = 0;  // matrix slice [lo, hi)
  std::vector<int> counts;       // per-label cluster appearances in the slice
  std::vector<int> assigned;     // filled by assign_labels
};

// Slices the N_M matrices into H equal ranges and accumulates per-label
// cluster appearances. N_M must be divisible by H.
std::vector<HeadProfile> head_label_counts(
    const std::vector<ClusterSet>& clusters, int n_labels, int num_heads);

// Label l is assigned to head h iff counts_h[l] > 0 and
// counts_h[l] >= th_ratio * max over other heads (ties at the ratio assign).
void assign_labels(std::vector<HeadProfile>& profiles, double th_ratio);

// Per-head per-label accuracy: pooled classifier inputs outside the head's
// slice are zeroed, then the (single) trained head classifier is evaluated.
Matrix per_head_accuracy(const std::vector<Matrix>& features,
                         const ClassifierHead& head_classifier,
                         const Dataset& ds, int num_heads, Split split);

// count(k) = super-classes containing exactly k of the labels, k = 1..L
std::vector<double> superclass_occupancy(const std::vector<int>& labels,
                                         const SuperclassMap& map);

// Exact hypergeometric expectation of the occupancy table for n random labels.
std::vector<double> occupancy_exact(int n_labels_drawn, const SuperclassMap& map,
                                    int total_labels);

// Monte-Carlo estimate, n drawn uniformly without replacement per sample.
std::vector<double> occupancy_mc(int n_labels_drawn, const SuperclassMap& map,
                                 int total_labels, int samples,
                                 std::uint64_t seed);

// Means over assigned (symmetry-broken) labels vs. the rest.
std::pair<double, double> sb_accuracy_split(
    const std::vector<double>& per_label_acc, const std::vector<int>& assigned);

// Total assigned labels across heads at each ratio (non-increasing).
std::vector<int> th_ratio_sweep(std::vector<HeadProfile> profiles,
                                const std::vector<double>& ratios);

}  // namespace snpkit
