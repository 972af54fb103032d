#pragma once

#include <string>
#include <vector>

#include "snpkit/matrix.hpp"
#include "snpkit/snp.hpp"

namespace snpkit {

enum class ClusterRule {
  mutual,          // edge i-j iff bit(i,j) and bit(j,i)
  either,          // edge i-j iff bit(i,j) or bit(j,i)
  mutual_density,  // mutual, then drop components with block density < 0.5
};

ClusterRule cluster_rule_from_string(const std::string& s);
std::string to_string(ClusterRule r);

struct ClusterSet {
  std::vector<std::vector<int>> clusters;  // disjoint, sorted label sets
  int stray = 0;                           // true bits outside all clusters
  ClusterRule rule = ClusterRule::mutual;
};

// Connected components of size >= 2 under the rule's edges, plus singletons
// {i} where bit(i,i) is true and i has no edge. Stray count = true bits (i,j)
// with i, j not in a common cluster.
ClusterSet find_clusters(const BoolMatrix& bits,
                         ClusterRule rule = ClusterRule::mutual);

struct MatrixStats {
  int n_clusters = 0;
  int diag = 0;  // sum of cluster sizes
  double mean_cluster_size = 0.0;
  int stray = 0;
};

MatrixStats matrix_stats(const BoolMatrix& bits, const ClusterSet& cs);

struct LayerStats {
  double n_c = 0.0;   // mean cluster count
  double c_s = 0.0;   // mean of per-matrix mean cluster sizes
  double diag = 0.0;  // mean diagonal
  double n = 0.0;     // mean stray count
  int n_m = 0;
  int n_l = 0;
  double threshold = 0.0;
  // per-field ranges across matrices
  double n_c_min = 0.0, n_c_max = 0.0;
  double diag_min = 0.0, diag_max = 0.0;
  double n_min = 0.0, n_max = 0.0;
};

LayerStats aggregate(const std::vector<MatrixStats>& per_matrix, int n_labels,
                     double threshold);

struct LabelHistograms {
  std::vector<double> appearances;  // per label: (matrix, cluster) memberships
  std::vector<double> field;        // per output unit: in-cluster normalized field
};

// Clusters must be computed from the set clipped at the same threshold.
LabelHistograms label_histograms(const SnpSet& set,
                                 const std::vector<ClippedMatrix>& clipped,
                                 const std::vector<ClusterSet>& clusters);

// Convenience: clip, cluster and aggregate a whole SnpSet.
struct LayerAnalysis {
  std::vector<ClippedMatrix> clipped;
  std::vector<ClusterSet> clusters;
  std::vector<MatrixStats> per_matrix;
  LayerStats stats;
  LabelHistograms histograms;
};

LayerAnalysis analyze_layer(const SnpSet& set, double threshold,
                            ClusterRule rule = ClusterRule::mutual);

}  // namespace snpkit
