#include "snpkit/cluster.hpp"

#include <algorithm>
#include <stdexcept>

namespace snpkit {

ClusterRule cluster_rule_from_string(const std::string& s) {
  if (s == "mutual") return ClusterRule::mutual;
  if (s == "or" || s == "either") return ClusterRule::either;
  if (s == "mutual+density" || s == "mutual_density")
    return ClusterRule::mutual_density;
  throw std::invalid_argument("unknown cluster rule: " + s);
}

std::string to_string(ClusterRule r) {
  switch (r) {
    case ClusterRule::mutual: return "mutual";
    case ClusterRule::either: return "or";
    case ClusterRule::mutual_density: return "mutual+density";
  }
  return "?";
}

ClusterSet find_clusters(const BoolMatrix& bits, ClusterRule rule) {
  if (bits.rows() != bits.cols())
    throw std::invalid_argument("clipped matrix must be square");
  const int n = static_cast<int>(bits.rows());
  const bool mutual = rule != ClusterRule::either;

  auto edge = [&](int i, int j) {
    return mutual ? (bits.get(i, j) && bits.get(j, i))
                  : (bits.get(i, j) || bits.get(j, i));
  };

  // union-find over labels
  std::vector<int> parent(n);
  for (int i = 0; i < n; ++i) parent[i] = i;
  std::vector<bool> has_edge(n, false);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (edge(i, j)) {
        has_edge[i] = has_edge[j] = true;
        parent[find(i)] = find(j);
      }

  std::vector<std::vector<int>> groups(n);
  for (int i = 0; i < n; ++i) groups[find(i)].push_back(i);

  ClusterSet cs;
  cs.rule = rule;
  for (auto& g : groups) {
    if (g.size() >= 2) {
      cs.clusters.push_back(std::move(g));
    } else if (g.size() == 1) {
      const int i = g[0];
      if (!has_edge[i] && bits.get(i, i)) cs.clusters.push_back({i});
    }
  }

  if (rule == ClusterRule::mutual_density) {
    std::vector<std::vector<int>> kept;
    for (auto& c : cs.clusters) {
      std::size_t trues = 0;
      for (int i : c)
        for (int j : c)
          if (bits.get(i, j)) ++trues;
      const double density =
          static_cast<double>(trues) / (static_cast<double>(c.size()) * c.size());
      if (density >= 0.5) kept.push_back(std::move(c));
    }
    cs.clusters = std::move(kept);
  }

  std::sort(cs.clusters.begin(), cs.clusters.end());

  // strays: true bits whose endpoints are not in a common cluster
  std::vector<int> cluster_of(n, -1);
  for (std::size_t c = 0; c < cs.clusters.size(); ++c)
    for (int i : cs.clusters[c]) cluster_of[i] = static_cast<int>(c);
  int stray = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (bits.get(i, j) &&
          (cluster_of[i] < 0 || cluster_of[i] != cluster_of[j]))
        ++stray;
  cs.stray = stray;
  return cs;
}

MatrixStats matrix_stats(const BoolMatrix& bits, const ClusterSet& cs) {
  (void)bits;
  MatrixStats ms;
  ms.n_clusters = static_cast<int>(cs.clusters.size());
  for (const auto& c : cs.clusters) ms.diag += static_cast<int>(c.size());
  ms.mean_cluster_size =
      ms.n_clusters > 0 ? static_cast<double>(ms.diag) / ms.n_clusters : 0.0;
  ms.stray = cs.stray;
  return ms;
}

LayerStats aggregate(const std::vector<MatrixStats>& per_matrix, int n_labels,
                     double threshold) {
  LayerStats ls;
  ls.n_m = static_cast<int>(per_matrix.size());
  ls.n_l = n_labels;
  ls.threshold = threshold;
  if (per_matrix.empty()) return ls;
  ls.n_c_min = ls.n_c_max = per_matrix[0].n_clusters;
  ls.diag_min = ls.diag_max = per_matrix[0].diag;
  ls.n_min = ls.n_max = per_matrix[0].stray;
  for (const auto& ms : per_matrix) {
    ls.n_c += ms.n_clusters;
    ls.c_s += ms.mean_cluster_size;
    ls.diag += ms.diag;
    ls.n += ms.stray;
    ls.n_c_min = std::min<double>(ls.n_c_min, ms.n_clusters);
    ls.n_c_max = std::max<double>(ls.n_c_max, ms.n_clusters);
    ls.diag_min = std::min<double>(ls.diag_min, ms.diag);
    ls.diag_max = std::max<double>(ls.diag_max, ms.diag);
    ls.n_min = std::min<double>(ls.n_min, ms.stray);
    ls.n_max = std::max<double>(ls.n_max, ms.stray);
  }
  const double inv = 1.0 / static_cast<double>(per_matrix.size());
  ls.n_c *= inv;
  ls.c_s *= inv;
  ls.diag *= inv;
  ls.n *= inv;
  return ls;
}

LabelHistograms label_histograms(const SnpSet& set,
                                 const std::vector<ClippedMatrix>& clipped,
                                 const std::vector<ClusterSet>& clusters) {
  LabelHistograms h;
  h.appearances.assign(set.n_labels, 0.0);
  h.field.assign(set.n_labels, 0.0);
  for (std::size_t m = 0; m < clusters.size(); ++m) {
    const double mx = clipped[m].max_value;
    for (const auto& c : clusters[m].clusters) {
      for (int l : c) h.appearances[l] += 1.0;
      if (mx > 0.0) {
        // all in-cluster elements contribute, above threshold or not
        for (int i : c)
          for (int j : c) h.field[j] += set.fields[m](i, j) / mx;
      }
    }
  }
  return h;
}

LayerAnalysis analyze_layer(const SnpSet& set, double threshold,
                            ClusterRule rule) {
  LayerAnalysis la;
  la.clipped = set.clip_all(threshold);
  la.clusters.reserve(la.clipped.size());
  la.per_matrix.reserve(la.clipped.size());
  for (const auto& cm : la.clipped) {
    la.clusters.push_back(find_clusters(cm.bits, rule));
    la.per_matrix.push_back(matrix_stats(cm.bits, la.clusters.back()));
  }
  la.stats = aggregate(la.per_matrix, set.n_labels, threshold);
  la.histograms = label_histograms(set, la.clipped, la.clusters);
  return la;
}

}  // namespace snpkit
