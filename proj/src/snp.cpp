#include "snpkit/snp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "snpkit/train.hpp"

namespace snpkit {

ClippedMatrix normalize_and_clip(const Matrix& fm, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("threshold must be in (0, 1)");
  ClippedMatrix cm;
  cm.threshold = threshold;
  cm.bits = BoolMatrix(fm.rows(), fm.cols());
  double mx = -HUGE_VAL;
  for (double v : fm.storage()) mx = std::max(mx, v);
  cm.max_value = mx;
  if (mx <= 0.0) return cm;  // all false
  for (std::size_t r = 0; r < fm.rows(); ++r)
    for (std::size_t c = 0; c < fm.cols(); ++c)
      cm.bits.set(r, c, fm(r, c) / mx >= threshold);
  return cm;
}

std::vector<ClippedMatrix> SnpSet::clip_all(double threshold) const {
  std::vector<ClippedMatrix> out;
  out.reserve(fields.size());
  for (const auto& fm : fields) out.push_back(normalize_and_clip(fm, threshold));
  return out;
}

Matrix mean_pooled_by_label(const std::vector<Matrix>& features,
                            const ClassifierHead& head, const Dataset& ds,
                            Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty())
    throw DataError("split " + to_string(split) + " is empty");
  Matrix sums(ds.n_labels, head.width);
  std::vector<std::size_t> counts(ds.n_labels, 0);
  for (auto i : idx) {
    const auto p = head.pooled(features[i]);
    double* row = sums.row(ds.labels[i]);
    for (int a = 0; a < head.width; ++a) row[a] += p[a];
    counts[ds.labels[i]]++;
  }
  for (int l = 0; l < ds.n_labels; ++l) {
    if (counts[l] == 0)
      throw DataError("label " + std::to_string(l) + " has no inputs in split " +
                      to_string(split));
    const double inv = 1.0 / static_cast<double>(counts[l]);
    double* row = sums.row(l);
    for (int a = 0; a < head.width; ++a) row[a] *= inv;
  }
  return sums;
}

namespace {

Matrix node_matrix(const Matrix& mean_pooled, const ClassifierHead& head,
                   int node, int n_labels) {
  Matrix fm(n_labels, n_labels);
  for (int i = 0; i < n_labels; ++i) {
    const double a = mean_pooled(i, node);
    for (int j = 0; j < n_labels; ++j) fm(i, j) = a * head.fc_w(j, node);
  }
  return fm;
}

}  // namespace

Matrix single_node_fields(const Model& model, const TapPoint& tap,
                          const ClassifierHead& head, int node,
                          const Dataset& ds, Split split) {
  if (node < 0 || node >= head.width)
    throw std::out_of_range("node index out of range");
  if (tap.width(model.config()) != head.width)
    throw ModelError("tap width does not match head width");
  const auto features = extract_features(model, tap, ds);
  const Matrix mp = mean_pooled_by_label(features, head, ds, split);
  return node_matrix(mp, head, node, ds.n_labels);
}

SnpSet extract_all_from_features(const std::vector<Matrix>& features,
                                 const TapPoint& tap, const ClassifierHead& head,
                                 const Dataset& ds, Split split) {
  const Matrix mp = mean_pooled_by_label(features, head, ds, split);
  SnpSet set;
  set.n_labels = ds.n_labels;
  set.width = head.width;
  set.tap = tap;
  set.split = split;
  set.fields.reserve(head.width);
  for (int a = 0; a < head.width; ++a)
    set.fields.push_back(node_matrix(mp, head, a, ds.n_labels));
  return set;
}

SnpSet extract_all(const Model& model, const TapPoint& tap,
                   const ClassifierHead& head, const Dataset& ds, Split split) {
  if (tap.width(model.config()) != head.width)
    throw ModelError("tap width does not match head width");
  const auto features = extract_features(model, tap, ds);
  return extract_all_from_features(features, tap, head, ds, split);
}

}  // namespace snpkit
