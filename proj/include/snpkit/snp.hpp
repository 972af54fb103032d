#pragma once

#include <vector>

#include "snpkit/dataset.hpp"
#include "snpkit/matrix.hpp"
#include "snpkit/model.hpp"

namespace snpkit {

// Boolean matrix obtained by normalizing a field matrix by its (signed)
// maximal element and thresholding. A non-positive maximum clips everything
// to false; negative fields never pass.
struct ClippedMatrix {
  BoolMatrix bits;
  double threshold = 0.0;
  double max_value = 0.0;
};

ClippedMatrix normalize_and_clip(const Matrix& field_matrix, double threshold);

// One field matrix per node of the tapped layer.
struct SnpSet {
  std::vector<Matrix> fields;  // N_M matrices, each N_l x N_l
  int n_labels = 0;
  int width = 0;  // N_M
  TapPoint tap;
  Split split = Split::validation;

  std::vector<ClippedMatrix> clip_all(double threshold) const;
};

// Mean pooled activation per (label, node) over a split: the shared
// single-pass accumulator behind both extraction entry points.
Matrix mean_pooled_by_label(const std::vector<Matrix>& features,
                            const ClassifierHead& head, const Dataset& ds,
                            Split split);

// Field matrix of one node: (i, j) = mean over split inputs of label i of the
// field on output j through the node's FC weights alone (bias excluded).
Matrix single_node_fields(const Model& model, const TapPoint& tap,
                          const ClassifierHead& head, int node,
                          const Dataset& ds, Split split);

SnpSet extract_all(const Model& model, const TapPoint& tap,
                   const ClassifierHead& head, const Dataset& ds, Split split);

// Variant over precomputed tap features (avoids re-running the prefix).
SnpSet extract_all_from_features(const std::vector<Matrix>& features,
                                 const TapPoint& tap, const ClassifierHead& head,
                                 const Dataset& ds, Split split);

}  // namespace snpkit
