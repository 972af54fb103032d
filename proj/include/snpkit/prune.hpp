#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "snpkit/cluster.hpp"
#include "snpkit/train.hpp"

namespace snpkit {

// Per-node label sets: the diagonal cluster labels of each node's SNP matrix.
using DiagSet = std::vector<std::vector<int>>;

DiagSet diag_sets(const std::vector<ClusterSet>& clusters);

enum class PruneProvenance { andc_classifier, andc_interlayer, a_andc, random };

std::string to_string(PruneProvenance p);

struct PruneMask {
  BoolMatrix keep;  // out_width x in_width
  PruneProvenance provenance = PruneProvenance::random;
  double th_in = 0.0, th_out = 0.0;
  std::uint64_t seed = 0;

  std::size_t kept() const { return keep.count_true(); }
  double dilution() const {
    const std::size_t total = keep.rows() * keep.cols();
    return total == 0 ? 0.0
                      : 1.0 - static_cast<double>(kept()) / total;
  }
};

// keep(j, a) iff output unit j is in node a's diagonal set
PruneMask classifier_mask(const DiagSet& diags, int n_labels);

// keep(b, a) iff diags_in[a] and diags_out[b] intersect
PruneMask interlayer_mask(const DiagSet& diags_in, const DiagSet& diags_out);

// A-ANDC: balanced random assignment; label appearance counts differ by <= 1.
// Warns (returns warned=true) when n_nodes * diag_size < n_labels.
struct ArtificialAssignment {
  DiagSet diags;
  PruneMask mask;
  bool warned = false;
};
ArtificialAssignment artificial_mask(int n_nodes, int n_labels, int diag_size,
                                     std::uint64_t seed);

// exactly round((1 - dilution) * total) weights kept, uniformly at random
PruneMask random_mask(int out_width, int in_width, double target_dilution,
                      std::uint64_t seed);

struct RetrainResult {
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
};

// Masks the named weight layer (weights zeroed, gradients masked at every
// step), retrains at hyper.lr on that layer and background_lr elsewhere
// (0 freezes the rest), and reports validation accuracy before and after.
RetrainResult apply_and_retrain(Model& model, const Dataset& ds,
                                const std::string& layer_param,
                                const PruneMask& mask, const Hyper& hyper,
                                double background_lr = 0.0);

// mean |skip field| over samples/tokens/units divided by mean |projection
// output field| at encoder m. Throws on an identically zero denominator.
double skip_field_ratio(const Model& model, int encoder, const Dataset& ds,
                        Split split);

}  // namespace snpkit
