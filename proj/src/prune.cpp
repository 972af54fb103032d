#include "snpkit/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "snpkit/kernels.hpp"
#include "snpkit/rng.hpp"

namespace snpkit {

DiagSet diag_sets(const std::vector<ClusterSet>& clusters) {
  DiagSet out(clusters.size());
  for (std::size_t m = 0; m < clusters.size(); ++m) {
    for (const auto& c : clusters[m].clusters)
      out[m].insert(out[m].end(), c.begin(), c.end());
    std::sort(out[m].begin(), out[m].end());
  }
  return out;
}

std::string to_string(PruneProvenance p) {
  switch (p) {
    case PruneProvenance::andc_classifier: return "ANDC_classifier";
    case PruneProvenance::andc_interlayer: return "ANDC_interlayer";
    case PruneProvenance::a_andc: return "A_ANDC";
    case PruneProvenance::random: return "random";
  }
  return "?";
}

PruneMask classifier_mask(const DiagSet& diags, int n_labels) {
  PruneMask m;
  m.provenance = PruneProvenance::andc_classifier;
  m.keep = BoolMatrix(n_labels, diags.size());
  for (std::size_t a = 0; a < diags.size(); ++a)
    for (int j : diags[a]) m.keep.set(j, a, true);
  return m;
}

PruneMask interlayer_mask(const DiagSet& diags_in, const DiagSet& diags_out) {
  PruneMask m;
  m.provenance = PruneProvenance::andc_interlayer;
  m.keep = BoolMatrix(diags_out.size(), diags_in.size());
  for (std::size_t b = 0; b < diags_out.size(); ++b)
    for (std::size_t a = 0; a < diags_in.size(); ++a) {
      // both sets are sorted
      bool share = false;
      auto it1 = diags_in[a].begin(), it2 = diags_out[b].begin();
      while (it1 != diags_in[a].end() && it2 != diags_out[b].end()) {
        if (*it1 == *it2) {
          share = true;
          break;
        }
        (*it1 < *it2) ? ++it1 : ++it2;
      }
      m.keep.set(b, a, share);
    }
  return m;
}

ArtificialAssignment artificial_mask(int n_nodes, int n_labels, int diag_size,
                                     std::uint64_t seed) {
  if (diag_size > n_labels)
    throw std::invalid_argument("diag_size must not exceed the label count");
  ArtificialAssignment out;
  out.warned = static_cast<long long>(n_nodes) * diag_size < n_labels;
  out.diags.assign(n_nodes, {});

  // remaining quota per label: total/n_labels, remainder spread at random
  const long long total = static_cast<long long>(n_nodes) * diag_size;
  std::vector<long long> quota(n_labels, total / n_labels);
  Rng rng(seed);
  std::vector<int> order(n_labels);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (long long r = 0; r < total % n_labels; ++r) quota[order[r]]++;

  // each node takes the diag_size labels with the highest remaining quota;
  // ties broken by the shuffled label order so the assignment stays random
  std::vector<int> tie_rank(n_labels);
  for (int i = 0; i < n_labels; ++i) tie_rank[order[i]] = i;
  std::vector<int> labels(n_labels);
  std::iota(labels.begin(), labels.end(), 0);
  for (int node = 0; node < n_nodes; ++node) {
    std::partial_sort(labels.begin(), labels.begin() + diag_size, labels.end(),
                      [&](int a, int b) {
                        if (quota[a] != quota[b]) return quota[a] > quota[b];
                        return tie_rank[a] < tie_rank[b];
                      });
    auto& set = out.diags[node];
    for (int i = 0; i < diag_size; ++i) {
      set.push_back(labels[i]);
      quota[labels[i]]--;
    }
    std::sort(set.begin(), set.end());
  }

  out.mask = classifier_mask(out.diags, n_labels);
  out.mask.provenance = PruneProvenance::a_andc;
  out.mask.seed = seed;
  return out;
}

PruneMask random_mask(int out_width, int in_width, double target_dilution,
                      std::uint64_t seed) {
  if (target_dilution < 0.0 || target_dilution > 1.0)
    throw std::invalid_argument("dilution must be in [0, 1]");
  PruneMask m;
  m.provenance = PruneProvenance::random;
  m.seed = seed;
  m.keep = BoolMatrix(out_width, in_width);
  const std::size_t total = static_cast<std::size_t>(out_width) * in_width;
  const std::size_t n_keep =
      static_cast<std::size_t>(std::llround((1.0 - target_dilution) * total));
  Rng rng(seed);
  for (auto idx : rng.sample_without_replacement(total, n_keep))
    m.keep.storage()[idx] = 1;
  return m;
}

RetrainResult apply_and_retrain(Model& model, const Dataset& ds,
                                const std::string& layer_param,
                                const PruneMask& mask, const Hyper& hyper,
                                double background_lr) {
  const ParamSlice& slice = model.params().slice(layer_param);
  const std::size_t total = mask.keep.rows() * mask.keep.cols();
  if (total != slice.count)
    throw ModelError("mask shape " + std::to_string(mask.keep.rows()) + "x" +
                     std::to_string(mask.keep.cols()) +
                     " does not match layer " + layer_param);

  SgdConstraints constraints;
  constraints.masks[layer_param] =
      std::vector<std::uint8_t>(mask.keep.storage());
  constraints.default_lr_scale = background_lr / hyper.lr;
  constraints.lr_scale[layer_param] = 1.0;

  // accuracy with the mask applied, before retraining
  for (std::size_t i = 0; i < slice.count; ++i)
    if (!mask.keep.storage()[i]) model.params().w[slice.offset + i] = 0.0;
  RetrainResult result;
  result.accuracy_before = evaluate(model, ds, Split::validation);

  train(model, ds, hyper, &constraints, false);
  result.accuracy_after = evaluate(model, ds, Split::validation);
  return result;
}

double skip_field_ratio(const Model& model, int encoder, const Dataset& ds,
                        Split split) {
  TapPoint proj{encoder, TapSite::projection_out, false};
  proj.validate(model.config());

  double skip_abs = 0.0, proj_abs = 0.0;
  std::size_t count = 0;
  for (auto i : ds.indices(split)) {
    std::vector<Matrix> captured;
    // projection output without the skip, and the block input (the skip field)
    TapPoint with_skip{encoder, TapSite::projection_out, true};
    model.forward(ds.images[i].data(), {proj, with_skip}, &captured, nullptr);
    const Matrix& p = captured[0];
    const Matrix& ps = captured[1];
    proj_abs += kernels::asum(p.data(), p.size());
    // skip field = (projection + skip) - projection
    for (std::size_t k = 0; k < p.size(); ++k)
      skip_abs += std::fabs(ps.storage()[k] - p.storage()[k]);
    count += p.size();
  }
  if (count == 0) throw DataError("split is empty");
  if (proj_abs == 0.0) throw ModelError("degenerate ratio: zero sub-block output");
  return (skip_abs / count) / (proj_abs / count);
}

}  // namespace snpkit
