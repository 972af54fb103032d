#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "snpkit/dataset.hpp"
#include "snpkit/model.hpp"

namespace snpkit {

class TrainDiverged : public std::runtime_error {
 public:
  TrainDiverged(int epoch, int batch)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch)),
        epoch(epoch),
        batch(batch) {}
  int epoch, batch;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = -1.0;  // -1 when not evaluated
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double final_val_acc = -1.0;
};

// Constraints for pruned retraining: keep-bit masks (flat, per param slice;
// masked weights are zeroed and their gradients discarded at every step) and
// per-slice learning-rate scales (0 freezes a slice).
struct SgdConstraints {
  std::map<std::string, std::vector<std::uint8_t>> masks;
  std::map<std::string, double> lr_scale;
  double default_lr_scale = 1.0;
};

TrainReport train(Model& model, const Dataset& ds, const Hyper& hyper,
                  const SgdConstraints* constraints = nullptr,
                  bool eval_validation = true);

double evaluate(const Model& model, const Dataset& ds, Split split);
std::vector<double> per_label_accuracy(const Model& model, const Dataset& ds,
                                       Split split);

// Tap features for every sample of the dataset (frozen model, no grads).
std::vector<Matrix> extract_features(const Model& model, const TapPoint& tap,
                                     const Dataset& ds);

// Head trained on precomputed features; returns validation accuracy too.
ClassifierHead train_head_on_features(const std::vector<Matrix>& features,
                                      const Dataset& ds, const Hyper& hyper,
                                      double* val_acc);

// Frozen prefix + fresh head at a tap point.
std::pair<ClassifierHead, double> train_probe_head(const Model& model,
                                                   const TapPoint& tap,
                                                   const Dataset& ds,
                                                   const Hyper& hyper);

double head_accuracy(const ClassifierHead& head,
                     const std::vector<Matrix>& features, const Dataset& ds,
                     Split split);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
};

// Central finite differences on a random parameter subsample (at least
// `per_kind` parameters per layer kind). Objective: mean LSCE over the batch.
GradCheckResult grad_check(Model& model, const std::vector<const double*>& images,
                           const std::vector<int>& labels, double eps_fd,
                           int per_kind = 200, std::uint64_t seed = 1,
                           double label_smoothing = 0.1);

}  // namespace snpkit
