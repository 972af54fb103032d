#include "snpkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "snpkit/kernels.hpp"
#include "snpkit/rng.hpp"

namespace snpkit {

namespace ks = snpkit::kernels;

namespace {

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct SgdState {
  std::vector<double> velocity;
};

void apply_masks(const Model& model, const SgdConstraints* c,
                 std::vector<double>& vec) {
  if (!c) return;
  for (const auto& [name, keep] : c->masks) {
    const ParamSlice& s = model.params().slice(name);
    if (keep.size() != s.count)
      throw ModelError("mask size mismatch for " + name);
    for (std::size_t i = 0; i < s.count; ++i)
      if (!keep[i]) vec[s.offset + i] = 0.0;
  }
}

double slice_lr_scale(const SgdConstraints* c, const ParamSlice& s) {
  if (!c) return 1.0;
  auto it = c->lr_scale.find(s.name);
  return it != c->lr_scale.end() ? it->second : c->default_lr_scale;
}

void sgd_step(Model& model, SgdState& state, const Hyper& hyper, double lr,
              const SgdConstraints* constraints) {
  ParamStore& ps = model.params();
  if (hyper.l2 > 0.0)
    ks::axpy(hyper.l2, ps.w.data(), ps.g.data(), ps.w.size());
  apply_masks(model, constraints, ps.g);
  const double mu = hyper.momentum;
  for (const ParamSlice& s : ps.slices) {
    const double scale = slice_lr_scale(constraints, s);
    if (scale == 0.0) continue;
    double* w = ps.w.data() + s.offset;
    double* g = ps.g.data() + s.offset;
    double* v = state.velocity.data() + s.offset;
    const double step_lr = lr * scale;
    for (std::size_t i = 0; i < s.count; ++i) {
      v[i] = mu * v[i] + g[i];
      const double step = hyper.nesterov ? g[i] + mu * v[i] : v[i];
      w[i] -= step_lr * step;
    }
  }
  apply_masks(model, constraints, ps.w);
}

}  // namespace

TrainReport train(Model& model, const Dataset& ds, const Hyper& hyper,
                  const SgdConstraints* constraints, bool eval_validation) {
  hyper.validate();
  auto train_idx = ds.indices(Split::train);
  if (train_idx.empty()) throw DataError("dataset has no training samples");

  SgdState state;
  state.velocity.assign(model.params().w.size(), 0.0);
  apply_masks(model, constraints, model.params().w);

  Rng rng(hyper.seed);
  std::unique_ptr<Model::Cache, std::function<void(Model::Cache*)>> cache(
      model.new_cache(), [&model](Model::Cache* c) { model.free_cache(c); });

  TrainReport report;
  std::vector<double> dlogits;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    const double lr = hyper.lr_at_epoch(epoch);
    rng.shuffle(train_idx);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    int batch_no = 0;
    for (std::size_t start = 0; start < train_idx.size();
         start += hyper.batch_size, ++batch_no) {
      const std::size_t end =
          std::min(start + hyper.batch_size, train_idx.size());
      const double inv_bs = 1.0 / static_cast<double>(end - start);
      model.params().zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = train_idx[i];
        auto logits = model.forward(ds.images[idx].data(), {}, nullptr, cache.get());
        batch_loss += lsce_loss(logits, ds.labels[idx], hyper.label_smoothing,
                                &dlogits);
        if (argmax(logits) == ds.labels[idx]) ++correct;
        ks::scale(inv_bs, dlogits.data(), dlogits.size());
        model.backward(*cache, dlogits);
      }
      if (!std::isfinite(batch_loss)) throw TrainDiverged(epoch, batch_no);
      loss_sum += batch_loss;
      sgd_step(model, state, hyper, lr, constraints);
    }

    EpochStats es;
    es.epoch = epoch;
    es.lr = lr;
    es.train_loss = loss_sum / static_cast<double>(train_idx.size());
    es.train_acc = static_cast<double>(correct) / train_idx.size();
    if (eval_validation) es.val_acc = evaluate(model, ds, Split::validation);
    report.epochs.push_back(es);
  }
  if (!report.epochs.empty()) report.final_val_acc = report.epochs.back().val_acc;
  return report;
}

double evaluate(const Model& model, const Dataset& ds, Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty()) return -1.0;
  std::size_t correct = 0;
  for (auto i : idx) {
    auto logits = model.forward(ds.images[i].data());
    if (argmax(logits) == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / idx.size();
}

std::vector<double> per_label_accuracy(const Model& model, const Dataset& ds,
                                       Split split) {
  std::vector<double> correct(ds.n_labels, 0.0), total(ds.n_labels, 0.0);
  for (auto i : ds.indices(split)) {
    auto logits = model.forward(ds.images[i].data());
    total[ds.labels[i]] += 1.0;
    if (argmax(logits) == ds.labels[i]) correct[ds.labels[i]] += 1.0;
  }
  std::vector<double> acc(ds.n_labels, 0.0);
  for (int l = 0; l < ds.n_labels; ++l)
    if (total[l] > 0.0) acc[l] = correct[l] / total[l];
  return acc;
}

std::vector<Matrix> extract_features(const Model& model, const TapPoint& tap,
                                     const Dataset& ds) {
  tap.validate(model.config());
  std::vector<Matrix> feats(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    feats[i] = model.tap_features(ds.images[i].data(), tap);
  return feats;
}

namespace {

// gradient of the head loss for one sample; accumulates into dpool/dw/db
void head_backward(const ClassifierHead& head, const Matrix& X,
                   const std::vector<double>& dlogits, std::vector<double>& dpool,
                   Matrix& dw, std::vector<double>& db) {
  const std::size_t T = X.rows();
  const int w = head.width;
  std::vector<double> scores(T);
  for (std::size_t t = 0; t < T; ++t)
    scores[t] = ks::dot(X.row(t), head.pool.data(), w);
  const double mx = ks::max(scores.data(), T);
  double z = 0.0;
  for (auto& s : scores) {
    s = std::exp(s - mx);
    z += s;
  }
  for (auto& s : scores) s /= z;
  std::vector<double> p(w, 0.0);
  for (std::size_t t = 0; t < T; ++t) ks::axpy(scores[t], X.row(t), p.data(), w);

  std::vector<double> dp(w, 0.0);
  for (int j = 0; j < head.n_labels; ++j) {
    const double dj = dlogits[j];
    if (dj == 0.0) continue;
    ks::axpy(dj, p.data(), dw.row(j), w);
    db[j] += dj;
    ks::axpy(dj, head.fc_w.row(j), dp.data(), w);
  }
  std::vector<double> dalpha(T);
  double adot = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    dalpha[t] = ks::dot(dp.data(), X.row(t), w);
    adot += scores[t] * dalpha[t];
  }
  for (std::size_t t = 0; t < T; ++t) {
    const double dsc = scores[t] * (dalpha[t] - adot);
    ks::axpy(dsc, X.row(t), dpool.data(), w);
  }
}

}  // namespace

ClassifierHead train_head_on_features(const std::vector<Matrix>& features,
                                      const Dataset& ds, const Hyper& hyper,
                                      double* val_acc) {
  hyper.validate();
  auto train_idx = ds.indices(Split::train);
  if (train_idx.empty()) throw DataError("dataset has no training samples");
  const int width = static_cast<int>(features[train_idx[0]].cols());

  ClassifierHead head = ClassifierHead::init(width, ds.n_labels, hyper.seed);
  std::vector<double> vpool(width, 0.0), vb(ds.n_labels, 0.0);
  Matrix vw(ds.n_labels, width);

  std::vector<double> dpool(width), db(ds.n_labels), dlogits;
  Matrix dw(ds.n_labels, width);

  Rng rng(hyper.seed + 1);
  const double mu = hyper.momentum;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    const double lr = hyper.lr_at_epoch(epoch);
    rng.shuffle(train_idx);
    int batch_no = 0;
    for (std::size_t start = 0; start < train_idx.size();
         start += hyper.batch_size, ++batch_no) {
      const std::size_t end =
          std::min(start + hyper.batch_size, train_idx.size());
      const double inv_bs = 1.0 / static_cast<double>(end - start);
      std::fill(dpool.begin(), dpool.end(), 0.0);
      std::fill(db.begin(), db.end(), 0.0);
      dw.fill(0.0);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = train_idx[i];
        auto logits = head.forward(features[idx]);
        batch_loss += lsce_loss(logits, ds.labels[idx], hyper.label_smoothing,
                                &dlogits);
        ks::scale(inv_bs, dlogits.data(), dlogits.size());
        head_backward(head, features[idx], dlogits, dpool, dw, db);
      }
      if (!std::isfinite(batch_loss)) throw TrainDiverged(epoch, batch_no);
      if (hyper.l2 > 0.0) {
        ks::axpy(hyper.l2, head.pool.data(), dpool.data(), dpool.size());
        ks::axpy(hyper.l2, head.fc_w.data(), dw.data(), dw.size());
        ks::axpy(hyper.l2, head.fc_b.data(), db.data(), db.size());
      }
      auto update = [&](double* w, double* g, double* v, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = mu * v[i] + g[i];
          const double step = hyper.nesterov ? g[i] + mu * v[i] : v[i];
          w[i] -= lr * step;
        }
      };
      update(head.pool.data(), dpool.data(), vpool.data(), dpool.size());
      update(head.fc_w.data(), dw.data(), vw.data(), dw.size());
      update(head.fc_b.data(), db.data(), vb.data(), db.size());
    }
  }
  if (val_acc) *val_acc = head_accuracy(head, features, ds, Split::validation);
  return head;
}

std::pair<ClassifierHead, double> train_probe_head(const Model& model,
                                                   const TapPoint& tap,
                                                   const Dataset& ds,
                                                   const Hyper& hyper) {
  const auto features = extract_features(model, tap, ds);
  double val_acc = -1.0;
  ClassifierHead head = train_head_on_features(features, ds, hyper, &val_acc);
  return {std::move(head), val_acc};
}

double head_accuracy(const ClassifierHead& head,
                     const std::vector<Matrix>& features, const Dataset& ds,
                     Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty()) return -1.0;
  std::size_t correct = 0;
  for (auto i : idx) {
    auto logits = head.forward(features[i]);
    if (argmax(logits) == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / idx.size();
}

GradCheckResult grad_check(Model& model, const std::vector<const double*>& images,
                           const std::vector<int>& labels, double eps_fd,
                           int per_kind, std::uint64_t seed,
                           double label_smoothing) {
  const double inv_b = 1.0 / static_cast<double>(images.size());
  auto loss_fn = [&]() {
    double loss = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      auto logits = model.forward(images[i]);
      loss += lsce_loss(logits, labels[i], label_smoothing, nullptr);
    }
    return loss * inv_b;
  };

  // analytic gradients
  model.params().zero_grad();
  std::unique_ptr<Model::Cache, std::function<void(Model::Cache*)>> cache(
      model.new_cache(), [&model](Model::Cache* c) { model.free_cache(c); });
  std::vector<double> dlogits;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto logits = model.forward(images[i], {}, nullptr, cache.get());
    lsce_loss(logits, labels[i], label_smoothing, &dlogits);
    ks::scale(inv_b, dlogits.data(), dlogits.size());
    model.backward(*cache, dlogits);
  }

  // group slices by kind, sample indices per kind
  std::map<std::string, std::vector<std::size_t>> kind_indices;
  for (const ParamSlice& s : model.params().slices)
    for (std::size_t i = 0; i < s.count; ++i)
      kind_indices[s.kind].push_back(s.offset + i);

  Rng rng(seed);
  GradCheckResult result;
  for (auto& [kind, idx] : kind_indices) {
    rng.shuffle(idx);
    const std::size_t n = std::min<std::size_t>(idx.size(), per_kind);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = idx[i];
      const double orig = model.params().w[k];
      model.params().w[k] = orig + eps_fd;
      const double lp = loss_fn();
      model.params().w[k] = orig - eps_fd;
      const double lm = loss_fn();
      model.params().w[k] = orig;
      const double fd = (lp - lm) / (2.0 * eps_fd);
      const double an = model.params().g[k];
      const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-6});
      const double rel = std::fabs(an - fd) / denom;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = kind + "[" + std::to_string(k) + "]";
      }
    }
  }
  return result;
}

}  // namespace snpkit
