#include "snpkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "snpkit/bundle.hpp"
#include "snpkit/kernels.hpp"
#include "snpkit/rng.hpp"

namespace snpkit {

using nlohmann::json;
namespace ks = snpkit::kernels;

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// out (T x n) = in (T x m) @ W^T + b, with W (n x m)
void linear_forward(const Matrix& in, const double* W, const double* b, int n,
                    Matrix& out) {
  const std::size_t T = in.rows(), m = in.cols();
  out = Matrix(T, static_cast<std::size_t>(n));
  for (std::size_t t = 0; t < T; ++t) {
    const double* xt = in.row(t);
    double* ot = out.row(t);
    for (int j = 0; j < n; ++j)
      ot[j] = (b ? b[j] : 0.0) + ks::dot(W + static_cast<std::size_t>(j) * m, xt, m);
  }
}

// accumulate dW, db, and (optionally) dIn for the layer above
void linear_backward(const Matrix& in, const double* W, const Matrix& dout,
                     double* dW, double* db, Matrix* din) {
  const std::size_t T = in.rows(), m = in.cols(), n = dout.cols();
  if (din) *din = Matrix(T, m);
  for (std::size_t t = 0; t < T; ++t) {
    const double* xt = in.row(t);
    const double* dt = dout.row(t);
    for (std::size_t j = 0; j < n; ++j) {
      const double d = dt[j];
      if (d == 0.0) continue;
      ks::axpy(d, xt, dW + j * m, m);
      if (db) db[j] += d;
      if (din) ks::axpy(d, W + j * m, din->row(t), m);
    }
  }
}

void layernorm_forward(const Matrix& x, const double* gamma,
                       const double* beta, Matrix& xhat,
                       std::vector<double>& istd, Matrix& out) {
  const std::size_t T = x.rows(), d = x.cols();
  xhat = Matrix(T, d);
  out = Matrix(T, d);
  istd.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* xt = x.row(t);
    double mean = ks::sum(xt, d) / static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = xt[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kLnEps);
    istd[t] = is;
    double* ht = xhat.row(t);
    double* ot = out.row(t);
    for (std::size_t i = 0; i < d; ++i) {
      ht[i] = (xt[i] - mean) * is;
      ot[i] = gamma[i] * ht[i] + beta[i];
    }
  }
}

// dx is accumulated (+=) into dx_acc
void layernorm_backward(const Matrix& xhat, const std::vector<double>& istd,
                        const double* gamma, const Matrix& dout,
                        double* dgamma, double* dbeta, Matrix& dx_acc) {
  const std::size_t T = xhat.rows(), d = xhat.cols();
  std::vector<double> dxhat(d);
  for (std::size_t t = 0; t < T; ++t) {
    const double* ht = xhat.row(t);
    const double* dt = dout.row(t);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dgamma[i] += dt[i] * ht[i];
      dbeta[i] += dt[i];
      dxhat[i] = dt[i] * gamma[i];
      m1 += dxhat[i];
      m2 += dxhat[i] * ht[i];
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    double* dx = dx_acc.row(t);
    const double is = istd[t];
    for (std::size_t i = 0; i < d; ++i)
      dx[i] += is * (dxhat[i] - m1 - ht[i] * m2);
  }
}

void softmax_rows_inplace(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double* row = m.row(r);
    const std::size_t n = m.cols();
    const double mx = ks::max(row, n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      row[i] = std::exp(row[i] - mx);
      s += row[i];
    }
    const double inv = 1.0 / s;
    ks::scale(inv, row, n);
  }
}

int pooled_dim(int h) { return (h - 1) / 2 + 1; }  // 3x3 max-pool, stride 2, pad 1

}  // namespace

// ---------------------------------------------------------------------------
// config / hyper / taps

void ModelConfig::validate() const {
  if (embed_dim <= 0 || num_heads <= 0 || ff_hidden <= 0 || num_encoders <= 0 ||
      num_labels <= 0)
    throw ConfigError("model dimensions must be positive");
  if (embed_dim % num_heads != 0)
    throw ConfigError("embed_dim must be divisible by num_heads");
  if (tokenizer_kernels.empty())
    throw ConfigError("at least one tokenizer kernel required");
  for (int k : tokenizer_kernels)
    if (k <= 0 || k % 2 == 0)
      throw ConfigError("tokenizer kernel sizes must be positive and odd");
  if (in_channels <= 0 || in_height <= 0 || in_width <= 0)
    throw ConfigError("input shape must be positive");
}

ModelConfig ModelConfig::cct7_3x1() {
  ModelConfig c;
  c.embed_dim = 256;
  c.num_heads = 4;
  c.ff_hidden = 512;
  c.num_encoders = 7;
  c.num_labels = 100;
  c.tokenizer_kernels = {3};
  c.in_channels = 3;
  c.in_height = 32;
  c.in_width = 32;
  return c;
}

ModelConfig ModelConfig::cct7_7x2() {
  ModelConfig c = cct7_3x1();
  c.num_labels = 102;
  c.tokenizer_kernels = {7, 3};
  c.in_height = 224;
  c.in_width = 224;
  return c;
}

ModelConfig ModelConfig::toy(int d, int heads, int encoders, int labels,
                             int channels, int height, int width,
                             int ff_hidden) {
  ModelConfig c;
  c.embed_dim = d;
  c.num_heads = heads;
  c.ff_hidden = ff_hidden > 0 ? ff_hidden : 2 * d;
  c.num_encoders = encoders;
  c.num_labels = labels;
  c.tokenizer_kernels = {3};
  c.in_channels = channels;
  c.in_height = height;
  c.in_width = width;
  return c;
}

void Hyper::validate() const {
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (l2 < 0.0) throw ConfigError("L2 coefficient must be non-negative");
  if (decay_q <= 0.0 || decay_q > 1.0)
    throw ConfigError("decay factor q must be in (0, 1]");
  if (decay_interval <= 0) throw ConfigError("decay interval must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw ConfigError("label smoothing must be in [0, 1)");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("momentum must be in [0, 1)");
  if (batch_size <= 0 || epochs <= 0)
    throw ConfigError("batch size and epochs must be positive");
}

double Hyper::lr_at_epoch(int epoch) const {
  const int steps = (epoch - 1) / decay_interval;
  return lr * std::pow(decay_q, steps);
}

TapSite tap_site_from_string(const std::string& s) {
  if (s == "layernorm_out") return TapSite::layernorm_out;
  if (s == "qkv_out") return TapSite::qkv_out;
  if (s == "attention_out") return TapSite::attention_out;
  if (s == "projection_out") return TapSite::projection_out;
  if (s == "linear1_out") return TapSite::linear1_out;
  if (s == "linear2_out") return TapSite::linear2_out;
  if (s == "block_out") return TapSite::block_out;
  throw ConfigError("unknown tap site: " + s);
}

std::string to_string(TapSite s) {
  switch (s) {
    case TapSite::layernorm_out: return "layernorm_out";
    case TapSite::qkv_out: return "qkv_out";
    case TapSite::attention_out: return "attention_out";
    case TapSite::projection_out: return "projection_out";
    case TapSite::linear1_out: return "linear1_out";
    case TapSite::linear2_out: return "linear2_out";
    case TapSite::block_out: return "block_out";
  }
  return "?";
}

void TapPoint::validate(const ModelConfig& cfg) const {
  if (encoder < 1 || encoder > cfg.num_encoders)
    throw ConfigError("tap encoder " + std::to_string(encoder) +
                      " out of range [1, " + std::to_string(cfg.num_encoders) +
                      "]");
}

int TapPoint::width(const ModelConfig& cfg) const {
  switch (site) {
    case TapSite::qkv_out: return 3 * cfg.embed_dim;
    case TapSite::linear1_out: return cfg.ff_hidden;
    default: return cfg.embed_dim;
  }
}

std::string TapPoint::name() const {
  std::string n = "enc" + std::to_string(encoder) + "." + to_string(site);
  if ((site == TapSite::projection_out || site == TapSite::linear2_out) &&
      !include_skip)
    n += ".noskip";
  return n;
}

// ---------------------------------------------------------------------------
// param store

std::size_t ParamStore::add(std::string name, std::string kind,
                            std::size_t count) {
  const std::size_t off = w.size();
  slices.push_back({std::move(name), std::move(kind), off, count});
  w.resize(off + count, 0.0);
  g.resize(off + count, 0.0);
  return off;
}

const ParamSlice* ParamStore::find(std::string_view name) const {
  for (const auto& s : slices)
    if (s.name == name) return &s;
  return nullptr;
}

const ParamSlice& ParamStore::slice(std::string_view name) const {
  const ParamSlice* s = find(name);
  if (!s) throw ModelError("no parameter slice named " + std::string(name));
  return *s;
}

void ParamStore::zero_grad() { std::fill(g.begin(), g.end(), 0.0); }

// ---------------------------------------------------------------------------
// classifier head

ClassifierHead ClassifierHead::init(int width, int n_labels,
                                    std::uint64_t seed) {
  ClassifierHead h;
  h.width = width;
  h.n_labels = n_labels;
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(width));
  h.pool.resize(width);
  for (auto& v : h.pool) v = rng.uniform(-s, s);
  h.fc_w = Matrix(n_labels, width);
  for (auto& v : h.fc_w.storage()) v = rng.uniform(-s, s);
  h.fc_b.assign(n_labels, 0.0);
  return h;
}

std::vector<double> ClassifierHead::pooled(const Matrix& features) const {
  const std::size_t T = features.rows(), w = features.cols();
  if (static_cast<int>(w) != width)
    throw ModelError("feature width " + std::to_string(w) +
                     " does not match head width " + std::to_string(width));
  std::vector<double> scores(T);
  for (std::size_t t = 0; t < T; ++t)
    scores[t] = ks::dot(features.row(t), pool.data(), w);
  const double mx = ks::max(scores.data(), T);
  double z = 0.0;
  for (auto& s : scores) {
    s = std::exp(s - mx);
    z += s;
  }
  std::vector<double> p(w, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    ks::axpy(scores[t] / z, features.row(t), p.data(), w);
  return p;
}

std::vector<double> ClassifierHead::forward(const Matrix& features) const {
  const std::vector<double> p = pooled(features);
  std::vector<double> logits(n_labels);
  for (int j = 0; j < n_labels; ++j)
    logits[j] = fc_b[j] + ks::dot(fc_w.row(j), p.data(), width);
  return logits;
}

// ---------------------------------------------------------------------------
// losses

std::vector<double> softmax(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  const double mx = ks::max(v.data(), v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  ks::scale(1.0 / z, out.data(), out.size());
  return out;
}

double lsce_loss(const std::vector<double>& logits, int label, double epsilon,
                 std::vector<double>* dlogits) {
  const std::size_t n = logits.size();
  const std::vector<double> p = softmax(logits);
  const double uni = epsilon / static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double target = uni + (static_cast<int>(j) == label ? 1.0 - epsilon : 0.0);
    if (target > 0.0) loss -= target * std::log(std::max(p[j], 1e-300));
  }
  if (dlogits) {
    dlogits->resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      double target = uni + (static_cast<int>(j) == label ? 1.0 - epsilon : 0.0);
      (*dlogits)[j] = p[j] - target;
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// model

struct Model::Cache {
  struct Stage {
    std::vector<double> input;       // cin * h * w
    std::vector<std::uint8_t> mask;  // relu mask, cout * h * w
    std::vector<int> argmax;         // cout * hp * wp, index into h * w
    int cin = 0, h = 0, w = 0, hp = 0, wp = 0;
  };
  struct Enc {
    Matrix x_in;
    Matrix ln1_xhat, ln1_out;
    std::vector<double> ln1_istd;
    Matrix qkv;
    std::vector<Matrix> attn_p;  // per head, T x T
    Matrix attn_out;
    Matrix x_mid;
    Matrix ln2_xhat, ln2_out;
    std::vector<double> ln2_istd;
    Matrix ff_pre, ff_act;
  };
  std::vector<Stage> stages;
  std::vector<Enc> encs;
  Matrix x_final;
  std::vector<double> alpha;   // pooling softmax, length T
  std::vector<double> pooled;  // length d
};

Model::Cache* Model::new_cache() const { return new Cache(); }
void Model::free_cache(Cache* c) const { delete c; }

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();

  int h = cfg_.in_height, w = cfg_.in_width;
  for (std::size_t s = 0; s < cfg_.tokenizer_kernels.size(); ++s) {
    stage_h_.push_back(h);
    stage_w_.push_back(w);
    h = pooled_dim(h);
    w = pooled_dim(w);
  }
  tok_rows_ = h;
  tok_cols_ = w;
  tokens_ = h * w;

  const int d = cfg_.embed_dim;
  int cin = cfg_.in_channels;
  for (std::size_t s = 0; s < cfg_.tokenizer_kernels.size(); ++s) {
    const int k = cfg_.tokenizer_kernels[s];
    params_.add("tok" + std::to_string(s + 1) + ".W", "conv_w",
                static_cast<std::size_t>(d) * cin * k * k);
    params_.add("tok" + std::to_string(s + 1) + ".b", "conv_b", d);
    cin = d;
  }
  if (cfg_.positional_embedding)
    params_.add("pos", "pos", static_cast<std::size_t>(tokens_) * d);
  for (int m = 1; m <= cfg_.num_encoders; ++m) {
    const std::string p = "enc" + std::to_string(m) + ".";
    params_.add(p + "ln1.g", "ln_g", d);
    params_.add(p + "ln1.b", "ln_b", d);
    params_.add(p + "qkv.W", "qkv_w", static_cast<std::size_t>(3) * d * d);
    params_.add(p + "qkv.b", "qkv_b", 3 * d);
    params_.add(p + "proj.W", "proj_w", static_cast<std::size_t>(d) * d);
    params_.add(p + "proj.b", "proj_b", d);
    params_.add(p + "ln2.g", "ln_g", d);
    params_.add(p + "ln2.b", "ln_b", d);
    params_.add(p + "lin1.W", "ff1_w", static_cast<std::size_t>(cfg_.ff_hidden) * d);
    params_.add(p + "lin1.b", "ff1_b", cfg_.ff_hidden);
    params_.add(p + "lin2.W", "ff2_w", static_cast<std::size_t>(d) * cfg_.ff_hidden);
    params_.add(p + "lin2.b", "ff2_b", d);
  }
  params_.add("pool.g", "pool", d);
  params_.add("fc.W", "fc_w", static_cast<std::size_t>(cfg_.num_labels) * d);
  params_.add("fc.b", "fc_b", cfg_.num_labels);

  init_params(seed);
}

void Model::init_params(std::uint64_t seed) {
  Rng rng(seed);
  const int d = cfg_.embed_dim;
  int cin = cfg_.in_channels;
  auto fill_uniform = [&](const ParamSlice& s, double scale) {
    for (std::size_t i = 0; i < s.count; ++i)
      params_.w[s.offset + i] = rng.uniform(-scale, scale);
  };
  auto fill_const = [&](const ParamSlice& s, double v) {
    std::fill_n(params_.w.begin() + s.offset, s.count, v);
  };

  for (std::size_t s = 0; s < cfg_.tokenizer_kernels.size(); ++s) {
    const int k = cfg_.tokenizer_kernels[s];
    fill_uniform(params_.slice("tok" + std::to_string(s + 1) + ".W"),
                 1.0 / std::sqrt(static_cast<double>(cin) * k * k));
    cin = d;
  }
  if (cfg_.positional_embedding) fill_uniform(params_.slice("pos"), 0.05);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sff = 1.0 / std::sqrt(static_cast<double>(cfg_.ff_hidden));
  for (int m = 1; m <= cfg_.num_encoders; ++m) {
    const std::string p = "enc" + std::to_string(m) + ".";
    fill_const(params_.slice(p + "ln1.g"), 1.0);
    fill_const(params_.slice(p + "ln2.g"), 1.0);
    fill_uniform(params_.slice(p + "qkv.W"), sd);
    fill_uniform(params_.slice(p + "proj.W"), sd);
    fill_uniform(params_.slice(p + "lin1.W"), sd);
    fill_uniform(params_.slice(p + "lin2.W"), sff);
  }
  fill_uniform(params_.slice("pool.g"), sd);
  fill_uniform(params_.slice("fc.W"), sd);
}

std::vector<double> Model::forward(const double* image,
                                   const std::vector<TapPoint>& taps,
                                   std::vector<Matrix>* captured,
                                   Cache* cache) const {
  for (const auto& t : taps) t.validate(cfg_);
  if (captured) captured->assign(taps.size(), Matrix());

  const int d = cfg_.embed_dim;
  const int H = cfg_.num_heads;
  const int dh = d / H;
  const double* W = params_.w.data();

  // tokenizer
  int cin = cfg_.in_channels;
  std::vector<double> cur(image, image + static_cast<std::size_t>(cin) *
                                             cfg_.in_height * cfg_.in_width);
  if (cache) cache->stages.resize(cfg_.tokenizer_kernels.size());
  int h = cfg_.in_height, w = cfg_.in_width;
  for (std::size_t s = 0; s < cfg_.tokenizer_kernels.size(); ++s) {
    const int k = cfg_.tokenizer_kernels[s];
    const int pad = k / 2;
    const ParamSlice& ws = params_.slice("tok" + std::to_string(s + 1) + ".W");
    const ParamSlice& bs = params_.slice("tok" + std::to_string(s + 1) + ".b");
    const int hp = pooled_dim(h), wp = pooled_dim(w);

    std::vector<double> conv(static_cast<std::size_t>(d) * h * w);
    for (int o = 0; o < d; ++o) {
      const double* wo = W + ws.offset + static_cast<std::size_t>(o) * cin * k * k;
      const double bias = W[bs.offset + o];
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = bias;
          for (int c = 0; c < cin; ++c) {
            const double* inc = cur.data() + static_cast<std::size_t>(c) * h * w;
            const double* wc = wo + static_cast<std::size_t>(c) * k * k;
            for (int dy = 0; dy < k; ++dy) {
              const int yy = y + dy - pad;
              if (yy < 0 || yy >= h) continue;
              for (int dx = 0; dx < k; ++dx) {
                const int xx = x + dx - pad;
                if (xx < 0 || xx >= w) continue;
                acc += wc[dy * k + dx] * inc[yy * w + xx];
              }
            }
          }
          conv[static_cast<std::size_t>(o) * h * w + y * w + x] = acc;
        }
    }

    Cache::Stage* st = cache ? &cache->stages[s] : nullptr;
    if (st) {
      st->input = cur;
      st->cin = cin;
      st->h = h;
      st->w = w;
      st->hp = hp;
      st->wp = wp;
      st->mask.resize(conv.size());
      st->argmax.resize(static_cast<std::size_t>(d) * hp * wp);
    }
    for (std::size_t i = 0; i < conv.size(); ++i) {
      const bool on = conv[i] > 0.0;
      if (st) st->mask[i] = on;
      if (!on) conv[i] = 0.0;
    }

    // 3x3 max-pool, stride 2, pad 1
    std::vector<double> pooled(static_cast<std::size_t>(d) * hp * wp);
    for (int o = 0; o < d; ++o) {
      const double* plane = conv.data() + static_cast<std::size_t>(o) * h * w;
      for (int y = 0; y < hp; ++y)
        for (int x = 0; x < wp; ++x) {
          double best = -HUGE_VAL;
          int besti = -1;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = 2 * y + dy;
            if (yy < 0 || yy >= h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = 2 * x + dx;
              if (xx < 0 || xx >= w) continue;
              if (plane[yy * w + xx] > best) {
                best = plane[yy * w + xx];
                besti = yy * w + xx;
              }
            }
          }
          pooled[static_cast<std::size_t>(o) * hp * wp + y * wp + x] = best;
          if (st) st->argmax[static_cast<std::size_t>(o) * hp * wp + y * wp + x] = besti;
        }
    }
    cur = std::move(pooled);
    cin = d;
    h = hp;
    w = wp;
  }

  const std::size_t T = static_cast<std::size_t>(tokens_);
  Matrix x(T, d);
  for (std::size_t t = 0; t < T; ++t)
    for (int c = 0; c < d; ++c) x(t, c) = cur[static_cast<std::size_t>(c) * T + t];
  if (cfg_.positional_embedding) {
    const ParamSlice& ps = params_.slice("pos");
    for (std::size_t i = 0; i < ps.count; ++i) x.storage()[i] += W[ps.offset + i];
  }

  auto capture = [&](int enc_m, TapSite site, const Matrix& value,
                     const Matrix* skip) {
    if (!captured) return;
    for (std::size_t i = 0; i < taps.size(); ++i) {
      if (taps[i].encoder != enc_m || taps[i].site != site) continue;
      Matrix out = value;
      if (skip && taps[i].include_skip)
        for (std::size_t j = 0; j < out.size(); ++j)
          out.storage()[j] += skip->storage()[j];
      (*captured)[i] = std::move(out);
    }
  };

  if (cache) cache->encs.resize(cfg_.num_encoders);
  for (int m = 1; m <= cfg_.num_encoders; ++m) {
    const std::string p = "enc" + std::to_string(m) + ".";
    Cache::Enc local;
    Cache::Enc& e = cache ? cache->encs[m - 1] : local;
    e.x_in = x;

    layernorm_forward(x, W + params_.slice(p + "ln1.g").offset,
                      W + params_.slice(p + "ln1.b").offset, e.ln1_xhat,
                      e.ln1_istd, e.ln1_out);
    capture(m, TapSite::layernorm_out, e.ln1_out, nullptr);

    linear_forward(e.ln1_out, W + params_.slice(p + "qkv.W").offset,
                   W + params_.slice(p + "qkv.b").offset, 3 * d, e.qkv);
    capture(m, TapSite::qkv_out, e.qkv, nullptr);

    e.attn_out = Matrix(T, d);
    e.attn_p.assign(H, Matrix());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int hh = 0; hh < H; ++hh) {
      const int qoff = hh * dh, koff = d + hh * dh, voff = 2 * d + hh * dh;
      Matrix& A = e.attn_p[hh];
      A = Matrix(T, T);
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = e.qkv.row(i) + qoff;
        for (std::size_t j = 0; j < T; ++j) {
          const double* kj = e.qkv.row(j) + koff;
          double acc = 0.0;
          for (int c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          A(i, j) = acc * scale;
        }
      }
      softmax_rows_inplace(A);
      for (std::size_t i = 0; i < T; ++i) {
        double* oi = e.attn_out.row(i) + qoff;
        for (std::size_t j = 0; j < T; ++j) {
          const double a = A(i, j);
          const double* vj = e.qkv.row(j) + voff;
          for (int c = 0; c < dh; ++c) oi[c] += a * vj[c];
        }
      }
    }
    capture(m, TapSite::attention_out, e.attn_out, nullptr);

    Matrix proj;
    linear_forward(e.attn_out, W + params_.slice(p + "proj.W").offset,
                   W + params_.slice(p + "proj.b").offset, d, proj);
    capture(m, TapSite::projection_out, proj, &e.x_in);

    e.x_mid = e.x_in;
    for (std::size_t i = 0; i < e.x_mid.size(); ++i)
      e.x_mid.storage()[i] += proj.storage()[i];

    layernorm_forward(e.x_mid, W + params_.slice(p + "ln2.g").offset,
                      W + params_.slice(p + "ln2.b").offset, e.ln2_xhat,
                      e.ln2_istd, e.ln2_out);

    linear_forward(e.ln2_out, W + params_.slice(p + "lin1.W").offset,
                   W + params_.slice(p + "lin1.b").offset, cfg_.ff_hidden,
                   e.ff_pre);
    e.ff_act = e.ff_pre;
    for (auto& v : e.ff_act.storage()) v = gelu(v);
    capture(m, TapSite::linear1_out, e.ff_act, nullptr);

    Matrix ff2;
    linear_forward(e.ff_act, W + params_.slice(p + "lin2.W").offset,
                   W + params_.slice(p + "lin2.b").offset, d, ff2);
    capture(m, TapSite::linear2_out, ff2, &e.x_mid);

    x = e.x_mid;
    for (std::size_t i = 0; i < x.size(); ++i) x.storage()[i] += ff2.storage()[i];
    capture(m, TapSite::block_out, x, nullptr);
  }

  // sequence pooling + classifier
  const ParamSlice& gs = params_.slice("pool.g");
  std::vector<double> scores(T);
  for (std::size_t t = 0; t < T; ++t)
    scores[t] = ks::dot(x.row(t), W + gs.offset, d);
  const double mx = ks::max(scores.data(), T);
  double z = 0.0;
  for (auto& s : scores) {
    s = std::exp(s - mx);
    z += s;
  }
  for (auto& s : scores) s /= z;
  std::vector<double> pooled(d, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    ks::axpy(scores[t], x.row(t), pooled.data(), d);

  const ParamSlice& fw = params_.slice("fc.W");
  const ParamSlice& fb = params_.slice("fc.b");
  std::vector<double> logits(cfg_.num_labels);
  for (int j = 0; j < cfg_.num_labels; ++j)
    logits[j] = W[fb.offset + j] +
                ks::dot(W + fw.offset + static_cast<std::size_t>(j) * d,
                        pooled.data(), d);

  if (cache) {
    cache->x_final = std::move(x);
    cache->alpha = std::move(scores);
    cache->pooled = std::move(pooled);
  }
  return logits;
}

void Model::backward(const Cache& cache, const std::vector<double>& dlogits) {
  const int d = cfg_.embed_dim;
  const int H = cfg_.num_heads;
  const int dh = d / H;
  const std::size_t T = static_cast<std::size_t>(tokens_);
  const double* W = params_.w.data();
  double* G = params_.g.data();

  // classifier
  const ParamSlice& fw = params_.slice("fc.W");
  const ParamSlice& fb = params_.slice("fc.b");
  std::vector<double> dpooled(d, 0.0);
  for (int j = 0; j < cfg_.num_labels; ++j) {
    const double dj = dlogits[j];
    if (dj != 0.0) {
      ks::axpy(dj, cache.pooled.data(), G + fw.offset + static_cast<std::size_t>(j) * d, d);
      G[fb.offset + j] += dj;
      ks::axpy(dj, W + fw.offset + static_cast<std::size_t>(j) * d, dpooled.data(), d);
    }
  }

  // sequence pooling
  const ParamSlice& gs = params_.slice("pool.g");
  Matrix dx(T, d);
  std::vector<double> dalpha(T);
  for (std::size_t t = 0; t < T; ++t) {
    dalpha[t] = ks::dot(dpooled.data(), cache.x_final.row(t), d);
    ks::axpy(cache.alpha[t], dpooled.data(), dx.row(t), d);
  }
  double adot = 0.0;
  for (std::size_t t = 0; t < T; ++t) adot += cache.alpha[t] * dalpha[t];
  for (std::size_t t = 0; t < T; ++t) {
    const double ds = cache.alpha[t] * (dalpha[t] - adot);
    ks::axpy(ds, cache.x_final.row(t), G + gs.offset, d);
    ks::axpy(ds, W + gs.offset, dx.row(t), d);
  }

  // encoders, reversed
  for (int m = cfg_.num_encoders; m >= 1; --m) {
    const std::string p = "enc" + std::to_string(m) + ".";
    const Cache::Enc& e = cache.encs[m - 1];

    // FF sub-block: x_out = x_mid + lin2(gelu(lin1(ln2(x_mid))))
    Matrix da1;
    linear_backward(e.ff_act, W + params_.slice(p + "lin2.W").offset, dx,
                    G + params_.slice(p + "lin2.W").offset,
                    G + params_.slice(p + "lin2.b").offset, &da1);
    for (std::size_t i = 0; i < da1.size(); ++i)
      da1.storage()[i] *= gelu_grad(e.ff_pre.storage()[i]);
    Matrix dln2;
    linear_backward(e.ln2_out, W + params_.slice(p + "lin1.W").offset, da1,
                    G + params_.slice(p + "lin1.W").offset,
                    G + params_.slice(p + "lin1.b").offset, &dln2);
    // skip path: dx already carries d(x_mid) from the residual
    layernorm_backward(e.ln2_xhat, e.ln2_istd,
                       W + params_.slice(p + "ln2.g").offset, dln2,
                       G + params_.slice(p + "ln2.g").offset,
                       G + params_.slice(p + "ln2.b").offset, dx);

    // MHA sub-block: x_mid = x_in + proj(attn(ln1(x_in)))
    Matrix dattn;
    linear_backward(e.attn_out, W + params_.slice(p + "proj.W").offset, dx,
                    G + params_.slice(p + "proj.W").offset,
                    G + params_.slice(p + "proj.b").offset, &dattn);

    Matrix dqkv(T, 3 * d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> dA_row(T);
    for (int hh = 0; hh < H; ++hh) {
      const int qoff = hh * dh, koff = d + hh * dh, voff = 2 * d + hh * dh;
      const Matrix& A = e.attn_p[hh];
      for (std::size_t i = 0; i < T; ++i) {
        const double* doi = dattn.row(i) + qoff;
        // dV and dA
        double dsum = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          const double* vj = e.qkv.row(j) + voff;
          double da = 0.0;
          for (int c = 0; c < dh; ++c) da += doi[c] * vj[c];
          dA_row[j] = da;
          double* dvj = dqkv.row(j) + voff;
          const double a = A(i, j);
          for (int c = 0; c < dh; ++c) dvj[c] += a * doi[c];
        }
        for (std::size_t j = 0; j < T; ++j) dsum += A(i, j) * dA_row[j];
        // softmax backward then scores backward
        double* dqi = dqkv.row(i) + qoff;
        for (std::size_t j = 0; j < T; ++j) {
          const double dS = A(i, j) * (dA_row[j] - dsum) * scale;
          if (dS == 0.0) continue;
          const double* kj = e.qkv.row(j) + koff;
          const double* qi = e.qkv.row(i) + qoff;
          double* dkj = dqkv.row(j) + koff;
          for (int c = 0; c < dh; ++c) {
            dqi[c] += dS * kj[c];
            dkj[c] += dS * qi[c];
          }
        }
      }
    }

    Matrix dln1;
    linear_backward(e.ln1_out, W + params_.slice(p + "qkv.W").offset, dqkv,
                    G + params_.slice(p + "qkv.W").offset,
                    G + params_.slice(p + "qkv.b").offset, &dln1);
    layernorm_backward(e.ln1_xhat, e.ln1_istd,
                       W + params_.slice(p + "ln1.g").offset, dln1,
                       G + params_.slice(p + "ln1.g").offset,
                       G + params_.slice(p + "ln1.b").offset, dx);
  }

  // positional embedding
  if (cfg_.positional_embedding) {
    const ParamSlice& ps = params_.slice("pos");
    for (std::size_t i = 0; i < ps.count; ++i) G[ps.offset + i] += dx.storage()[i];
  }

  // tokens back to channel planes
  std::vector<double> dfeat(static_cast<std::size_t>(d) * T);
  for (std::size_t t = 0; t < T; ++t)
    for (int c = 0; c < d; ++c) dfeat[static_cast<std::size_t>(c) * T + t] = dx(t, c);

  // tokenizer stages, reversed
  for (int s = static_cast<int>(cfg_.tokenizer_kernels.size()) - 1; s >= 0; --s) {
    const Cache::Stage& st = cache.stages[s];
    const int k = cfg_.tokenizer_kernels[s];
    const int pad = k / 2;
    const ParamSlice& ws = params_.slice("tok" + std::to_string(s + 1) + ".W");
    const ParamSlice& bs = params_.slice("tok" + std::to_string(s + 1) + ".b");

    // un-pool: scatter to argmax positions, then relu mask
    std::vector<double> dconv(static_cast<std::size_t>(d) * st.h * st.w, 0.0);
    for (int o = 0; o < d; ++o)
      for (int i = 0; i < st.hp * st.wp; ++i) {
        const int src = st.argmax[static_cast<std::size_t>(o) * st.hp * st.wp + i];
        dconv[static_cast<std::size_t>(o) * st.h * st.w + src] +=
            dfeat[static_cast<std::size_t>(o) * st.hp * st.wp + i];
      }
    for (std::size_t i = 0; i < dconv.size(); ++i)
      if (!st.mask[i]) dconv[i] = 0.0;

    const bool need_dinput = s > 0;
    std::vector<double> dinput;
    if (need_dinput) dinput.assign(st.input.size(), 0.0);

    for (int o = 0; o < d; ++o) {
      double* dwo = G + ws.offset + static_cast<std::size_t>(o) * st.cin * k * k;
      const double* wo = W + ws.offset + static_cast<std::size_t>(o) * st.cin * k * k;
      const double* dplane = dconv.data() + static_cast<std::size_t>(o) * st.h * st.w;
      for (int y = 0; y < st.h; ++y)
        for (int x = 0; x < st.w; ++x) {
          const double dv = dplane[y * st.w + x];
          if (dv == 0.0) continue;
          G[bs.offset + o] += dv;
          for (int c = 0; c < st.cin; ++c) {
            const double* inc = st.input.data() + static_cast<std::size_t>(c) * st.h * st.w;
            double* dwc = dwo + static_cast<std::size_t>(c) * k * k;
            for (int dy = 0; dy < k; ++dy) {
              const int yy = y + dy - pad;
              if (yy < 0 || yy >= st.h) continue;
              for (int dxp = 0; dxp < k; ++dxp) {
                const int xx = x + dxp - pad;
                if (xx < 0 || xx >= st.w) continue;
                dwc[dy * k + dxp] += dv * inc[yy * st.w + xx];
                if (need_dinput)
                  dinput[static_cast<std::size_t>(c) * st.h * st.w + yy * st.w + xx] +=
                      dv * wo[static_cast<std::size_t>(c) * k * k + dy * k + dxp];
              }
            }
          }
        }
    }
    if (need_dinput) dfeat = std::move(dinput);
  }
}

ClassifierHead Model::classifier_head() const {
  ClassifierHead h;
  h.width = cfg_.embed_dim;
  h.n_labels = cfg_.num_labels;
  const ParamSlice& gs = params_.slice("pool.g");
  const ParamSlice& fw = params_.slice("fc.W");
  const ParamSlice& fb = params_.slice("fc.b");
  h.pool.assign(params_.w.begin() + gs.offset,
                params_.w.begin() + gs.offset + gs.count);
  h.fc_w = Matrix(cfg_.num_labels, cfg_.embed_dim);
  std::copy_n(params_.w.begin() + fw.offset, fw.count, h.fc_w.storage().begin());
  h.fc_b.assign(params_.w.begin() + fb.offset,
                params_.w.begin() + fb.offset + fb.count);
  return h;
}

void Model::set_classifier_head(const ClassifierHead& head) {
  if (head.width != cfg_.embed_dim || head.n_labels != cfg_.num_labels)
    throw ModelError("classifier head shape mismatch");
  const ParamSlice& gs = params_.slice("pool.g");
  const ParamSlice& fw = params_.slice("fc.W");
  const ParamSlice& fb = params_.slice("fc.b");
  std::copy(head.pool.begin(), head.pool.end(), params_.w.begin() + gs.offset);
  std::copy(head.fc_w.storage().begin(), head.fc_w.storage().end(),
            params_.w.begin() + fw.offset);
  std::copy(head.fc_b.begin(), head.fc_b.end(), params_.w.begin() + fb.offset);
}

Matrix Model::tap_features(const double* image, const TapPoint& tap) const {
  std::vector<Matrix> captured;
  forward(image, {tap}, &captured, nullptr);
  return std::move(captured[0]);
}

std::vector<Matrix> Model::attention_maps(const double* image,
                                          int encoder) const {
  TapPoint tap{encoder, TapSite::attention_out, false};
  const Matrix feats = tap_features(image, tap);
  const int H = cfg_.num_heads;
  const int dh = cfg_.embed_dim / H;
  std::vector<Matrix> maps;
  for (int hh = 0; hh <= H; ++hh) {
    const int lo = hh < H ? hh * dh : 0;
    const int n = hh < H ? dh : cfg_.embed_dim;
    Matrix map(tok_rows_, tok_cols_);
    for (int t = 0; t < tokens_; ++t) {
      double acc = 0.0;
      for (int c = lo; c < lo + n; ++c) acc += feats(t, c);
      map(t / tok_cols_, t % tok_cols_) = acc / n;
    }
    maps.push_back(std::move(map));
  }
  return maps;  // per-head maps first, all-head average last
}

void Model::save(const std::string& dir) const {
  TensorBundle b;
  b.put_f64("params", {params_.w.size()}, params_.w.data());
  b.save(dir);
  json j;
  j["embed_dim"] = cfg_.embed_dim;
  j["num_heads"] = cfg_.num_heads;
  j["ff_hidden"] = cfg_.ff_hidden;
  j["num_encoders"] = cfg_.num_encoders;
  j["num_labels"] = cfg_.num_labels;
  j["tokenizer_kernels"] = cfg_.tokenizer_kernels;
  j["in_channels"] = cfg_.in_channels;
  j["in_height"] = cfg_.in_height;
  j["in_width"] = cfg_.in_width;
  j["positional_embedding"] = cfg_.positional_embedding;
  std::ofstream out(std::filesystem::path(dir) / "model.json");
  out << j.dump(2) << "\n";
}

Model Model::load(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "model.json");
  if (!in) throw ModelError("no model.json in " + dir);
  json j = json::parse(in);
  ModelConfig cfg;
  cfg.embed_dim = j.at("embed_dim");
  cfg.num_heads = j.at("num_heads");
  cfg.ff_hidden = j.at("ff_hidden");
  cfg.num_encoders = j.at("num_encoders");
  cfg.num_labels = j.at("num_labels");
  cfg.tokenizer_kernels = j.at("tokenizer_kernels").get<std::vector<int>>();
  cfg.in_channels = j.at("in_channels");
  cfg.in_height = j.at("in_height");
  cfg.in_width = j.at("in_width");
  cfg.positional_embedding = j.at("positional_embedding");
  Model m(cfg, 0);
  TensorBundle b = TensorBundle::load(dir);
  auto w = b.get_f64("params");
  if (w.size() != m.params_.w.size())
    throw ModelError("checkpoint parameter count mismatch");
  m.params_.w = std::move(w);
  return m;
}

}  // namespace snpkit
