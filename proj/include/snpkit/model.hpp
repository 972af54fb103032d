#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "snpkit/matrix.hpp"

namespace snpkit {

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class ModelError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int embed_dim = 256;   // d
  int num_heads = 4;     // H
  int ff_hidden = 512;   // 2d
  int num_encoders = 7;  // E
  int num_labels = 100;  // N_l
  std::vector<int> tokenizer_kernels = {3};  // conv chain, each followed by 3x3/2 max-pool
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  bool positional_embedding = true;

  void validate() const;

  static ModelConfig cct7_3x1();  // CIFAR-100 preset
  static ModelConfig cct7_7x2();  // Flowers-102 preset
  static ModelConfig toy(int d, int heads, int encoders, int labels,
                         int channels, int height, int width,
                         int ff_hidden = 0);
};

struct Hyper {
  double lr = 3e-4;
  double l2 = 0.0;             // alpha
  double decay_q = 1.0;        // in (0, 1]
  int decay_interval = 10;     // delta-t epochs
  double label_smoothing = 0.0;
  double momentum = 0.9;
  bool nesterov = true;
  int batch_size = 100;
  int epochs = 10;
  std::uint64_t seed = 0;

  void validate() const;
  // epoch is 1-based; piecewise-constant multiplicative schedule
  double lr_at_epoch(int epoch) const;
};

enum class TapSite {
  layernorm_out,   // width d (MHA sub-block LayerNorm)
  qkv_out,         // width 3d
  attention_out,   // width d (scaled dot-product output, before projection)
  projection_out,  // width d
  linear1_out,     // width ff_hidden (post-activation, input to Linear2)
  linear2_out,     // width d
  block_out,       // width d
};

TapSite tap_site_from_string(const std::string& s);
std::string to_string(TapSite s);

struct TapPoint {
  int encoder = 1;  // 1-based, in [1, E]
  TapSite site = TapSite::block_out;
  bool include_skip = true;  // add the residual field at projection_out / linear2_out

  void validate(const ModelConfig& cfg) const;
  int width(const ModelConfig& cfg) const;
  std::string name() const;
};

struct ParamSlice {
  std::string name;  // e.g. "enc3.lin1.W"
  std::string kind;  // layer kind for grad-check sampling, e.g. "ff1_w"
  std::size_t offset = 0;
  std::size_t count = 0;
};

struct ParamStore {
  std::vector<double> w;  // values
  std::vector<double> g;  // gradients
  std::vector<ParamSlice> slices;

  std::size_t add(std::string name, std::string kind, std::size_t count);
  const ParamSlice& slice(std::string_view name) const;
  const ParamSlice* find(std::string_view name) const;
  void zero_grad();
};

// Sequence pooling + FC classifier over a tapped activation of some width.
struct ClassifierHead {
  int width = 0;
  int n_labels = 0;
  std::vector<double> pool;  // length width, token scoring vector
  Matrix fc_w;               // n_labels x width
  std::vector<double> fc_b;  // length n_labels

  static ClassifierHead init(int width, int n_labels, std::uint64_t seed);
  // features: tokens x width; returns logits
  std::vector<double> forward(const Matrix& features) const;
  std::vector<double> pooled(const Matrix& features) const;
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t param_count() const { return params_.w.size(); }

  int tokens() const { return tokens_; }
  int token_rows() const { return tok_rows_; }
  int token_cols() const { return tok_cols_; }

  struct Cache;  // opaque per-sample activation cache

  // Forward one (preprocessed) image. `taps` activations are copied into
  // `captured` (parallel to taps). `cache` enables backward().
  std::vector<double> forward(const double* image,
                              const std::vector<TapPoint>& taps = {},
                              std::vector<Matrix>* captured = nullptr,
                              Cache* cache = nullptr) const;

  // Accumulates parameter gradients for one sample into params().g.
  void backward(const Cache& cache, const std::vector<double>& dlogits);

  Cache* new_cache() const;
  void free_cache(Cache*) const;

  // Per-head attention row sums etc. are reachable via taps; the final
  // classifier is exposed as a head for SNP extraction on block_out.
  ClassifierHead classifier_head() const;
  void set_classifier_head(const ClassifierHead& head);

  // Token features at a tap for one image (no grad bookkeeping).
  Matrix tap_features(const double* image, const TapPoint& tap) const;

  // Scaled dot-product attention output for one image at encoder m:
  // H+1 maps over the token grid (per-head channel means, then all-head mean).
  std::vector<Matrix> attention_maps(const double* image, int encoder) const;

  void save(const std::string& dir) const;
  static Model load(const std::string& dir);

 private:
  void init_params(std::uint64_t seed);

  ModelConfig cfg_;
  ParamStore params_;
  int tokens_ = 0, tok_rows_ = 0, tok_cols_ = 0;
  std::vector<int> stage_h_, stage_w_;  // spatial dims entering each stage
};

// Label-smoothing cross-entropy; returns loss and writes dL/dlogits.
double lsce_loss(const std::vector<double>& logits, int label, double epsilon,
                 std::vector<double>* dlogits);

std::vector<double> softmax(const std::vector<double>& v);

}  // namespace snpkit
