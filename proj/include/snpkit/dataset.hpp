#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace snpkit {

enum class Split { train, validation, test };

Split split_from_string(const std::string& s);
std::string to_string(Split s);

struct SuperclassMap {
  std::vector<int> super_of;  // fine label -> super-class id
  int classes = 0;            // S
  int labels_per_class = 0;   // L

  bool empty() const { return classes == 0; }
};

// Groups consecutive labels; L is the largest divisor of n_labels that is <= 5.
SuperclassMap consecutive_superclasses(int n_labels);

struct Dataset {
  int channels = 0, height = 0, width = 0;
  int n_labels = 0;
  bool standardized = false;
  SuperclassMap superclasses;

  std::vector<std::vector<double>> images;  // per sample, c*h*w row-major
  std::vector<int> labels;                  // fine labels
  std::vector<int> coarse;                  // empty when unavailable
  std::vector<Split> splits;

  std::size_t size() const { return images.size(); }
  std::size_t image_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::vector<std::size_t> indices(Split s) const;
  std::vector<std::size_t> label_counts(Split s) const;
};

class DataError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// In-place per-image standardization: subtract mean, divide by std.
// A constant image (std = 0) is divided by 1.
void standardize_image(std::vector<double>& image);
void standardize(Dataset& ds);

// CIFAR-100 binary format: 3074-byte records, 1 coarse byte + 1 fine byte +
// 3072 pixel bytes (channel-planar, row-major). `path` may be a directory
// holding train.bin and test.bin (test records are tagged validation, per the
// run-metadata convention), or a single .bin file (all records tagged with
// `single_file_split`).
Dataset ingest_cifar100(const std::string& path,
                        Split single_file_split = Split::train);

// Label-conditioned Gaussian blobs: image = margin * prototype + unit noise,
// then standardized. Splits per label: ~70% train, ~15% validation, ~15% test.
Dataset synth_dataset(int n_labels, int samples_per_label, int channels,
                      int height, int width, double margin,
                      std::uint64_t seed);

}  // namespace snpkit
