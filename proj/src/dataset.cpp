#include "snpkit/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "snpkit/rng.hpp"

namespace snpkit {

namespace fs = std::filesystem;

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw DataError("unknown split: " + s);
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

SuperclassMap consecutive_superclasses(int n_labels) {
  int L = 1;
  for (int cand : {5, 4, 3, 2}) {
    if (n_labels % cand == 0) {
      L = cand;
      break;
    }
  }
  SuperclassMap map;
  map.labels_per_class = L;
  map.classes = n_labels / L;
  map.super_of.resize(n_labels);
  for (int l = 0; l < n_labels; ++l) map.super_of[l] = l / L;
  return map;
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::label_counts(Split s) const {
  std::vector<std::size_t> counts(n_labels, 0);
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) counts[labels[i]]++;
  return counts;
}

void standardize_image(std::vector<double>& image) {
  const std::size_t n = image.size();
  if (n == 0) return;
  double mean = 0.0;
  for (double v : image) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : image) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
  for (double& v : image) v = (v - mean) / sd;
}

void standardize(Dataset& ds) {
  if (ds.standardized) return;
  for (auto& img : ds.images) standardize_image(img);
  ds.standardized = true;
}

namespace {

constexpr std::size_t kCifarRecord = 3074;
constexpr std::size_t kCifarPixels = 3072;

void load_cifar_file(const fs::path& file, Split split, Dataset& ds) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes == 0 || bytes % kCifarRecord != 0)
    throw DataError(file.string() + ": size " + std::to_string(bytes) +
                    " is not a multiple of 3074");
  const std::size_t n = bytes / kCifarRecord;
  std::vector<unsigned char> rec(kCifarRecord);
  for (std::size_t r = 0; r < n; ++r) {
    in.read(reinterpret_cast<char*>(rec.data()), kCifarRecord);
    if (!in) throw DataError(file.string() + ": truncated record");
    const int coarse = rec[0];
    const int fine = rec[1];
    if (fine >= 100) throw DataError(file.string() + ": fine label byte " +
                                     std::to_string(fine) + " out of range");
    if (coarse >= 20) throw DataError(file.string() + ": coarse label byte " +
                                      std::to_string(coarse) + " out of range");
    std::vector<double> img(kCifarPixels);
    for (std::size_t i = 0; i < kCifarPixels; ++i)
      img[i] = static_cast<double>(rec[2 + i]) / 255.0;
    ds.images.push_back(std::move(img));
    ds.labels.push_back(fine);
    ds.coarse.push_back(coarse);
    ds.splits.push_back(split);
  }
}

}  // namespace

Dataset ingest_cifar100(const std::string& path, Split single_file_split) {
  Dataset ds;
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  ds.n_labels = 100;

  const fs::path p(path);
  if (fs::is_directory(p)) {
    load_cifar_file(p / "train.bin", Split::train, ds);
    // Official test set doubles as the validation/evaluation split.
    load_cifar_file(p / "test.bin", Split::validation, ds);
  } else {
    load_cifar_file(p, single_file_split, ds);
  }

  ds.superclasses.classes = 20;
  ds.superclasses.labels_per_class = 5;
  ds.superclasses.super_of.assign(100, -1);
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    ds.superclasses.super_of[ds.labels[i]] = ds.coarse[i];

  standardize(ds);
  return ds;
}

Dataset synth_dataset(int n_labels, int samples_per_label, int channels,
                      int height, int width, double margin,
                      std::uint64_t seed) {
  if (margin < 0.0) throw DataError("separability margin must be >= 0");
  Dataset ds;
  ds.channels = channels;
  ds.height = height;
  ds.width = width;
  ds.n_labels = n_labels;
  ds.superclasses = consecutive_superclasses(n_labels);

  const std::size_t npix = ds.image_size();
  Rng rng(seed);

  std::vector<std::vector<double>> prototypes(n_labels);
  for (int l = 0; l < n_labels; ++l) {
    prototypes[l].resize(npix);
    for (auto& v : prototypes[l]) v = rng.normal();
    standardize_image(prototypes[l]);  // zero-mean, unit-std pattern
  }

  const int n_test = std::max(1, samples_per_label * 15 / 100);
  const int n_val = std::max(1, samples_per_label * 15 / 100);

  for (int l = 0; l < n_labels; ++l) {
    for (int k = 0; k < samples_per_label; ++k) {
      std::vector<double> img(npix);
      for (std::size_t i = 0; i < npix; ++i)
        img[i] = margin * prototypes[l][i] + rng.normal();
      ds.images.push_back(std::move(img));
      ds.labels.push_back(l);
      ds.coarse.push_back(ds.superclasses.super_of[l]);
      Split s = Split::train;
      if (k < n_test)
        s = Split::test;
      else if (k < n_test + n_val)
        s = Split::validation;
      ds.splits.push_back(s);
    }
  }

  standardize(ds);
  return ds;
}

}  // namespace snpkit
