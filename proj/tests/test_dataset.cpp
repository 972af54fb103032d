#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "snpkit/dataset.hpp"

using namespace snpkit;
namespace fs = std::filesystem;

namespace {

// one CIFAR-100 record: coarse, fine, then 3072 channel-planar pixel bytes
std::vector<std::uint8_t> make_record(std::uint8_t coarse, std::uint8_t fine,
                                      std::uint8_t base) {
  std::vector<std::uint8_t> rec(3074);
  rec[0] = coarse;
  rec[1] = fine;
  for (int i = 0; i < 3072; ++i)
    rec[2 + i] = static_cast<std::uint8_t>((base + i) % 256);
  return rec;
}

void write_bin(const fs::path& p,
               const std::vector<std::vector<std::uint8_t>>& recs) {
  std::ofstream out(p, std::ios::binary);
  for (const auto& r : recs)
    out.write(reinterpret_cast<const char*>(r.data()),
              static_cast<std::streamsize>(r.size()));
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / "snpkit_dataset_test";
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("cifar100 single file parsing") {
  TempDir tmp;
  const fs::path bin = tmp.path / "single.bin";
  write_bin(bin, {make_record(3, 42, 0), make_record(19, 99, 10)});

  Dataset ds = ingest_cifar100(bin.string(), Split::test);
  CHECK(ds.size() == 2);
  CHECK(ds.channels == 3);
  CHECK(ds.height == 32);
  CHECK(ds.width == 32);
  CHECK(ds.n_labels == 100);
  CHECK(ds.labels[0] == 42);
  CHECK(ds.labels[1] == 99);
  CHECK(ds.coarse[0] == 3);
  CHECK(ds.coarse[1] == 19);
  CHECK(ds.splits[0] == Split::test);
  CHECK(ds.standardized);
  CHECK(ds.superclasses.classes == 20);
  CHECK(ds.superclasses.labels_per_class == 5);

  // per-image standardization invariants
  for (const auto& img : ds.images) {
    double mean = 0.0;
    for (double v : img) mean += v;
    mean /= img.size();
    CHECK(std::fabs(mean) < 1e-10);
    double var = 0.0;
    for (double v : img) var += (v - mean) * (v - mean);
    CHECK(std::sqrt(var / img.size()) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("cifar100 pixel layout survives standardization ordering") {
  TempDir tmp;
  const fs::path bin = tmp.path / "layout.bin";
  // constant image except one bright pixel at channel 1, row 2, col 3
  std::vector<std::uint8_t> rec(3074, 0);
  rec[0] = 0;
  rec[1] = 0;
  const int idx = 1 * 1024 + 2 * 32 + 3;
  rec[2 + idx] = 255;
  write_bin(bin, {rec});
  Dataset ds = ingest_cifar100(bin.string());
  // the bright pixel is the unique maximum, at the same flat index
  const auto& img = ds.images[0];
  std::size_t argmax = 0;
  for (std::size_t i = 1; i < img.size(); ++i)
    if (img[i] > img[argmax]) argmax = i;
  CHECK(argmax == static_cast<std::size_t>(idx));
}

TEST_CASE("cifar100 directory mode splits") {
  TempDir tmp;
  write_bin(tmp.path / "train.bin", {make_record(0, 1, 0), make_record(0, 2, 5)});
  write_bin(tmp.path / "test.bin", {make_record(0, 3, 9)});
  Dataset ds = ingest_cifar100(tmp.path.string());
  CHECK(ds.size() == 3);
  CHECK(ds.indices(Split::train).size() == 2);
  CHECK(ds.indices(Split::validation).size() == 1);
  CHECK(ds.labels[ds.indices(Split::validation)[0]] == 3);
}

TEST_CASE("cifar100 malformed inputs") {
  TempDir tmp;
  const fs::path bad = tmp.path / "bad.bin";

  {  // truncated record
    std::ofstream out(bad, std::ios::binary);
    std::vector<char> junk(3074 + 17, 0);
    out.write(junk.data(), static_cast<std::streamsize>(junk.size()));
  }
  CHECK_THROWS_AS(ingest_cifar100(bad.string()), DataError);

  write_bin(bad, {make_record(0, 100, 0)});  // fine label out of range
  CHECK_THROWS_AS(ingest_cifar100(bad.string()), DataError);

  write_bin(bad, {make_record(20, 0, 0)});  // coarse label out of range
  CHECK_THROWS_AS(ingest_cifar100(bad.string()), DataError);

  CHECK_THROWS_AS(ingest_cifar100((tmp.path / "missing.bin").string()),
                  DataError);
}

TEST_CASE("standardize_image constant image") {
  std::vector<double> img(48, 3.25);
  standardize_image(img);
  for (double v : img) CHECK(v == 0.0);  // std 0 divides by 1
}

TEST_CASE("synth dataset determinism and shape") {
  Dataset a = synth_dataset(4, 20, 1, 6, 6, 2.0, 77);
  Dataset b = synth_dataset(4, 20, 1, 6, 6, 2.0, 77);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(a.splits == b.splits);

  Dataset c = synth_dataset(4, 20, 1, 6, 6, 2.0, 78);
  CHECK(a.images != c.images);

  CHECK(a.size() == 80);
  CHECK(a.n_labels == 4);
  CHECK(a.standardized);

  // per-label split fractions: 15% test, 15% validation, rest train
  auto counts_in = [&](Split s) { return a.indices(s).size(); };
  CHECK(counts_in(Split::test) == 4 * 3);
  CHECK(counts_in(Split::validation) == 4 * 3);
  CHECK(counts_in(Split::train) == 4 * 14);

  auto lc = a.label_counts(Split::train);
  for (auto n : lc) CHECK(n == 14);
}

TEST_CASE("synth margin separates labels") {
  // with a large margin, same-label images correlate far more than
  // different-label ones
  Dataset ds = synth_dataset(3, 10, 1, 8, 8, 8.0, 5);
  auto corr = [&](std::size_t i, std::size_t j) {
    double d = 0.0;
    for (std::size_t k = 0; k < ds.images[i].size(); ++k)
      d += ds.images[i][k] * ds.images[j][k];
    return d / ds.images[i].size();
  };
  double same = 0.0, diff = 0.0;
  int ns = 0, nd = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = i + 1; j < ds.size(); ++j) {
      if (ds.labels[i] == ds.labels[j]) {
        same += corr(i, j);
        ++ns;
      } else {
        diff += corr(i, j);
        ++nd;
      }
    }
  CHECK(same / ns > 0.5);
  CHECK(std::fabs(diff / nd) < 0.3);
}

TEST_CASE("consecutive superclasses pick the largest divisor <= 5") {
  CHECK(consecutive_superclasses(100).labels_per_class == 5);
  CHECK(consecutive_superclasses(100).classes == 20);
  CHECK(consecutive_superclasses(102).labels_per_class == 3);
  CHECK(consecutive_superclasses(8).labels_per_class == 4);
  CHECK(consecutive_superclasses(7).labels_per_class == 1);
  const auto m = consecutive_superclasses(10);
  CHECK(m.labels_per_class == 5);
  CHECK(m.super_of[0] == 0);
  CHECK(m.super_of[4] == 0);
  CHECK(m.super_of[5] == 1);
}

TEST_CASE("split string round trip") {
  for (Split s : {Split::train, Split::validation, Split::test})
    CHECK(split_from_string(to_string(s)) == s);
  CHECK_THROWS(split_from_string("bogus"));
}
