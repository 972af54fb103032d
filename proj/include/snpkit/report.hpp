#pragma once

#include <string>
#include <vector>

#include "snpkit/cluster.hpp"
#include "snpkit/snr.hpp"

namespace snpkit {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Minimal CSV emission; fields containing commas or quotes are quoted.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  void add_row(std::vector<std::string> row);
  void save(const std::string& path) const;
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string fmt_double(double v, int precision = 6);

// Table-1 shaped row, optionally extended with the SNR columns.
struct LayerStatsRow {
  std::string tap;
  double accuracy = -1.0;  // -1 when unknown
  LayerStats stats;
  bool has_snr = false;
  SnrReport snr;
};

void write_layer_stats_csv(const std::string& path,
                           const std::vector<LayerStatsRow>& rows);

void write_histograms_csv(const std::string& appearances_path,
                          const std::string& field_path,
                          const LabelHistograms& h);

void write_sweep_csv(const std::string& path, const SweepCurve& curve);

// rows = (label, values k=1..L)
void write_occupancy_csv(const std::string& path,
                         const std::vector<std::pair<std::string,
                                                     std::vector<double>>>& rows,
                         int labels_per_class);

}  // namespace snpkit
