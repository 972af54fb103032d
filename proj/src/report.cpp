#include "snpkit/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace snpkit {

CsvWriter::CsvWriter(std::vector<std::string> header)
    : header_(std::move(header)) {}

void CsvWriter::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size())
    throw std::invalid_argument("csv row width does not match header");
  rows_.push_back(std::move(row));
}

namespace {
void write_field(std::ostream& out, const std::string& f) {
  if (f.find_first_of(",\"\n") == std::string::npos) {
    out << f;
    return;
  }
  out << '"';
  for (char c : f) {
    if (c == '"') out << '"';
    out << c;
  }
  out << '"';
}

void write_row(std::ostream& out, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ',';
    write_field(out, row[i]);
  }
  out << '\n';
}
}  // namespace

std::string CsvWriter::str() const {
  std::ostringstream out;
  write_row(out, header_);
  for (const auto& r : rows_) write_row(out, r);
  return out.str();
}

void CsvWriter::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << str();
}

std::string fmt_double(double v, int precision) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

void write_layer_stats_csv(const std::string& path,
                           const std::vector<LayerStatsRow>& rows) {
  CsvWriter csv({"tap", "Th", "Acc", "N_c", "C_s", "diag", "n", "N_M", "N_l",
                 "signal", "noise_I", "noise_E", "SNR", "SNR_min"});
  for (const auto& r : rows) {
    std::vector<std::string> row{
        r.tap,
        fmt_double(r.stats.threshold),
        r.accuracy >= 0 ? fmt_double(r.accuracy) : "",
        fmt_double(r.stats.n_c),
        fmt_double(r.stats.c_s),
        fmt_double(r.stats.diag),
        fmt_double(r.stats.n),
        std::to_string(r.stats.n_m),
        std::to_string(r.stats.n_l)};
    if (r.has_snr) {
      row.push_back(fmt_double(r.snr.signal));
      row.push_back(fmt_double(r.snr.noise_i));
      row.push_back(fmt_double(r.snr.noise_e));
      row.push_back(fmt_double(r.snr.snr));
      row.push_back(r.snr.snr_min >= 0 ? fmt_double(r.snr.snr_min) : "");
    } else {
      row.insert(row.end(), 5, "");
    }
    csv.add_row(std::move(row));
  }
  csv.save(path);
}

void write_histograms_csv(const std::string& appearances_path,
                          const std::string& field_path,
                          const LabelHistograms& h) {
  CsvWriter app({"label", "appearances"});
  for (std::size_t l = 0; l < h.appearances.size(); ++l)
    app.add_row({std::to_string(l), fmt_double(h.appearances[l])});
  app.save(appearances_path);

  CsvWriter fld({"output_unit", "total_field"});
  for (std::size_t j = 0; j < h.field.size(); ++j)
    fld.add_row({std::to_string(j), fmt_double(h.field[j])});
  fld.save(field_path);
}

void write_sweep_csv(const std::string& path, const SweepCurve& curve) {
  CsvWriter csv({"Th", "signal", "noise_I", "noise_E", "SNR", "SNR_min", "N_c",
                 "C_s", "diag", "n"});
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    const auto& r = curve.reports[i];
    const auto& s = curve.stats[i];
    csv.add_row({fmt_double(curve.thresholds[i]), fmt_double(r.signal),
                 fmt_double(r.noise_i), fmt_double(r.noise_e),
                 fmt_double(r.snr), fmt_double(r.snr_min), fmt_double(s.n_c),
                 fmt_double(s.c_s), fmt_double(s.diag), fmt_double(s.n)});
  }
  csv.save(path);
}

void write_occupancy_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<double>>>& rows,
    int labels_per_class) {
  std::vector<std::string> header{"row"};
  for (int k = 1; k <= labels_per_class; ++k)
    header.push_back(std::to_string(k) + "/" + std::to_string(labels_per_class));
  CsvWriter csv(std::move(header));
  for (const auto& [name, values] : rows) {
    std::vector<std::string> row{name};
    for (double v : values) row.push_back(fmt_double(v, 4));
    csv.add_row(std::move(row));
  }
  csv.save(path);
}

}  // namespace snpkit
