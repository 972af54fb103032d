#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace snpkit {

class BundleError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A directory of raw little-endian row-major blobs plus a manifest.json
// describing {name, dtype, shape, file, byte_order} for each entry.
class TensorBundle {
 public:
  struct Entry {
    std::string dtype;               // f64, f32, u8, bool
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> bytes;
  };

  void put_f64(const std::string& name, std::vector<std::size_t> shape,
               const double* data);
  void put_f32(const std::string& name, std::vector<std::size_t> shape,
               const float* data);
  void put_u8(const std::string& name, std::vector<std::size_t> shape,
              const std::uint8_t* data);
  void put_bool(const std::string& name, std::vector<std::size_t> shape,
                const std::uint8_t* data);
  void put_i64(const std::string& name, std::vector<std::size_t> shape,
               const std::int64_t* data);

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  const Entry& entry(const std::string& name) const;
  std::vector<std::string> names() const;

  std::vector<double> get_f64(const std::string& name) const;
  std::vector<float> get_f32(const std::string& name) const;
  std::vector<std::uint8_t> get_u8(const std::string& name) const;
  std::vector<std::uint8_t> get_bool(const std::string& name) const;
  std::vector<std::int64_t> get_i64(const std::string& name) const;
  const std::vector<std::size_t>& shape(const std::string& name) const;

  void save(const std::string& dir) const;
  static TensorBundle load(const std::string& dir);

 private:
  void put_raw(const std::string& name, std::string dtype,
               std::vector<std::size_t> shape, const void* data,
               std::size_t elem_size);
  std::map<std::string, Entry> entries_;
};

}  // namespace snpkit
