#include "snpkit/bundle.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace snpkit {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "blob format is little-endian; byte swapping is not implemented");

namespace {

std::size_t elem_size_of(const std::string& dtype) {
  if (dtype == "f64") return 8;
  if (dtype == "f32") return 4;
  if (dtype == "i64") return 8;
  if (dtype == "u8" || dtype == "bool") return 1;
  throw BundleError("unknown dtype: " + dtype);
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string blob_filename(const std::string& name) {
  std::string f = name;
  for (char& c : f)
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  return f + ".bin";
}

}  // namespace

void TensorBundle::put_raw(const std::string& name, std::string dtype,
                           std::vector<std::size_t> shape, const void* data,
                           std::size_t elem_size) {
  if (entries_.count(name)) throw BundleError("duplicate bundle entry: " + name);
  Entry e;
  e.dtype = std::move(dtype);
  const std::size_t n = shape_product(shape) * elem_size;
  e.shape = std::move(shape);
  e.bytes.resize(n);
  std::memcpy(e.bytes.data(), data, n);
  entries_[name] = std::move(e);
}

void TensorBundle::put_f64(const std::string& name,
                           std::vector<std::size_t> shape, const double* data) {
  put_raw(name, "f64", std::move(shape), data, 8);
}
void TensorBundle::put_f32(const std::string& name,
                           std::vector<std::size_t> shape, const float* data) {
  put_raw(name, "f32", std::move(shape), data, 4);
}
void TensorBundle::put_u8(const std::string& name,
                          std::vector<std::size_t> shape,
                          const std::uint8_t* data) {
  put_raw(name, "u8", std::move(shape), data, 1);
}
void TensorBundle::put_bool(const std::string& name,
                            std::vector<std::size_t> shape,
                            const std::uint8_t* data) {
  put_raw(name, "bool", std::move(shape), data, 1);
}
void TensorBundle::put_i64(const std::string& name,
                           std::vector<std::size_t> shape,
                           const std::int64_t* data) {
  put_raw(name, "i64", std::move(shape), data, 8);
}

const TensorBundle::Entry& TensorBundle::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw BundleError("no bundle entry: " + name);
  return it->second;
}

std::vector<std::string> TensorBundle::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

template <class T>
static std::vector<T> get_typed(const TensorBundle::Entry& e,
                                const std::string& want,
                                const std::string& name) {
  if (e.dtype != want)
    throw BundleError("entry " + name + " has dtype " + e.dtype + ", wanted " +
                      want);
  std::vector<T> out(e.bytes.size() / sizeof(T));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

std::vector<double> TensorBundle::get_f64(const std::string& name) const {
  return get_typed<double>(entry(name), "f64", name);
}
std::vector<float> TensorBundle::get_f32(const std::string& name) const {
  return get_typed<float>(entry(name), "f32", name);
}
std::vector<std::uint8_t> TensorBundle::get_u8(const std::string& name) const {
  return get_typed<std::uint8_t>(entry(name), "u8", name);
}
std::vector<std::uint8_t> TensorBundle::get_bool(const std::string& name) const {
  return get_typed<std::uint8_t>(entry(name), "bool", name);
}
std::vector<std::int64_t> TensorBundle::get_i64(const std::string& name) const {
  return get_typed<std::int64_t>(entry(name), "i64", name);
}

const std::vector<std::size_t>& TensorBundle::shape(
    const std::string& name) const {
  return entry(name).shape;
}

void TensorBundle::save(const std::string& dir) const {
  fs::create_directories(dir);
  json manifest = json::array();
  for (const auto& [name, e] : entries_) {
    const std::string file = blob_filename(name);
    manifest.push_back({{"name", name},
                        {"dtype", e.dtype},
                        {"shape", e.shape},
                        {"file", file},
                        {"byte_order", "little"}});
    std::ofstream out(fs::path(dir) / file, std::ios::binary);
    if (!out) throw BundleError("cannot write " + file);
    out.write(reinterpret_cast<const char*>(e.bytes.data()),
              static_cast<std::streamsize>(e.bytes.size()));
  }
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw BundleError("cannot write manifest.json in " + dir);
  mf << manifest.dump(2) << "\n";
}

TensorBundle TensorBundle::load(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw BundleError("no manifest.json in " + dir);
  json manifest = json::parse(mf);

  TensorBundle b;
  for (const auto& item : manifest) {
    Entry e;
    const std::string name = item.at("name");
    e.dtype = item.at("dtype");
    e.shape = item.at("shape").get<std::vector<std::size_t>>();
    if (item.value("byte_order", "little") != "little")
      throw BundleError("entry " + name + ": unsupported byte order");
    const std::string file = item.at("file");
    std::ifstream in(fs::path(dir) / file, std::ios::binary);
    if (!in) throw BundleError("cannot open blob " + file);
    const std::size_t expect = shape_product(e.shape) * elem_size_of(e.dtype);
    e.bytes.resize(expect);
    in.read(reinterpret_cast<char*>(e.bytes.data()),
            static_cast<std::streamsize>(expect));
    if (static_cast<std::size_t>(in.gcount()) != expect)
      throw BundleError("blob " + file + " shorter than manifest shape");
    if (b.entries_.count(name)) throw BundleError("duplicate entry " + name);
    b.entries_[name] = std::move(e);
  }
  return b;
}

}  // namespace snpkit
