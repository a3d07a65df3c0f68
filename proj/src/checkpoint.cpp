#include "dabf/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dabf {

std::vector<ParamRecord> snapshot_params(Model& model) {
  std::vector<ParamRecord> out;
  model.for_each_param([&out](const std::string& name, Tensor& t) {
    ParamRecord r;
    r.name = name;
    r.shape = t.shape();
    r.values.reserve(t.data().size());
    for (double v : t.data()) r.values.push_back(static_cast<float>(v));
    out.push_back(std::move(r));
  });
  return out;
}

void load_params(Model& model, const std::vector<ParamRecord>& records) {
  size_t i = 0;
  model.for_each_param([&](const std::string& name, Tensor& t) {
    if (i >= records.size()) {
      throw std::runtime_error("checkpoint: missing record for parameter '" + name + "'");
    }
    const ParamRecord& r = records[i++];
    if (r.name != name) {
      throw std::runtime_error("checkpoint: expected parameter '" + name + "', found '" + r.name + "'");
    }
    if (r.shape != t.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file has " +
                               shape_str(r.shape) + ", model has " + shape_str(t.shape()));
    }
    auto& d = t.leaf_data();
    for (size_t j = 0; j < d.size(); ++j) d[j] = static_cast<double>(r.values[j]);
    t.zero_grad();
  });
  if (i != records.size()) {
    throw std::runtime_error("checkpoint: file has " + std::to_string(records.size()) +
                             " records, model expects " + std::to_string(i));
  }
}

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));  // host is little-endian
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<ParamRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write("DABF", 4);
  put<uint32_t>(out, kCheckpointVersion);
  put<uint32_t>(out, static_cast<uint32_t>(records.size()));
  for (const ParamRecord& r : records) {
    put<uint16_t>(out, static_cast<uint16_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<uint8_t>(out, static_cast<uint8_t>(r.shape.size()));
    for (int d : r.shape) put<uint32_t>(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(r.values.data()),
              static_cast<std::streamsize>(r.values.size() * sizeof(float)));
  }
}

std::vector<ParamRecord> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DABF", 4) != 0) {
    throw std::runtime_error("checkpoint: " + path + " has wrong magic");
  }
  uint32_t version = get<uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                             " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  uint32_t count = get<uint32_t>(in);
  std::vector<ParamRecord> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    ParamRecord r;
    uint16_t len = get<uint16_t>(in);
    r.name.resize(len);
    in.read(r.name.data(), len);
    uint8_t ndim = get<uint8_t>(in);
    long long n = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      uint32_t dim = get<uint32_t>(in);
      r.shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    r.values.resize(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(r.values.data()),
            static_cast<std::streamsize>(r.values.size() * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dabf
