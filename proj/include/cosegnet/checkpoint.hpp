#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "cosegnet/adam.hpp"
#include "cosegnet/config.hpp"
#include "cosegnet/error.hpp"
#include "cosegnet/model.hpp"

// Binary checkpoint container:
//   "SSMC" | u32 version | u32 count | count x entry
//   entry: u32 name_len | name (UTF-8) | u8 dtype | u8 rank | rank x u64 dim | payload
// All integers and payloads little-endian. dtype 0 = f64; dtype 1 = u8 is
// used for the config snapshot text.
namespace coseg::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kMagic[4] = {'S', 'S', 'M', 'C'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kF64 = 0;
inline constexpr std::uint8_t kU8 = 1;
inline constexpr const char* kReservedPrefix = "__";
inline constexpr const char* kConfigName = "__config__";
inline constexpr const char* kStepName = "__adam__.step";

struct Entry {
  std::string name;
  std::uint8_t dtype = kF64;
  Shape dims;
  std::vector<double> values;       // dtype f64
  std::vector<std::uint8_t> bytes;  // dtype u8
};

namespace detail {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void read_into(void* dst, std::size_t n, const char* what) {
    need(n, what);
    if (n) std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) {
      throw FormatError("checkpoint " + path_ + ": truncated at offset " + std::to_string(pos_) +
                        " while reading " + what);
    }
  }

  const std::vector<std::uint8_t>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode(const std::vector<Entry>& entries) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  detail::put<std::uint32_t>(out, kVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const Entry& e : entries) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    detail::put<std::uint8_t>(out, e.dtype);
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (std::size_t d : e.dims) detail::put<std::uint64_t>(out, d);
    if (e.dtype == kF64) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(e.values.data());
      out.insert(out.end(), p, p + e.values.size() * sizeof(double));
    } else {
      out.insert(out.end(), e.bytes.begin(), e.bytes.end());
    }
  }
  return out;
}

inline std::vector<Entry> decode(const std::vector<std::uint8_t>& buf, const std::string& path = "<memory>") {
  detail::Reader r(buf, path);
  char magic[4];
  r.read_into(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint " + path + ": bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<Entry> entries;
  for (std::uint32_t k = 0; k < count; ++k) {
    Entry e;
    const auto len = r.get<std::uint32_t>("name length");
    e.name.resize(len);
    r.read_into(e.name.data(), len, "name");
    const std::size_t dtype_offset = r.offset();
    e.dtype = r.get<std::uint8_t>("dtype");
    if (e.dtype != kF64 && e.dtype != kU8) {
      throw FormatError("checkpoint " + path + ": unsupported dtype code " + std::to_string(e.dtype) +
                        " for '" + e.name + "' at offset " + std::to_string(dtype_offset));
    }
    const auto rank = r.get<std::uint8_t>("rank");
    std::size_t n = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      e.dims.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
      n *= e.dims.back();
    }
    if (e.dtype == kF64) {
      e.values.resize(n);
      r.read_into(e.values.data(), n * sizeof(double), "payload");
    } else {
      e.bytes.resize(n);
      r.read_into(e.bytes.data(), n, "payload");
    }
    entries.push_back(std::move(e));
  }
  if (!r.at_end()) {
    throw FormatError("checkpoint " + path + ": trailing bytes at offset " + std::to_string(r.offset()));
  }
  return entries;
}

inline void write_file(const std::string& path, const std::vector<Entry>& entries) {
  auto bytes = encode(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path);
}

inline std::vector<Entry> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes, path);
}

inline Entry tensor_entry(std::string name, const Shape& dims, std::span<const double> values) {
  Entry e;
  e.name = std::move(name);
  e.dims = dims;
  e.values.assign(values.begin(), values.end());
  return e;
}

// Parameters, optimizer moments and step count, and the config snapshot.
inline std::vector<Entry> snapshot(const CoSegNet& model, const Adam* optimizer) {
  std::vector<Entry> entries;
  TrainConfig cfg = model.config();
  cfg.num_classes = model.num_classes();
  const std::string text = to_text(cfg);
  Entry conf;
  conf.name = kConfigName;
  conf.dtype = kU8;
  conf.dims = {text.size()};
  conf.bytes.assign(text.begin(), text.end());
  entries.push_back(std::move(conf));

  const auto& params = model.parameters().entries();
  for (const auto& [name, t] : params) entries.push_back(tensor_entry(name, t.dims(), t.data()));
  if (optimizer) {
    const AdamState& st = optimizer->state();
    for (std::size_t k = 0; k < params.size(); ++k) {
      entries.push_back(tensor_entry("__adam__.m/" + params[k].first, params[k].second.dims(), st.first[k]));
      entries.push_back(tensor_entry("__adam__.v/" + params[k].first, params[k].second.dims(), st.second[k]));
    }
    const double step = static_cast<double>(st.step);
    entries.push_back(tensor_entry(kStepName, Shape{1}, std::span<const double>(&step, 1)));
  }
  return entries;
}

inline void save(const std::string& path, const CoSegNet& model, const Adam* optimizer = nullptr) {
  write_file(path, snapshot(model, optimizer));
}

inline TrainConfig config_of(const std::vector<Entry>& entries) {
  for (const Entry& e : entries) {
    if (e.name == kConfigName) {
      if (e.dtype != kU8) throw FormatError("checkpoint config snapshot has the wrong dtype");
      return parse_config(std::string(e.bytes.begin(), e.bytes.end()));
    }
  }
  throw FormatError("checkpoint has no config snapshot");
}

// Copies stored tensors into `model` (and `optimizer`, when given). Every
// model parameter must be present; unknown names are an error.
inline void restore(const std::vector<Entry>& entries, CoSegNet& model, Adam* optimizer = nullptr) {
  const auto& params = model.parameters().entries();
  std::vector<bool> seen(params.size(), false);
  auto index_of = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t k = 0; k < params.size(); ++k)
      if (params[k].first == name) return k;
    return std::nullopt;
  };
  auto check_shape = [](const Entry& e, const Shape& dims) {
    if (e.dtype != kF64 || e.dims != dims) {
      throw FormatError("checkpoint tensor '" + e.name + "' has shape " + format_dims(e.dims) +
                        ", model expects " + format_dims(dims));
    }
  };
  // Optimizer moments live under "__adam__.m/<param>" and "__adam__.v/<param>".
  auto restore_moment = [&](const Entry& e) {
    const bool first = e.name.rfind("__adam__.m/", 0) == 0;
    const bool second = e.name.rfind("__adam__.v/", 0) == 0;
    if (!first && !second) return false;
    auto k = index_of(e.name.substr(11));
    if (!k) throw FormatError("checkpoint optimizer state for unknown parameter '" + e.name + "'");
    check_shape(e, params[*k].second.dims());
    if (optimizer) (first ? optimizer->state().first[*k] : optimizer->state().second[*k]) = e.values;
    return true;
  };
  for (const Entry& e : entries) {
    if (e.name == kConfigName) continue;
    if (e.name == kStepName) {
      if (optimizer) optimizer->state().step = static_cast<std::uint64_t>(e.values.at(0));
      continue;
    }
    if (restore_moment(e)) continue;
    if (e.name.rfind(kReservedPrefix, 0) == 0) throw FormatError("checkpoint has unknown reserved entry '" + e.name + "'");
    auto k = index_of(e.name);
    if (!k) throw FormatError("checkpoint has unknown tensor '" + e.name + "'");
    check_shape(e, params[*k].second.dims());
    Tensor t = params[*k].second;
    std::copy(e.values.begin(), e.values.end(), t.data().begin());
    seen[*k] = true;
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!seen[k]) throw FormatError("checkpoint is missing parameter '" + params[k].first + "'");
  }
}

}  // namespace coseg::checkpoint
