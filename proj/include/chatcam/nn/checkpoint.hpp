#pragma once

// Versioned binary checkpoint container:
//   bytes 0-7   magic "CHATCAMK"
//   bytes 8-11  container version (u32 little-endian)
//   bytes 12-19 header length N (u64 little-endian)
//   N bytes     JSON header {"meta": {...}, "tensors": [{"name","rows","cols","dtype","offset"}]}
//   remaining   raw tensor payloads (native little-endian IEEE-754)
// Tensors keep their scalar type, so save/load round trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "chatcam/error.hpp"
#include "chatcam/nn/tensor.hpp"
#include "json.hpp"

namespace chatcam::nn {

inline constexpr char kCheckpointMagic[8] = {'C', 'H', 'A', 'T', 'C', 'A', 'M', 'K'};
inline constexpr std::uint32_t kContainerVersion = 1;

template <typename S>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<S, float>) return "f32";
  else return "f64";
}

class Checkpoint {
 public:
  struct Blob {
    Eigen::Index rows = 0, cols = 0;
    std::string dtype;
    std::vector<char> bytes;
  };

  nlohmann::json meta = nlohmann::json::object();

  template <typename S>
  void put(const std::string& name, const Mat<S>& m) {
    Blob b{m.rows(), m.cols(), dtype_name<S>(), {}};
    b.bytes.resize(static_cast<std::size_t>(m.size()) * sizeof(S));
    std::memcpy(b.bytes.data(), m.data(), b.bytes.size());
    tensors_[name] = std::move(b);
  }

  bool has(const std::string& name) const { return tensors_.count(name) > 0; }

  /// Reads a tensor, converting from the stored precision if needed.
  template <typename S>
  Mat<S> get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error(ErrorCode::FormatError, "checkpoint lacks tensor " + name);
    const Blob& b = it->second;
    if (b.dtype == "f32") return cast<float, S>(b);
    if (b.dtype == "f64") return cast<double, S>(b);
    throw Error(ErrorCode::FormatError, "unknown dtype " + b.dtype);
  }

  template <typename S>
  void put_params(const NamedParams<S>& params) {
    for (const auto& [name, p] : params) put(name, p->value);
  }

  template <typename S>
  void get_params(const NamedParams<S>& params) const {
    for (const auto& [name, p] : params) {
      Mat<S> v = get<S>(name);
      if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
        throw Error(ErrorCode::FormatError, "shape mismatch for " + name);
      }
      p->value = std::move(v);
      p->zero_grad();
    }
  }

  std::string serialize() const {
    nlohmann::json header{{"meta", meta}, {"tensors", nlohmann::json::array()}};
    std::uint64_t offset = 0;
    for (const auto& [name, b] : tensors_) {
      header["tensors"].push_back(
          {{"name", name}, {"rows", b.rows}, {"cols", b.cols}, {"dtype", b.dtype}, {"offset", offset}});
      offset += b.bytes.size();
    }
    const std::string h = header.dump();
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    append_le(out, kContainerVersion);
    append_le(out, static_cast<std::uint64_t>(h.size()));
    out += h;
    for (const auto& [name, b] : tensors_) out.append(b.bytes.data(), b.bytes.size());
    return out;
  }

  static Checkpoint deserialize(const std::string& data) {
    if (data.size() < 20 || std::memcmp(data.data(), kCheckpointMagic, 8) != 0) {
      throw Error(ErrorCode::FormatError, "not a checkpoint file");
    }
    const auto version = read_le<std::uint32_t>(data, 8);
    if (version != kContainerVersion) {
      throw Error(ErrorCode::FormatError, "unsupported container version " + std::to_string(version));
    }
    const auto hlen = read_le<std::uint64_t>(data, 12);
    if (20 + hlen > data.size()) throw Error(ErrorCode::FormatError, "truncated header");
    const auto header = nlohmann::json::parse(data.substr(20, hlen));
    Checkpoint ck;
    ck.meta = header.at("meta");
    const std::size_t base = 20 + hlen;
    for (const auto& t : header.at("tensors")) {
      Blob b;
      b.rows = t.at("rows").get<Eigen::Index>();
      b.cols = t.at("cols").get<Eigen::Index>();
      b.dtype = t.at("dtype").get<std::string>();
      const std::size_t elem = b.dtype == "f32" ? 4 : 8;
      const std::size_t n = static_cast<std::size_t>(b.rows * b.cols) * elem;
      const std::size_t off = base + t.at("offset").get<std::size_t>();
      if (off + n > data.size()) throw Error(ErrorCode::FormatError, "truncated tensor payload");
      b.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(off),
                     data.begin() + static_cast<std::ptrdiff_t>(off + n));
      ck.tensors_[t.at("name").get<std::string>()] = std::move(b);
    }
    return ck;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    const std::string s = serialize();
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
  }

 private:
  std::map<std::string, Blob> tensors_;

  template <typename From, typename To>
  static Mat<To> cast(const Blob& b) {
    Mat<From> m(b.rows, b.cols);
    std::memcpy(m.data(), b.bytes.data(), b.bytes.size());
    return m.template cast<To>();
  }

  template <typename T>
  static void append_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }

  template <typename T>
  static T read_le(const std::string& s, std::size_t at) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(s[at + i])) << (8 * i);
    return v;
  }
};

}  // namespace chatcam::nn
