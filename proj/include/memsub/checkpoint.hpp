#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "memsub/model.hpp"

namespace memsub {

/// Checkpoint layout (all integers and floats little-endian):
///
///   "MSUB1"                 5 magic bytes
///   u32 image_size, hidden, inner, depth, num_labels, timesteps
///   u64 seed
///   f32 tensors in for_each_tensor order, row-major
inline constexpr std::array<char, 5> kCheckpointMagic = {'M', 'S', 'U', 'B', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  std::uint64_t u64() { return take(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated");
  }
  std::uint64_t take(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct Checkpoint {
  DenoiserParams params;
  std::uint64_t seed = 0;
};

inline std::string encode_checkpoint(const DenoiserParams& p, std::uint64_t seed) {
  validate_params(p);
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  const auto& c = p.config;
  for (auto v : {c.image_size, c.hidden, c.inner, c.depth, c.num_labels, c.timesteps}) {
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  }
  detail::put_u64(out, seed);
  for_each_tensor(p, [&](const std::string&, const Matrix& m) {
    for (float f : m.values()) detail::put_f32(out, f);
  });
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes);
  const auto magic = in.raw(kCheckpointMagic.size());
  if (std::memcmp(magic.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw FormatError("not a checkpoint (bad magic or unsupported version)");
  }
  ModelConfig c;
  c.image_size = in.u32();
  c.hidden = in.u32();
  c.inner = in.u32();
  c.depth = in.u32();
  c.num_labels = in.u32();
  c.timesteps = in.u32();
  if (c.image_size == 0 || c.hidden == 0 || c.inner == 0 || c.timesteps == 0 ||
      c.image_size > 4096 || c.hidden > 1 << 16 || c.inner > 1 << 16 || c.depth > 1024 ||
      c.num_labels > 1 << 20 || c.timesteps > 1 << 20) {
    throw FormatError("checkpoint header has implausible dimensions");
  }
  Checkpoint ck;
  ck.seed = in.u64();
  ck.params = zero_params<float>(c);
  for_each_tensor(ck.params, [&](const std::string&, Matrix& m) {
    for (auto& f : m.values()) f = in.f32();
  });
  if (!in.at_end()) throw FormatError("checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const DenoiserParams& p,
                            std::uint64_t seed) {
  const auto bytes = encode_checkpoint(p, seed);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace memsub
