#pragma once

// Binary parameter checkpoints.
//
//   magic        4 bytes  "IDBP"
//   version      u32      (currently 1)
//   kind         u32 length + bytes (free-form tag, e.g. "policy", "state")
//   num_sizes    u32
//   layer sizes  u32 x num_sizes
//   count        u64      number of parameters
//   params       f64 x count
//
// All integers and floats are little-endian.

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "idb/error.hpp"
#include "idb/nn/mlp.hpp"

namespace idb::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace io {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b.data(), sizeof(T));
  }
  return v;
}

template <class T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("checkpoint truncated");
  return to_little(v);
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::size_t max_len = 1 << 16) {
  const auto n = get<std::uint32_t>(is);
  if (n > max_len) throw Error("checkpoint string too long");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw Error("checkpoint truncated");
  return s;
}

}  // namespace io

inline void write_params(std::ostream& os, const MlpParams& params, const std::string& kind) {
  os.write("IDBP", 4);
  io::put<std::uint32_t>(os, kCheckpointVersion);
  io::put_string(os, kind);
  const auto& sizes = params.config().layer_sizes;
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(sizes.size()));
  for (int s : sizes) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(s));
  io::put<std::uint64_t>(os, params.size());
  for (Eigen::Index i = 0; i < params.flat().size(); ++i) io::put<double>(os, params.flat()[i]);
  if (!os) throw Error("checkpoint write failed");
}

struct TaggedParams {
  std::string kind;
  MlpParams params;
};

inline TaggedParams read_params(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "IDBP", 4) != 0) throw Error("not a parameter checkpoint");
  const auto version = io::get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version));
  TaggedParams out;
  out.kind = io::get_string(is);
  const auto n_sizes = io::get<std::uint32_t>(is);
  if (n_sizes < 2 || n_sizes > 64) throw Error("checkpoint has invalid layer count");
  MlpConfig cfg;
  for (std::uint32_t i = 0; i < n_sizes; ++i)
    cfg.layer_sizes.push_back(static_cast<int>(io::get<std::uint32_t>(is)));
  cfg.validate();
  const auto count = io::get<std::uint64_t>(is);
  if (count != cfg.param_count()) throw Error("checkpoint parameter count does not match shapes");
  Eigen::VectorXd flat(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) flat[static_cast<Eigen::Index>(i)] = io::get<double>(is);
  out.params = MlpParams(cfg, std::move(flat));
  return out;
}

}  // namespace idb::nn
