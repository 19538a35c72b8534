#pragma once

// Binary checkpoint container, little-endian:
//   "VCKP"  u32 version
//   u32 n, n bytes   model config (JSON, sorted keys)
//   u32 count, then per tensor: u32 name_len, name, u32 rows, u32 cols, f32[rows*cols]
//   u64 step
//   u32 n, n bytes   RNG state (textual engine state)
//   u8 has_optimizer; if set: u64 adam_t, then m and v tensors in the same order
//
// Tensor order is Params::visit order. Writing identical state twice yields
// identical bytes.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "vcraft/errors.hpp"
#include "vcraft/model/config.hpp"
#include "vcraft/model/transformer.hpp"

namespace vcraft {

inline constexpr char kCheckpointMagic[4] = {'V', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerState {
  std::uint64_t t = 0;
  Params<float> m;
  Params<float> v;
};

struct Checkpoint {
  ModelConfig config;
  Params<float> params;
  std::uint64_t step = 0;
  std::string rng_state;
  std::optional<OptimizerState> optimizer;
};

namespace detail {

template <class U>
void put(std::ostream& os, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  os.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <class U>
U get(std::istream& is, const std::string& what) {
  U value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!is) throw IoError("checkpoint truncated while reading " + what);
  return value;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const std::string& what) {
  const auto n = get<std::uint32_t>(is, what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("checkpoint truncated while reading " + what);
  return s;
}

inline void put_tensors(std::ostream& os, const Params<float>& p, bool with_names) {
  p.visit([&](const std::string& name, const Mat<float>& m) {
    if (with_names) put_string(os, name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(m.size() * sizeof(float)));
  });
}

inline void get_tensors(std::istream& is, Params<float>& p, bool with_names) {
  p.visit([&](const std::string& name, Mat<float>& m) {
    if (with_names) {
      const std::string got = get_string(is, "tensor name");
      if (got != name) throw IoError("checkpoint tensor '" + got + "' where '" + name + "' expected");
    }
    const auto rows = get<std::uint32_t>(is, name);
    const auto cols = get<std::uint32_t>(is, name);
    if (rows != m.rows() || cols != m.cols()) {
      throw IoError("checkpoint tensor " + name + " has shape " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", expected " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()));
    }
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!is) throw IoError("checkpoint truncated in tensor " + name);
  });
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os.write(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put_string(os, nlohmann::json(ck.config).dump());
  std::uint32_t count = 0;
  ck.params.visit([&](const std::string&, const Mat<float>&) { ++count; });
  detail::put<std::uint32_t>(os, count);
  detail::put_tensors(os, ck.params, true);
  detail::put<std::uint64_t>(os, ck.step);
  detail::put_string(os, ck.rng_state);
  detail::put<std::uint8_t>(os, ck.optimizer ? 1 : 0);
  if (ck.optimizer) {
    detail::put<std::uint64_t>(os, ck.optimizer->t);
    detail::put_tensors(os, ck.optimizer->m, false);
    detail::put_tensors(os, ck.optimizer->v, false);
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError("not a checkpoint file");
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  try {
    ck.config = nlohmann::json::parse(detail::get_string(is, "config")).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint config unreadable: ") + e.what());
  }
  ck.config.validate();
  ck.params = Transformer<float>(ck.config).params();
  std::uint32_t expected = 0;
  ck.params.visit([&](const std::string&, const Mat<float>&) { ++expected; });
  const auto count = detail::get<std::uint32_t>(is, "tensor count");
  if (count != expected) {
    throw IoError("checkpoint has " + std::to_string(count) + " tensors, expected " +
                  std::to_string(expected));
  }
  detail::get_tensors(is, ck.params, true);
  ck.step = detail::get<std::uint64_t>(is, "step");
  ck.rng_state = detail::get_string(is, "rng state");
  if (detail::get<std::uint8_t>(is, "optimizer flag")) {
    OptimizerState opt;
    opt.t = detail::get<std::uint64_t>(is, "optimizer step");
    opt.m = ck.params.zeros_like();
    opt.v = ck.params.zeros_like();
    detail::get_tensors(is, opt.m, false);
    detail::get_tensors(is, opt.v, false);
    ck.optimizer = std::move(opt);
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    write_checkpoint(os, ck);
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace vcraft
