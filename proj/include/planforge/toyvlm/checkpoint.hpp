#pragma once

// Named-array container: an 8-byte magic, a little-endian u64 header length,
// a compact JSON header {format, version, meta, arrays:[{name, shape, offset}]},
// then the raw little-endian f64 payload. Offsets are byte offsets into the
// payload. Round trips are bit-exact.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "planforge/diffmath/tensor.hpp"
#include "planforge/error.hpp"
#include "planforge/toyvlm/model.hpp"

namespace planforge::toyvlm {

using diffmath::Tensor2;

struct NamedArray {
  std::string name;
  Tensor2 value;

  bool operator==(const NamedArray&) const = default;
};

struct ArrayBundle {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const Tensor2& at(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a.value;
    throw LoadError("array bundle: missing array '" + name + "'");
  }
};

inline constexpr std::array<char, 8> kBundleMagic = {'P', 'F', 'A', 'R', 'R', 'A', 'Y', '1'};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_bundle(const ArrayBundle& bundle) {
  nlohmann::json header;
  header["format"] = "planforge-arrays";
  header["version"] = 1;
  header["meta"] = bundle.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : bundle.arrays) {
    header["arrays"].push_back({{"name", a.name},
                                {"shape", {a.value.rows(), a.value.cols()}},
                                {"offset", offset}});
    offset += a.value.size() * sizeof(double);
  }
  const std::string head = header.dump();
  std::string out(kBundleMagic.begin(), kBundleMagic.end());
  detail::put_u64(out, head.size());
  out += head;
  out.reserve(out.size() + offset);
  for (const auto& a : bundle.arrays) {
    for (double v : a.value.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline ArrayBundle decode_bundle(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kBundleMagic.data(), kBundleMagic.size()) != 0) {
    throw LoadError("array bundle: bad magic");
  }
  const std::uint64_t head_len = detail::get_u64(bytes, 8);
  if (16 + head_len > bytes.size()) throw LoadError("array bundle: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, head_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("array bundle: malformed header: ") + e.what());
  }
  if (header.value("format", "") != "planforge-arrays" || header.value("version", 0) != 1) {
    throw LoadError("array bundle: unsupported format or version");
  }
  const std::size_t payload = 16 + head_len;
  ArrayBundle out;
  out.meta = header.at("meta");
  for (const auto& entry : header.at("arrays")) {
    const auto rows = entry.at("shape").at(0).get<std::size_t>();
    const auto cols = entry.at("shape").at(1).get<std::size_t>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (payload + offset + rows * cols * sizeof(double) > bytes.size()) {
      throw LoadError("array bundle: array '" + entry.at("name").get<std::string>() + "' out of bounds");
    }
    Tensor2 t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = std::bit_cast<double>(detail::get_u64(bytes, payload + offset + i * sizeof(double)));
    }
    out.arrays.push_back({entry.at("name").get<std::string>(), std::move(t)});
  }
  return out;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void save_bundle(const std::filesystem::path& path, const ArrayBundle& b) {
  write_file_bytes(path, encode_bundle(b));
}

inline ArrayBundle load_bundle(const std::filesystem::path& path) { return decode_bundle(read_file_bytes(path)); }

inline nlohmann::json config_to_json(const ToyVlmConfig& c) {
  return {{"d_model", c.d_model},   {"n_heads", c.n_heads},
          {"n_blocks", c.n_blocks}, {"d_ff", c.d_ff},
          {"vocab_size", c.vocab_size}, {"n_vision_tokens", c.n_vision_tokens},
          {"max_seq", c.max_seq},   {"seed", c.seed}};
}

inline ToyVlmConfig config_from_json(const nlohmann::json& j) {
  ToyVlmConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.n_blocks = j.at("n_blocks").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.n_vision_tokens = j.at("n_vision_tokens").get<std::size_t>();
  c.max_seq = j.at("max_seq").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

inline ArrayBundle to_bundle(const ToyVlmParams& p) {
  ArrayBundle b;
  b.meta["kind"] = "toyvlm";
  b.meta["config"] = config_to_json(p.config);
  p.for_each([&](const std::string& name, const Tensor2& t) { b.arrays.push_back({name, t}); });
  return b;
}

inline ToyVlmParams params_from_bundle(const ArrayBundle& b) {
  if (b.meta.value("kind", "") != "toyvlm") throw LoadError("checkpoint is not a toyvlm model");
  ToyVlmParams p;
  try {
    p.config = config_from_json(b.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("toyvlm checkpoint config: ") + e.what());
  }
  p.blocks.resize(p.config.n_blocks);
  p.for_each_mut([&](const std::string& name, Tensor2& t) { t = b.at(name); });
  return p;
}

inline void save_model(const std::filesystem::path& path, const ToyVlmParams& p) { save_bundle(path, to_bundle(p)); }

inline ToyVlmParams load_model(const std::filesystem::path& path) { return params_from_bundle(load_bundle(path)); }

}  // namespace planforge::toyvlm
