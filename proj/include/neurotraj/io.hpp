#pragma once

// File plumbing shared by all serializers: atomic writes, checksums and the
// "JSON header line + little-endian float64 payload" container.

#include "neurotraj/common.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace neurotraj::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temp file and renames it over the target, so readers
/// never observe a partially written artifact.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

inline void append_f64_le(std::string& out, std::span<const double> values) {
  const std::size_t offset = out.size();
  out.resize(offset + values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) out[offset + 8 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
}

inline void read_f64_le(std::string_view bytes, std::span<double> out) {
  if (bytes.size() != out.size() * 8) throw Error("payload size mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 * i + b])) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
}

/// A single-line JSON header terminated by '\n', followed by raw payload bytes.
struct HeaderedBlob {
  json header;
  std::string payload;

  std::string encode() const {
    std::string out = header.dump();
    out.push_back('\n');
    out += payload;
    return out;
  }

  static HeaderedBlob decode(std::string_view bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos) throw Error("missing header line");
    HeaderedBlob blob;
    try {
      blob.header = json::parse(bytes.substr(0, nl));
    } catch (const json::exception& e) {
      throw Error(std::string("malformed header: ") + e.what());
    }
    blob.payload = std::string(bytes.substr(nl + 1));
    return blob;
  }
};

/// Fetches a required key, naming it in the error when absent or mistyped.
template <typename T>
T get_field(const json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw Error("missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error("bad value for field '" + key + "'");
  }
}

inline json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error("malformed " + what + ": " + e.what());
  }
}

}  // namespace neurotraj::io
