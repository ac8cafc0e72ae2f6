#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace unifine {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const unsigned char> data);

/// First 8 bytes of SHA-256(data), big-endian. This is the 64-bit content hash
/// that seeds every stub backend.
std::uint64_t content_hash64(std::string_view data);

/// SHA-256 of a file's bytes. Throws InputError if the file cannot be read.
std::string file_sha256_hex(const std::filesystem::path& path);

/// Incremental hasher for callers that digest several pieces.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::string_view data);
  Sha256& update(std::span<const unsigned char> data);
  std::string hex_digest();
  std::uint64_t digest64();

 private:
  struct Impl;
  Impl* impl_;
};

}  // namespace unifine
