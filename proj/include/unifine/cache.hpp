#pragma once
// Content-addressed store for backend outputs: one value file per key plus a
// JSON sidecar, both published by atomic rename.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "unifine/backends.hpp"

namespace unifine {

struct CacheKey {
  std::string role;
  std::string backend;  // BackendConfig::identity()
  std::string operation;
  std::string input_digest;

  std::string digest() const;
  bool operator==(const CacheKey&) const = default;
};

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t producer_calls = 0;
  std::uint64_t corrupt = 0;
};

inline constexpr const char* kCacheDirEnv = "UNIFINE_CACHE_DIR";

class Cache {
 public:
  explicit Cache(std::filesystem::path dir);

  /// The environment variable wins over the configured directory.
  static std::filesystem::path resolve_dir(const std::filesystem::path& configured);

  /// Concurrent misses on one key inside a process share a single producer call.
  std::string get_or_compute(const CacheKey& key, const std::function<std::string()>& producer);
  std::optional<std::string> get(const CacheKey& key);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path value_path(const CacheKey& key) const;
  std::filesystem::path sidecar_path(const CacheKey& key) const;

  CacheStats stats() const;
  /// Producer calls per operation name since construction.
  std::map<std::string, std::uint64_t> producer_calls_by_operation() const;
  /// Durable records per operation name currently on disk.
  std::map<std::string, std::uint64_t> records_by_operation() const;

 private:
  enum class Lookup { Hit, Miss, Corrupt };
  Lookup read(const CacheKey& key, std::string& value) const;
  void write(const CacheKey& key, const std::string& value) const;

  std::filesystem::path dir_;
  std::atomic<std::uint64_t> hits_{0}, misses_{0}, producer_calls_{0}, corrupt_{0};
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::shared_future<std::string>> inflight_;
  std::map<std::string, std::uint64_t> calls_by_op_;
};

/// Wraps every backend so that its outputs go through `cache`. Image inputs
/// are keyed by file content plus crop rectangle, text inputs by their bytes.
Backends with_cache(const Backends& backends, std::shared_ptr<Cache> cache);

}  // namespace unifine
