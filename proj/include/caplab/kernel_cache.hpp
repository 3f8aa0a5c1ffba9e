#pragma once

// Concurrent cache of kernel columns keyed by (space hash, kind, parameters,
// base node), optionally persisted to a directory.
//
// File layout: "CAPLABKC" | u32 version=1 | u64 space hash | u32 kind |
// f64 param | f64 param2 | i64 node | u64 N | f64[N] values.

#include "caplab/semigroup.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <shared_mutex>
#include <unordered_map>

namespace caplab {

inline constexpr const char* kCacheEnvVar = "CAPLAB_CACHE_DIR";

struct KernelKey {
  std::uint64_t space = 0;
  KernelKind kind = KernelKind::Resolvent;
  double param = 0.0;
  double param2 = 0.0;
  Index node = 0;
  bool operator==(const KernelKey&) const = default;

  std::string file_name() const {
    auto bits = [](double v) {
      std::uint64_t b;
      std::memcpy(&b, &v, sizeof b);
      return hex64(b);
    };
    return hex64(space) + "_" + to_string(kind) + "_" + bits(param) + "_" + bits(param2) + "_" +
           std::to_string(node) + ".bin";
  }
};

struct KernelKeyHash {
  std::size_t operator()(const KernelKey& k) const {
    ContentHash h;
    h.update_value(k.space);
    h.update_value(k.kind);
    h.update_value(k.param);
    h.update_value(k.param2);
    h.update_value(k.node);
    return static_cast<std::size_t>(h.digest());
  }
};

class KernelCache {
public:
  using Column = std::shared_ptr<const NodeFunction>;

  /// Memory-only when `dir` is empty.
  explicit KernelCache(std::string dir = {}) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  /// Uses the directory named by CAPLAB_CACHE_DIR when set.
  static KernelCache from_environment() {
    const char* d = std::getenv(kCacheEnvVar);
    return KernelCache(d ? std::string(d) : std::string());
  }

  const std::string& directory() const { return dir_; }

  Column get_or_compute(const KernelKey& key, const std::function<NodeFunction()>& compute) {
    {
      std::shared_lock lock(mutex_);
      if (auto it = columns_.find(key); it != columns_.end()) {
        ++hits_;
        return it->second;
      }
    }
    Column col;
    if (!dir_.empty()) col = load(key);
    if (col) {
      ++disk_hits_;
    } else {
      col = std::make_shared<const NodeFunction>(compute());
      ++misses_;
      if (!dir_.empty()) store(key, *col);
    }
    std::unique_lock lock(mutex_);
    return columns_.try_emplace(key, col).first->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return columns_.size();
  }
  std::size_t hits() const { return hits_; }
  std::size_t disk_hits() const { return disk_hits_; }
  std::size_t misses() const { return misses_; }

private:
  Column load(const KernelKey& key) const {
    std::ifstream in(dir_ + "/" + key.file_name(), std::ios::binary);
    if (!in) return nullptr;
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "CAPLABKC", 8) != 0) return nullptr;
    try {
      if (detail::get<std::uint32_t>(in) != 1) return nullptr;
      KernelKey stored;
      stored.space = detail::get<std::uint64_t>(in);
      stored.kind = static_cast<KernelKind>(detail::get<std::uint32_t>(in));
      stored.param = detail::get<double>(in);
      stored.param2 = detail::get<double>(in);
      stored.node = detail::get<std::int64_t>(in);
      if (!(stored == key)) return nullptr;
      const auto n = static_cast<Index>(detail::get<std::uint64_t>(in));
      NodeFunction v(n);
      for (Index i = 0; i < n; ++i) v[i] = detail::get<double>(in);
      return std::make_shared<const NodeFunction>(std::move(v));
    } catch (const InvalidArgument&) {
      return nullptr;
    }
  }

  void store(const KernelKey& key, const NodeFunction& v) const {
    const std::string path = dir_ + "/" + key.file_name();
    const std::string tmp = path + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) return;
      out.write("CAPLABKC", 8);
      detail::put<std::uint32_t>(out, 1, nullptr);
      detail::put(out, key.space, nullptr);
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(key.kind), nullptr);
      detail::put(out, key.param, nullptr);
      detail::put(out, key.param2, nullptr);
      detail::put<std::int64_t>(out, key.node, nullptr);
      detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(v.size()), nullptr);
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
  }

  std::string dir_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<KernelKey, Column, KernelKeyHash> columns_;
  std::atomic<std::size_t> hits_{0}, disk_hits_{0}, misses_{0};
};

/// g_lambda(x, .) through the cache, or computed directly when cache is null.
inline KernelCache::Column resolvent_column(const Space& space, Index x, double lambda, KernelCache* cache,
                                            SolverOptions options = {}) {
  auto compute = [&] { return resolvent_kernel(space, x, lambda, options).values; };
  if (!cache) return std::make_shared<const NodeFunction>(compute());
  return cache->get_or_compute({space.hash(), KernelKind::Resolvent, lambda, 0.0, x}, compute);
}

inline KernelCache::Column heat_column(const Space& space, Index x, double t, KernelCache* cache) {
  auto compute = [&] { return heat_kernel(space, x, t).values; };
  if (!cache) return std::make_shared<const NodeFunction>(compute());
  return cache->get_or_compute({space.hash(), KernelKind::Heat, t, 0.0, x}, compute);
}

}  // namespace caplab
