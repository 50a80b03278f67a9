#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "unadapt/encoders.hpp"

namespace unadapt {

struct CacheKey {
  std::string item_id;
  std::uint64_t augmentation_seed = 0;
  auto operator<=>(const CacheKey&) const = default;
};

// On-disk embedding store for one encoder.
//
// File layout (little-endian):
//   "UNAEMB01" | u32 name_len | name | u32 dim | u64 count
//   count x (u32 id_len | id | u64 augmentation_seed)
//   count x dim float32
//
// Vectors are rounded to float32 on insert so cold and warm reads agree
// bit for bit. Reads may run concurrently; writes are serialised.
class EmbeddingCache {
 public:
  EmbeddingCache(std::string encoder_name, std::size_t dim, std::filesystem::path path);

  // Opens `path` if it exists. Throws StaleCacheError when the file was built
  // for a different encoder name or dimension.
  static std::shared_ptr<EmbeddingCache> open(const std::string& encoder_name, std::size_t dim,
                                              const std::filesystem::path& path);

  const std::string& encoder_name() const { return encoder_name_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const;
  bool contains(const CacheKey& key) const;

  // Throws CacheMissError for unknown keys.
  Embedding lookup(const CacheKey& key) const;
  Embedding lookup(const std::string& item_id) const { return lookup(CacheKey{item_id, 0}); }

  void insert(const CacheKey& key, const Embedding& embedding);
  void flush() const;

  std::vector<CacheKey> keys() const;

 private:
  std::string encoder_name_;
  std::size_t dim_;
  std::filesystem::path path_;
  std::map<CacheKey, std::vector<float>> entries_;
  mutable std::shared_mutex mu_;
};

using CacheHandle = std::shared_ptr<EmbeddingCache>;

// Ensures every key is present (computing misses with `compute`), persists the
// cache, and returns the handle.
CacheHandle cache_embeddings(const EncoderSpec& encoder, const std::vector<CacheKey>& items,
                             const std::function<Embedding(std::size_t)>& compute,
                             const std::filesystem::path& cache_path);

CacheHandle cache_text_embeddings(const TextEncoder& encoder,
                                  const std::vector<std::pair<std::string, std::string>>& id_and_text,
                                  const std::filesystem::path& cache_path);

}  // namespace unadapt
