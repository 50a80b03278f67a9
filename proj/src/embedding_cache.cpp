#include "unadapt/embedding_cache.hpp"

#include <mutex>

#include "unadapt/error.hpp"
#include "unadapt/util.hpp"

namespace unadapt {

namespace {
constexpr std::string_view kMagic = "UNAEMB01";
}

EmbeddingCache::EmbeddingCache(std::string encoder_name, std::size_t dim, std::filesystem::path path)
    : encoder_name_(std::move(encoder_name)), dim_(dim), path_(std::move(path)) {}

std::shared_ptr<EmbeddingCache> EmbeddingCache::open(const std::string& encoder_name, std::size_t dim,
                                                     const std::filesystem::path& path) {
  auto cache = std::make_shared<EmbeddingCache>(encoder_name, dim, path);
  if (!std::filesystem::exists(path)) return cache;

  BinaryReader in(read_file(path), path.string());
  if (in.bytes(kMagic.size()) != kMagic) throw ParseError(path.string() + ": not an embedding cache");
  std::string name = in.str();
  std::uint32_t file_dim = in.u32();
  std::uint64_t count = in.u64();
  if (name != encoder_name || file_dim != dim) {
    throw StaleCacheError(path.string() + ": built for encoder '" + name + "' (dim " +
                          std::to_string(file_dim) + "), requested '" + encoder_name + "' (dim " +
                          std::to_string(dim) + ")");
  }
  std::vector<CacheKey> keys;
  keys.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string id = in.str();
    keys.push_back({std::move(id), in.u64()});
  }
  if (in.remaining() != count * dim * sizeof(float)) {
    throw ParseError(path.string() + ": vector payload has the wrong size");
  }
  for (const auto& key : keys) {
    std::vector<float> v(dim);
    for (auto& x : v) x = in.f32();
    cache->entries_.emplace(key, std::move(v));
  }
  return cache;
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

bool EmbeddingCache::contains(const CacheKey& key) const {
  std::shared_lock lock(mu_);
  return entries_.count(key) != 0;
}

Embedding EmbeddingCache::lookup(const CacheKey& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw CacheMissError("embedding cache " + path_.string() + ": no entry for '" + key.item_id +
                         "' (augmentation seed " + std::to_string(key.augmentation_seed) + ")");
  }
  Embedding e;
  e.values.assign(it->second.begin(), it->second.end());
  return e;
}

void EmbeddingCache::insert(const CacheKey& key, const Embedding& embedding) {
  if (embedding.dim() != dim_) {
    throw StaleCacheError("embedding of dim " + std::to_string(embedding.dim()) +
                          " offered to a cache of dim " + std::to_string(dim_));
  }
  std::vector<float> v(embedding.values.begin(), embedding.values.end());
  std::unique_lock lock(mu_);
  entries_[key] = std::move(v);
}

void EmbeddingCache::flush() const {
  std::shared_lock lock(mu_);
  BinaryWriter out;
  out.bytes(kMagic);
  out.str(encoder_name_);
  out.u32(static_cast<std::uint32_t>(dim_));
  out.u64(entries_.size());
  for (const auto& [key, _] : entries_) {
    out.str(key.item_id);
    out.u64(key.augmentation_seed);
  }
  for (const auto& [_, v] : entries_)
    for (float x : v) out.f32(x);
  write_file_atomic(path_, out.buffer());
}

std::vector<CacheKey> EmbeddingCache::keys() const {
  std::shared_lock lock(mu_);
  std::vector<CacheKey> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

CacheHandle cache_embeddings(const EncoderSpec& encoder, const std::vector<CacheKey>& items,
                             const std::function<Embedding(std::size_t)>& compute,
                             const std::filesystem::path& cache_path) {
  auto cache = EmbeddingCache::open(encoder.name, encoder.embed_dim, cache_path);
  bool dirty = !std::filesystem::exists(cache_path);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (cache->contains(items[i])) continue;
    cache->insert(items[i], compute(i));
    dirty = true;
  }
  if (dirty) cache->flush();
  return cache;
}

CacheHandle cache_text_embeddings(const TextEncoder& encoder,
                                  const std::vector<std::pair<std::string, std::string>>& id_and_text,
                                  const std::filesystem::path& cache_path) {
  std::vector<CacheKey> keys;
  keys.reserve(id_and_text.size());
  for (const auto& [id, _] : id_and_text) keys.push_back({id, 0});
  return cache_embeddings(encoder.spec(), keys,
                          [&](std::size_t i) { return encoder.encode(id_and_text[i].second); },
                          cache_path);
}

}  // namespace unadapt
