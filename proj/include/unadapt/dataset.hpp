#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unadapt/corpus.hpp"
#include "unadapt/image.hpp"

namespace unadapt {

enum class Split { kUnassigned, kTrain, kVal, kTest };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestItem {
  std::string item_id;
  std::string path;  // as written in the manifest; relative paths resolve against base_dir
  Split split = Split::kUnassigned;
  std::optional<std::string> label;
  bool operator==(const ManifestItem&) const = default;
};

// CSV with header columns item_id, path, split and optionally label. Lines
// starting with "#" are comments.
struct Manifest {
  std::vector<ManifestItem> items;
  std::filesystem::path base_dir;

  Manifest subset(Split s) const;
  bool any_labels() const;
  bool all_labeled() const;
  std::filesystem::path resolve(const ManifestItem& item) const;
};

Manifest parse_manifest(const std::string& csv, const std::filesystem::path& base_dir,
                        const std::string& source = "<memory>");
Manifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_csv(const Manifest& manifest);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  void validate() const;  // each in [0,1], sum 1 within 1e-9
};

// Largest-remainder apportionment of n items; leftover items go to the
// largest fractional parts, ties resolved in the order train, val, test.
std::array<std::size_t, 3> apportion(std::size_t n, const SplitFractions& f);

struct SplitResult {
  Manifest train, val, test;
  std::vector<std::string> warnings;
};

// Seeded, disjoint and exhaustive split. Stratified mode apportions each
// class separately and needs >= 3 items per class; with no labels at all it
// falls back to an unstratified split and warns.
SplitResult split_dataset(const Manifest& manifest, const SplitFractions& fractions, std::uint64_t seed,
                          bool stratified = true);

// Concatenation of a split result with the split column filled in.
Manifest assign_splits(const SplitResult& r);

struct DataItem {
  std::string item_id;
  Image image;
  std::optional<std::size_t> label;  // catalog index; never read by the trainer
};

// Loads images of one split. Labels are mapped through the catalog
// (DataError for labels outside it).
std::vector<DataItem> load_items(const Manifest& manifest, Split split, const ClassCatalog& catalog);

}  // namespace unadapt
