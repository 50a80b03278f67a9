#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "unadapt/corpus.hpp"
#include "unadapt/dataset.hpp"
#include "unadapt/encoders.hpp"

namespace unadapt {

// A planted classification world for the toy encoders: a description corpus
// whose class keywords hash to disjoint buckets, and images whose pooled
// visual tokens sit near the matching text concept, displaced by a shared
// offset that mimics the gap between modalities.
//
// Images carry their signal in per-channel constant intensities, so flips,
// crops, rotations and resizing leave it intact.
struct SynthConfig {
  std::uint64_t seed = 11;
  std::size_t num_classes = 2;
  std::size_t images_per_class = 150;
  std::size_t templates = 4;
  std::size_t descriptions_per_query = 10;
  std::size_t keywords_per_class = 3;
  double concept_noise = 0.12;  // per-dimension std of the visual concept noise
  double pixel_noise = 0.05;    // per-pixel std, relative to the mean |intensity|
  double gap = 0.22;            // shift of every image toward class 0
  ToyVlmConfig toy;
};

struct SynthWorld {
  ClassCatalog catalog;
  std::vector<PromptTemplate> templates;
  std::map<std::string, std::vector<std::string>> fixture_responses;  // query -> completions
  DescriptionCorpus corpus;
  Manifest manifest;             // unsplit; paths relative to the output directory
  std::vector<DataItem> items;   // same order as manifest.items, labels set
  std::map<std::string, std::vector<std::string>> keywords;
};

SynthWorld make_synth_world(const SynthConfig& cfg);

// Writes catalog.json, templates.json, llm_fixture.json, corpus.json,
// manifest.csv and images/<id>.npy under `dir`.
void write_synth_world(const SynthWorld& world, const std::filesystem::path& dir);

}  // namespace unadapt
