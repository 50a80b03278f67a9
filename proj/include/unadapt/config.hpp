#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "unadapt/adapter.hpp"
#include "unadapt/dataset.hpp"
#include "unadapt/encoder_registry.hpp"
#include "unadapt/unsup.hpp"

namespace unadapt {

// Everything a run needs. Loaded from an INI file with sections [run],
// [encoders], [stage1], [stage2], [loss] and [augment]; unknown keys are
// rejected. Relative paths resolve against the config file's directory.
struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path corpus;
  std::filesystem::path output_dir;
  EncoderSelection encoders;
  Stage1Config stage1;
  Stage2Config stage2;
  SplitFractions split;
  bool stratified = true;
  bool parallel = true;
  std::uint64_t seed = 0;

  // Throws ValidationError for bad values or, with check_paths, for missing
  // input files.
  void validate(bool check_paths = true) const;

  // Stage seeds follow from the run seed.
  void derive_stage_seeds();

  // Canonical INI text. The output directory is left out so that identical
  // runs in different directories hash alike.
  std::string to_ini(bool include_output = true) const;
  std::string hash() const;
  // One section of to_ini(false), header included.
  std::string section_ini(const std::string& name) const;
};

RunConfig parse_run_config(const std::string& ini_text, const std::filesystem::path& base_dir,
                           const std::string& source = "<memory>");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace unadapt
