#pragma once

#include <memory>
#include <string>
#include <vector>

#include "unadapt/encoders.hpp"

namespace unadapt {

struct EncoderSelection {
  std::string text = "toy";    // toy, or a plugin name such as "biobert"
  std::string visual = "toy";  // toy, clip-vit-b32, medclip-swin, or a plugin name
  ToyVlmConfig toy;
};

struct EncoderSet {
  std::shared_ptr<TextEncoder> text;
  std::shared_ptr<VisualEncoder> visual;
  std::vector<std::string> warnings;
};

// Resolves named encoders. Non-toy names are looked up as plugins; when a
// plugin is missing the toy pair is used instead (shaped like the named
// backbone when its shape is known) and a warning is recorded.
EncoderSet make_encoders(const EncoderSelection& selection);

std::shared_ptr<TextEncoder> load_text_plugin(const std::string& name);
std::shared_ptr<VisualEncoder> load_visual_plugin(const std::string& name);

// Toy configuration whose token stream has the named backbone's shape.
ToyVlmConfig toy_config_for_backbone(const std::string& name, const ToyVlmConfig& base);

}  // namespace unadapt
