#include "unadapt/encoder_registry.hpp"

#include <dlfcn.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <spdlog/spdlog.h>

#include "unadapt/error.hpp"
#include "unadapt/plugin_abi.h"

namespace unadapt {

namespace {

using Handle = std::shared_ptr<void>;

std::filesystem::path find_plugin(const std::string& name) {
  const char* env = std::getenv("UNADAPT_PLUGIN_PATH");
  if (!env) return {};
  std::stringstream ss(env);
  for (std::string dir; std::getline(ss, dir, ':');) {
    if (dir.empty()) continue;
    auto candidate = std::filesystem::path(dir) / ("libunadapt-" + name + ".so");
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return {};
}

struct LoadedPlugin {
  Handle handle;
  unadapt_plugin_desc info{};
};

template <typename Fn>
Fn symbol(const LoadedPlugin& p, const char* name, bool required = true) {
  auto* sym = dlsym(p.handle.get(), name);
  if (!sym && required) {
    throw RuntimeFailure(std::string("plugin '") + p.info.name + "' lacks symbol " + name);
  }
  return reinterpret_cast<Fn>(sym);
}

std::optional<LoadedPlugin> open_plugin(const std::string& name) {
  auto path = find_plugin(name);
  if (path.empty()) return std::nullopt;
  void* raw = dlopen(path.c_str(), RTLD_NOW | RTLD_LOCAL);
  if (!raw) throw RuntimeFailure("cannot load plugin " + path.string() + ": " + dlerror());
  LoadedPlugin p{Handle(raw, [](void* h) { dlclose(h); })};
  auto info = reinterpret_cast<unadapt_info_fn>(dlsym(raw, "unadapt_plugin_info"));
  if (!info || info(&p.info) != 0) {
    throw RuntimeFailure("plugin " + path.string() + " does not export unadapt_plugin_info");
  }
  if (p.info.abi_version != UNADAPT_PLUGIN_ABI_VERSION) {
    throw RuntimeFailure("plugin " + path.string() + " has ABI version " +
                         std::to_string(p.info.abi_version));
  }
  return p;
}

EncoderSpec spec_from(const unadapt_plugin_desc& info) {
  EncoderSpec s;
  s.name = info.name;
  s.modality = info.modality == UNADAPT_TEXT ? Modality::kText : Modality::kVisual;
  s.embed_dim = info.embed_dim;
  s.hidden_size = info.hidden_size;
  s.num_tokens = info.num_tokens;
  s.supports_prompt_injection = info.supports_prompt_injection != 0;
  s.supports_gradient_to_input = info.supports_gradient_to_input != 0;
  return s;
}

class PluginTextEncoder final : public TextEncoder {
 public:
  explicit PluginTextEncoder(LoadedPlugin p)
      : plugin_(std::move(p)),
        spec_(spec_from(plugin_.info)),
        encode_(symbol<unadapt_encode_text_fn>(plugin_, "unadapt_encode_text")) {}

  const EncoderSpec& spec() const override { return spec_; }

  Embedding encode(const std::string& text) const override {
    if (is_blank(text)) throw ValidationError("cannot encode an empty string");
    Embedding e{Vector(spec_.embed_dim), Modality::kText};
    if (encode_(text.c_str(), e.values.data()) != 0) {
      throw RuntimeFailure("plugin '" + spec_.name + "' failed to encode text");
    }
    if (!all_finite(e.values)) throw NumericalError("plugin '" + spec_.name + "' produced non-finite values");
    return e;
  }

 private:
  LoadedPlugin plugin_;
  EncoderSpec spec_;
  unadapt_encode_text_fn encode_;
};

class PluginVisualEncoder final : public VisualEncoder {
 public:
  explicit PluginVisualEncoder(LoadedPlugin p)
      : plugin_(std::move(p)),
        spec_(spec_from(plugin_.info)),
        tokenize_(symbol<unadapt_tokenize_fn>(plugin_, "unadapt_tokenize")),
        encode_(symbol<unadapt_encode_tokens_fn>(plugin_, "unadapt_encode_tokens")),
        backward_(symbol<unadapt_backward_fn>(plugin_, "unadapt_backward", false)) {
    if (!backward_) spec_.supports_gradient_to_input = false;
  }

  const EncoderSpec& spec() const override { return spec_; }
  ImageShape input_shape() const override {
    return {plugin_.info.channels, plugin_.info.height, plugin_.info.width};
  }

  TokenizedImage tokenize(const Image& image) const override {
    auto shape = input_shape();
    if (image.channels != shape.channels || image.height != shape.height || image.width != shape.width) {
      throw ShapeError("image shape does not match plugin '" + spec_.name + "'");
    }
    std::vector<double> px(image.pixels.begin(), image.pixels.end());
    TokenizedImage out{Matrix(spec_.num_tokens, spec_.hidden_size)};
    if (tokenize_(px.data(), out.tokens.values().data()) != 0) {
      throw RuntimeFailure("plugin '" + spec_.name + "' failed to tokenize");
    }
    return out;
  }

  VisualForward forward(const TokenizedImage& in, const PromptVector* prompt) const override {
    if (in.num_tokens() != spec_.num_tokens || in.hidden_size() != spec_.hidden_size) {
      throw ShapeError("token matrix does not match plugin '" + spec_.name + "'");
    }
    VisualForward f;
    f.input = in;
    if (prompt) {
      prompt->check_compatible(spec_);
      f.prompt = prompt->values();
    }
    f.embedding = {Vector(spec_.embed_dim), Modality::kVisual};
    if (encode_(in.tokens.values().data(), f.prompt ? f.prompt->values().data() : nullptr,
                f.embedding.values.data()) != 0) {
      throw RuntimeFailure("plugin '" + spec_.name + "' failed to encode");
    }
    if (!all_finite(f.embedding.values)) throw NumericalError("plugin '" + spec_.name + "' produced non-finite values");
    return f;
  }

  VisualGradients backward(const VisualForward& f, std::span<const double> g, bool want_tokens) const override {
    if (!backward_) throw ValidationError("plugin '" + spec_.name + "' has no gradient support");
    if (g.size() != spec_.embed_dim) throw ShapeError("embedding gradient has wrong dimension");
    VisualGradients out;
    if (f.prompt) out.prompt = Matrix(f.prompt->rows(), f.prompt->cols());
    if (want_tokens) out.tokens = Matrix(f.input.num_tokens(), f.input.hidden_size());
    if (backward_(f.input.tokens.values().data(), f.prompt ? f.prompt->values().data() : nullptr,
                  g.data(), f.prompt ? out.prompt.values().data() : nullptr,
                  want_tokens ? out.tokens.values().data() : nullptr) != 0) {
      throw RuntimeFailure("plugin '" + spec_.name + "' failed in backward");
    }
    return out;
  }

 private:
  LoadedPlugin plugin_;
  EncoderSpec spec_;
  unadapt_tokenize_fn tokenize_;
  unadapt_encode_tokens_fn encode_;
  unadapt_backward_fn backward_;
};

}  // namespace

std::shared_ptr<TextEncoder> load_text_plugin(const std::string& name) {
  auto p = open_plugin(name);
  if (!p) return nullptr;
  if (p->info.modality != UNADAPT_TEXT) throw ValidationError("plugin '" + name + "' is not a text encoder");
  return std::make_shared<PluginTextEncoder>(std::move(*p));
}

std::shared_ptr<VisualEncoder> load_visual_plugin(const std::string& name) {
  auto p = open_plugin(name);
  if (!p) return nullptr;
  if (p->info.modality != UNADAPT_VISUAL) throw ValidationError("plugin '" + name + "' is not a visual encoder");
  return std::make_shared<PluginVisualEncoder>(std::move(*p));
}

ToyVlmConfig toy_config_for_backbone(const std::string& name, const ToyVlmConfig& base) {
  ToyVlmConfig c = base;
  if (name == "clip-vit-b32") {
    c.hidden_size = 768;
    c.channels = 3;
    c.image_height = c.image_width = 224;
    c.patch = 32;  // 7x7 patches + class token = 50 tokens
  } else if (name == "medclip-swin") {
    c.hidden_size = 96;
    c.channels = 3;
    c.image_height = 32;
    c.image_width = 56;
    c.patch = 4;  // 8x14 patches + class token = 113 tokens
  }
  return c;
}

EncoderSet make_encoders(const EncoderSelection& sel) {
  EncoderSet out;
  if (sel.visual != "toy") out.visual = load_visual_plugin(sel.visual);
  if (sel.text != "toy") out.text = load_text_plugin(sel.text);

  if (!out.visual || !out.text) {
    ToyVlm vlm(sel.visual == "toy" || out.visual ? sel.toy : toy_config_for_backbone(sel.visual, sel.toy));
    if (!out.visual) {
      if (sel.visual != "toy") {
        out.warnings.push_back("visual encoder plugin '" + sel.visual +
                               "' not found; using the toy encoder with its token shape");
      }
      out.visual = vlm.visual_encoder();
    }
    if (!out.text) {
      if (sel.text != "toy") {
        out.warnings.push_back("text encoder plugin '" + sel.text + "' not found; using the toy encoder");
      }
      out.text = vlm.text_encoder();
    }
  }
  for (const auto& w : out.warnings) spdlog::warn("{}", w);
  if (out.text->spec().embed_dim != out.visual->spec().embed_dim) {
    throw ShapeError("text and visual encoders disagree on the joint dimension");
  }
  return out;
}

}  // namespace unadapt
