#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unadapt/image.hpp"
#include "unadapt/matrix.hpp"
#include "unadapt/util.hpp"

namespace unadapt {

inline constexpr std::size_t kJointDim = 512;

enum class Modality { kText, kVisual };

// How a prompt reaches the visual token stream. kAdd adds a
// (hidden_size x num_tokens) matrix to every token after patch embedding;
// kAppend concatenates (hidden_size x prompt_tokens) extra tokens.
enum class InjectionMode { kAdd, kAppend };

struct EncoderSpec {
  std::string name;
  Modality modality = Modality::kVisual;
  std::size_t embed_dim = kJointDim;
  std::size_t hidden_size = 0;
  std::size_t num_tokens = 0;
  bool supports_prompt_injection = false;
  bool supports_gradient_to_input = false;
  InjectionMode injection = InjectionMode::kAdd;
  std::size_t append_tokens = 0;

  // The strong branch needs both capabilities.
  bool prompt_capable() const { return supports_prompt_injection && supports_gradient_to_input; }
  std::size_t prompt_columns() const {
    return injection == InjectionMode::kAdd ? num_tokens : append_tokens;
  }
  std::size_t prompt_parameter_count() const { return hidden_size * prompt_columns(); }
};

// Published token-stream shapes of the two reference backbones.
EncoderSpec clip_vit_b32_spec();  // hidden 768, 50 tokens (49 patches + class token)
EncoderSpec medclip_swin_spec();  // hidden 96, 113 tokens

struct Embedding {
  Vector values;
  Modality source = Modality::kText;
  std::size_t dim() const { return values.size(); }
  bool operator==(const Embedding&) const = default;
};

// Learnable visual prompt, stored as hidden_size rows x prompt columns.
class PromptVector {
 public:
  PromptVector() = default;
  PromptVector(std::size_t hidden, std::size_t columns, std::string encoder_ref);

  static PromptVector zeros(const EncoderSpec& spec);
  static PromptVector gaussian(const EncoderSpec& spec, double stddev, std::uint64_t seed);

  std::size_t hidden_size() const { return values_.rows(); }
  std::size_t columns() const { return values_.cols(); }
  std::size_t parameter_count() const { return values_.size(); }
  const std::string& encoder_ref() const { return encoder_ref_; }

  Matrix& values() { return values_; }
  const Matrix& values() const { return values_; }

  // Throws ShapeError unless the shape matches what `spec` accepts.
  void check_compatible(const EncoderSpec& spec) const;

  bool operator==(const PromptVector&) const = default;

 private:
  Matrix values_;
  std::string encoder_ref_;
};

// Patch-embedded image: one row per token, hidden_size columns.
struct TokenizedImage {
  Matrix tokens;
  std::size_t num_tokens() const { return tokens.rows(); }
  std::size_t hidden_size() const { return tokens.cols(); }
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual const EncoderSpec& spec() const = 0;

  // Throws ValidationError on blank input.
  virtual Embedding encode(const std::string& text) const = 0;

  std::vector<Embedding> encode(const std::vector<std::string>& texts) const;
};

struct ImageShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

// Forward state retained for the backward pass.
struct VisualForward {
  Embedding embedding;
  TokenizedImage input;
  std::optional<Matrix> prompt;
  Matrix pre_activation;  // tokens after injection, before the nonlinearity
  Vector projected;       // joint-space vector before normalisation
};

struct VisualGradients {
  Matrix prompt;  // same shape as the prompt; empty when no prompt was used
  Matrix tokens;  // same shape as the input tokens; empty unless requested
};

class VisualEncoder {
 public:
  virtual ~VisualEncoder() = default;
  virtual const EncoderSpec& spec() const = 0;
  virtual ImageShape input_shape() const = 0;

  // Patch embedding. The image must already have input_shape().
  virtual TokenizedImage tokenize(const Image& image) const = 0;

  virtual VisualForward forward(const TokenizedImage& tokens, const PromptVector* prompt) const = 0;

  // Vector-Jacobian product of the embedding w.r.t. prompt (and tokens).
  virtual VisualGradients backward(const VisualForward& fwd, std::span<const double> grad_embedding,
                                   bool want_tokens) const = 0;

  // Resizes to input_shape() when needed, then tokenize + forward.
  Embedding encode(const Image& image, const PromptVector* prompt = nullptr) const;
};

enum class Activation { kIdentity, kTanh };

struct ToyVlmConfig {
  std::uint64_t seed = 7;
  std::size_t hidden_size = 32;  // also the number of text hash buckets
  std::size_t channels = 32;
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::size_t patch = 4;
  std::size_t embed_dim = kJointDim;
  Activation activation = Activation::kIdentity;
  bool normalize = true;
  double lexical_weight = 0.1;
  InjectionMode injection = InjectionMode::kAdd;
  std::size_t append_tokens = 4;

  std::string fingerprint() const;
};

// A deterministic text/visual encoder pair sharing one output projection, so
// that the two modalities land in a common joint space.
//
// Text: lower-cased alphanumeric tokens are hashed into hidden_size buckets;
// the count vector plus a small per-token random vector is projected to
// embed_dim and L2-normalised.
//
// Visual: non-overlapping patches -> linear token embedding, plus a fixed
// class token -> (prompt injection) -> activation -> mean pool -> the shared
// projection -> optional L2 normalisation.
class ToyVlm {
 public:
  explicit ToyVlm(ToyVlmConfig config);

  const ToyVlmConfig& config() const { return config_; }
  const Matrix& projection() const { return *projection_; }  // embed_dim x hidden
  const Matrix& patch_embedding() const { return patch_embedding_; }  // hidden x patch_dim
  const Vector& class_token() const { return class_token_; }
  std::size_t bucket_of(const std::string& token) const;

  std::shared_ptr<TextEncoder> text_encoder() const;
  std::shared_ptr<VisualEncoder> visual_encoder() const;

 private:
  ToyVlmConfig config_;
  std::shared_ptr<const Matrix> projection_;
  Matrix patch_embedding_;
  Vector class_token_;
};

std::vector<std::string> tokenize_words(const std::string& text);

}  // namespace unadapt
