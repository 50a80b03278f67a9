#include "unadapt/encoders.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "unadapt/error.hpp"

namespace unadapt {

EncoderSpec clip_vit_b32_spec() {
  EncoderSpec s;
  s.name = "clip-vit-b32";
  s.modality = Modality::kVisual;
  s.hidden_size = 768;
  s.num_tokens = 50;
  s.supports_prompt_injection = true;
  s.supports_gradient_to_input = true;
  return s;
}

EncoderSpec medclip_swin_spec() {
  EncoderSpec s;
  s.name = "medclip-swin";
  s.modality = Modality::kVisual;
  s.hidden_size = 96;
  s.num_tokens = 113;
  s.supports_prompt_injection = true;
  s.supports_gradient_to_input = true;
  return s;
}

PromptVector::PromptVector(std::size_t hidden, std::size_t columns, std::string encoder_ref)
    : values_(hidden, columns), encoder_ref_(std::move(encoder_ref)) {}

PromptVector PromptVector::zeros(const EncoderSpec& spec) {
  if (!spec.supports_prompt_injection) {
    throw ValidationError("encoder '" + spec.name + "' does not accept prompts");
  }
  return PromptVector(spec.hidden_size, spec.prompt_columns(), spec.name);
}

PromptVector PromptVector::gaussian(const EncoderSpec& spec, double stddev, std::uint64_t seed) {
  PromptVector p = zeros(spec);
  std::mt19937_64 rng(derive_seed(seed, "prompt-init"));
  fill_normal(p.values_.values(), rng, stddev);
  return p;
}

void PromptVector::check_compatible(const EncoderSpec& spec) const {
  if (!spec.supports_prompt_injection) {
    throw ShapeError("encoder '" + spec.name + "' does not accept prompts");
  }
  if (hidden_size() != spec.hidden_size || columns() != spec.prompt_columns()) {
    throw ShapeError("prompt shape " + std::to_string(hidden_size()) + "x" +
                     std::to_string(columns()) + " does not match encoder '" + spec.name + "' (" +
                     std::to_string(spec.hidden_size) + "x" + std::to_string(spec.prompt_columns()) +
                     ")");
  }
  if (!all_finite(values_.values())) throw ValidationError("prompt has non-finite entries");
}

std::vector<Embedding> TextEncoder::encode(const std::vector<std::string>& texts) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(encode(t));
  return out;
}

Embedding VisualEncoder::encode(const Image& image, const PromptVector* prompt) const {
  const ImageShape shape = input_shape();
  if (image.channels != shape.channels) {
    throw ShapeError("image has " + std::to_string(image.channels) + " channels, encoder '" +
                     spec().name + "' expects " + std::to_string(shape.channels));
  }
  if (image.height != shape.height || image.width != shape.width) {
    return forward(tokenize(resize_bilinear(image, shape.height, shape.width)), prompt).embedding;
  }
  return forward(tokenize(image), prompt).embedding;
}

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string ToyVlmConfig::fingerprint() const {
  std::ostringstream ss;
  ss << "s" << seed << "-h" << hidden_size << "-c" << channels << "-i" << image_height << "x"
     << image_width << "-p" << patch << "-d" << embed_dim << "-a"
     << (activation == Activation::kTanh ? "tanh" : "id") << "-n" << normalize << "-l"
     << lexical_weight << "-" << (injection == InjectionMode::kAdd ? "add" : "app") << append_tokens;
  return ss.str();
}

namespace {

void normalise_into(Embedding& e, std::span<const double> z, bool normalize) {
  e.values.assign(z.begin(), z.end());
  if (!normalize) return;
  double n = norm2(z);
  if (n == 0.0) throw DegenerateInputError("embedding has zero norm");
  for (auto& v : e.values) v /= n;
}

class ToyTextEncoder final : public TextEncoder {
 public:
  ToyTextEncoder(const ToyVlm& vlm, std::shared_ptr<const Matrix> projection)
      : config_(vlm.config()), projection_(std::move(projection)) {
    spec_.name = "toy-text[" + config_.fingerprint() + "]";
    spec_.modality = Modality::kText;
    spec_.embed_dim = config_.embed_dim;
    spec_.hidden_size = config_.hidden_size;
  }

  const EncoderSpec& spec() const override { return spec_; }

  Embedding encode(const std::string& text) const override {
    if (is_blank(text)) throw ValidationError("cannot encode an empty string");
    auto words = tokenize_words(text);
    if (words.empty()) throw ValidationError("text has no alphanumeric tokens: '" + text + "'");
    const std::size_t d = config_.embed_dim;
    Vector counts(config_.hidden_size, 0.0);
    Vector z(d, 0.0);
    const double lex_std = 1.0 / std::sqrt(static_cast<double>(d));
    Vector lex(d);
    for (const auto& w : words) {
      counts[fnv1a(w, fnv1a_u64(config_.seed)) % config_.hidden_size] += 1.0;
      if (config_.lexical_weight != 0.0) {
        std::mt19937_64 rng(derive_seed(config_.seed, "lexical", fnv1a(w)));
        fill_normal(lex, rng, lex_std);
        for (std::size_t i = 0; i < d; ++i) z[i] += config_.lexical_weight * lex[i];
      }
    }
    const Matrix& r = *projection_;
    for (std::size_t i = 0; i < d; ++i) z[i] += dot(r.row(i), counts);
    Embedding e;
    e.source = Modality::kText;
    normalise_into(e, z, true);
    return e;
  }

 private:
  ToyVlmConfig config_;
  std::shared_ptr<const Matrix> projection_;
  EncoderSpec spec_;
};

class ToyVisualEncoder final : public VisualEncoder {
 public:
  ToyVisualEncoder(const ToyVlm& vlm, std::shared_ptr<const Matrix> projection)
      : config_(vlm.config()),
        projection_(std::move(projection)),
        patch_embedding_(vlm.patch_embedding()),
        class_token_(vlm.class_token()) {
    spec_.name = "toy-visual[" + config_.fingerprint() + "]";
    spec_.modality = Modality::kVisual;
    spec_.embed_dim = config_.embed_dim;
    spec_.hidden_size = config_.hidden_size;
    spec_.num_tokens = 1 + (config_.image_height / config_.patch) * (config_.image_width / config_.patch);
    spec_.supports_prompt_injection = true;
    spec_.supports_gradient_to_input = true;
    spec_.injection = config_.injection;
    spec_.append_tokens = config_.injection == InjectionMode::kAppend ? config_.append_tokens : 0;
  }

  const EncoderSpec& spec() const override { return spec_; }
  ImageShape input_shape() const override {
    return {config_.channels, config_.image_height, config_.image_width};
  }

  TokenizedImage tokenize(const Image& image) const override {
    if (image.channels != config_.channels || image.height != config_.image_height ||
        image.width != config_.image_width) {
      throw ShapeError("toy visual encoder expects a " + std::to_string(config_.channels) + "x" +
                       std::to_string(config_.image_height) + "x" +
                       std::to_string(config_.image_width) + " image");
    }
    const std::size_t p = config_.patch;
    const std::size_t gw = config_.image_width / p;
    const std::size_t h = config_.hidden_size;
    TokenizedImage out{Matrix(spec_.num_tokens, h)};
    std::copy(class_token_.begin(), class_token_.end(), out.tokens.row(0).begin());
    Vector patch(config_.channels * p * p);
    for (std::size_t t = 1; t < spec_.num_tokens; ++t) {
      const std::size_t gy = (t - 1) / gw, gx = (t - 1) % gw;
      std::size_t k = 0;
      for (std::size_t c = 0; c < config_.channels; ++c)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x) patch[k++] = image.at(c, gy * p + y, gx * p + x);
      auto row = out.tokens.row(t);
      for (std::size_t j = 0; j < h; ++j) row[j] = dot(patch_embedding_.row(j), patch);
    }
    return out;
  }

  VisualForward forward(const TokenizedImage& in, const PromptVector* prompt) const override {
    const std::size_t h = config_.hidden_size;
    if (in.hidden_size() != h || in.num_tokens() != spec_.num_tokens) {
      throw ShapeError("token matrix does not match encoder '" + spec_.name + "'");
    }
    VisualForward f;
    f.input = in;
    const std::size_t extra = prompt && spec_.injection == InjectionMode::kAppend ? prompt->columns() : 0;
    const std::size_t n = in.num_tokens() + extra;
    f.pre_activation = Matrix(n, h);
    for (std::size_t t = 0; t < in.num_tokens(); ++t) {
      auto src = in.tokens.row(t);
      std::copy(src.begin(), src.end(), f.pre_activation.row(t).begin());
    }
    if (prompt) {
      prompt->check_compatible(spec_);
      f.prompt = prompt->values();
      const Matrix& pv = prompt->values();
      if (spec_.injection == InjectionMode::kAdd) {
        for (std::size_t t = 0; t < in.num_tokens(); ++t)
          for (std::size_t j = 0; j < h; ++j) f.pre_activation(t, j) += pv(j, t);
      } else {
        for (std::size_t t = 0; t < extra; ++t)
          for (std::size_t j = 0; j < h; ++j) f.pre_activation(in.num_tokens() + t, j) = pv(j, t);
      }
    }
    Vector pooled(h, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      auto row = f.pre_activation.row(t);
      for (std::size_t j = 0; j < h; ++j) pooled[j] += activate(row[j]);
    }
    for (auto& v : pooled) v /= static_cast<double>(n);
    const Matrix& r = *projection_;
    f.projected.resize(config_.embed_dim);
    for (std::size_t i = 0; i < config_.embed_dim; ++i) f.projected[i] = dot(r.row(i), pooled);
    f.embedding.source = Modality::kVisual;
    normalise_into(f.embedding, f.projected, config_.normalize);
    if (!all_finite(f.embedding.values)) throw NumericalError("visual embedding is not finite");
    return f;
  }

  VisualGradients backward(const VisualForward& f, std::span<const double> g,
                           bool want_tokens) const override {
    const std::size_t d = config_.embed_dim, h = config_.hidden_size;
    if (g.size() != d) throw ShapeError("embedding gradient has wrong dimension");
    Vector dz(g.begin(), g.end());
    if (config_.normalize) {
      const double n = norm2(f.projected);
      const double eg = dot(f.embedding.values, g);
      for (std::size_t i = 0; i < d; ++i) dz[i] = (g[i] - f.embedding.values[i] * eg) / n;
    }
    const Matrix& r = *projection_;
    Vector dpooled(h, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      auto row = r.row(i);
      for (std::size_t j = 0; j < h; ++j) dpooled[j] += row[j] * dz[i];
    }
    const std::size_t n = f.pre_activation.rows();
    Matrix dpre(n, h);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < h; ++j)
        dpre(t, j) = dpooled[j] / static_cast<double>(n) * activate_grad(f.pre_activation(t, j));

    VisualGradients out;
    const std::size_t n_in = f.input.num_tokens();
    if (f.prompt) {
      out.prompt = Matrix(f.prompt->rows(), f.prompt->cols());
      if (spec_.injection == InjectionMode::kAdd) {
        for (std::size_t t = 0; t < n_in; ++t)
          for (std::size_t j = 0; j < h; ++j) out.prompt(j, t) = dpre(t, j);
      } else {
        for (std::size_t t = 0; t < f.prompt->cols(); ++t)
          for (std::size_t j = 0; j < h; ++j) out.prompt(j, t) = dpre(n_in + t, j);
      }
    }
    if (want_tokens) {
      out.tokens = Matrix(n_in, h);
      for (std::size_t t = 0; t < n_in; ++t)
        for (std::size_t j = 0; j < h; ++j) out.tokens(t, j) = dpre(t, j);
    }
    return out;
  }

 private:
  double activate(double x) const { return config_.activation == Activation::kTanh ? std::tanh(x) : x; }
  double activate_grad(double x) const {
    if (config_.activation == Activation::kIdentity) return 1.0;
    double t = std::tanh(x);
    return 1.0 - t * t;
  }

  ToyVlmConfig config_;
  std::shared_ptr<const Matrix> projection_;
  Matrix patch_embedding_;
  Vector class_token_;
  EncoderSpec spec_;
};

}  // namespace

ToyVlm::ToyVlm(ToyVlmConfig config) : config_(config) {
  if (config_.hidden_size == 0 || config_.channels == 0 || config_.patch == 0 || config_.embed_dim == 0) {
    throw ValidationError("toy VLM dimensions must be positive");
  }
  if (config_.image_height % config_.patch != 0 || config_.image_width % config_.patch != 0) {
    throw ValidationError("toy VLM image size must be a multiple of the patch size");
  }
  auto proj = std::make_shared<Matrix>(config_.embed_dim, config_.hidden_size);
  std::mt19937_64 rng(derive_seed(config_.seed, "projection"));
  fill_normal(proj->values(), rng, 1.0 / std::sqrt(static_cast<double>(config_.embed_dim)));
  projection_ = std::move(proj);

  const std::size_t patch_dim = config_.channels * config_.patch * config_.patch;
  patch_embedding_ = Matrix(config_.hidden_size, patch_dim);
  rng.seed(derive_seed(config_.seed, "patch-embedding"));
  fill_normal(patch_embedding_.values(), rng, 1.0 / std::sqrt(static_cast<double>(patch_dim)));

  class_token_.resize(config_.hidden_size);
  rng.seed(derive_seed(config_.seed, "class-token"));
  fill_normal(class_token_, rng, 1.0 / std::sqrt(static_cast<double>(config_.hidden_size)));
}

std::size_t ToyVlm::bucket_of(const std::string& token) const {
  return fnv1a(token, fnv1a_u64(config_.seed)) % config_.hidden_size;
}

std::shared_ptr<TextEncoder> ToyVlm::text_encoder() const {
  return std::make_shared<ToyTextEncoder>(*this, projection_);
}

std::shared_ptr<VisualEncoder> ToyVlm::visual_encoder() const {
  return std::make_shared<ToyVisualEncoder>(*this, projection_);
}

}  // namespace unadapt
