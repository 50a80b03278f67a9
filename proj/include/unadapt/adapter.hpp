#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unadapt/corpus.hpp"
#include "unadapt/encoders.hpp"
#include "unadapt/matrix.hpp"
#include "unadapt/optim.hpp"

namespace unadapt {

// Linear map from the joint embedding space to class logits.
class Adapter {
 public:
  Adapter() = default;
  Adapter(std::size_t num_classes, std::size_t dim, bool with_bias, std::string catalog_id);

  std::size_t num_classes() const { return weights_.rows(); }
  std::size_t dim() const { return weights_.cols(); }
  bool has_bias() const { return has_bias_; }
  const std::string& catalog_id() const { return catalog_id_; }

  Matrix& weights() { return weights_; }
  const Matrix& weights() const { return weights_; }
  Vector& bias() { return bias_; }
  const Vector& bias() const { return bias_; }  // empty when has_bias() is false

  std::size_t parameter_count() const { return weights_.size() + bias_.size(); }

  // W * emb + b. Throws ShapeError on dimension mismatch.
  Vector forward(std::span<const double> embedding) const;

  // d(logits . upstream)/d(embedding) = W^T upstream.
  Vector input_gradient(std::span<const double> upstream) const;

  // Deep copy; the copy evolves independently.
  Adapter clone() const { return *this; }

  bool operator==(const Adapter&) const = default;

 private:
  Matrix weights_;
  Vector bias_;
  bool has_bias_ = false;
  std::string catalog_id_;
};

struct AdapterGradient {
  Matrix weights;
  Vector bias;

  explicit AdapterGradient(const Adapter& a)
      : weights(a.num_classes(), a.dim()), bias(a.has_bias() ? a.num_classes() : 0, 0.0) {}
  void add(std::span<const double> embedding, std::span<const double> dlogits);
  void scale(double s);
};

void apply_step(Optimizer& opt, const std::string& slot, Adapter& adapter, const AdapterGradient& grad);

struct Stage1Config {
  OptimizerConfig optimizer;  // SGD, learning rate 1e-2
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
  bool bias = false;

  void validate() const;
};

struct Stage1Epoch {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double holdout_accuracy = 0.0;  // NaN without a holdout split
};

struct Stage1Report {
  std::size_t num_train = 0;
  std::size_t num_holdout = 0;
  double initial_train_loss = 0.0;
  std::vector<Stage1Epoch> epochs;

  double final_holdout_accuracy() const;
  double final_train_accuracy() const;
};

struct LabeledEmbedding {
  std::size_t label = 0;
  Vector values;
};

// Cross-entropy training of a fresh adapter against one-hot class targets,
// one sample per description embedding. Weights start at zero.
std::pair<Adapter, Stage1Report> pretrain_adapter(const ClassCatalog& catalog,
                                                  const std::vector<LabeledEmbedding>& samples,
                                                  const Stage1Config& cfg);

std::pair<Adapter, Stage1Report> pretrain_adapter(const DescriptionCorpus& corpus, const TextEncoder& encoder,
                                                  const Stage1Config& cfg);

// Descriptions in catalog order, tagged with class index.
std::vector<LabeledEmbedding> embed_corpus(const DescriptionCorpus& corpus, const TextEncoder& encoder);

// Stable cache id of one description: "<label>/<index>/<hash of text>".
std::string description_id(const std::string& label, std::size_t index, const std::string& text);

double accuracy(const Adapter& adapter, const std::vector<LabeledEmbedding>& samples);

// Provenance written into every checkpoint.
struct ArtifactStamp {
  std::string config_hash;
  std::uint64_t seed = 0;
  bool operator==(const ArtifactStamp&) const = default;
};

// Checkpoint layout (little-endian):
//   "UNADPT01" | u32 C | u32 dim | u8 bias | str catalog_id | str config_hash
//   | u64 seed | C x dim float32 | (C float32 if bias)
// Weights are stored as float32, so a loaded adapter equals the saved one
// only after rounding; training code rounds before saving.
void save_adapter(const Adapter& adapter, const ArtifactStamp& stamp, const std::filesystem::path& path);
std::pair<Adapter, ArtifactStamp> load_adapter(const std::filesystem::path& path);

// Round every parameter to float32 precision.
void round_to_float(Adapter& adapter);

}  // namespace unadapt
