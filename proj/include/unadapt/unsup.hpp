#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "unadapt/adapter.hpp"
#include "unadapt/augment.hpp"
#include "unadapt/corpus.hpp"
#include "unadapt/dataset.hpp"
#include "unadapt/encoders.hpp"
#include "unadapt/losses.hpp"
#include "unadapt/optim.hpp"

namespace unadapt {

// g_w(f_V(weak(x))). The weak branch never sees a prompt.
Vector weak_branch(const Image& x, const std::string& item_id, std::size_t epoch, const Adapter& weak_adapter,
                   const AugmentationPolicy& weak_policy, const VisualEncoder& encoder);

// g_s(f_V(inject(strong(x), p))).
Vector strong_branch(const Image& x, const std::string& item_id, std::size_t epoch, const Adapter& strong_adapter,
                     const PromptVector& prompt, const AugmentationPolicy& strong_policy,
                     const VisualEncoder& encoder);

// Trainable Stage-2 parameters: prompt entries plus the strong adapter.
std::size_t stage2_parameter_count(const EncoderSpec& spec, const Adapter& adapter);

enum class PromptInit { kZeros, kSmallGaussian };
std::string to_string(PromptInit p);
PromptInit prompt_init_from_string(const std::string& s);

struct Stage2Config {
  LossConfig loss;
  OptimizerConfig optimizer;  // SGD, learning rate 1e-2
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  PromptInit prompt_init = PromptInit::kZeros;
  double prompt_init_std = 0.01;
  double prompt_lr_scale = 1.0;  // multiplies the prompt gradient
  std::uint64_t seed = 0;
  // Update both branches from the same forward pass instead of alternating.
  bool joint_update = false;
  bool parallel = true;
  AugmentationSettings augment;

  void validate() const;
};

struct Stage2Epoch {
  std::size_t epoch = 0;  // 1-based
  double weak_loss = 0.0;
  double strong_loss = 0.0;
  double strong_consistency = 0.0;
  double mean_entropy = 0.0;  // unweighted strong-branch self-entropy
  double churn = 0.0;         // fraction of pseudo-labels that changed since the previous epoch
  double masked_fraction = 0.0;
  double val_accuracy = 0.0;  // NaN without labelled validation data
};

struct TrainLog {
  std::vector<Stage2Epoch> epochs;
  std::string selection;  // "val-accuracy" or "final-epoch"
  std::size_t selected_epoch = 0;
  double selected_val_accuracy = 0.0;
  double final_val_accuracy = 0.0;
};

struct Stage2Result {
  Adapter adapter;  // g*
  PromptVector prompt;  // p*
  TrainLog log;
};

struct BatchStats {
  double weak_loss = 0.0;
  double strong_loss = 0.0;
  double strong_consistency = 0.0;
  double entropy = 0.0;
  std::size_t masked = 0;
  std::vector<std::size_t> pseudo_labels;
};

// Owns both branches and the prompt. The step functions are public so the
// stop-gradient contract can be checked one update at a time.
class Stage2Trainer {
 public:
  Stage2Trainer(const Adapter& pretrained, std::shared_ptr<const VisualEncoder> encoder, Stage2Config cfg);

  const Adapter& weak_adapter() const { return weak_; }
  const Adapter& strong_adapter() const { return strong_; }
  const PromptVector& prompt() const { return prompt_; }
  const Stage2Config& config() const { return cfg_; }

  // Step (i): update g_w toward the stop-gradient strong-branch softmax.
  BatchStats weak_update(const std::vector<const DataItem*>& batch, std::size_t epoch);
  // Step (ii): update g_s and p toward the stop-gradient weak pseudo-labels
  // plus the entropy term.
  BatchStats strong_update(const std::vector<const DataItem*>& batch, std::size_t epoch);
  // Both updates from one forward pass (joint_update mode).
  BatchStats joint_update(const std::vector<const DataItem*>& batch, std::size_t epoch);

  // Alternating or joint, per config.
  BatchStats train_batch(const std::vector<const DataItem*>& batch, std::size_t epoch);

 private:
  struct View {
    std::string item_id;
    Vector weak_embedding;
    VisualForward strong;
  };
  std::vector<View> forward(const std::vector<const DataItem*>& batch, std::size_t epoch) const;
  // Reads the current weights of both branches, so a strong step run after a
  // weak step sees the updated weak branch.
  BatchStats apply(const std::vector<View>& views, bool update_weak, bool update_strong);

  Adapter weak_, strong_;
  PromptVector prompt_;
  std::shared_ptr<const VisualEncoder> encoder_;
  Stage2Config cfg_;
  AugmentationPolicy weak_policy_, strong_policy_;
  std::unique_ptr<Optimizer> opt_;
};

// Dual-branch training from the pretrained adapter. Labels on `train` are
// never read. When `val` carries labels the epoch with the best validation
// accuracy is returned, otherwise the final epoch.
Stage2Result train_stage2(const std::vector<DataItem>& train, const Adapter& pretrained,
                          std::shared_ptr<const VisualEncoder> encoder, const Stage2Config& cfg,
                          const std::vector<DataItem>& val = {});

// argmax of the strong branch on the resize-only view. Ties go to the lowest
// class index.
std::size_t infer(const Image& x, const Adapter& adapter, const PromptVector& prompt, const VisualEncoder& encoder);
std::vector<std::size_t> infer_batch(const std::vector<DataItem>& items, const Adapter& adapter,
                                     const PromptVector& prompt, const VisualEncoder& encoder, bool parallel = true);

enum class Distance { kCosine, kEuclidean };
std::string to_string(Distance d);
Distance distance_from_string(const std::string& s);

double distance(std::span<const double> a, std::span<const double> b, Distance d);

// Distance between the adapter output on the prompted visual embedding and
// the mean adapter output over the label's description embeddings.
double supervised_alignment_loss(const Image& x, const std::string& label, const Adapter& adapter,
                                 const PromptVector& prompt, const DescriptionCorpus& corpus,
                                 const TextEncoder& text_encoder, const VisualEncoder& visual_encoder,
                                 Distance d);

// Prompt checkpoint layout (little-endian):
//   "UNPRMT01" | str encoder_ref | u32 hidden | u32 columns | str config_hash
//   | u64 seed | hidden x columns float32
void save_prompt(const PromptVector& prompt, const ArtifactStamp& stamp, const std::filesystem::path& path);
std::pair<PromptVector, ArtifactStamp> load_prompt(const std::filesystem::path& path);
void round_to_float(PromptVector& prompt);

}  // namespace unadapt
