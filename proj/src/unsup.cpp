#include "unadapt/unsup.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "unadapt/error.hpp"
#include "unadapt/kernels.hpp"

namespace unadapt {

namespace {

Embedding embed_view(const Image& view, const PromptVector* prompt, const VisualEncoder& encoder) {
  return encoder.forward(encoder.tokenize(view), prompt).embedding;
}

kernels::Exec exec_of(bool parallel) { return parallel ? kernels::Exec::kParallel : kernels::Exec::kSerial; }

}  // namespace

Vector weak_branch(const Image& x, const std::string& item_id, std::size_t epoch, const Adapter& weak_adapter,
                   const AugmentationPolicy& weak_policy, const VisualEncoder& encoder) {
  if (weak_policy.kind() != AugmentationKind::kWeak) throw ValidationError("weak branch needs a weak policy");
  const auto shape = encoder.input_shape();
  const Image view = weak_policy.apply(x, item_id, epoch, shape.height, shape.width);
  return weak_adapter.forward(embed_view(view, nullptr, encoder).values);
}

Vector strong_branch(const Image& x, const std::string& item_id, std::size_t epoch, const Adapter& strong_adapter,
                     const PromptVector& prompt, const AugmentationPolicy& strong_policy,
                     const VisualEncoder& encoder) {
  if (strong_policy.kind() != AugmentationKind::kStrong) {
    throw ValidationError("strong branch needs a strong policy");
  }
  if (!encoder.spec().prompt_capable()) {
    throw ValidationError("encoder '" + encoder.spec().name + "' cannot carry a trainable prompt");
  }
  const auto shape = encoder.input_shape();
  const Image view = strong_policy.apply(x, item_id, epoch, shape.height, shape.width);
  return strong_adapter.forward(embed_view(view, &prompt, encoder).values);
}

std::size_t stage2_parameter_count(const EncoderSpec& spec, const Adapter& adapter) {
  return spec.prompt_parameter_count() + adapter.parameter_count();
}

std::string to_string(PromptInit p) { return p == PromptInit::kZeros ? "zeros" : "small_gaussian"; }

PromptInit prompt_init_from_string(const std::string& s) {
  if (s == "zeros") return PromptInit::kZeros;
  if (s == "small_gaussian" || s == "gaussian") return PromptInit::kSmallGaussian;
  throw ValidationError("unknown prompt init '" + s + "' (expected zeros or small_gaussian)");
}

void Stage2Config::validate() const {
  loss.validate();
  optimizer.validate();
  augment.validate();
  if (batch_size == 0) throw ValidationError("stage2: batch size must be positive");
  if (!(prompt_init_std >= 0.0) || !std::isfinite(prompt_init_std)) {
    throw ValidationError("stage2: prompt init std must be finite and non-negative");
  }
  if (!(prompt_lr_scale >= 0.0) || !std::isfinite(prompt_lr_scale)) {
    throw ValidationError("stage2: prompt lr scale must be finite and non-negative");
  }
}

Stage2Trainer::Stage2Trainer(const Adapter& pretrained, std::shared_ptr<const VisualEncoder> encoder,
                             Stage2Config cfg)
    : weak_(pretrained.clone()),
      strong_(pretrained.clone()),
      encoder_(std::move(encoder)),
      cfg_(std::move(cfg)),
      weak_policy_(AugmentationPolicy::weak(cfg_.seed, cfg_.augment)),
      strong_policy_(AugmentationPolicy::strong(cfg_.seed, cfg_.augment)) {
  cfg_.validate();
  if (!encoder_) throw ValidationError("stage2: no visual encoder");
  const auto& spec = encoder_->spec();
  if (!spec.prompt_capable()) {
    throw ValidationError("encoder '" + spec.name + "' lacks prompt injection or input gradients");
  }
  if (pretrained.dim() != spec.embed_dim) {
    throw ShapeError("adapter dim " + std::to_string(pretrained.dim()) + " does not match encoder embed dim " +
                     std::to_string(spec.embed_dim));
  }
  if (pretrained.num_classes() < 2) throw ValidationError("stage2: need at least two classes");
  prompt_ = cfg_.prompt_init == PromptInit::kZeros ? PromptVector::zeros(spec)
                                                   : PromptVector::gaussian(spec, cfg_.prompt_init_std, cfg_.seed);
  opt_ = make_optimizer(cfg_.optimizer);
}

std::vector<Stage2Trainer::View> Stage2Trainer::forward(const std::vector<const DataItem*>& batch,
                                                        std::size_t epoch) const {
  const auto shape = encoder_->input_shape();
  std::vector<View> views(batch.size());
  kernels::for_each_index(batch.size(), exec_of(cfg_.parallel), [&](std::size_t i) {
    const DataItem& item = *batch[i];
    View& v = views[i];
    v.item_id = item.item_id;
    const Image w = weak_policy_.apply(item.image, item.item_id, epoch, shape.height, shape.width);
    v.weak_embedding = embed_view(w, nullptr, *encoder_).values;
    const Image s = strong_policy_.apply(item.image, item.item_id, epoch, shape.height, shape.width);
    v.strong = encoder_->forward(encoder_->tokenize(s), &prompt_);
  });
  return views;
}

namespace {

struct Objectives {
  std::vector<Stage2Loss> losses;
  Matrix weak_inputs, strong_inputs;  // B x dim
};

Objectives evaluate(const std::vector<Vector>& weak_emb, const std::vector<const Vector*>& strong_emb,
                    const Adapter& weak, const Adapter& strong, const LossConfig& loss) {
  const std::size_t n = weak_emb.size(), dim = weak.dim();
  Objectives o;
  o.weak_inputs = Matrix(n, dim);
  o.strong_inputs = Matrix(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(weak_emb[i].begin(), weak_emb[i].end(), o.weak_inputs.row(i).begin());
    std::copy(strong_emb[i]->begin(), strong_emb[i]->end(), o.strong_inputs.row(i).begin());
  }
  Matrix wl, sl;
  kernels::batch_logits(weak.weights(), weak.bias(), o.weak_inputs, wl, kernels::Exec::kSerial);
  kernels::batch_logits(strong.weights(), strong.bias(), o.strong_inputs, sl, kernels::Exec::kSerial);
  o.losses.reserve(n);
  for (std::size_t i = 0; i < n; ++i) o.losses.push_back(stage2_objective(wl.row(i), sl.row(i), loss));
  return o;
}

void check_finite(const std::vector<Stage2Loss>& losses, const std::vector<std::string>& ids, double lr) {
  for (const auto& l : losses) {
    if (std::isfinite(l.weak_loss) && std::isfinite(l.strong_loss)) continue;
    std::ostringstream ss;
    ss << "stage2: non-finite loss (lr " << lr << "); last batch ids:";
    for (const auto& id : ids) ss << " " << id;
    throw NumericalError(ss.str());
  }
}

}  // namespace

BatchStats Stage2Trainer::apply(const std::vector<View>& views, bool update_weak, bool update_strong) {
  const std::size_t n = views.size();
  BatchStats stats;
  if (n == 0) return stats;
  std::vector<Vector> weak_emb(n);
  std::vector<const Vector*> strong_emb(n);
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    weak_emb[i] = views[i].weak_embedding;
    strong_emb[i] = &views[i].strong.embedding.values;
    ids[i] = views[i].item_id;
  }
  const Objectives o = evaluate(weak_emb, strong_emb, weak_, strong_, cfg_.loss);
  check_finite(o.losses, ids, opt_->learning_rate());

  const double inv = 1.0 / static_cast<double>(n);
  for (const auto& l : o.losses) {
    stats.weak_loss += l.weak_loss * inv;
    stats.strong_loss += l.strong_loss * inv;
    stats.strong_consistency += l.strong_consistency * inv;
    stats.entropy += l.strong_entropy * inv;
    stats.masked += l.masked;
    stats.pseudo_labels.push_back(l.pseudo_label);
  }

  const std::size_t C = weak_.num_classes();
  const auto exec = exec_of(cfg_.parallel);
  auto adapter_grad = [&](const Adapter& a, const Matrix& inputs, bool weak_side) {
    Matrix g(n, C);
    for (std::size_t i = 0; i < n; ++i) {
      const Vector& src = weak_side ? o.losses[i].weak_grad : o.losses[i].strong_grad;
      std::copy(src.begin(), src.end(), g.row(i).begin());
    }
    AdapterGradient grad(a);
    kernels::accumulate_outer(g, inputs, grad.weights, exec);
    if (a.has_bias())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < C; ++c) grad.bias[c] += g(i, c);
    grad.scale(inv);
    return grad;
  };

  // Gradients are taken before any parameter moves, so joint mode sees one
  // consistent forward pass.
  std::optional<AdapterGradient> weak_grad, strong_grad;
  Matrix prompt_grad;
  if (update_weak) weak_grad = adapter_grad(weak_, o.weak_inputs, true);
  if (update_strong) {
    strong_grad = adapter_grad(strong_, o.strong_inputs, false);
    std::vector<Matrix> per_item(n);
    kernels::for_each_index(n, exec, [&](std::size_t i) {
      const Vector up = strong_.input_gradient(o.losses[i].strong_grad);
      per_item[i] = encoder_->backward(views[i].strong, up, false).prompt;
    });
    prompt_grad = Matrix(prompt_.hidden_size(), prompt_.columns());
    auto acc = prompt_grad.values();
    for (const auto& m : per_item) {
      auto src = m.values();
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += src[k];
    }
    for (double& v : acc) v *= inv * cfg_.prompt_lr_scale;
  }

  if (weak_grad) apply_step(*opt_, "weak", weak_, *weak_grad);
  if (strong_grad) {
    apply_step(*opt_, "strong", strong_, *strong_grad);
    opt_->step("prompt", prompt_.values().values(), prompt_grad.values());
  }
  return stats;
}

BatchStats Stage2Trainer::weak_update(const std::vector<const DataItem*>& batch, std::size_t epoch) {
  return apply(forward(batch, epoch), true, false);
}

BatchStats Stage2Trainer::strong_update(const std::vector<const DataItem*>& batch, std::size_t epoch) {
  return apply(forward(batch, epoch), false, true);
}

BatchStats Stage2Trainer::joint_update(const std::vector<const DataItem*>& batch, std::size_t epoch) {
  return apply(forward(batch, epoch), true, true);
}

BatchStats Stage2Trainer::train_batch(const std::vector<const DataItem*>& batch, std::size_t epoch) {
  const auto views = forward(batch, epoch);
  if (cfg_.joint_update) return apply(views, true, true);
  const BatchStats first = apply(views, true, false);
  // Pseudo-labels for step (ii) come from the freshly updated weak branch;
  // the strong views are unchanged because g_s and p have not moved yet.
  BatchStats second = apply(views, false, true);
  second.weak_loss = first.weak_loss;
  return second;
}

std::size_t infer(const Image& x, const Adapter& adapter, const PromptVector& prompt, const VisualEncoder& encoder) {
  const auto shape = encoder.input_shape();
  return argmax(adapter.forward(embed_view(inference_view(x, shape.height, shape.width), &prompt, encoder).values));
}

std::vector<std::size_t> infer_batch(const std::vector<DataItem>& items, const Adapter& adapter,
                                     const PromptVector& prompt, const VisualEncoder& encoder, bool parallel) {
  std::vector<std::size_t> out(items.size());
  kernels::for_each_index(items.size(), exec_of(parallel),
                          [&](std::size_t i) { out[i] = infer(items[i].image, adapter, prompt, encoder); });
  return out;
}

namespace {

double labelled_accuracy(const std::vector<DataItem>& items, const Adapter& adapter, const PromptVector& prompt,
                         const VisualEncoder& encoder, bool parallel) {
  std::size_t n = 0, hits = 0;
  const auto pred = infer_batch(items, adapter, prompt, encoder, parallel);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].label) continue;
    ++n;
    hits += pred[i] == *items[i].label;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

Stage2Result train_stage2(const std::vector<DataItem>& train, const Adapter& pretrained,
                          std::shared_ptr<const VisualEncoder> encoder, const Stage2Config& cfg,
                          const std::vector<DataItem>& val) {
  Stage2Trainer trainer(pretrained, encoder, cfg);
  Stage2Result result{trainer.strong_adapter(), trainer.prompt(), {}};
  const bool has_val = std::any_of(val.begin(), val.end(), [](const auto& d) { return d.label.has_value(); });
  result.log.selection = has_val ? "val-accuracy" : "final-epoch";
  result.log.selected_val_accuracy = result.log.final_val_accuracy =
      has_val ? labelled_accuracy(val, pretrained, trainer.prompt(), *encoder, cfg.parallel)
              : std::numeric_limits<double>::quiet_NaN();
  if (cfg.epochs > 0 && train.empty()) throw DataError("stage2: empty training split");

  // Reference pseudo-labels for the first epoch's churn: the pretrained
  // adapter on the deterministic view.
  std::vector<std::size_t> previous(train.size());
  {
    const PromptVector none = PromptVector::zeros(encoder->spec());
    previous = infer_batch(train, pretrained, none, *encoder, cfg.parallel);
  }

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, "stage2-order", epoch));
    std::shuffle(order.begin(), order.end(), rng);

    Stage2Epoch e;
    e.epoch = epoch;
    std::size_t changed = 0, masked = 0;
    const double inv = 1.0 / static_cast<double>(train.size());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const DataItem*> batch;
      for (std::size_t b = start; b < end; ++b) batch.push_back(&train[order[b]]);
      const BatchStats s = trainer.train_batch(batch, epoch);
      const double w = static_cast<double>(end - start) * inv;
      e.weak_loss += s.weak_loss * w;
      e.strong_loss += s.strong_loss * w;
      e.strong_consistency += s.strong_consistency * w;
      e.mean_entropy += s.entropy * w;
      masked += s.masked;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        changed += s.pseudo_labels[b - start] != previous[idx];
        previous[idx] = s.pseudo_labels[b - start];
      }
    }
    e.churn = static_cast<double>(changed) * inv;
    e.masked_fraction = static_cast<double>(masked) * inv;
    e.val_accuracy = has_val ? labelled_accuracy(val, trainer.strong_adapter(), trainer.prompt(), *encoder, cfg.parallel)
                             : std::numeric_limits<double>::quiet_NaN();
    spdlog::debug("stage2 epoch {} weak {:.5f} strong {:.5f} entropy {:.5f} churn {:.4f} val {:.4f}", epoch,
                  e.weak_loss, e.strong_loss, e.mean_entropy, e.churn, e.val_accuracy);
    result.log.epochs.push_back(e);

    // Epoch 0 (the pretrained adapter) competes too; ties keep the earlier epoch.
    if (!has_val || e.val_accuracy > result.log.selected_val_accuracy) {
      result.adapter = trainer.strong_adapter();
      result.prompt = trainer.prompt();
      result.log.selected_epoch = epoch;
      result.log.selected_val_accuracy = e.val_accuracy;
    }
    result.log.final_val_accuracy = e.val_accuracy;
  }
  return result;
}

std::string to_string(Distance d) { return d == Distance::kCosine ? "cosine" : "euclidean"; }

Distance distance_from_string(const std::string& s) {
  if (s == "cosine") return Distance::kCosine;
  if (s == "euclidean") return Distance::kEuclidean;
  throw ValidationError("unknown distance '" + s + "' (expected cosine or euclidean)");
}

double distance(std::span<const double> a, std::span<const double> b, Distance d) {
  if (a.size() != b.size()) throw ShapeError("distance: length mismatch");
  if (d == Distance::kEuclidean) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  }
  const double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine distance of a zero vector");
  return 1.0 - dot(a, b) / (na * nb);
}

double supervised_alignment_loss(const Image& x, const std::string& label, const Adapter& adapter,
                                 const PromptVector& prompt, const DescriptionCorpus& corpus,
                                 const TextEncoder& text_encoder, const VisualEncoder& visual_encoder, Distance d) {
  if (!corpus.catalog().contains(label)) throw DataError("label '" + label + "' is not in the corpus");
  const auto& descs = corpus.descriptions(label);
  Vector text_side(adapter.num_classes(), 0.0);
  for (const auto& desc : descs) {
    const Vector out = adapter.forward(text_encoder.encode(desc.text).values);
    for (std::size_t c = 0; c < out.size(); ++c) text_side[c] += out[c] / static_cast<double>(descs.size());
  }
  const auto shape = visual_encoder.input_shape();
  const Vector visual_side =
      adapter.forward(embed_view(inference_view(x, shape.height, shape.width), &prompt, visual_encoder).values);
  return distance(visual_side, text_side, d);
}

void round_to_float(PromptVector& prompt) {
  for (double& v : prompt.values().values()) v = static_cast<float>(v);
}

void save_prompt(const PromptVector& prompt, const ArtifactStamp& stamp, const std::filesystem::path& path) {
  BinaryWriter w;
  w.bytes("UNPRMT01");
  w.str(prompt.encoder_ref());
  w.u32(static_cast<std::uint32_t>(prompt.hidden_size()));
  w.u32(static_cast<std::uint32_t>(prompt.columns()));
  w.str(stamp.config_hash);
  w.u64(stamp.seed);
  for (double v : prompt.values().values()) w.f32(static_cast<float>(v));
  write_file_atomic(path, w.buffer());
}

std::pair<PromptVector, ArtifactStamp> load_prompt(const std::filesystem::path& path) {
  BinaryReader r(read_file(path), path.string());
  if (r.bytes(8) != "UNPRMT01") throw ParseError(path.string() + ": not a prompt checkpoint");
  std::string ref = r.str();
  const std::size_t h = r.u32(), cols = r.u32();
  ArtifactStamp stamp;
  stamp.config_hash = r.str();
  stamp.seed = r.u64();
  PromptVector p(h, cols, std::move(ref));
  for (double& v : p.values().values()) v = r.f32();
  if (!r.at_end()) throw ParseError(path.string() + ": trailing bytes after prompt payload");
  if (!all_finite(p.values().values())) throw DataError(path.string() + ": prompt has non-finite entries");
  return {std::move(p), std::move(stamp)};
}

}  // namespace unadapt
