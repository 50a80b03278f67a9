#include "unadapt/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "unadapt/error.hpp"
#include "unadapt/losses.hpp"

namespace unadapt {

Adapter::Adapter(std::size_t num_classes, std::size_t dim, bool with_bias, std::string catalog_id)
    : weights_(num_classes, dim),
      bias_(with_bias ? num_classes : 0, 0.0),
      has_bias_(with_bias),
      catalog_id_(std::move(catalog_id)) {
  if (num_classes == 0 || dim == 0) throw ValidationError("adapter needs at least one class and dimension");
}

Vector Adapter::forward(std::span<const double> embedding) const {
  if (embedding.size() != dim()) {
    throw ShapeError("adapter expects dim " + std::to_string(dim()) + ", got " +
                     std::to_string(embedding.size()));
  }
  Vector out(num_classes());
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = dot(weights_.row(c), embedding) + (has_bias_ ? bias_[c] : 0.0);
  }
  return out;
}

Vector Adapter::input_gradient(std::span<const double> upstream) const {
  if (upstream.size() != num_classes()) throw ShapeError("adapter: upstream gradient length mismatch");
  Vector out(dim(), 0.0);
  for (std::size_t c = 0; c < num_classes(); ++c) {
    const auto row = weights_.row(c);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += upstream[c] * row[j];
  }
  return out;
}

void AdapterGradient::add(std::span<const double> embedding, std::span<const double> dlogits) {
  if (embedding.size() != weights.cols() || dlogits.size() != weights.rows()) {
    throw ShapeError("adapter gradient: shape mismatch");
  }
  for (std::size_t c = 0; c < weights.rows(); ++c) {
    auto row = weights.row(c);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += dlogits[c] * embedding[j];
    if (!bias.empty()) bias[c] += dlogits[c];
  }
}

void AdapterGradient::scale(double s) {
  for (double& v : weights.values()) v *= s;
  for (double& v : bias) v *= s;
}

void apply_step(Optimizer& opt, const std::string& slot, Adapter& adapter, const AdapterGradient& grad) {
  opt.step(slot + ".weights", adapter.weights().values(), grad.weights.values());
  if (adapter.has_bias()) opt.step(slot + ".bias", adapter.bias(), grad.bias);
}

void Stage1Config::validate() const {
  optimizer.validate();
  if (epochs > 100000) throw ValidationError("stage1: unreasonable epoch count");
  if (batch_size == 0) throw ValidationError("stage1: batch size must be positive");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ValidationError("stage1: holdout fraction must lie in [0, 1)");
  }
}

double Stage1Report::final_holdout_accuracy() const {
  return epochs.empty() ? std::numeric_limits<double>::quiet_NaN() : epochs.back().holdout_accuracy;
}

double Stage1Report::final_train_accuracy() const {
  return epochs.empty() ? std::numeric_limits<double>::quiet_NaN() : epochs.back().train_accuracy;
}

double accuracy(const Adapter& adapter, const std::vector<LabeledEmbedding>& samples) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hits = 0;
  for (const auto& s : samples) hits += argmax(adapter.forward(s.values)) == s.label;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

namespace {

double mean_ce(const Adapter& adapter, const std::vector<LabeledEmbedding>& samples) {
  double total = 0.0;
  for (const auto& s : samples) {
    total += cross_entropy(adapter.forward(s.values), TargetDistribution::one_hot(s.label, adapter.num_classes()))
                 .value;
  }
  return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

}  // namespace

std::pair<Adapter, Stage1Report> pretrain_adapter(const ClassCatalog& catalog,
                                                  const std::vector<LabeledEmbedding>& samples,
                                                  const Stage1Config& cfg) {
  cfg.validate();
  const std::size_t C = catalog.size();
  if (C < 2) throw ValidationError("stage1: catalog needs at least two classes");
  if (samples.empty()) throw DataError("stage1: no training descriptions");
  const std::size_t dim = samples.front().values.size();

  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label >= C) throw DataError("stage1: sample label out of range");
    if (samples[i].values.size() != dim) throw ShapeError("stage1: embeddings differ in dimension");
    by_class[samples[i].label].push_back(i);
  }

  // Stratified holdout: floor(n_k * f) descriptions of each class.
  std::vector<LabeledEmbedding> train, holdout;
  std::string starved;
  for (std::size_t k = 0; k < C; ++k) {
    auto idx = by_class[k];
    std::mt19937_64 rng(derive_seed(cfg.seed, "stage1-holdout", k));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_hold = static_cast<std::size_t>(std::floor(static_cast<double>(idx.size()) * cfg.holdout_fraction));
    if (idx.size() - n_hold == 0) {
      starved += (starved.empty() ? "" : ", ") + catalog.labels()[k] + " (" + std::to_string(idx.size()) + ")";
    }
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::sort(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
    for (std::size_t j = 0; j < idx.size(); ++j) (j < n_hold ? holdout : train).push_back(samples[idx[j]]);
  }
  if (!starved.empty()) throw DataError("stage1: no training descriptions left for: " + starved);

  Adapter adapter(C, dim, cfg.bias, catalog.dataset_id());
  auto opt = make_optimizer(cfg.optimizer);

  Stage1Report report;
  report.num_train = train.size();
  report.num_holdout = holdout.size();
  report.initial_train_loss = mean_ce(adapter, train);

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, "stage1-order", epoch));
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      AdapterGradient grad(adapter);
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = train[order[b]];
        const auto loss = cross_entropy(adapter.forward(s.values), TargetDistribution::one_hot(s.label, C));
        grad.add(s.values, loss.grad);
      }
      grad.scale(1.0 / static_cast<double>(end - start));
      apply_step(*opt, "adapter", adapter, grad);
    }
    if (!all_finite(adapter.weights().values())) {
      throw NumericalError("stage1: non-finite weights after epoch " + std::to_string(epoch) +
                           " (lr " + std::to_string(opt->learning_rate()) + ")");
    }

    Stage1Epoch e;
    e.epoch = epoch;
    e.train_loss = mean_ce(adapter, train);
    e.train_accuracy = accuracy(adapter, train);
    e.holdout_accuracy = accuracy(adapter, holdout);
    spdlog::debug("stage1 epoch {} loss {:.6f} train acc {:.4f} holdout acc {:.4f}", epoch, e.train_loss,
                  e.train_accuracy, e.holdout_accuracy);
    report.epochs.push_back(e);
  }
  return {std::move(adapter), std::move(report)};
}

std::vector<LabeledEmbedding> embed_corpus(const DescriptionCorpus& corpus, const TextEncoder& encoder) {
  std::vector<LabeledEmbedding> out;
  const auto& labels = corpus.catalog().labels();
  for (std::size_t k = 0; k < labels.size(); ++k) {
    for (const auto& d : corpus.descriptions(labels[k])) out.push_back({k, encoder.encode(d.text).values});
  }
  return out;
}

std::pair<Adapter, Stage1Report> pretrain_adapter(const DescriptionCorpus& corpus, const TextEncoder& encoder,
                                                  const Stage1Config& cfg) {
  return pretrain_adapter(corpus.catalog(), embed_corpus(corpus, encoder), cfg);
}

std::string description_id(const std::string& label, std::size_t index, const std::string& text) {
  return label + "/" + std::to_string(index) + "/" + hex64(fnv1a(text));
}

void round_to_float(Adapter& adapter) {
  for (double& v : adapter.weights().values()) v = static_cast<float>(v);
  for (double& v : adapter.bias()) v = static_cast<float>(v);
}

void save_adapter(const Adapter& adapter, const ArtifactStamp& stamp, const std::filesystem::path& path) {
  BinaryWriter w;
  w.bytes("UNADPT01");
  w.u32(static_cast<std::uint32_t>(adapter.num_classes()));
  w.u32(static_cast<std::uint32_t>(adapter.dim()));
  w.u8(adapter.has_bias() ? 1 : 0);
  w.str(adapter.catalog_id());
  w.str(stamp.config_hash);
  w.u64(stamp.seed);
  for (double v : adapter.weights().values()) w.f32(static_cast<float>(v));
  for (double v : adapter.bias()) w.f32(static_cast<float>(v));
  write_file_atomic(path, w.buffer());
}

std::pair<Adapter, ArtifactStamp> load_adapter(const std::filesystem::path& path) {
  BinaryReader r(read_file(path), path.string());
  if (r.bytes(8) != "UNADPT01") throw ParseError(path.string() + ": not an adapter checkpoint");
  const std::size_t C = r.u32();
  const std::size_t dim = r.u32();
  const bool bias = r.u8() != 0;
  std::string catalog_id = r.str();
  ArtifactStamp stamp;
  stamp.config_hash = r.str();
  stamp.seed = r.u64();
  if (C == 0 || dim == 0) throw ParseError(path.string() + ": empty adapter shape");
  Adapter a(C, dim, bias, std::move(catalog_id));
  for (double& v : a.weights().values()) v = r.f32();
  for (double& v : a.bias()) v = r.f32();
  if (!r.at_end()) throw ParseError(path.string() + ": trailing bytes after adapter payload");
  if (!all_finite(a.weights().values()) || !all_finite(a.bias())) {
    throw DataError(path.string() + ": adapter contains non-finite weights");
  }
  return {std::move(a), std::move(stamp)};
}

}  // namespace unadapt
