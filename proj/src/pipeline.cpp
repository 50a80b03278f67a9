#include "unadapt/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "unadapt/error.hpp"
#include "unadapt/kernels.hpp"
#include "unadapt/util.hpp"

namespace unadapt {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kPrepare: return "prepare";
    case Stage::kStage1: return "stage1";
    case Stage::kStage2: return "stage2";
    default: return "eval";
  }
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::kPrepare, Stage::kStage1, Stage::kStage2, Stage::kEval})
    if (to_string(st) == s) return st;
  throw ValidationError("unknown stage '" + s + "' (expected prepare, stage1, stage2 or eval)");
}

namespace {

class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    const fs::path p = dir / ".lock";
    fd_ = ::open(p.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw RuntimeFailure("cannot open lock file " + p.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw RuntimeFailure("run directory " + dir.string() + " is locked by another process");
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

std::string text_header(const ArtifactStamp& s) {
  return "# config_hash: " + s.config_hash + "\n# seed: " + std::to_string(s.seed) + "\n";
}

ordered_json stamp_json(const ArtifactStamp& s) {
  ordered_json j;
  j["config_hash"] = s.config_hash;
  j["seed"] = s.seed;
  return j;
}

void write_json(const fs::path& p, const ordered_json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

ordered_json read_json(const fs::path& p) {
  try {
    return ordered_json::parse(read_file(p));
  } catch (const ordered_json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

// Rewrites the provenance of an artifact without touching its payload.
void restamp(const fs::path& p, const ArtifactStamp& s) {
  const auto ext = p.extension().string();
  if (ext == ".json") {
    auto j = read_json(p);
    if (j.value("config_hash", "") == s.config_hash && j.value("seed", std::uint64_t{0}) == s.seed) return;
    j["config_hash"] = s.config_hash;
    j["seed"] = s.seed;
    write_json(p, j);
  } else if (ext == ".bin") {
    const std::string head = read_file(p).substr(0, 8);
    if (head == "UNADPT01") {
      auto [a, old] = load_adapter(p);
      if (old != s) save_adapter(a, s, p);
    } else if (head == "UNPRMT01") {
      auto [pr, old] = load_prompt(p);
      if (old != s) save_prompt(pr, s, p);
    }
  } else {
    std::string text = read_file(p);
    std::string out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      if (line.rfind("# config_hash: ", 0) == 0) line = "# config_hash: " + s.config_hash;
      else if (line.rfind("# seed: ", 0) == 0) line = "# seed: " + std::to_string(s.seed);
      out += line + "\n";
    }
    if (out != text) write_file_atomic(p, out);
  }
}

const std::map<Stage, std::vector<std::string>> kArtifacts = {
    {Stage::kPrepare, {"splits.csv", "prepare.json"}},
    {Stage::kStage1, {"adapter_stage1.bin", "stage1.json"}},
    {Stage::kStage2, {"adapter.bin", "prompt.bin", "stage2.json"}},
    {Stage::kEval, {"eval.json", "eval.txt", "eval.tsv", "alignment.tsv", "plot_gain.tsv", "plot_projection.tsv"}},
};

std::string file_hash(const fs::path& p) { return hex64(fnv1a(read_file(p))); }

std::string hash_of(const std::string& s) { return hex64(fnv1a(s)); }

std::map<Stage, std::string> stage_hashes(const RunConfig& cfg) {
  std::map<Stage, std::string> h;
  h[Stage::kPrepare] = hash_of(fmt::format("prepare\n{}\n{}\nsplit={},{},{}\nstratified={}\nseed={}\n",
                                           file_hash(cfg.manifest), file_hash(cfg.corpus), cfg.split.train,
                                           cfg.split.val, cfg.split.test, cfg.stratified, cfg.seed));
  h[Stage::kStage1] = hash_of(h[Stage::kPrepare] + cfg.section_ini("encoders") + cfg.section_ini("stage1"));
  h[Stage::kStage2] = hash_of(h[Stage::kStage1] + cfg.section_ini("stage2") + cfg.section_ini("loss") +
                              cfg.section_ini("augment"));
  h[Stage::kEval] = hash_of(h[Stage::kStage2] + "eval");
  return h;
}

struct Inputs {
  DescriptionCorpus corpus;
  EncoderSet encoders;
};

Inputs load_inputs(const RunConfig& cfg) {
  DescriptionCorpus corpus = load_corpus(cfg.corpus);
  if (corpus.catalog().size() < 2) throw ValidationError("catalog needs at least two classes");
  EncoderSet enc = make_encoders(cfg.encoders);
  return {std::move(corpus), std::move(enc)};
}

Manifest load_splits(const fs::path& dir) { return load_manifest(dir / "splits.csv"); }

// ---- stages ----

void run_prepare(const RunConfig& cfg, const fs::path& dir, const ArtifactStamp& stamp) {
  const DescriptionCorpus corpus = load_corpus(cfg.corpus);
  const ClassCatalog& catalog = corpus.catalog();
  if (catalog.size() < 2) throw ValidationError("catalog needs at least two classes");
  const Manifest manifest = load_manifest(cfg.manifest);
  if (manifest.items.empty()) throw DataError("manifest " + cfg.manifest.string() + " is empty");
  for (const auto& it : manifest.items) {
    if (it.label && !catalog.contains(*it.label)) {
      throw DataError("manifest item '" + it.item_id + "' has label '" + *it.label + "' outside the catalog");
    }
  }

  std::vector<std::string> warnings;
  const bool preassigned = std::all_of(manifest.items.begin(), manifest.items.end(),
                                       [](const auto& i) { return i.split != Split::kUnassigned; });
  Manifest split;
  if (preassigned) {
    split = manifest;
  } else {
    SplitResult r = split_dataset(manifest, cfg.split, cfg.seed, cfg.stratified);
    warnings = r.warnings;
    split = assign_splits(r);
  }
  for (auto& it : split.items) it.path = fs::absolute(split.resolve(it)).lexically_normal().string();
  for (const auto& w : warnings) spdlog::warn("{}", w);
  write_file_atomic(dir / "splits.csv", text_header(stamp) + manifest_to_csv(split));

  ordered_json j = stamp_json(stamp);
  j["dataset_id"] = catalog.dataset_id();
  j["labels"] = catalog.labels();
  j["generator"] = corpus.generator();
  j["descriptions_per_class"] = corpus.counts_per_class();
  j["split_source"] = preassigned ? "manifest" : "computed";
  j["stratified"] = cfg.stratified;
  ordered_json counts;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    ordered_json per;
    std::size_t total = 0;
    for (const auto& label : catalog.labels()) per[label] = 0;
    for (const auto& it : split.items) {
      if (it.split != s) continue;
      ++total;
      if (it.label) per[*it.label] = per[*it.label].get<std::size_t>() + 1;
    }
    counts[to_string(s)] = {{"total", total}, {"per_class", per}};
  }
  j["splits"] = counts;
  j["warnings"] = warnings;
  write_json(dir / "prepare.json", j);
}

void run_stage1(const RunConfig& cfg, const fs::path& dir, const ArtifactStamp& stamp) {
  const Inputs in = load_inputs(cfg);
  auto [adapter, report] = pretrain_adapter(in.corpus, *in.encoders.text, cfg.stage1);
  round_to_float(adapter);
  save_adapter(adapter, stamp, dir / "adapter_stage1.bin");

  ordered_json j = stamp_json(stamp);
  j["text_encoder"] = in.encoders.text->spec().name;
  j["encoder_warnings"] = in.encoders.warnings;
  j["num_classes"] = adapter.num_classes();
  j["parameter_count"] = adapter.parameter_count();
  j["num_train"] = report.num_train;
  j["num_holdout"] = report.num_holdout;
  j["initial_train_loss"] = report.initial_train_loss;
  j["final_train_accuracy"] = report.final_train_accuracy();
  j["final_holdout_accuracy"] = report.final_holdout_accuracy();
  ordered_json epochs = ordered_json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"holdout_accuracy", e.holdout_accuracy}});
  }
  j["epochs"] = epochs;
  write_json(dir / "stage1.json", j);
  spdlog::info("stage1: holdout accuracy {:.4f} over {} descriptions", report.final_holdout_accuracy(),
               report.num_holdout);
}

void run_stage2(const RunConfig& cfg, const fs::path& dir, const ArtifactStamp& stamp) {
  const Inputs in = load_inputs(cfg);
  // Always start from the checkpoint so a resumed run sees the same weights.
  const Adapter pretrained = load_adapter(dir / "adapter_stage1.bin").first;
  const Manifest splits = load_splits(dir);
  auto train = load_items(splits, Split::kTrain, in.corpus.catalog());
  for (auto& it : train) it.label.reset();  // the optimiser never sees labels
  const auto val = load_items(splits, Split::kVal, in.corpus.catalog());

  Stage2Result r = train_stage2(train, pretrained, in.encoders.visual, cfg.stage2, val);
  round_to_float(r.adapter);
  round_to_float(r.prompt);
  save_adapter(r.adapter, stamp, dir / "adapter.bin");
  save_prompt(r.prompt, stamp, dir / "prompt.bin");

  const auto& spec = in.encoders.visual->spec();
  ordered_json j = stamp_json(stamp);
  j["visual_encoder"] = spec.name;
  j["hidden_size"] = spec.hidden_size;
  j["num_tokens"] = spec.num_tokens;
  j["prompt_parameters"] = r.prompt.parameter_count();
  j["adapter_parameters"] = r.adapter.parameter_count();
  j["trainable_parameters"] = stage2_parameter_count(spec, r.adapter);
  j["num_train"] = train.size();
  j["selection"] = r.log.selection;
  j["selected_epoch"] = r.log.selected_epoch;
  j["selected_val_accuracy"] = r.log.selected_val_accuracy;
  j["final_val_accuracy"] = r.log.final_val_accuracy;
  ordered_json epochs = ordered_json::array();
  for (const auto& e : r.log.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"weak_loss", e.weak_loss},
                      {"strong_loss", e.strong_loss},
                      {"strong_consistency", e.strong_consistency},
                      {"mean_entropy", e.mean_entropy},
                      {"churn", e.churn},
                      {"masked_fraction", e.masked_fraction},
                      {"val_accuracy", e.val_accuracy}});
  }
  j["epochs"] = epochs;
  write_json(dir / "stage2.json", j);
  spdlog::info("stage2: selected epoch {} by {} (val accuracy {:.4f})", r.log.selected_epoch, r.log.selection,
               r.log.selected_val_accuracy);
}

ordered_json report_json(const EvalReport& r) {
  ordered_json j;
  j["model_id"] = r.model_id;
  j["accuracy"] = r.accuracy;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["confusion"] = r.confusion;
  j["n_test"] = r.n_test;
  return j;
}

void run_eval(const RunConfig& cfg, const fs::path& dir, const ArtifactStamp& stamp) {
  const Inputs in = load_inputs(cfg);
  const ClassCatalog& catalog = in.corpus.catalog();
  const Adapter stage1 = load_adapter(dir / "adapter_stage1.bin").first;
  const Adapter final_adapter = load_adapter(dir / "adapter.bin").first;
  const PromptVector prompt = load_prompt(dir / "prompt.bin").first;
  const auto& visual = *in.encoders.visual;
  const auto test = load_items(load_splits(dir), Split::kTest, catalog);
  if (test.empty()) throw DataError("eval: the test split is empty");

  const PromptVector zero = PromptVector::zeros(visual.spec());
  const EvalReport base = evaluate(stage1, zero, visual, test, catalog, "stage1-adapter", cfg.parallel);
  const EvalReport fin = evaluate(final_adapter, prompt, visual, test, catalog, "stage2-adapter+prompt", cfg.parallel);

  // Alignment of raw encoder outputs: descriptions vs. test images.
  std::vector<std::vector<Vector>> text(catalog.size());
  for (std::size_t k = 0; k < catalog.size(); ++k)
    for (const auto& d : in.corpus.descriptions(catalog.labels()[k]))
      text[k].push_back(in.encoders.text->encode(d.text).values);
  std::vector<Image> images;
  for (const auto& it : test) images.push_back(it.image);
  const auto exec = cfg.parallel ? kernels::Exec::kParallel : kernels::Exec::kSerial;
  const auto plain = kernels::encode_images(visual, images, nullptr, exec);
  std::vector<std::pair<std::size_t, Vector>> vis;
  for (std::size_t i = 0; i < test.size(); ++i) vis.emplace_back(*test[i].label, plain[i].values);
  std::vector<std::size_t> ks;
  for (std::size_t k : {1, 3, 5})
    if (k <= vis.size()) ks.push_back(k);
  const AlignmentReport align = alignment_report(catalog.dataset_id(), text, vis, ks);

  ordered_json j = stamp_json(stamp);
  j["dataset_id"] = catalog.dataset_id();
  j["stage1"] = report_json(base);
  j["final"] = report_json(fin);
  j["gain"] = {{"absolute_points", 100.0 * (fin.accuracy - base.accuracy)},
               {"relative_percent", base.accuracy > 0 ? 100.0 * (fin.accuracy - base.accuracy) / base.accuracy
                                                      : std::numeric_limits<double>::quiet_NaN()}};
  j["alignment"] = {{"definition_id", align.definition_id}, {"k", align.k_values}, {"scores", align.scores}};
  write_json(dir / "eval.json", j);

  write_file_atomic(dir / "eval.txt", text_header(stamp) + "\n" + eval_report_text(base, catalog) + "\n" +
                                          eval_report_text(fin, catalog));
  write_file_atomic(dir / "eval.tsv", text_header(stamp) + eval_report_tsv(fin, catalog));
  write_file_atomic(dir / "alignment.tsv", text_header(stamp) + alignment_report_tsv(align));

  const PlotData gain = gain_bars_plot("test accuracy (%), stage-1 adapter vs stage-2",
                                       {{catalog.dataset_id(), 100.0 * base.accuracy, 100.0 * fin.accuracy}});
  write_file_atomic(dir / "plot_gain.tsv", text_header(stamp) + gain.to_tsv());

  const auto prompted = kernels::encode_images(visual, images, &prompt, exec);
  std::vector<Vector> pts;
  std::vector<std::size_t> pred;
  for (const auto& e : prompted) {
    pts.push_back(e.values);
    pred.push_back(argmax(final_adapter.forward(e.values)));
  }
  ProjectionOptions po;
  po.seed = cfg.seed;
  const PlotData proj = projection_plot("test visual embeddings by predicted class", pts, pred, po);
  write_file_atomic(dir / "plot_projection.tsv", text_header(stamp) + proj.to_tsv());

  spdlog::info("eval: stage-1 adapter {:.2f}%, stage-2 {:.2f}% on {} test items", 100 * base.accuracy,
               100 * fin.accuracy, fin.n_test);
}

bool artifacts_present(const fs::path& dir, Stage s) {
  for (const auto& f : kArtifacts.at(s))
    if (!fs::exists(dir / f)) return false;
  return true;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& opts) {
  cfg.validate(true);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir / "stages");
  DirLock lock(dir);

  PipelineResult res;
  res.run_dir = dir;
  res.config_hash = cfg.hash();
  const ArtifactStamp stamp{res.config_hash, cfg.seed};
  write_file_atomic(dir / "config.ini", "# config_hash: " + res.config_hash + "\n" + cfg.to_ini(false));
  fs::remove(dir / "FAILED");

  const auto hashes = stage_hashes(cfg);
  using Runner = void (*)(const RunConfig&, const fs::path&, const ArtifactStamp&);
  const std::vector<std::pair<Stage, Runner>> stages = {
      {Stage::kPrepare, run_prepare}, {Stage::kStage1, run_stage1}, {Stage::kStage2, run_stage2}, {Stage::kEval, run_eval}};

  // Once a stage runs, every later stage runs too: its marker may predate
  // the fresh upstream artifacts.
  bool upstream_ran = false;
  for (const auto& [stage, runner] : stages) {
    if (static_cast<int>(stage) > static_cast<int>(opts.until)) break;
    const std::string name = to_string(stage);
    const fs::path marker = dir / "stages" / (name + ".done");
    const bool done = !opts.force && !upstream_ran && fs::exists(marker) &&
                      read_file(marker) == hashes.at(stage) + "\n" && artifacts_present(dir, stage);
    if (done) {
      for (const auto& f : kArtifacts.at(stage)) restamp(dir / f, stamp);
      res.skipped.push_back(name);
      spdlog::info("{}: inputs unchanged, skipped", name);
      continue;
    }
    fs::remove(marker);
    upstream_ran = true;
    try {
      runner(cfg, dir, stamp);
    } catch (const std::exception& e) {
      write_file_atomic(dir / "FAILED", "stage: " + name + "\nerror: " + e.what() + "\n");
      throw;
    }
    write_file_atomic(marker, hashes.at(stage) + "\n");
    res.executed.push_back(name);
  }
  return res;
}

std::vector<AblationCell> ablation_grid() {
  std::vector<AblationCell> g;
  for (bool ent : {false, true}) {
    for (LossKind k : {LossKind::kLSCE, LossKind::kNCS, LossKind::kCE}) {
      AblationCell c;
      c.kind = k;
      c.entropy = ent;
      c.is_default = k == LossKind::kCE && ent;
      c.name = to_string(k) + (ent ? "+Ent" : "");
      g.push_back(c);
    }
  }
  return g;
}

AblationResult run_ablation(const RunConfig& base, const fs::path& out_dir, std::vector<AblationCell> grid) {
  base.validate(true);
  AblationResult result;
  RunConfig shared = base;
  shared.output_dir = out_dir / "shared";
  run_pipeline(shared, {Stage::kStage1, false});

  std::optional<double> stage1_acc;
  for (auto& cell : grid) {
    RunConfig c = base;
    c.stage2.loss.kind = cell.kind;
    c.stage2.loss.entropy_enabled = cell.entropy;
    c.output_dir = out_dir / "cells" / cell.name;
    try {
      fs::create_directories(c.output_dir / "stages");
      for (Stage s : {Stage::kPrepare, Stage::kStage1}) {
        for (const auto& f : kArtifacts.at(s)) fs::copy_file(shared.output_dir / f, c.output_dir / f, fs::copy_options::overwrite_existing);
        const std::string m = "stages/" + to_string(s) + ".done";
        fs::copy_file(shared.output_dir / m, c.output_dir / m, fs::copy_options::overwrite_existing);
      }
      run_pipeline(c);
      const auto ev = read_json(c.output_dir / "eval.json");
      cell.accuracy = ev["final"]["accuracy"].get<double>();
      if (!stage1_acc) stage1_acc = ev["stage1"]["accuracy"].get<double>();
      const auto s2 = read_json(c.output_dir / "stage2.json");
      for (const auto& e : s2["epochs"]) cell.strong_loss_trace.push_back(e["strong_loss"].get<double>());
      cell.final_entropy = s2["epochs"].empty() ? std::numeric_limits<double>::quiet_NaN()
                                                : s2["epochs"].back()["mean_entropy"].get<double>();
    } catch (const std::exception& e) {
      cell.status = std::string("failed: ") + e.what();
      cell.accuracy = std::numeric_limits<double>::quiet_NaN();
      spdlog::error("ablation cell {} failed: {}", cell.name, e.what());
    }
  }
  result.cells = grid;
  result.stage1_accuracy = stage1_acc.value_or(std::numeric_limits<double>::quiet_NaN());

  const ArtifactStamp stamp{base.hash(), base.seed};
  std::string tsv = text_header(stamp) + "# kind: ablation\n";
  tsv += fmt::format("# stage1_accuracy: {:.6f}\n", result.stage1_accuracy);
  tsv += "row\tcell\tloss\tentropy\tdefault\tstatus\taccuracy\tfinal_entropy\n";
  std::string txt = fmt::format("{:<4} {:<10} {:>10} {:>14}  {}\n", "row", "cell", "accuracy", "final_entropy", "");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& c = grid[i];
    tsv += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{:.6f}\t{:.6f}\n", i + 1, c.name, to_string(c.kind),
                       c.entropy ? "on" : "off", c.is_default ? "yes" : "no", c.status, c.accuracy, c.final_entropy);
    txt += fmt::format("{:<4} {:<10} {:>9.2f}% {:>14.4f}  {}{}\n", i + 1, c.name, 100 * c.accuracy, c.final_entropy,
                       c.is_default ? "(default)" : "", c.status == "ok" ? "" : " " + c.status);
  }
  result.table_path = out_dir / "ablation.tsv";
  write_file_atomic(result.table_path, tsv);
  write_file_atomic(out_dir / "ablation.txt", text_header(stamp) + txt);
  return result;
}

LlmComparison compare_llms(const RunConfig& base, const std::vector<fs::path>& corpora, const fs::path& out_dir) {
  if (corpora.empty()) throw ValidationError("compare-llms: no corpora given");
  std::vector<DescriptionCorpus> loaded;
  for (const auto& p : corpora) loaded.push_back(load_corpus(p));
  for (std::size_t i = 1; i < loaded.size(); ++i) {
    if (!(loaded[i].catalog() == loaded[0].catalog())) {
      throw ValidationError("compare-llms: corpus " + corpora[i].string() + " uses a different catalog than " +
                            corpora[0].string());
    }
  }
  LlmComparison out;
  std::vector<RadarPoint> radar;
  for (std::size_t i = 0; i < corpora.size(); ++i) {
    RunConfig c = base;
    c.corpus = fs::absolute(corpora[i]).lexically_normal();
    std::string tag;
    for (char ch : loaded[i].generator()) tag.push_back(std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_');
    c.output_dir = out_dir / fmt::format("{:02d}-{}", i, tag);
    run_pipeline(c);
    LlmComparisonRow row;
    row.generator = loaded[i].generator();
    row.corpus = corpora[i];
    row.text_accuracy = read_json(c.output_dir / "stage1.json")["final_holdout_accuracy"].get<double>();
    const auto ev = read_json(c.output_dir / "eval.json");
    row.stage1_visual_accuracy = ev["stage1"]["accuracy"].get<double>();
    row.end_accuracy = ev["final"]["accuracy"].get<double>();
    radar.push_back({loaded[i].catalog().dataset_id(), row.generator, row.text_accuracy});
    out.rows.push_back(row);
  }
  const ArtifactStamp stamp{base.hash(), base.seed};
  std::string tsv = text_header(stamp) + "# kind: llm_comparison\n";
  tsv += "generator\tcorpus\ttext_accuracy\tstage1_visual_accuracy\tend_accuracy\n";
  for (const auto& r : out.rows) {
    tsv += fmt::format("{}\t{}\t{:.6f}\t{:.6f}\t{:.6f}\n", r.generator, r.corpus.string(), r.text_accuracy,
                       r.stage1_visual_accuracy, r.end_accuracy);
  }
  out.table_path = out_dir / "llm_comparison.tsv";
  write_file_atomic(out.table_path, tsv);
  out.radar_path = out_dir / "plot_radar.tsv";
  write_file_atomic(out.radar_path, text_header(stamp) + radar_plot("text classifier accuracy by generator", radar).to_tsv());
  return out;
}

}  // namespace unadapt
