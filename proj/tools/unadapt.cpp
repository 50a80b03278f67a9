#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "unadapt/config.hpp"
#include "unadapt/corpus.hpp"
#include "unadapt/dataset.hpp"
#include "unadapt/embedding_cache.hpp"
#include "unadapt/encoder_registry.hpp"
#include "unadapt/error.hpp"
#include "unadapt/llm_client.hpp"
#include "unadapt/metrics.hpp"
#include "unadapt/pipeline.hpp"
#include "unadapt/synth.hpp"
#include "unadapt/util.hpp"

namespace fs = std::filesystem;
using namespace unadapt;

namespace {

SplitFractions parse_fractions(const std::string& s) {
  std::vector<double> parts;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      parts.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ValidationError("bad split fraction '" + tok + "'");
    }
  }
  if (parts.size() != 3) throw ValidationError("--fractions needs three comma-separated values");
  SplitFractions f{parts[0], parts[1], parts[2]};
  f.validate();
  return f;
}

struct RunArgs {
  std::string config;
  std::string output;
  bool force = false;
};

void add_run_args(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("-c,--config", a.config, "run configuration (INI)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", a.output, "run directory (overrides [run] output)");
  cmd->add_flag("--force", a.force, "recompute every stage");
}

RunConfig load_config(const RunArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.output.empty()) cfg.output_dir = a.output;
  cfg.validate(true);
  return cfg;
}

void print_pipeline(const PipelineResult& r) {
  fmt::print("run directory: {}\nconfig hash:   {}\n", r.run_dir.string(), r.config_hash);
  for (const auto& s : r.executed) fmt::print("  {:<8} executed\n", s);
  for (const auto& s : r.skipped) fmt::print("  {:<8} skipped (inputs unchanged)\n", s);
}

void run_stages(const RunArgs& a, Stage until) {
  const RunConfig cfg = load_config(a);
  print_pipeline(run_pipeline(cfg, {until, a.force}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unadapt: unsupervised adaptation of vision-language classifiers from class descriptions"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  // corpus generate | validate
  auto* corpus = app.add_subcommand("corpus", "generate or validate a description corpus");
  corpus->require_subcommand(1);
  std::string cat_path, tpl_path, llm_spec, corpus_out, created_at;
  int retries = 3, samples = 1, in_flight = 4;
  auto* gen = corpus->add_subcommand("generate", "query a language model for class descriptions");
  gen->add_option("--catalog", cat_path, "class catalog (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--templates", tpl_path, "prompt templates (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--llm", llm_spec, "fixture:<file>, remote:<model> or local:<model>[@<url>]")->required();
  gen->add_option("--out", corpus_out, "corpus file to write")->required();
  gen->add_option("--retries", retries, "attempts per query")->check(CLI::PositiveNumber);
  gen->add_option("--samples", samples, "completions per query")->check(CLI::PositiveNumber);
  gen->add_option("--max-in-flight", in_flight, "concurrent requests")->check(CLI::PositiveNumber);
  gen->add_option("--created-at", created_at, "timestamp to record (default: now, UTC)");

  std::string validate_path, validate_catalog;
  auto* val = corpus->add_subcommand("validate", "check a corpus file");
  val->add_option("corpus", validate_path, "corpus file")->required()->check(CLI::ExistingFile);
  val->add_option("--catalog", validate_catalog, "require this catalog's label order")->check(CLI::ExistingFile);

  // embed
  RunArgs embed_args;
  std::string cache_dir;
  auto* embed = app.add_subcommand("embed", "fill text and image embedding caches");
  embed->add_option("-c,--config", embed_args.config, "run configuration (INI)")->required()->check(CLI::ExistingFile);
  embed->add_option("--out", cache_dir, "cache directory")->required();

  RunArgs text_args, unsup_args, eval_args, run_args;
  add_run_args(app.add_subcommand("train-text", "stage 1: fit the adapter on descriptions"), text_args);
  add_run_args(app.add_subcommand("train-unsup", "stage 2: dual-branch training on unlabelled images"), unsup_args);
  add_run_args(app.add_subcommand("eval", "evaluate on the test split and write reports"), eval_args);
  auto* run = app.add_subcommand("run", "run every stage, resuming completed ones");
  add_run_args(run, run_args);
  std::string until = "eval";
  run->add_option("--until", until, "last stage to run")->check(CLI::IsMember({"prepare", "stage1", "stage2", "eval"}));

  // align
  RunArgs align_args;
  std::vector<std::size_t> align_k{1, 3, 5};
  std::string align_out;
  auto* align = app.add_subcommand("align", "hit-rate@k between description and image embeddings");
  align->add_option("-c,--config", align_args.config, "run configuration (INI)")->required()->check(CLI::ExistingFile);
  align->add_option("-k", align_k, "neighbourhood sizes")->delimiter(',');
  align->add_option("--out", align_out, "write the report (TSV) here");

  // ablate
  RunArgs ablate_args;
  std::string ablate_out;
  auto* ablate = app.add_subcommand("ablate", "train the six loss variants from one stage-1 adapter");
  ablate->add_option("-c,--config", ablate_args.config, "run configuration (INI)")->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", ablate_out, "output directory")->required();

  // compare-llms
  RunArgs cmp_args;
  std::vector<std::string> cmp_corpora;
  std::string cmp_out;
  auto* cmp = app.add_subcommand("compare-llms", "one run per description corpus");
  cmp->add_option("-c,--config", cmp_args.config, "run configuration (INI)")->required()->check(CLI::ExistingFile);
  cmp->add_option("--corpus", cmp_corpora, "corpus files")->required()->check(CLI::ExistingFile);
  cmp->add_option("--out", cmp_out, "output directory")->required();

  // split
  std::string split_manifest, split_out, split_fractions = "0.6,0.2,0.2";
  std::uint64_t split_seed = 0;
  bool no_stratify = false;
  auto* split = app.add_subcommand("split", "assign train/val/test to a manifest");
  split->add_option("--manifest", split_manifest, "manifest CSV")->required()->check(CLI::ExistingFile);
  split->add_option("--out", split_out, "manifest CSV to write")->required();
  split->add_option("--fractions", split_fractions, "train,val,test");
  split->add_option("--seed", split_seed, "shuffle seed");
  split->add_flag("--no-stratify", no_stratify, "split without per-class apportionment");

  // synth
  SynthConfig sc;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a planted synthetic dataset, corpus and run.ini");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", sc.seed, "world seed");
  synth->add_option("--classes", sc.num_classes, "number of classes")->check(CLI::Range(2, 8));
  synth->add_option("--images-per-class", sc.images_per_class, "images per class")->check(CLI::PositiveNumber);
  synth->add_option("--gap", sc.gap, "offset between image and text concepts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kValidation);
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (gen->parsed()) {
      const ClassCatalog catalog = load_catalog(cat_path);
      const auto queries = build_prompts(catalog, load_templates(tpl_path));
      auto llm = make_llm_client(llm_spec);
      GenerationOptions go;
      go.retries = retries;
      go.samples_per_query = samples;
      go.max_in_flight = in_flight;
      go.created_at = created_at;
      auto res = generate_descriptions(catalog, queries, *llm, go);
      for (const auto& w : res.warnings) spdlog::warn("{}", w);
      save_corpus(res.corpus, corpus_out);
      fmt::print("wrote {} descriptions for {} classes to {}\n", res.corpus.total_descriptions(), catalog.size(),
                 corpus_out);
    } else if (val->parsed()) {
      const DescriptionCorpus c = load_corpus(validate_path);
      if (!validate_catalog.empty()) c.validate_against(load_catalog(validate_catalog));
      fmt::print("{}: dataset {} generator {}\n", validate_path, c.catalog().dataset_id(), c.generator());
      const auto counts = c.counts_per_class();
      for (std::size_t k = 0; k < counts.size(); ++k) fmt::print("  {:<24} {}\n", c.catalog().labels()[k], counts[k]);
    } else if (embed->parsed()) {
      const RunConfig cfg = load_config(embed_args);
      const DescriptionCorpus c = load_corpus(cfg.corpus);
      const EncoderSet enc = make_encoders(cfg.encoders);
      fs::create_directories(cache_dir);
      std::vector<std::pair<std::string, std::string>> texts;
      for (const auto& label : c.catalog().labels()) {
        const auto& ds = c.descriptions(label);
        for (std::size_t i = 0; i < ds.size(); ++i) texts.emplace_back(description_id(label, i, ds[i].text), ds[i].text);
      }
      auto tc = cache_text_embeddings(*enc.text, texts, fs::path(cache_dir) / "text.cache");
      const Manifest m = load_manifest(cfg.manifest);
      std::vector<CacheKey> keys;
      for (const auto& it : m.items) keys.push_back({it.item_id, 0});
      auto vc = cache_embeddings(
          enc.visual->spec(), keys, [&](std::size_t i) { return enc.visual->encode(load_image(m.resolve(m.items[i]))); },
          fs::path(cache_dir) / "visual.cache");
      fmt::print("text cache: {} entries, visual cache: {} entries in {}\n", tc->size(), vc->size(), cache_dir);
    } else if (app.got_subcommand("train-text")) {
      run_stages(text_args, Stage::kStage1);
    } else if (app.got_subcommand("train-unsup")) {
      run_stages(unsup_args, Stage::kStage2);
    } else if (app.got_subcommand("eval")) {
      const RunConfig cfg = load_config(eval_args);
      print_pipeline(run_pipeline(cfg, {Stage::kEval, eval_args.force}));
      std::cout << read_file(cfg.output_dir / "eval.txt");
    } else if (run->parsed()) {
      run_stages(run_args, stage_from_string(until));
    } else if (align->parsed()) {
      const RunConfig cfg = load_config(align_args);
      const DescriptionCorpus c = load_corpus(cfg.corpus);
      const EncoderSet enc = make_encoders(cfg.encoders);
      const auto& catalog = c.catalog();
      std::vector<std::vector<Vector>> text(catalog.size());
      for (std::size_t k = 0; k < catalog.size(); ++k)
        for (const auto& d : c.descriptions(catalog.labels()[k])) text[k].push_back(enc.text->encode(d.text).values);
      const Manifest m = load_manifest(cfg.manifest);
      std::vector<std::pair<std::size_t, Vector>> vis;
      for (const auto& it : m.items) {
        if (!it.label) continue;
        vis.emplace_back(catalog.index_of(*it.label), enc.visual->encode(load_image(m.resolve(it))).values);
      }
      const auto rep = alignment_report(catalog.dataset_id(), text, vis, align_k);
      const std::string tsv = alignment_report_tsv(rep);
      if (!align_out.empty()) write_file_atomic(align_out, tsv);
      std::cout << tsv;
    } else if (ablate->parsed()) {
      const RunConfig cfg = load_config(ablate_args);
      const auto res = run_ablation(cfg, ablate_out);
      std::cout << read_file(fs::path(ablate_out) / "ablation.txt");
      fmt::print("table: {}\n", res.table_path.string());
    } else if (cmp->parsed()) {
      const RunConfig cfg = load_config(cmp_args);
      std::vector<fs::path> paths(cmp_corpora.begin(), cmp_corpora.end());
      const auto res = compare_llms(cfg, paths, cmp_out);
      fmt::print("{:<24} {:>10} {:>14} {:>10}\n", "generator", "text", "stage1-visual", "end");
      for (const auto& r : res.rows) {
        fmt::print("{:<24} {:>9.2f}% {:>13.2f}% {:>9.2f}%\n", r.generator, 100 * r.text_accuracy,
                   100 * r.stage1_visual_accuracy, 100 * r.end_accuracy);
      }
      fmt::print("table: {}\nradar: {}\n", res.table_path.string(), res.radar_path.string());
    } else if (split->parsed()) {
      const Manifest m = load_manifest(split_manifest);
      const auto r = split_dataset(m, parse_fractions(split_fractions), split_seed, !no_stratify);
      for (const auto& w : r.warnings) spdlog::warn("{}", w);
      Manifest out = assign_splits(r);
      // Keep paths valid relative to the new file.
      const fs::path out_dir = fs::absolute(fs::path(split_out)).parent_path();
      for (auto& it : out.items) it.path = fs::relative(fs::absolute(m.resolve(it)), out_dir).string();
      save_manifest(out, split_out);
      fmt::print("train {} / val {} / test {} -> {}\n", r.train.items.size(), r.val.items.size(), r.test.items.size(),
                 split_out);
    } else if (synth->parsed()) {
      const SynthWorld w = make_synth_world(sc);
      write_synth_world(w, synth_out);
      RunConfig cfg;
      cfg.manifest = "manifest.csv";
      cfg.corpus = "corpus.json";
      cfg.output_dir = "run";
      cfg.encoders.toy = sc.toy;
      cfg.seed = 1;
      write_file_atomic(fs::path(synth_out) / "run.ini", cfg.to_ini(true));
      fmt::print("wrote {} images in {} classes and {} descriptions to {}\n", w.items.size(), w.catalog.size(),
                 w.corpus.total_descriptions(), synth_out);
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(ExitCode::kRuntime);
  }
  return 0;
}
