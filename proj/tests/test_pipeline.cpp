#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

#include <doctest.h>
#include <json.hpp>

#include "support.hpp"
#include "unadapt/error.hpp"
#include "unadapt/pipeline.hpp"
#include "unadapt/synth.hpp"

using namespace unadapt;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

Manifest balanced_manifest(std::size_t per_class, std::size_t classes = 2) {
  Manifest m;
  m.base_dir = "/data";
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t k = 0; k < classes; ++k)
      m.items.push_back({"id" + std::to_string(i * classes + k), "img.npy", Split::kUnassigned, "c" + std::to_string(k)});
  return m;
}

std::set<std::string> ids(const Manifest& m) {
  std::set<std::string> out;
  for (const auto& it : m.items) out.insert(it.item_id);
  return out;
}

std::size_t count_label(const Manifest& m, const std::string& label) {
  return static_cast<std::size_t>(
      std::count_if(m.items.begin(), m.items.end(), [&](const auto& it) { return it.label == label; }));
}

// Largest remainder with integer percentages; leftover ties go to train,
// then val, then test.
std::array<std::size_t, 3> apportion_oracle(std::size_t n, std::array<std::size_t, 3> pct) {
  std::array<std::size_t, 3> size{}, rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) size[i] = n * pct[i] / 100, rem[i] = n * pct[i] % 100, used += size[i];
  while (used < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++size[best];
    rem[best] = 0;
    ++used;
  }
  return size;
}

std::string ini_for(std::size_t stage1_epochs, std::size_t stage2_epochs, const std::string& extra = "") {
  return "[run]\nmanifest = manifest.csv\ncorpus = corpus.json\noutput = run\nseed = 4\n\n[stage1]\nepochs = " +
         std::to_string(stage1_epochs) + "\n\n[stage2]\nepochs = " + std::to_string(stage2_epochs) + "\n" + extra;
}

// A small synthetic world written under `dir`.
void write_world(const fs::path& dir, std::size_t per_class = 30, std::uint64_t seed = 11) {
  SynthConfig sc;
  sc.images_per_class = per_class;
  sc.seed = seed;
  write_synth_world(make_synth_world(sc), dir);
}

RunConfig config_in(const fs::path& dir, const std::string& ini) {
  write_file_atomic(dir / "run.ini", ini);
  return load_run_config(dir / "run.ini");
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

const std::vector<std::string> kArtifacts{
    "config.ini",  "splits.csv", "prepare.json", "adapter_stage1.bin", "stage1.json",   "adapter.bin",
    "prompt.bin",  "stage2.json", "eval.json",   "eval.txt",           "eval.tsv",      "alignment.tsv",
    "plot_gain.tsv", "plot_projection.tsv"};

}  // namespace

TEST_CASE("dataset splitting") {
  SUBCASE("100 balanced items split 60/20/20 and 30/10/10 per class") {
    const auto r = split_dataset(balanced_manifest(50), {}, 7);
    CHECK(r.train.items.size() == 60);
    CHECK(r.val.items.size() == 20);
    CHECK(r.test.items.size() == 20);
    for (const char* c : {"c0", "c1"}) {
      CHECK(count_label(r.train, c) == 30);
      CHECK(count_label(r.val, c) == 10);
      CHECK(count_label(r.test, c) == 10);
    }
  }
  SUBCASE("sizes follow the largest-remainder oracle") {
    for (std::size_t n = 1; n <= 203; ++n) {
      Manifest m;
      for (std::size_t i = 0; i < n; ++i) m.items.push_back({"i" + std::to_string(i), "p", Split::kUnassigned, {}});
      for (const auto& [f, pct] : std::vector<std::pair<SplitFractions, std::array<std::size_t, 3>>>{
               {{0.6, 0.2, 0.2}, {60, 20, 20}}, {{0.7, 0.15, 0.15}, {70, 15, 15}}, {{0.5, 0.25, 0.25}, {50, 25, 25}}}) {
        const auto want = apportion_oracle(n, pct);
        CHECK(apportion(n, f) == want);
        const auto r = split_dataset(m, f, 3, false);
        CHECK(r.train.items.size() == want[0]);
        CHECK(r.val.items.size() == want[1]);
        CHECK(r.test.items.size() == want[2]);
      }
    }
    const auto r = split_dataset(balanced_manifest(101, 1), {}, 1);
    CHECK(r.train.items.size() == 61);
    CHECK(r.val.items.size() == 20);
    CHECK(r.test.items.size() == 20);
  }
  SUBCASE("disjoint, exhaustive and seed-reproducible") {
    const Manifest m = balanced_manifest(37, 3);
    for (std::uint64_t seed : {1u, 2u, 99u}) {
      const auto r = split_dataset(m, {}, seed);
      const auto a = ids(r.train), b = ids(r.val), c = ids(r.test);
      std::set<std::string> all = a;
      all.insert(b.begin(), b.end());
      all.insert(c.begin(), c.end());
      CHECK(all == ids(m));
      CHECK(all.size() == a.size() + b.size() + c.size());
      const auto again = split_dataset(m, {}, seed);
      CHECK(again.train.items == r.train.items);
      CHECK(again.test.items == r.test.items);
      for (const auto& it : r.train.items) CHECK(it.split == Split::kTrain);
    }
    CHECK(split_dataset(m, {}, 1).train.items != split_dataset(m, {}, 2).train.items);
  }
  SUBCASE("stratification needs three items per class") {
    Manifest m = balanced_manifest(10);
    m.items.push_back({"rare1", "p", Split::kUnassigned, "rare"});
    m.items.push_back({"rare2", "p", Split::kUnassigned, "rare"});
    CHECK_THROWS_AS(split_dataset(m, {}, 1), DataError);
    CHECK_NOTHROW(split_dataset(m, {}, 1, false));
  }
  SUBCASE("unlabelled manifests fall back to an unstratified split") {
    Manifest m = balanced_manifest(10);
    for (auto& it : m.items) it.label.reset();
    const auto r = split_dataset(m, {}, 1);
    CHECK(r.warnings.size() == 1);
    CHECK(r.train.items.size() == 12);
    m.items[0].label = "c0";
    CHECK_THROWS_AS(split_dataset(m, {}, 1), DataError);
  }
  SUBCASE("fractions must sum to one") {
    CHECK_THROWS_AS(split_dataset(balanced_manifest(10), {0.5, 0.2, 0.2}, 1), ValidationError);
    CHECK_THROWS_AS(split_dataset(balanced_manifest(10), {1.2, -0.1, -0.1}, 1), ValidationError);
  }
}

TEST_CASE("manifest parsing") {
  const std::string csv = "# comment\nitem_id,path,split,label\na,x/a.npy,train,c0\nb,/abs/b.npy,test,\n";
  const Manifest m = parse_manifest(csv, "/base", "m.csv");
  REQUIRE(m.items.size() == 2);
  CHECK(m.items[0].label == "c0");
  CHECK_FALSE(m.items[1].label.has_value());
  CHECK(m.resolve(m.items[0]) == fs::path("/base/x/a.npy"));
  CHECK(m.resolve(m.items[1]) == fs::path("/abs/b.npy"));
  CHECK(parse_manifest(manifest_to_csv(m), "/base", "again").items == m.items);
  CHECK_THROWS_AS(parse_manifest("item_id,path\na,p\na,q\n", "/", "dup"), Error);
  CHECK_THROWS_AS(parse_manifest("id,file\n", "/", "hdr"), Error);
  CHECK_THROWS_AS(parse_manifest("item_id,path,split\na,p,holdout\n", "/", "split"), Error);
}

TEST_CASE("run configuration") {
  testing::TempDir dir("config");
  write_file_atomic(dir / "manifest.csv", "item_id,path\n");
  write_file_atomic(dir / "corpus.json", "{}");
  SUBCASE("relative paths resolve against the config file") {
    const RunConfig c = config_in(dir.path(), ini_for(5, 2));
    CHECK(c.manifest == dir / "manifest.csv");
    CHECK(c.output_dir == dir / "run");
    CHECK(c.seed == 4);
    CHECK(c.stage1.epochs == 5);
    CHECK(c.stage2.epochs == 2);
    CHECK(c.stage2.loss.kind == LossKind::kCE);
    CHECK(c.stage2.loss.entropy_enabled);
  }
  SUBCASE("unknown sections and keys are rejected") {
    CHECK_THROWS_AS(config_in(dir.path(), ini_for(5, 2, "\n[extra]\nx = 1\n")), ValidationError);
    CHECK_THROWS_AS(config_in(dir.path(), ini_for(5, 2, "learning_rte = 0.1\n")), ValidationError);
  }
  SUBCASE("bad values are rejected before any compute") {
    CHECK_THROWS_AS(config_in(dir.path(), ini_for(5, 2, "\n[loss]\nkind = hinge\n")), ValidationError);
    CHECK_THROWS_AS(config_in(dir.path(), ini_for(5, 2, "learning_rate = -1\n")), ValidationError);
    const std::string bad_split = "[run]\nmanifest = manifest.csv\ncorpus = corpus.json\nsplit = 0.5,0.3,0.3\n";
    CHECK_THROWS_AS(config_in(dir.path(), bad_split), ValidationError);
  }
  SUBCASE("missing corpus fails validation before any compute") {
    fs::remove(dir / "corpus.json");
    const RunConfig c = config_in(dir.path(), ini_for(5, 2));
    CHECK_THROWS_AS(c.validate(), ValidationError);
    CHECK_THROWS_AS(run_pipeline(c), ValidationError);
    CHECK_FALSE(fs::exists(dir / "run"));
  }
  SUBCASE("hash ignores the output directory and tracks everything else") {
    RunConfig a = config_in(dir.path(), ini_for(5, 2));
    RunConfig b = a;
    b.output_dir = "/elsewhere";
    CHECK(a.hash() == b.hash());
    b.stage2.loss.lambda_entropy = 0.5;
    CHECK(a.hash() != b.hash());
    const RunConfig round = parse_run_config(a.to_ini(true), dir.path());
    CHECK(round.to_ini(true) == a.to_ini(true));
  }
}

TEST_CASE("pipeline on a small synthetic world") {
  testing::TempDir dir("pipeline");
  write_world(dir.path());
  const RunConfig cfg = config_in(dir.path(), ini_for(20, 4));
  const fs::path run = cfg.output_dir;

  const PipelineResult first = run_pipeline(cfg);
  CHECK(first.executed == std::vector<std::string>{"prepare", "stage1", "stage2", "eval"});
  for (const auto& a : kArtifacts) CHECK_MESSAGE(fs::exists(run / a), a);
  CHECK_FALSE(fs::exists(run / "FAILED"));

  SUBCASE("artifacts carry the config hash and seed") {
    const std::string h = cfg.hash();
    CHECK(first.config_hash == h);
    for (const char* j : {"prepare.json", "stage1.json", "stage2.json", "eval.json"}) {
      const json doc = read_json(run / j);
      CHECK(doc.at("config_hash") == h);
      CHECK(doc.at("seed") == 4);
    }
    for (const char* t : {"splits.csv", "eval.tsv", "alignment.tsv", "plot_gain.tsv", "plot_projection.tsv"})
      CHECK(read_file(run / t).rfind("# config_hash: " + h + "\n# seed: 4\n", 0) == 0);
    CHECK(load_adapter(run / "adapter.bin").second.config_hash == h);
    CHECK(load_prompt(run / "prompt.bin").second.config_hash == h);
    for (const char* s : {"prepare", "stage1", "stage2", "eval"}) {
      const std::string marker = read_file(run / "stages" / (std::string(s) + ".done"));
      CHECK(marker.size() > 1);
      CHECK(marker.back() == '\n');
    }
    const json ev = read_json(run / "eval.json");
    CHECK(ev.at("final").at("n_test") == 12);
    const double acc = ev.at("final").at("accuracy");
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    const json s2 = read_json(run / "stage2.json");
    CHECK(s2.at("epochs").size() == 4);
    CHECK(s2.at("trainable_parameters") == s2.at("prompt_parameters").get<int>() + 512 * 2);
  }
  SUBCASE("a rerun skips every stage and leaves files byte-identical") {
    std::map<std::string, std::string> before;
    for (const auto& a : kArtifacts) before[a] = read_file(run / a);
    const PipelineResult again = run_pipeline(cfg);
    CHECK(again.executed.empty());
    CHECK(again.skipped.size() == 4);
    for (const auto& a : kArtifacts) CHECK_MESSAGE(read_file(run / a) == before[a], a);
  }
  SUBCASE("changing a stage-2 setting reruns only the later stages") {
    const Adapter stage1_before = load_adapter(run / "adapter_stage1.bin").first;
    const RunConfig changed = config_in(dir.path(), ini_for(20, 3));
    const PipelineResult r = run_pipeline(changed);
    CHECK(r.skipped == std::vector<std::string>{"prepare", "stage1"});
    CHECK(r.executed == std::vector<std::string>{"stage2", "eval"});
    CHECK(read_json(run / "stage1.json").at("config_hash") == changed.hash());
    CHECK(read_file(run / "splits.csv").find("# config_hash: " + changed.hash()) == 0);
    CHECK(load_adapter(run / "adapter_stage1.bin").first == stage1_before);
    CHECK(read_json(run / "stage2.json").at("epochs").size() == 3);
  }
  SUBCASE("force and until") {
    const PipelineResult forced = run_pipeline(cfg, {Stage::kStage1, true});
    CHECK(forced.executed == std::vector<std::string>{"prepare", "stage1"});
  }
  SUBCASE("a failed stage leaves a marker that a fixed rerun clears") {
    const RunConfig broken = config_in(dir.path(), ini_for(20, 4, "learning_rate = 1\nweight_decay = 1e60\n"));
    CHECK_THROWS_AS(run_pipeline(broken), NumericalError);
    const std::string failed = read_file(run / "FAILED");
    CHECK(failed.find("stage: stage2") != std::string::npos);
    CHECK(failed.find("error:") != std::string::npos);
    const PipelineResult fixed = run_pipeline(cfg);
    CHECK_FALSE(fs::exists(run / "FAILED"));
    CHECK(fixed.skipped == std::vector<std::string>{"prepare", "stage1"});
    CHECK(fixed.executed == std::vector<std::string>{"stage2", "eval"});
  }
  SUBCASE("a locked run directory is refused") {
    const int fd = ::open((run / ".lock").c_str(), O_RDWR);
    REQUIRE(fd >= 0);
    REQUIRE(::flock(fd, LOCK_EX | LOCK_NB) == 0);
    CHECK_THROWS_AS(run_pipeline(cfg), RuntimeFailure);
    ::flock(fd, LOCK_UN);
    ::close(fd);
    CHECK_NOTHROW(run_pipeline(cfg));
  }
  SUBCASE("identical configs in two directories give identical artifacts") {
    RunConfig other = cfg;
    other.output_dir = dir / "run2";
    run_pipeline(other);
    for (const auto& a : kArtifacts) CHECK_MESSAGE(read_file(run / a) == read_file(other.output_dir / a), a);
  }
}

TEST_CASE("pipeline input errors") {
  testing::TempDir dir("pipeline-errors");
  write_world(dir.path(), 10);
  SUBCASE("manifest labels outside the corpus catalog") {
    std::string csv = read_file(dir / "manifest.csv");
    const auto pos = csv.rfind(",normal");
    REQUIRE(pos != std::string::npos);
    csv.replace(pos, 7, ",unknown");
    write_file_atomic(dir / "manifest.csv", csv);
    CHECK_THROWS_AS(run_pipeline(config_in(dir.path(), ini_for(2, 1))), DataError);
  }
  SUBCASE("corrupt corpus") {
    write_file_atomic(dir / "corpus.json", "{ not json");
    CHECK_THROWS_AS(run_pipeline(config_in(dir.path(), ini_for(2, 1))), ParseError);
  }
}

TEST_CASE("ablation harness") {
  testing::TempDir dir("ablation");
  write_world(dir.path(), 24);
  const RunConfig cfg = config_in(dir.path(), ini_for(20, 3));
  const auto grid = ablation_grid();
  REQUIRE(grid.size() == 6);
  const std::vector<std::string> names{"LSCE", "NCS", "CE", "LSCE+Ent", "NCS+Ent", "CE+Ent"};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(grid[i].name == names[i]);
    CHECK(grid[i].entropy == (i >= 3));
    CHECK(grid[i].is_default == (i == 5));
  }

  const AblationResult r = run_ablation(cfg, dir / "abl");
  REQUIRE(r.cells.size() == 6);
  std::set<std::vector<double>> traces;
  for (const auto& c : r.cells) {
    CHECK_MESSAGE(c.status == "ok", c.name);
    CHECK(c.strong_loss_trace.size() == 3);
    CHECK(c.accuracy >= 0.0);
    CHECK(c.accuracy <= 1.0);
    traces.insert(c.strong_loss_trace);
    CHECK(fs::exists(dir / "abl" / "cells" / c.name / "eval.json"));
  }
  CHECK(traces.size() == 6);
  const std::string table = read_file(r.table_path);
  CHECK(table.find("CE+Ent") != std::string::npos);
  std::size_t data_rows = 0, default_rows = 0;
  std::istringstream in(table);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#' || line.rfind("row", 0) == 0) continue;
    ++data_rows;
    default_rows += line.find("\tyes\t") != std::string::npos;
  }
  CHECK(data_rows == 6);
  CHECK(default_rows == 1);
  // Every cell starts from the same Stage-1 checkpoint.
  const Adapter shared = load_adapter(dir / "abl" / "shared" / "adapter_stage1.bin").first;
  for (const auto& c : r.cells) CHECK(load_adapter(dir / "abl" / "cells" / c.name / "adapter_stage1.bin").first == shared);
}

TEST_CASE("description source comparison") {
  testing::TempDir dir("compare");
  write_world(dir.path(), 15);
  const RunConfig cfg = config_in(dir.path(), ini_for(20, 2));
  const DescriptionCorpus good = load_corpus(dir / "corpus.json");

  // Same catalog, but every class gets another class's descriptions.
  std::map<std::string, std::vector<Description>> swapped;
  const auto& labels = good.catalog().labels();
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const auto& src = good.descriptions(labels[(k + 1) % labels.size()]);
    const auto& own = good.descriptions(labels[k]);
    for (std::size_t i = 0; i < src.size(); ++i) swapped[labels[k]].push_back(i % 2 ? src[i] : own[i]);
  }
  save_corpus(DescriptionCorpus(good.catalog(), swapped, "mixed-llm", good.created_at()), dir / "mixed.json");

  const LlmComparison cmp = compare_llms(cfg, {dir / "corpus.json", dir / "mixed.json"}, dir / "cmp");
  REQUIRE(cmp.rows.size() == 2);
  CHECK(cmp.rows[0].generator == good.generator());
  CHECK(cmp.rows[1].generator == "mixed-llm");
  CHECK(cmp.rows[0].text_accuracy > cmp.rows[1].text_accuracy);
  CHECK(fs::exists(cmp.table_path));
  CHECK(fs::exists(cmp.radar_path));
  CHECK(read_file(cmp.radar_path).find("# rows: 2") != std::string::npos);

  SUBCASE("corpora must share one catalog") {
    DescriptionCorpus other(ClassCatalog("other", labels), good.entries(), "x", "now");
    save_corpus(other, dir / "other.json");
    CHECK_THROWS_AS(compare_llms(cfg, {dir / "corpus.json", dir / "other.json"}, dir / "cmp2"), ValidationError);
  }
  SUBCASE("a single corpus gives a one-row table") {
    const LlmComparison one = compare_llms(cfg, {dir / "corpus.json"}, dir / "cmp3");
    CHECK(one.rows.size() == 1);
  }
}
