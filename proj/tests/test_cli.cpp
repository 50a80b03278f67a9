#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include <doctest.h>

#include "support.hpp"
#include "unadapt/dataset.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

// Runs the command-line tool inside `dir`, capturing stdout and stderr.
Outcome cli(const fs::path& dir, const std::string& args) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = "cd '" + dir.string() + "' && '" UNADAPT_CLI "' --log-level warn " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = unadapt::read_file(log);
  return o;
}

void shrink_run(const fs::path& ini, const std::string& extra = "") {
  std::string text = unadapt::read_file(ini);
  auto set = [&](const std::string& section, const std::string& key, const std::string& value) {
    const auto s = text.find("[" + section + "]");
    const auto k = text.find("\n" + key + " = ", s);
    const auto e = text.find('\n', k + 1);
    text.replace(k + 1, e - k - 1, key + " = " + value);
  };
  set("stage1", "epochs", "20");
  set("stage2", "epochs", "3");
  unadapt::write_file_atomic(ini, text + extra);
}

}  // namespace

TEST_CASE("usage errors exit with the validation code") {
  testing::TempDir dir("cli-usage");
  CHECK(cli(dir.path(), "--help").code == 0);
  CHECK(cli(dir.path(), "").code == 1);
  CHECK(cli(dir.path(), "frobnicate").code == 1);
  CHECK(cli(dir.path(), "run").code == 1);
  CHECK(cli(dir.path(), "run -c missing.ini").code == 1);
  CHECK(cli(dir.path(), "synth --out w --classes 9").code == 1);
  CHECK(cli(dir.path(), "run --until nowhere -c x").code == 1);
}

TEST_CASE("synthetic end-to-end through the command line") {
  testing::TempDir dir("cli-run");
  REQUIRE(cli(dir.path(), "synth --out world --images-per-class 20").code == 0);
  for (const char* f : {"run.ini", "manifest.csv", "corpus.json", "catalog.json", "templates.json", "llm_fixture.json"})
    CHECK_MESSAGE(fs::exists(dir / "world" / f), f);
  shrink_run(dir / "world" / "run.ini");

  SUBCASE("staged commands resume one another") {
    const Outcome text = cli(dir / "world", "train-text -c run.ini");
    CHECK(text.code == 0);
    CHECK(fs::exists(dir / "world" / "run" / "adapter_stage1.bin"));
    CHECK_FALSE(fs::exists(dir / "world" / "run" / "adapter.bin"));
    CHECK(cli(dir / "world", "train-unsup -c run.ini").code == 0);
    const Outcome ev = cli(dir / "world", "eval -c run.ini");
    CHECK(ev.code == 0);
    CHECK(ev.out.find("accuracy") != std::string::npos);
    CHECK(ev.out.find("skipped") != std::string::npos);
  }
  SUBCASE("split, align and corpus commands") {
    const Outcome sp = cli(dir / "world", "split --manifest manifest.csv --out split/m.csv --seed 3");
    CHECK(sp.code == 0);
    const auto m = unadapt::load_manifest(dir / "world" / "split" / "m.csv");
    CHECK(m.subset(unadapt::Split::kTrain).items.size() == 24);
    CHECK(m.subset(unadapt::Split::kTest).items.size() == 8);
    CHECK(fs::exists(m.resolve(m.items.front())));
    CHECK(cli(dir / "world", "split --manifest manifest.csv --out bad.csv --fractions 0.5,0.5,0.5").code == 1);

    const Outcome al = cli(dir / "world", "align -c run.ini -k 1,3,5 --out align.tsv");
    CHECK(al.code == 0);
    CHECK(unadapt::read_file(dir / "world" / "align.tsv").find("hit-rate@k") != std::string::npos);
    CHECK(cli(dir / "world", "align -c run.ini -k 0").code == 1);

    const Outcome gen = cli(dir / "world",
                            "corpus generate --catalog catalog.json --templates templates.json "
                            "--llm fixture:llm_fixture.json --out regen.json --created-at 2024-01-01T00:00:00Z");
    CHECK(gen.code == 0);
    CHECK(cli(dir / "world", "corpus validate regen.json --catalog catalog.json").code == 0);
    unadapt::write_file_atomic(dir / "world" / "broken.json", "{\"catalog\": 3}");
    CHECK(cli(dir / "world", "corpus validate broken.json").code == 2);
    CHECK(cli(dir / "world", "corpus generate --catalog catalog.json --templates templates.json --llm carrier:x "
                             "--out x.json")
              .code == 1);
  }
  SUBCASE("configuration and data problems map to their exit codes") {
    std::string ini = unadapt::read_file(dir / "world" / "run.ini");
    unadapt::write_file_atomic(dir / "world" / "typo.ini", ini + "\n[stage3]\nepochs = 1\n");
    CHECK(cli(dir / "world", "run -c typo.ini").code == 1);

    unadapt::write_file_atomic(dir / "world" / "nan.ini", ini);
    shrink_run(dir / "world" / "nan.ini");
    std::string nan = unadapt::read_file(dir / "world" / "nan.ini");
    nan.replace(nan.find("weight_decay = 0", nan.find("[stage2]")), 16, "weight_decay = 1e200");
    nan.replace(nan.find("learning_rate = 0.01", nan.find("[stage2]")), 20, "learning_rate = 1");
    unadapt::write_file_atomic(dir / "world" / "nan.ini", nan);
    const Outcome r = cli(dir / "world", "run -c nan.ini -o nanrun");
    CHECK(r.code == 3);
    CHECK(fs::exists(dir / "world" / "nanrun" / "FAILED"));

    fs::rename(dir / "world" / "images", dir / "world" / "moved");
    CHECK(cli(dir / "world", "run -c run.ini -o missing-images").code == 2);
  }
}
