#include "unadapt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <json.hpp>

#include "unadapt/error.hpp"
#include "unadapt/llm_client.hpp"
#include "unadapt/util.hpp"

namespace unadapt {

namespace {

const std::vector<std::string> kLabelNames = {"normal", "nodule", "effusion", "fibrosis",
                                              "edema",  "mass",   "atelectasis", "pneumothorax"};
const std::vector<std::string> kFillers = {"the", "scan", "shows", "a", "region", "with", "of", "appearance"};
const std::vector<std::string> kKeywordPool = {
    "opaque",  "lucent",   "nodular", "cavitary", "mottled",  "streaky", "hazy",      "dense",
    "patchy",  "granular", "smooth",  "sharp",    "fibrotic", "calcified", "diffuse", "focal",
    "reticular", "cystic", "fluffy",  "linear",   "bright",   "dark",    "spiculated", "rounded"};

std::string label_name(std::size_t k) {
  return k < kLabelNames.size() ? kLabelNames[k] : "class" + std::to_string(k);
}

}  // namespace

SynthWorld make_synth_world(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) throw ValidationError("synth: need at least two classes");
  if (cfg.images_per_class == 0 || cfg.templates == 0 || cfg.descriptions_per_query == 0 ||
      cfg.keywords_per_class == 0) {
    throw ValidationError("synth: counts must be positive");
  }
  const ToyVlm vlm(cfg.toy);
  const std::size_t C = cfg.num_classes, H = cfg.toy.hidden_size;

  std::vector<std::string> labels;
  for (std::size_t k = 0; k < C; ++k) labels.push_back(label_name(k));
  ClassCatalog catalog("synthetic", labels);

  // Keywords get buckets of their own so each class has a private direction.
  std::set<std::size_t> used;
  for (const auto& f : kFillers) used.insert(vlm.bucket_of(f));
  std::map<std::string, std::vector<std::string>> keywords;
  std::size_t next_class = 0, assigned = 0, extra = 0;
  auto pool = kKeywordPool;
  for (std::size_t i = 0; assigned < C * cfg.keywords_per_class; ++i) {
    if (i >= pool.size()) {
      if (extra > 10000) throw ValidationError("synth: not enough hash buckets for distinct class keywords");
      pool.push_back("marker" + std::to_string(extra++));
    }
    const std::size_t b = vlm.bucket_of(pool[i]);
    if (used.count(b)) continue;
    used.insert(b);
    keywords[labels[next_class]].push_back(pool[i]);
    next_class = (next_class + 1) % C;
    ++assigned;
  }

  std::vector<PromptTemplate> templates;
  for (std::size_t t = 0; t < cfg.templates; ++t) {
    templates.push_back({"t" + std::to_string(t),
                         fmt::format("Describe the appearance of {{class}} in a synthetic scan (variant {}).", t),
                         catalog.dataset_id()});
  }
  const auto queries = build_prompts(catalog, templates);

  std::map<std::string, std::vector<std::string>> responses;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries[qi];
    const std::size_t k = catalog.index_of(q.label);
    std::mt19937_64 rng(derive_seed(cfg.seed, "synth-text", qi));
    const auto& kws = keywords[q.label];
    std::uniform_int_distribution<std::size_t> pick_kw(0, kws.size() - 1), pick_fill(0, kFillers.size() - 1);
    std::uniform_int_distribution<int> n_kw(2, 3), n_fill(3, 5);
    auto& out = responses[q.query];
    for (std::size_t d = 0; d < cfg.descriptions_per_query; ++d) {
      std::vector<std::string> words;
      for (int j = n_kw(rng); j > 0; --j) words.push_back(kws[pick_kw(rng)]);
      for (int j = n_fill(rng); j > 0; --j) words.push_back(kFillers[pick_fill(rng)]);
      std::shuffle(words.begin(), words.end(), rng);
      std::string text;
      for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
      out.push_back(text + ".");
    }
    (void)k;
  }

  FixtureClient llm("synthetic-llm", responses);
  GenerationOptions opts;
  opts.retries = 0;
  opts.samples_per_query = static_cast<int>(cfg.descriptions_per_query);
  opts.max_in_flight = 1;
  opts.created_at = "1970-01-01T00:00:00Z";
  auto generated = generate_descriptions(catalog, queries, llm, opts);

  // Class concepts in hidden space: mean of unit-normalised bucket counts.
  std::vector<Vector> concept_of(C, Vector(H, 0.0));
  for (std::size_t k = 0; k < C; ++k) {
    const auto& descs = generated.corpus.descriptions(labels[k]);
    for (const auto& d : descs) {
      Vector counts(H, 0.0);
      for (const auto& w : tokenize_words(d.text)) counts[vlm.bucket_of(w)] += 1.0;
      const double n = norm2(counts);
      for (std::size_t j = 0; j < H; ++j) concept_of[k][j] += counts[j] / n / static_cast<double>(descs.size());
    }
  }
  Vector gap_dir(H, 0.0);
  for (std::size_t j = 0; j < H; ++j) {
    double mean = 0.0;
    for (std::size_t k = 0; k < C; ++k) mean += concept_of[k][j] / static_cast<double>(C);
    gap_dir[j] = concept_of[0][j] - mean;
  }
  const double gn = norm2(gap_dir);
  for (double& v : gap_dir) v /= gn;

  // Per-channel intensities s solve E_c s = (N v - cls) / n_patches, where
  // E_c sums the patch embedding over the pixels of channel c.
  const auto& cf = cfg.toy;
  const std::size_t P = cf.patch, pix = P * P;
  const std::size_t n_patches = (cf.image_height / P) * (cf.image_width / P), N = n_patches + 1;
  Eigen::MatrixXd Ec = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(cf.channels));
  const Matrix& E = vlm.patch_embedding();
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t c = 0; c < cf.channels; ++c)
      for (std::size_t q = 0; q < pix; ++q) Ec(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(c)) += E(h, c * pix + q);
  const auto solver = Ec.completeOrthogonalDecomposition();

  SynthWorld world{catalog, templates, responses, generated.corpus, {}, {}, keywords};
  std::mt19937_64 rng(derive_seed(cfg.seed, "synth-images"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t i = 0; i < cfg.images_per_class; ++i) {
    for (std::size_t k = 0; k < C; ++k) {
      Eigen::VectorXd rhs(static_cast<Eigen::Index>(H));
      for (std::size_t j = 0; j < H; ++j) {
        const double v = concept_of[k][j] + cfg.gap * gap_dir[j] + cfg.concept_noise * gauss(rng);
        rhs(static_cast<Eigen::Index>(j)) =
            (static_cast<double>(N) * v - vlm.class_token()[j]) / static_cast<double>(n_patches);
      }
      const Eigen::VectorXd s = solver.solve(rhs);
      const double scale = s.cwiseAbs().mean();
      Image img(cf.channels, cf.image_height, cf.image_width);
      for (std::size_t c = 0; c < cf.channels; ++c)
        for (std::size_t y = 0; y < cf.image_height; ++y)
          for (std::size_t x = 0; x < cf.image_width; ++x)
            img.at(c, y, x) = static_cast<float>(s(static_cast<Eigen::Index>(c)) + cfg.pixel_noise * scale * gauss(rng));

      DataItem item;
      item.item_id = fmt::format("img{:05d}", i * C + k);
      item.image = std::move(img);
      item.label = k;
      world.manifest.items.push_back({item.item_id, "images/" + item.item_id + ".npy", Split::kUnassigned, labels[k]});
      world.items.push_back(std::move(item));
    }
  }
  return world;
}

void write_synth_world(const SynthWorld& world, const std::filesystem::path& dir) {
  using nlohmann::ordered_json;
  std::filesystem::create_directories(dir / "images");
  save_catalog(world.catalog, dir / "catalog.json");
  ordered_json templates = ordered_json::array();
  for (const auto& t : world.templates) {
    templates.push_back({{"template_id", t.template_id}, {"text", t.text}, {"dataset_id", t.dataset_id}});
  }
  write_file_atomic(dir / "templates.json", templates.dump(2) + "\n");
  ordered_json fixture;
  fixture["generator"] = world.corpus.generator();
  fixture["responses"] = world.fixture_responses;
  write_file_atomic(dir / "llm_fixture.json", fixture.dump(2) + "\n");
  save_corpus(world.corpus, dir / "corpus.json");
  for (const auto& item : world.items) save_npy(item.image, dir / "images" / (item.item_id + ".npy"));
  Manifest m = world.manifest;
  m.base_dir = dir;
  save_manifest(m, dir / "manifest.csv");
}

}  // namespace unadapt
