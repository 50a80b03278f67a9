#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <doctest.h>

#include "support.hpp"
#include "unadapt/error.hpp"
#include "unadapt/metrics.hpp"

using namespace unadapt;
using testing::random_vector;

namespace {

// Mean silhouette written out directly from its definition.
double silhouette_oracle(const std::vector<std::array<double, 2>>& p, const std::vector<std::size_t>& labels) {
  const std::size_t n = p.size();
  const std::size_t C = *std::max_element(labels.begin(), labels.end()) + 1;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sum(C, 0.0);
    std::vector<std::size_t> count(C, 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum[labels[j]] += std::hypot(p[i][0] - p[j][0], p[i][1] - p[j][1]);
      ++count[labels[j]];
    }
    if (count[labels[i]] == 0) continue;
    const double a = sum[labels[i]] / static_cast<double>(count[labels[i]]);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c)
      if (c != labels[i] && count[c] > 0) b = std::min(b, sum[c] / static_cast<double>(count[c]));
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

// Hit-rate@k by brute force: full sort of cosine similarities per query.
double alignment_oracle(const std::vector<std::vector<Vector>>& text, const std::vector<std::pair<std::size_t, Vector>>& vis,
                        std::size_t k) {
  std::size_t hits = 0, total = 0;
  for (std::size_t c = 0; c < text.size(); ++c) {
    for (const auto& t : text[c]) {
      std::vector<std::pair<double, std::size_t>> sims;
      for (std::size_t j = 0; j < vis.size(); ++j) {
        const auto& v = vis[j].second;
        sims.push_back({-dot(t, v) / (norm2(t) * norm2(v)), j});
      }
      std::sort(sims.begin(), sims.end());
      bool hit = false;
      for (std::size_t r = 0; r < k; ++r) hit |= vis[sims[r].second].first == c;
      hits += hit;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

struct AlignmentInstance {
  std::vector<std::vector<Vector>> text;
  std::vector<std::pair<std::size_t, Vector>> visual;
};

AlignmentInstance random_instance(std::mt19937_64& rng, std::size_t classes, std::size_t per_class_text,
                                  std::size_t n_visual, std::size_t dim) {
  AlignmentInstance in;
  in.text.resize(classes);
  for (auto& t : in.text)
    for (std::size_t i = 0; i < per_class_text; ++i) t.push_back(random_vector(rng, dim));
  for (std::size_t i = 0; i < n_visual; ++i) in.visual.push_back({i % classes, random_vector(rng, dim)});
  return in;
}

}  // namespace

TEST_CASE("evaluate predictions") {
  const ClassCatalog cat("ds", {"a", "b", "c"});
  SUBCASE("oracle model scores 1") {
    const std::vector<std::size_t> truth{0, 1, 2, 2, 1, 0};
    const auto r = evaluate_predictions(cat, "oracle", truth, truth);
    CHECK(r.accuracy == 1.0);
    for (double v : r.per_class_accuracy) CHECK(v == 1.0);
    CHECK(r.n_test == 6);
    CHECK(r.dataset_id == "ds");
    CHECK(r.model_id == "oracle");
  }
  SUBCASE("constant model on a balanced binary set scores 0.5") {
    const ClassCatalog two("bin", {"neg", "pos"});
    std::vector<std::size_t> truth, constant;
    for (std::size_t i = 0; i < 50; ++i) truth.push_back(i % 2), constant.push_back(1);
    const auto r = evaluate_predictions(two, "const", truth, constant);
    CHECK(r.accuracy == 0.5);
    CHECK(r.per_class_accuracy[0] == 0.0);
    CHECK(r.per_class_accuracy[1] == 1.0);
  }
  SUBCASE("confusion totals, row sums and permutation invariance") {
    std::mt19937_64 rng(41);
    std::uniform_int_distribution<std::size_t> d(0, 2);
    for (int t = 0; t < 50; ++t) {
      std::vector<std::size_t> truth(40), pred(40);
      for (std::size_t i = 0; i < 40; ++i) truth[i] = d(rng), pred[i] = d(rng);
      const auto r = evaluate_predictions(cat, "m", truth, pred);
      std::size_t total = 0, trace = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        std::size_t row = 0;
        for (std::size_t j = 0; j < 3; ++j) row += r.confusion[k][j];
        CHECK(row == static_cast<std::size_t>(std::count(truth.begin(), truth.end(), k)));
        total += row;
        trace += r.confusion[k][k];
      }
      CHECK(total == r.n_test);
      CHECK(r.accuracy == static_cast<double>(trace) / 40.0);

      std::vector<std::size_t> idx(40);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<std::size_t> t2, p2;
      for (auto i : idx) t2.push_back(truth[i]), p2.push_back(pred[i]);
      const auto s = evaluate_predictions(cat, "m", t2, p2);
      CHECK(s.accuracy == r.accuracy);
      CHECK(s.confusion == r.confusion);
    }
  }
  SUBCASE("absent classes report NaN") {
    const auto r = evaluate_predictions(cat, "m", {0, 0}, {0, 1});
    CHECK(std::isnan(r.per_class_accuracy[2]));
    CHECK(r.accuracy == 0.5);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(evaluate_predictions(cat, "m", {0, 1}, {0}), ShapeError);
    CHECK_THROWS_AS(evaluate_predictions(cat, "m", {0, 3}, {0, 1}), DataError);
  }
  SUBCASE("unlabelled test item") {
    ToyVlm vlm({});
    const auto enc = vlm.visual_encoder();
    const std::vector<DataItem> test{{"x", Image(32, 16, 16), std::nullopt}};
    CHECK_THROWS_AS(evaluate(Adapter(3, kJointDim, false, "ds"), PromptVector::zeros(enc->spec()), *enc, test, cat, "m"),
                    DataError);
  }
  SUBCASE("report renderings carry every class") {
    const auto r = evaluate_predictions(cat, "m", {0, 1, 2}, {0, 1, 1});
    const std::string txt = eval_report_text(r, cat), tsv = eval_report_tsv(r, cat);
    for (const auto& l : cat.labels()) {
      CHECK(txt.find(l) != std::string::npos);
      CHECK(tsv.find("class_accuracy\t" + l) != std::string::npos);
    }
  }
}

TEST_CASE("alignment score") {
  std::mt19937_64 rng(42);
  SUBCASE("text coinciding with one of its images scores 1 at k=1") {
    AlignmentInstance in = random_instance(rng, 3, 1, 12, 16);
    for (std::size_t c = 0; c < 3; ++c) in.text[c][0] = in.visual[c].second;
    CHECK(alignment_score(in.text, in.visual, 1) == 1.0);
  }
  SUBCASE("class-agnostic embeddings with two balanced classes score about one half") {
    double sum = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const auto in = random_instance(rng, 2, 1, 10, 8);
      sum += alignment_score(in.text, in.visual, 1, kernels::Exec::kSerial);
    }
    CHECK(std::abs(sum / 1000.0 - 0.5) < 0.1);
  }
  SUBCASE("monotone in k, bounded, and equal to a brute-force oracle") {
    for (int t = 0; t < 1000; ++t) {
      std::uniform_int_distribution<std::size_t> cd(2, 4), vd(5, 12);
      const std::size_t C = cd(rng);
      const auto in = random_instance(rng, C, 1 + t % 3, vd(rng), 6);
      const auto rep = alignment_report("d", in.text, in.visual, {1, 3, 5});
      REQUIRE(rep.scores.size() == 3);
      CHECK(rep.scores[0] <= rep.scores[1]);
      CHECK(rep.scores[1] <= rep.scores[2]);
      CHECK(rep.scores[0] >= 0.0);
      CHECK(rep.scores[2] <= 1.0);
      if (t % 50 == 0)
        for (std::size_t i = 0; i < 3; ++i) CHECK(rep.scores[i] == alignment_oracle(in.text, in.visual, rep.k_values[i]));
    }
  }
  SUBCASE("serial and parallel agree") {
    const auto in = random_instance(rng, 3, 5, 40, 32);
    for (std::size_t k : {1u, 4u, 9u})
      CHECK(alignment_score(in.text, in.visual, k, kernels::Exec::kSerial) ==
            alignment_score(in.text, in.visual, k, kernels::Exec::kParallel));
  }
  SUBCASE("k must lie in [1, |visual|]") {
    const auto in = random_instance(rng, 2, 1, 4, 8);
    CHECK_THROWS_AS(alignment_score(in.text, in.visual, 0), ValidationError);
    CHECK_THROWS_AS(alignment_score(in.text, in.visual, 5), ValidationError);
    CHECK(alignment_score(in.text, in.visual, 4) == 1.0);
  }
  SUBCASE("report tsv names the definition") {
    const auto in = random_instance(rng, 2, 2, 6, 8);
    const auto rep = alignment_report("ds", in.text, in.visual, {1, 3});
    CHECK(rep.definition_id == std::string(kHitRateDefinition));
    const std::string tsv = alignment_report_tsv(rep);
    CHECK(tsv.find(kHitRateDefinition) != std::string::npos);
  }
}

TEST_CASE("plot data") {
  SUBCASE("radar over five datasets and three models has fifteen rows") {
    std::vector<RadarPoint> pts;
    for (const char* d : {"stb", "gtb", "isic", "kvasir", "pneu"})
      for (const char* m : {"gpt", "vicuna", "biomistral"}) pts.push_back({d, m, 0.5});
    const PlotData p = radar_plot("text accuracy", pts);
    CHECK(p.rows.size() == 15);
    CHECK(p.columns == std::vector<std::string>{"axis", "series", "value"});
    const std::string tsv = p.to_tsv();
    CHECK(tsv.rfind("# kind: radar\n", 0) == 0);
    CHECK(tsv.find("# rows: 15") != std::string::npos);
    CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 4 + 1 + 15);
  }
  SUBCASE("gain bars from the published averages") {
    const PlotData p = gain_bars_plot("gain", {{"average", 42.84, 55.59}});
    REQUIRE(p.rows.size() == 1);
    CHECK(std::stod(p.rows[0][3]) == doctest::Approx(12.75).epsilon(1e-9));
    CHECK(std::stod(p.rows[0][4]) == doctest::Approx(100.0 * 12.75 / 42.84).epsilon(1e-6));
  }
  SUBCASE("multiple gain inputs append an average row") {
    const PlotData p = gain_bars_plot("gain", {{"a", 40.0, 50.0}, {"b", 60.0, 66.0}});
    REQUIRE(p.rows.size() == 3);
    CHECK(p.rows[2][0] == "average");
    CHECK(std::stod(p.rows[2][3]) == doctest::Approx(8.0));
  }
  SUBCASE("empty series are rejected") {
    CHECK_THROWS_AS(radar_plot("r", {}), ValidationError);
    CHECK_THROWS_AS(gain_bars_plot("g", {}), ValidationError);
    CHECK_THROWS_AS(projection_plot("p", {}, {}), ValidationError);
    CHECK_THROWS_AS(projection_plot("p", {Vector{1.0, 2.0}}, {0, 1}), ShapeError);
  }
  SUBCASE("written files round-trip") {
    testing::TempDir dir("plots");
    const PlotData p = radar_plot("r", {{"x", "s", 0.25}});
    write_plot_data(p, dir / "r.tsv");
    CHECK(read_file(dir / "r.tsv") == p.to_tsv());
  }
}

TEST_CASE("projection of planted clusters separates them") {
  std::mt19937_64 rng(43);
  std::vector<Vector> pts;
  std::vector<std::size_t> labels;
  const Vector centre = random_vector(rng, 64, 1.0);
  for (std::size_t i = 0; i < 60; ++i) {
    Vector v = random_vector(rng, 64, 0.3);
    const double sign = i % 2 ? 1.0 : -1.0;
    for (std::size_t j = 0; j < 64; ++j) v[j] += sign * centre[j];
    pts.push_back(v);
    labels.push_back(i % 2);
  }
  for (const auto method : {ProjectionMethod::kTsne, ProjectionMethod::kPca}) {
    ProjectionOptions o;
    o.method = method;
    o.perplexity = 10.0;
    o.iterations = 750;
    o.seed = 4;
    const PlotData p = projection_plot("proj", pts, labels, o);
    REQUIRE(p.rows.size() == 60);
    std::vector<std::array<double, 2>> y;
    for (const auto& r : p.rows) y.push_back({std::stod(r[1]), std::stod(r[2])});
    const double s = silhouette_oracle(y, labels);
    CHECK(s > 0.5);
    CHECK(silhouette(y, labels) == doctest::Approx(s).epsilon(1e-9));
  }
  SUBCASE("t-SNE is seed-deterministic") {
    CHECK(tsne_2d(pts, 10.0, 100, 9) == tsne_2d(pts, 10.0, 100, 9));
  }
  SUBCASE("PCA recovers a dominant axis") {
    const auto y = pca_2d(pts);
    double sep = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) sep += (labels[i] ? 1.0 : -1.0) * y[i][0];
    CHECK(std::abs(sep) / static_cast<double>(y.size()) > 1.0);
  }
  SUBCASE("tiny inputs fall back to PCA") {
    const std::vector<Vector> few(pts.begin(), pts.begin() + 3);
    CHECK(tsne_2d(few, 30.0, 100, 1) == pca_2d(few));
  }
}
