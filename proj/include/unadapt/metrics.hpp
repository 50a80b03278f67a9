#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unadapt/adapter.hpp"
#include "unadapt/corpus.hpp"
#include "unadapt/dataset.hpp"
#include "unadapt/encoders.hpp"
#include "unadapt/kernels.hpp"

namespace unadapt {

struct EvalReport {
  std::string dataset_id;
  std::string model_id;
  double accuracy = 0.0;
  Vector per_class_accuracy;  // NaN for classes absent from the test set
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]
  std::size_t n_test = 0;
};

EvalReport evaluate_predictions(const ClassCatalog& catalog, const std::string& model_id,
                                const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted);

// Runs inference on every test item. Throws DataError if an item is unlabelled.
EvalReport evaluate(const Adapter& adapter, const PromptVector& prompt, const VisualEncoder& encoder,
                    const std::vector<DataItem>& test, const ClassCatalog& catalog, const std::string& model_id,
                    bool parallel = true);

std::string eval_report_text(const EvalReport& r, const ClassCatalog& catalog);
std::string eval_report_tsv(const EvalReport& r, const ClassCatalog& catalog);

inline constexpr const char* kHitRateDefinition = "hit-rate@k/cosine";

struct AlignmentReport {
  std::string dataset_id;
  std::vector<std::size_t> k_values;
  Vector scores;
  std::string definition_id = kHitRateDefinition;
};

// Fraction of text embeddings whose k most cosine-similar visual embeddings
// include one of the same class. Neighbours are ranked by similarity, ties
// by lower index. Throws ValidationError for k = 0 or k > |visual|.
double alignment_score(const std::vector<std::vector<Vector>>& text_per_class,
                       const std::vector<std::pair<std::size_t, Vector>>& visual, std::size_t k,
                       kernels::Exec exec = kernels::Exec::kParallel);

AlignmentReport alignment_report(const std::string& dataset_id,
                                 const std::vector<std::vector<Vector>>& text_per_class,
                                 const std::vector<std::pair<std::size_t, Vector>>& visual,
                                 const std::vector<std::size_t>& k_values);

std::string alignment_report_tsv(const AlignmentReport& r);

// Self-describing tab-separated table: "# key: value" header lines, then a
// column header row, then data rows.
struct PlotData {
  std::string kind;
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string to_tsv() const;
};

struct RadarPoint {
  std::string axis;    // e.g. dataset
  std::string series;  // e.g. model or LLM
  double value = 0.0;
};

struct GainInput {
  std::string label;
  double baseline = 0.0;
  double model = 0.0;
};

enum class ProjectionMethod { kTsne, kPca };

struct ProjectionOptions {
  ProjectionMethod method = ProjectionMethod::kTsne;
  double perplexity = 30.0;
  std::size_t iterations = 750;
  std::uint64_t seed = 0;
};

PlotData radar_plot(const std::string& title, const std::vector<RadarPoint>& points);
// Absolute gain in points and relative gain (new - base) / base in percent.
// With more than one input an "average" row is appended.
PlotData gain_bars_plot(const std::string& title, const std::vector<GainInput>& inputs);
PlotData projection_plot(const std::string& title, const std::vector<Vector>& points,
                         const std::vector<std::size_t>& labels, const ProjectionOptions& opts = {});

void write_plot_data(const PlotData& plot, const std::filesystem::path& path);

// 2-D embeddings. t-SNE falls back to PCA below four points.
std::vector<std::array<double, 2>> tsne_2d(const std::vector<Vector>& points, double perplexity,
                                           std::size_t iterations, std::uint64_t seed);
std::vector<std::array<double, 2>> pca_2d(const std::vector<Vector>& points);

// Mean silhouette coefficient under Euclidean distance.
double silhouette(const std::vector<std::array<double, 2>>& points, const std::vector<std::size_t>& labels);

}  // namespace unadapt
