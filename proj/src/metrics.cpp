#include "unadapt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "unadapt/error.hpp"
#include "unadapt/unsup.hpp"

namespace unadapt {

EvalReport evaluate_predictions(const ClassCatalog& catalog, const std::string& model_id,
                                const std::vector<std::size_t>& truth, const std::vector<std::size_t>& predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("evaluate: truth and predictions differ in length");
  const std::size_t C = catalog.size();
  EvalReport r;
  r.dataset_id = catalog.dataset_id();
  r.model_id = model_id;
  r.n_test = truth.size();
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= C || predicted[i] >= C) throw DataError("evaluate: class index out of range");
    ++r.confusion[truth[i]][predicted[i]];
  }
  std::size_t trace = 0;
  r.per_class_accuracy.assign(C, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < C; ++k) {
    trace += r.confusion[k][k];
    const std::size_t row = std::accumulate(r.confusion[k].begin(), r.confusion[k].end(), std::size_t{0});
    if (row > 0) r.per_class_accuracy[k] = static_cast<double>(r.confusion[k][k]) / static_cast<double>(row);
  }
  r.accuracy = r.n_test == 0 ? std::numeric_limits<double>::quiet_NaN()
                             : static_cast<double>(trace) / static_cast<double>(r.n_test);
  return r;
}

EvalReport evaluate(const Adapter& adapter, const PromptVector& prompt, const VisualEncoder& encoder,
                    const std::vector<DataItem>& test, const ClassCatalog& catalog, const std::string& model_id,
                    bool parallel) {
  std::vector<std::size_t> truth;
  for (const auto& it : test) {
    if (!it.label) throw DataError("evaluate: test item '" + it.item_id + "' has no label");
    truth.push_back(*it.label);
  }
  return evaluate_predictions(catalog, model_id, truth, infer_batch(test, adapter, prompt, encoder, parallel));
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.6f}", v);
}

}  // namespace

std::string eval_report_text(const EvalReport& r, const ClassCatalog& catalog) {
  std::string out = fmt::format("dataset  {}\nmodel    {}\nn_test   {}\naccuracy {:.2f}%\n\n", r.dataset_id,
                                r.model_id, r.n_test, 100.0 * r.accuracy);
  std::size_t w = 5;
  for (const auto& l : catalog.labels()) w = std::max(w, l.size());
  out += fmt::format("{:<{}}  {:>9}", "class", w, "accuracy");
  for (std::size_t k = 0; k < catalog.size(); ++k) out += fmt::format("  {:>6}", "p" + std::to_string(k));
  out += "\n";
  for (std::size_t k = 0; k < catalog.size(); ++k) {
    const double a = r.per_class_accuracy[k];
    out += fmt::format("{:<{}}  {:>9}", catalog.labels()[k], w, std::isnan(a) ? "-" : fmt::format("{:.2f}%", 100 * a));
    for (std::size_t j = 0; j < catalog.size(); ++j) out += fmt::format("  {:>6}", r.confusion[k][j]);
    out += "\n";
  }
  return out;
}

std::string eval_report_tsv(const EvalReport& r, const ClassCatalog& catalog) {
  std::string out = "# kind: eval\n# dataset_id: " + r.dataset_id + "\n# model_id: " + r.model_id + "\n";
  out += "row\tclass\tvalue\n";
  out += "accuracy\t*\t" + num(r.accuracy) + "\n";
  out += "n_test\t*\t" + std::to_string(r.n_test) + "\n";
  for (std::size_t k = 0; k < catalog.size(); ++k) {
    out += "class_accuracy\t" + catalog.labels()[k] + "\t" + num(r.per_class_accuracy[k]) + "\n";
  }
  for (std::size_t k = 0; k < catalog.size(); ++k)
    for (std::size_t j = 0; j < catalog.size(); ++j)
      out += "confusion\t" + catalog.labels()[k] + "->" + catalog.labels()[j] + "\t" +
             std::to_string(r.confusion[k][j]) + "\n";
  return out;
}

double alignment_score(const std::vector<std::vector<Vector>>& text_per_class,
                       const std::vector<std::pair<std::size_t, Vector>>& visual, std::size_t k,
                       kernels::Exec exec) {
  if (k == 0) throw ValidationError("alignment: k must be at least 1");
  if (k > visual.size()) {
    throw ValidationError("alignment: k = " + std::to_string(k) + " exceeds the " + std::to_string(visual.size()) +
                          " visual embeddings");
  }
  std::vector<std::size_t> text_class;
  std::size_t dim = visual.front().second.size();
  for (std::size_t c = 0; c < text_per_class.size(); ++c)
    for (std::size_t i = 0; i < text_per_class[c].size(); ++i) text_class.push_back(c);
  if (text_class.empty()) throw ValidationError("alignment: no text embeddings");

  Matrix T(text_class.size(), dim), V(visual.size(), dim);
  std::size_t row = 0;
  for (const auto& list : text_per_class)
    for (const auto& t : list) {
      if (t.size() != dim) throw ShapeError("alignment: embedding dimensions differ");
      std::copy(t.begin(), t.end(), T.row(row++).begin());
    }
  for (std::size_t j = 0; j < visual.size(); ++j) {
    if (visual[j].second.size() != dim) throw ShapeError("alignment: embedding dimensions differ");
    std::copy(visual[j].second.begin(), visual[j].second.end(), V.row(j).begin());
  }
  Matrix sim;
  kernels::cosine_similarity(T, V, sim, exec);

  std::vector<char> hit(T.rows(), 0);
  kernels::for_each_index(T.rows(), exec, [&](std::size_t i) {
    std::vector<std::size_t> idx(V.rows());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        return sim(i, a) != sim(i, b) ? sim(i, a) > sim(i, b) : a < b;
                      });
    for (std::size_t n = 0; n < k; ++n)
      if (visual[idx[n]].first == text_class[i]) hit[i] = 1;
  });
  const auto hits = static_cast<double>(std::count(hit.begin(), hit.end(), 1));
  return hits / static_cast<double>(T.rows());
}

AlignmentReport alignment_report(const std::string& dataset_id,
                                 const std::vector<std::vector<Vector>>& text_per_class,
                                 const std::vector<std::pair<std::size_t, Vector>>& visual,
                                 const std::vector<std::size_t>& k_values) {
  AlignmentReport r;
  r.dataset_id = dataset_id;
  r.k_values = k_values;
  for (std::size_t k : k_values) r.scores.push_back(alignment_score(text_per_class, visual, k));
  return r;
}

std::string alignment_report_tsv(const AlignmentReport& r) {
  std::string out = "# kind: alignment\n# dataset_id: " + r.dataset_id + "\n# definition_id: " + r.definition_id + "\n";
  out += "k\tscore\n";
  for (std::size_t i = 0; i < r.k_values.size(); ++i) out += std::to_string(r.k_values[i]) + "\t" + num(r.scores[i]) + "\n";
  return out;
}

std::string PlotData::to_tsv() const {
  std::string out = "# kind: " + kind + "\n# title: " + title + "\n# columns: " + std::to_string(columns.size()) +
                    "\n# rows: " + std::to_string(rows.size()) + "\n";
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "\t" : "") + columns[i];
  out += "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "\t" : "") + r[i];
    out += "\n";
  }
  return out;
}

PlotData radar_plot(const std::string& title, const std::vector<RadarPoint>& points) {
  if (points.empty()) throw ValidationError("radar plot: empty series");
  PlotData p{"radar", title, {"axis", "series", "value"}, {}};
  for (const auto& pt : points) p.rows.push_back({pt.axis, pt.series, num(pt.value)});
  return p;
}

PlotData gain_bars_plot(const std::string& title, const std::vector<GainInput>& inputs) {
  if (inputs.empty()) throw ValidationError("gain plot: empty series");
  PlotData p{"gain_bars", title, {"label", "baseline", "model", "absolute_gain", "relative_gain_percent"}, {}};
  auto add = [&](const std::string& label, double base, double model) {
    const double rel = base == 0.0 ? std::numeric_limits<double>::quiet_NaN() : 100.0 * (model - base) / base;
    p.rows.push_back({label, num(base), num(model), num(model - base), num(rel)});
  };
  double sb = 0.0, sm = 0.0;
  for (const auto& in : inputs) {
    add(in.label, in.baseline, in.model);
    sb += in.baseline;
    sm += in.model;
  }
  if (inputs.size() > 1) add("average", sb / static_cast<double>(inputs.size()), sm / static_cast<double>(inputs.size()));
  return p;
}

std::vector<std::array<double, 2>> pca_2d(const std::vector<Vector>& points) {
  const std::size_t n = points.size();
  if (n == 0) return {};
  const std::size_t d = points.front().size();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = points[i][j];
  X.rowwise() -= X.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X.transpose() * X);
  std::vector<std::array<double, 2>> out(n, {0.0, 0.0});
  const auto cols = es.eigenvectors().cols();
  for (int c = 0; c < 2 && c < cols; ++c) {
    Eigen::VectorXd axis = es.eigenvectors().col(cols - 1 - c);
    // Fix the sign so the output does not depend on the solver's choice.
    Eigen::Index arg;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    const Eigen::VectorXd proj = X * axis;
    for (std::size_t i = 0; i < n; ++i) out[i][static_cast<std::size_t>(c)] = proj(static_cast<Eigen::Index>(i));
  }
  return out;
}

std::vector<std::array<double, 2>> tsne_2d(const std::vector<Vector>& points, double perplexity,
                                           std::size_t iterations, std::uint64_t seed) {
  const std::size_t n = points.size();
  if (n < 4) return pca_2d(points);
  perplexity = std::min(perplexity, (static_cast<double>(n) - 1) / 3.0);

  std::vector<double> D(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < points[i].size(); ++k) s += (points[i][k] - points[j][k]) * (points[i][k] - points[j][k]);
      D[i * n + j] = D[j * n + i] = s;
    }

  // Conditional affinities with a bisection on the precision per point.
  std::vector<double> P(n * n, 0.0);
  const double target = std::log(perplexity);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 100; ++it) {
      double sum = 0.0, hsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double p = std::exp(-beta * D[i * n + j]);
        P[i * n + j] = p;
        sum += p;
        hsum += beta * D[i * n + j] * p;
      }
      if (sum <= 0.0) sum = std::numeric_limits<double>::min();
      const double h = std::log(sum) + hsum / sum;
      for (std::size_t j = 0; j < n; ++j) P[i * n + j] /= sum;
      if (std::abs(h - target) < 1e-5) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = std::max((P[i * n + j] + P[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
      P[i * n + j] = P[j * n + i] = s;
    }

  std::mt19937_64 rng(derive_seed(seed, "tsne"));
  std::normal_distribution<double> g(0.0, 1e-4);
  std::vector<std::array<double, 2>> Y(n), vel(n, {0, 0}), gains(n, {1, 1});
  for (auto& y : Y) y = {g(rng), g(rng)};

  std::vector<double> Q(n * n);
  const double lr = std::max(static_cast<double>(n) / 12.0, 50.0);
  for (std::size_t it = 0; it < iterations; ++it) {
    const double exag = it < 250 ? 12.0 : 1.0;
    const double mom = it < 250 ? 0.5 : 0.8;
    double qsum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double dy0 = Y[i][0] - Y[j][0], dy1 = Y[i][1] - Y[j][1];
        Q[i * n + j] = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
        qsum += Q[i * n + j];
      }
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, 2> grad{0, 0};
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = (exag * P[i * n + j] - Q[i * n + j] / qsum) * Q[i * n + j];
        grad[0] += 4 * w * (Y[i][0] - Y[j][0]);
        grad[1] += 4 * w * (Y[i][1] - Y[j][1]);
      }
      for (int d = 0; d < 2; ++d) {
        gains[i][d] = (grad[d] > 0) != (vel[i][d] > 0) ? gains[i][d] + 0.2 : std::max(gains[i][d] * 0.8, 0.01);
        vel[i][d] = mom * vel[i][d] - lr * gains[i][d] * grad[d];
      }
    }
    std::array<double, 2> mean{0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      Y[i][0] += vel[i][0];
      Y[i][1] += vel[i][1];
      mean[0] += Y[i][0] / static_cast<double>(n);
      mean[1] += Y[i][1] / static_cast<double>(n);
    }
    for (auto& y : Y) {
      y[0] -= mean[0];
      y[1] -= mean[1];
    }
  }
  return Y;
}

double silhouette(const std::vector<std::array<double, 2>>& points, const std::vector<std::size_t>& labels) {
  const std::size_t n = points.size();
  if (labels.size() != n) throw ShapeError("silhouette: label count mismatch");
  const std::size_t C = n == 0 ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sum(C, 0.0);
    std::vector<std::size_t> cnt(C, 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum[labels[j]] += std::hypot(points[i][0] - points[j][0], points[i][1] - points[j][1]);
      ++cnt[labels[j]];
    }
    if (cnt[labels[i]] == 0) continue;
    const double a = sum[labels[i]] / static_cast<double>(cnt[labels[i]]);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c)
      if (c != labels[i] && cnt[c] > 0) b = std::min(b, sum[c] / static_cast<double>(cnt[c]));
    if (std::isinf(b)) continue;
    total += (b - a) / std::max(a, b);
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

PlotData projection_plot(const std::string& title, const std::vector<Vector>& points,
                         const std::vector<std::size_t>& labels, const ProjectionOptions& opts) {
  if (points.empty()) throw ValidationError("projection plot: empty series");
  if (labels.size() != points.size()) throw ShapeError("projection plot: label count mismatch");
  const bool tsne = opts.method == ProjectionMethod::kTsne && points.size() >= 4;
  const auto Y = tsne ? tsne_2d(points, opts.perplexity, opts.iterations, opts.seed) : pca_2d(points);
  PlotData p{"projection_2d", title, {"index", "x", "y", "predicted_class"}, {}};
  p.title += tsne ? " [t-SNE]" : " [PCA]";
  for (std::size_t i = 0; i < Y.size(); ++i) {
    p.rows.push_back({std::to_string(i), num(Y[i][0]), num(Y[i][1]), std::to_string(labels[i])});
  }
  return p;
}

void write_plot_data(const PlotData& plot, const std::filesystem::path& path) {
  write_file_atomic(path, plot.to_tsv());
}

}  // namespace unadapt
