#include "unadapt/kernels.hpp"

#include <cmath>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "unadapt/error.hpp"

namespace unadapt::kernels {

namespace {

void check_logits_shapes(const Matrix& w, const Vector& bias, const Matrix& x, Matrix& out) {
  if (x.cols() != w.cols()) {
    throw ShapeError("batch_logits: inputs have dim " + std::to_string(x.cols()) + ", weights expect " +
                     std::to_string(w.cols()));
  }
  if (!bias.empty() && bias.size() != w.rows()) throw ShapeError("batch_logits: bias length mismatch");
  if (out.rows() != x.rows() || out.cols() != w.rows()) out = Matrix(x.rows(), w.rows());
}

void check_outer_shapes(const Matrix& g, const Matrix& x, const Matrix& dw) {
  if (g.rows() != x.rows() || dw.rows() != g.cols() || dw.cols() != x.cols()) {
    throw ShapeError("accumulate_outer: incompatible shapes");
  }
}

void check_cosine_shapes(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols()) throw ShapeError("cosine_similarity: dimension mismatch");
  if (out.rows() != a.rows() || out.cols() != b.rows()) out = Matrix(a.rows(), b.rows());
}

Vector row_norms(const Matrix& m) {
  Vector n(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) n[i] = norm2(m.row(i));
  return n;
}

inline double logit_at(const Matrix& w, const Vector& bias, const Matrix& x, std::size_t i, std::size_t c) {
  return dot(w.row(c), x.row(i)) + (bias.empty() ? 0.0 : bias[c]);
}

// dw.row(c) += sum_i g(i, c) * x.row(i), each entry summed over i in order.
inline void outer_row(const Matrix& g, const Matrix& x, std::size_t c, Matrix& dw) {
  std::vector<double> s(x.cols(), 0.0);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const double gi = g(i, c);
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < s.size(); ++j) s[j] += gi * xi[j];
  }
  for (std::size_t j = 0; j < s.size(); ++j) dw(c, j) += s[j];
}

inline double cosine_at(const Matrix& a, const Matrix& b, const Vector& na, const Vector& nb,
                        std::size_t i, std::size_t j) {
  const double denom = na[i] * nb[j];
  return denom == 0.0 ? 0.0 : dot(a.row(i), b.row(j)) / denom;
}

}  // namespace

namespace serial {

void batch_logits(const Matrix& w, const Vector& bias, const Matrix& x, Matrix& out) {
  check_logits_shapes(w, bias, x, out);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < w.rows(); ++c) out(i, c) = logit_at(w, bias, x, i, c);
}

void accumulate_outer(const Matrix& g, const Matrix& x, Matrix& dw) {
  check_outer_shapes(g, x, dw);
  for (std::size_t c = 0; c < dw.rows(); ++c) outer_row(g, x, c, dw);
}

void cosine_similarity(const Matrix& a, const Matrix& b, Matrix& out) {
  check_cosine_shapes(a, b, out);
  const Vector na = row_norms(a), nb = row_norms(b);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = cosine_at(a, b, na, nb, i, j);
}

}  // namespace serial

namespace omp {

void batch_logits(const Matrix& w, const Vector& bias, const Matrix& x, Matrix& out) {
  check_logits_shapes(w, bias, x, out);
  const auto n = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < w.rows(); ++c) out(i, c) = logit_at(w, bias, x, i, c);
}

void accumulate_outer(const Matrix& g, const Matrix& x, Matrix& dw) {
  check_outer_shapes(g, x, dw);
  const auto rows = static_cast<std::ptrdiff_t>(dw.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < rows; ++c) outer_row(g, x, static_cast<std::size_t>(c), dw);
}

void cosine_similarity(const Matrix& a, const Matrix& b, Matrix& out) {
  check_cosine_shapes(a, b, out);
  const Vector na = row_norms(a), nb = row_norms(b);
  const auto n = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = cosine_at(a, b, na, nb, i, j);
}

}  // namespace omp

void batch_logits(const Matrix& w, const Vector& bias, const Matrix& x, Matrix& out, Exec exec) {
  exec == Exec::kParallel ? omp::batch_logits(w, bias, x, out) : serial::batch_logits(w, bias, x, out);
}

void accumulate_outer(const Matrix& g, const Matrix& x, Matrix& dw, Exec exec) {
  exec == Exec::kParallel ? omp::accumulate_outer(g, x, dw) : serial::accumulate_outer(g, x, dw);
}

void cosine_similarity(const Matrix& a, const Matrix& b, Matrix& out, Exec exec) {
  exec == Exec::kParallel ? omp::cosine_similarity(a, b, out) : serial::cosine_similarity(a, b, out);
}

void for_each_index(std::size_t n, Exec exec, const std::function<void(std::size_t)>& fn) {
  if (exec == Exec::kSerial) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<Embedding> encode_images(const VisualEncoder& encoder, const std::vector<Image>& images,
                                     const PromptVector* prompt, Exec exec) {
  std::vector<Embedding> out(images.size());
  for_each_index(images.size(), exec, [&](std::size_t i) { out[i] = encoder.encode(images[i], prompt); });
  return out;
}

Matrix stack(const std::vector<Embedding>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].dim() != m.cols()) throw ShapeError("cannot stack embeddings of different dimension");
    std::copy(rows[i].values.begin(), rows[i].values.end(), m.row(i).begin());
  }
  return m;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace unadapt::kernels
