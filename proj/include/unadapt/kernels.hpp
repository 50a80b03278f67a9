#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "unadapt/encoders.hpp"
#include "unadapt/matrix.hpp"

// Data-parallel inner loops. Every kernel has a serial reference and an
// OpenMP version; both visit reductions in the same order, so their results
// are bit-identical and the serial one doubles as the test oracle.
namespace unadapt::kernels {

enum class Exec { kSerial, kParallel };

namespace serial {
// out(i, c) = W.row(c) . X.row(i) + bias[c]   (bias may be empty)
void batch_logits(const Matrix& weights, const Vector& bias, const Matrix& inputs, Matrix& out);
// dW(c, j) += sum_i G(i, c) * X(i, j)
void accumulate_outer(const Matrix& grads, const Matrix& inputs, Matrix& dweights);
// out(i, j) = cos(A.row(i), B.row(j))
void cosine_similarity(const Matrix& a, const Matrix& b, Matrix& out);
}  // namespace serial

namespace omp {
void batch_logits(const Matrix& weights, const Vector& bias, const Matrix& inputs, Matrix& out);
void accumulate_outer(const Matrix& grads, const Matrix& inputs, Matrix& dweights);
void cosine_similarity(const Matrix& a, const Matrix& b, Matrix& out);
}  // namespace omp

void batch_logits(const Matrix& weights, const Vector& bias, const Matrix& inputs, Matrix& out,
                  Exec exec = Exec::kParallel);
void accumulate_outer(const Matrix& grads, const Matrix& inputs, Matrix& dweights,
                      Exec exec = Exec::kParallel);
void cosine_similarity(const Matrix& a, const Matrix& b, Matrix& out, Exec exec = Exec::kParallel);

// Embeds each image (resizing as needed) with an optional prompt.
std::vector<Embedding> encode_images(const VisualEncoder& encoder, const std::vector<Image>& images,
                                     const PromptVector* prompt, Exec exec = Exec::kParallel);

// Runs fn(i) for i in [0, n). Per-index results must be written to
// per-index slots; the first exception (by index) is rethrown.
void for_each_index(std::size_t n, Exec exec, const std::function<void(std::size_t)>& fn);

Matrix stack(const std::vector<Embedding>& rows);

int max_threads();

}  // namespace unadapt::kernels
