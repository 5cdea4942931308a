#include <string>

#include "knobs/sae.hpp"

namespace knobs::sae {

void SaeParams::validate() const {
  const std::size_t d = w_enc.rows(), m = w_enc.cols();
  if (d == 0 || m == 0) throw ShapeError("sae: empty parameters");
  if (b_enc.size() != m || w_dec.rows() != m || w_dec.cols() != d || b_dec.size() != d) {
    throw ShapeError("sae: inconsistent parameter shapes");
  }
}

std::vector<double> preactivation(std::span<const double> z, const SaeParams& p) {
  if (z.size() != p.input_dim()) {
    throw ShapeError("sae encode: input length " + std::to_string(z.size()) + " != d " +
                     std::to_string(p.input_dim()));
  }
  std::vector<double> pre(p.b_enc);
  gemm_accumulate(z, p.w_enc.data(), pre, 1, p.input_dim(), p.features());
  return pre;
}

std::vector<double> encode(std::span<const double> z, const SaeParams& p) {
  auto h = preactivation(z, p);
  for (double& x : h) x = relu(x);
  return h;
}

std::vector<double> decode(std::span<const double> h, const SaeParams& p) {
  if (h.size() != p.features()) {
    throw ShapeError("sae decode: code length " + std::to_string(h.size()) + " != m " +
                     std::to_string(p.features()));
  }
  std::vector<double> z(p.b_dec);
  gemm_accumulate(h, p.w_dec.data(), z, 1, p.features(), p.input_dim());
  return z;
}

Matrix encode_batch(const Matrix& z, const SaeParams& p) {
  if (z.cols() != p.input_dim()) throw ShapeError("sae encode_batch: width mismatch");
  const std::size_t B = z.rows(), m = p.features();
  Matrix h(B, m);
  for (std::size_t b = 0; b < B; ++b) std::copy(p.b_enc.begin(), p.b_enc.end(), h.row(b).begin());
  gemm_accumulate(z.data(), p.w_enc.data(), h.data(), B, p.input_dim(), m);
  for (double& x : h.data()) x = relu(x);
  return h;
}

SaeLoss sae_loss_and_grads(const Matrix& z, const SaeParams& p, double lambda) {
  if (lambda < 0.0) throw ConfigError("sae loss: lambda_sparsity must be >= 0");
  if (z.rows() == 0) throw DataError("sae loss: empty batch");
  if (z.cols() != p.input_dim()) throw ShapeError("sae loss: width mismatch");
  const std::size_t B = z.rows(), d = p.input_dim(), m = p.features();
  const double inv_b = 1.0 / static_cast<double>(B);

  Matrix pre(B, m);
  for (std::size_t b = 0; b < B; ++b) std::copy(p.b_enc.begin(), p.b_enc.end(), pre.row(b).begin());
  gemm_accumulate(z.data(), p.w_enc.data(), pre.data(), B, d, m);
  Matrix h = relu(pre);
  Matrix zhat(B, d);
  for (std::size_t b = 0; b < B; ++b) std::copy(p.b_dec.begin(), p.b_dec.end(), zhat.row(b).begin());
  gemm_accumulate(h.data(), p.w_dec.data(), zhat.data(), B, m, d);

  SaeLoss out;
  out.grads = {Matrix(d, m), std::vector<double>(m, 0.0), Matrix(m, d), std::vector<double>(d, 0.0)};
  auto& g = out.grads;
  std::vector<double> dzhat(d);
  for (std::size_t b = 0; b < B; ++b) {
    const auto zb = z.row(b);
    const auto hb = h.row(b);
    const auto zh = zhat.row(b);
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double e = zh[c] - zb[c];
      sq += e * e;
      dzhat[c] = 2.0 * e * inv_b;
      g.b_dec[c] += dzhat[c];
    }
    out.reconstruction += sq;
    for (std::size_t i = 0; i < m; ++i) {
      if (hb[i] <= 0.0) continue;  // relu gate: inactive features get no gradient
      out.sparsity += hb[i];
      const auto wd = p.w_dec.row(i);
      auto gwd = g.w_dec.row(i);
      double dh = lambda * inv_b;
      for (std::size_t c = 0; c < d; ++c) {
        gwd[c] += hb[i] * dzhat[c];
        dh += dzhat[c] * wd[c];
      }
      g.b_enc[i] += dh;
      for (std::size_t c = 0; c < d; ++c) g.w_enc(c, i) += zb[c] * dh;
    }
  }
  out.reconstruction *= inv_b;
  out.sparsity *= inv_b;
  out.loss = out.reconstruction + lambda * out.sparsity;
  return out;
}

}  // namespace knobs::sae
