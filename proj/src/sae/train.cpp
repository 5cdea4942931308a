#include <algorithm>
#include <cmath>
#include <string>

#include "knobs/log.hpp"
#include "knobs/sae.hpp"

namespace knobs::sae {

void SaeTrainConfig::validate() const {
  if (lambda_sparsity < 0.0) throw ConfigError("sae train: lambda_sparsity must be >= 0");
  if (steps < 1) throw ConfigError("sae train: steps must be >= 1");
  if (batch_size < 1) throw ConfigError("sae train: batch_size must be >= 1");
  if (features < 1) throw ConfigError("sae train: features must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("sae train: learning_rate must be > 0");
}

SaeTrainStats compute_stats(const Matrix& activations, const SaeParams& p) {
  p.validate();
  const std::size_t m = p.features(), d = p.input_dim();
  SaeTrainStats s;
  s.max_activation.assign(m, 0.0);
  s.activation_count.assign(m, 0);
  s.sample_count = activations.rows();
  double mse = 0.0, l0 = 0.0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < activations.rows(); start += kChunk) {
    const std::size_t n = std::min(kChunk, activations.rows() - start);
    Matrix z(n, d, std::vector<double>(activations.data().begin() + start * d,
                                       activations.data().begin() + (start + n) * d));
    const Matrix h = encode_batch(z, p);
    for (std::size_t b = 0; b < n; ++b) {
      const auto hb = h.row(b);
      for (std::size_t i = 0; i < m; ++i) {
        if (hb[i] > 0.0) {
          ++s.activation_count[i];
          l0 += 1.0;
          s.max_activation[i] = std::max(s.max_activation[i], hb[i]);
        }
      }
      const auto zhat = decode(hb, p);
      for (std::size_t c = 0; c < d; ++c) mse += (zhat[c] - z(b, c)) * (zhat[c] - z(b, c));
    }
  }
  s.dead.resize(m);
  for (std::size_t i = 0; i < m; ++i) s.dead[i] = s.activation_count[i] == 0;
  if (s.sample_count) {
    s.reconstruction_mse = mse / static_cast<double>(s.sample_count);
    s.mean_l0 = l0 / static_cast<double>(s.sample_count);
  }
  return s;
}

namespace {

void normalize_decoder_rows(SaeParams& p) {
  for (std::size_t i = 0; i < p.features(); ++i) {
    auto row = p.w_dec.row(i);
    const double n = l2_norm(row);
    if (n > 0.0)
      for (double& x : row) x /= n;
  }
}

struct Moments {
  std::vector<double> m, v;
  explicit Moments(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Points each dead feature at a poorly reconstructed sample, drawn with
// probability proportional to squared error.
void resample_dead(SaeParams& p, const Matrix& data, const std::vector<bool>& fired,
                   SeededRng& rng, Moments& m_we, Moments& m_be, Moments& m_wd) {
  const std::size_t m = p.features(), d = p.input_dim();
  std::vector<std::size_t> dead;
  for (std::size_t i = 0; i < m; ++i)
    if (!fired[i]) dead.push_back(i);
  if (dead.empty()) return;

  const std::size_t pool = std::min<std::size_t>(data.rows(), 4096);
  std::vector<std::size_t> idx(pool);
  std::vector<std::vector<double>> residual(pool);
  std::vector<double> weight(pool);
  double total = 0.0;
  for (std::size_t k = 0; k < pool; ++k) {
    idx[k] = rng.below(data.rows());
    const auto z = data.row(idx[k]);
    const auto zhat = decode(encode(z, p), p);
    residual[k].resize(d);
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      residual[k][c] = z[c] - zhat[c];
      sq += residual[k][c] * residual[k][c];
    }
    weight[k] = sq;
    total += sq;
  }
  if (total <= 0.0) return;

  double alive_norm = 0.0;
  std::size_t alive = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!fired[i]) continue;
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) sq += p.w_enc(c, i) * p.w_enc(c, i);
    alive_norm += std::sqrt(sq);
    ++alive;
  }
  const double enc_scale = 0.2 * (alive ? alive_norm / static_cast<double>(alive) : 1.0);

  for (std::size_t i : dead) {
    double u = rng.uniform() * total, acc = 0.0;
    std::size_t pick = pool - 1;
    for (std::size_t k = 0; k < pool; ++k) {
      acc += weight[k];
      if (u < acc) {
        pick = k;
        break;
      }
    }
    const double n = l2_norm(residual[pick]);
    if (n <= 0.0) continue;
    for (std::size_t c = 0; c < d; ++c) {
      const double dir = residual[pick][c] / n;
      p.w_dec(i, c) = dir;
      p.w_enc(c, i) = dir * enc_scale;
      m_we.m[c * m + i] = m_we.v[c * m + i] = 0.0;
      m_wd.m[i * d + c] = m_wd.v[i * d + c] = 0.0;
    }
    p.b_enc[i] = 0.0;
    m_be.m[i] = m_be.v[i] = 0.0;
  }
}

}  // namespace

TrainedSae train_sae(const Matrix& data, const SaeTrainConfig& config) {
  config.validate();
  if (data.rows() == 0) throw DataError("sae train: no activations");
  if (data.rows() < config.batch_size) {
    throw DataError("sae train: " + std::to_string(data.rows()) +
                    " activations is fewer than batch size " + std::to_string(config.batch_size));
  }
  const std::size_t d = data.cols(), m = config.features;
  SeededRng rng(config.seed);
  SeededRng init_rng = rng.fork(1), batch_rng = rng.fork(2), resample_rng = rng.fork(3);

  SaeParams p{Matrix(d, m), std::vector<double>(m, 0.0), Matrix(m, d), std::vector<double>(d, 0.0)};
  for (double& x : p.w_dec.data()) x = init_rng.normal();
  normalize_decoder_rows(p);
  p.w_enc = p.w_dec.transpose();
  for (std::size_t r = 0; r < data.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) p.b_dec[c] += data(r, c);
  for (double& x : p.b_dec) x /= static_cast<double>(data.rows());

  Moments m_we(d * m), m_be(m), m_wd(m * d), m_bd(d);
  std::int64_t t_we = 0, t_be = 0, t_wd = 0, t_bd = 0;
  AdamHyper hyper;
  std::vector<bool> fired(m, false);

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  Matrix batch(config.batch_size, d);
  const std::size_t decay_from = config.steps - config.steps / 5;
  const std::size_t last_resample = config.steps * 3 / 4;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        order.resize(data.rows());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[batch_rng.below(i)]);
        cursor = 0;
      }
      const auto src = data.row(order[cursor++]);
      std::copy(src.begin(), src.end(), batch.row(b).begin());
    }
    SaeLoss l = sae_loss_and_grads(batch, p, config.lambda_sparsity);
    for (std::size_t i = 0; i < m; ++i)
      if (l.grads.b_enc[i] != 0.0) fired[i] = true;

    hyper.learning_rate = config.learning_rate;
    if (step > decay_from) {
      hyper.learning_rate *= static_cast<double>(config.steps - step + 1) /
                             static_cast<double>(config.steps - decay_from + 1);
    }
    adam_step(p.w_enc.data(), l.grads.w_enc.data(), m_we.m, m_we.v, t_we, hyper);
    adam_step(p.b_enc, l.grads.b_enc, m_be.m, m_be.v, t_be, hyper);
    adam_step(p.w_dec.data(), l.grads.w_dec.data(), m_wd.m, m_wd.v, t_wd, hyper);
    adam_step(p.b_dec, l.grads.b_dec, m_bd.m, m_bd.v, t_bd, hyper);
    normalize_decoder_rows(p);

    if (config.resample_interval && step % config.resample_interval == 0) {
      if (step <= last_resample) resample_dead(p, data, fired, resample_rng, m_we, m_be, m_wd);
      std::fill(fired.begin(), fired.end(), false);
    }
  }

  TrainedSae out{p, compute_stats(data, p), config};
  return out;
}

}  // namespace knobs::sae
