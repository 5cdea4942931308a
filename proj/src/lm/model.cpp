#include <cmath>
#include <numbers>
#include <string>

#include "transformer.hpp"

namespace knobs::lm {

void LmConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("lm config: vocab_size must be positive");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("lm config: d_model must be a positive multiple of n_heads");
  }
  if (context < 1) throw ConfigError("lm config: context must be >= 1");
  if (n_layers < 2) throw ConfigError("lm config: need at least 2 layers");
  if (d_ff == 0) throw ConfigError("lm config: d_ff must be positive");
}

ParamLayout ParamLayout::of(const LmConfig& c) {
  ParamLayout p{};
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  const std::size_t d = c.d_model, f = c.d_ff;
  p.wte = take(c.vocab_size * d);
  p.wpe = take(c.context * d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    Layer L{};
    L.ln1_g = take(d);
    L.ln1_b = take(d);
    L.w_qkv = take(d * 3 * d);
    L.b_qkv = take(3 * d);
    L.w_o = take(d * d);
    L.b_o = take(d);
    L.ln2_g = take(d);
    L.ln2_b = take(d);
    L.w_fc = take(d * f);
    L.b_fc = take(f);
    L.w_proj = take(f * d);
    L.b_proj = take(d);
    p.layers.push_back(L);
  }
  p.lnf_g = take(d);
  p.lnf_b = take(d);
  p.w_out = take(d * c.vocab_size);
  p.total = off;
  return p;
}

LmWeights init_weights(const LmConfig& config, Tokenizer tokenizer, std::uint64_t seed) {
  config.validate();
  if (tokenizer.vocab_size() != config.vocab_size) {
    throw ConfigError("lm config: vocab_size " + std::to_string(config.vocab_size) +
                      " does not match tokenizer vocabulary " +
                      std::to_string(tokenizer.vocab_size()));
  }
  LmWeights w{config, std::move(tokenizer), {}};
  const ParamLayout lay = ParamLayout::of(config);
  w.params.assign(lay.total, 0.0);
  SeededRng rng(seed);
  const double std_base = 0.02;
  const double std_resid = std_base / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  const std::size_t d = config.d_model, f = config.d_ff;
  auto fill = [&](std::size_t at, std::size_t n, double sd) {
    for (std::size_t i = 0; i < n; ++i) w.params[at + i] = rng.normal(0.0, sd);
  };
  auto ones = [&](std::size_t at, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) w.params[at + i] = 1.0;
  };
  fill(lay.wte, config.vocab_size * d, std_base);
  fill(lay.wpe, config.context * d, std_base);
  for (const auto& L : lay.layers) {
    ones(L.ln1_g, d);
    fill(L.w_qkv, d * 3 * d, std_base);
    fill(L.w_o, d * d, std_resid);
    ones(L.ln2_g, d);
    fill(L.w_fc, d * f, std_base);
    fill(L.w_proj, f * d, std_resid);
  }
  ones(lay.lnf_g, d);
  fill(lay.w_out, d * config.vocab_size, std_base);
  return w;
}

namespace detail {

namespace {

constexpr double kLnEps = 1e-5;

void linear_forward(const double* in, const double* W, const double* b, double* out,
                    std::size_t T, std::size_t K, std::size_t N) {
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < N; ++j) out[t * N + j] = b ? b[j] : 0.0;
  gemm_accumulate({in, T * K}, {W, K * N}, {out, T * N}, T, K, N);
}

// din, dW, db are accumulated; din and db may be null.
void linear_backward(double* din, double* dW, double* db, const double* dout, const double* in,
                     const double* W, std::size_t T, std::size_t K, std::size_t N) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* go = dout + t * N;
    const double* x = in + t * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = x[k];
      double* dw = dW + k * N;
      for (std::size_t j = 0; j < N; ++j) dw[j] += a * go[j];
    }
    if (db)
      for (std::size_t j = 0; j < N; ++j) db[j] += go[j];
    if (din) {
      double* dx = din + t * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double* wk = W + k * N;
        double s = 0.0;
        for (std::size_t j = 0; j < N; ++j) s += go[j] * wk[j];
        dx[k] += s;
      }
    }
  }
}

void layernorm_forward(const double* in, const double* g, const double* b, double* out,
                       double* mean, double* rstd, std::size_t T, std::size_t C) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = in + t * C;
    double m = 0.0;
    for (std::size_t i = 0; i < C; ++i) m += x[i];
    m /= static_cast<double>(C);
    double v = 0.0;
    for (std::size_t i = 0; i < C; ++i) v += (x[i] - m) * (x[i] - m);
    v /= static_cast<double>(C);
    const double r = 1.0 / std::sqrt(v + kLnEps);
    double* o = out + t * C;
    for (std::size_t i = 0; i < C; ++i) o[i] = (x[i] - m) * r * g[i] + b[i];
    mean[t] = m;
    rstd[t] = r;
  }
}

void layernorm_backward(double* din, double* dg, double* db, const double* dout,
                        const double* in, const double* mean, const double* rstd,
                        const double* g, std::size_t T, std::size_t C) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* go = dout + t * C;
    const double* x = in + t * C;
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < C; ++i) {
      const double xhat = (x[i] - mean[t]) * rstd[t];
      const double dxhat = go[i] * g[i];
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= static_cast<double>(C);
    mean_dxhat_xhat /= static_cast<double>(C);
    double* dx = din + t * C;
    for (std::size_t i = 0; i < C; ++i) {
      const double xhat = (x[i] - mean[t]) * rstd[t];
      const double dxhat = go[i] * g[i];
      dg[i] += go[i] * xhat;
      db[i] += go[i];
      dx[i] += rstd[t] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
  }
}

void attention_forward(const double* qkv, double* y, double* att, std::size_t T, std::size_t C,
                       std::size_t H) {
  const std::size_t hd = C / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t t = 0; t < T; ++t) {
      const double* q = qkv + t * 3 * C + h * hd;
      double* p = att + (h * T + t) * T;
      double maxv = -INFINITY;
      for (std::size_t u = 0; u <= t; ++u) {
        const double* k = qkv + u * 3 * C + C + h * hd;
        double s = 0.0;
        for (std::size_t i = 0; i < hd; ++i) s += q[i] * k[i];
        s *= scale;
        p[u] = s;
        if (s > maxv) maxv = s;
      }
      double sum = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        p[u] = std::exp(p[u] - maxv);
        sum += p[u];
      }
      for (std::size_t u = 0; u <= t; ++u) p[u] /= sum;
      for (std::size_t u = t + 1; u < T; ++u) p[u] = 0.0;
      double* out = y + t * C + h * hd;
      for (std::size_t i = 0; i < hd; ++i) out[i] = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        const double* v = qkv + u * 3 * C + 2 * C + h * hd;
        for (std::size_t i = 0; i < hd; ++i) out[i] += p[u] * v[i];
      }
    }
  }
}

void attention_backward(double* dqkv, const double* dy, const double* qkv, const double* att,
                        std::size_t T, std::size_t C, std::size_t H) {
  const std::size_t hd = C / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> dp(T);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t t = 0; t < T; ++t) {
      const double* p = att + (h * T + t) * T;
      const double* go = dy + t * C + h * hd;
      double weighted = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        const double* v = qkv + u * 3 * C + 2 * C + h * hd;
        double* dv = dqkv + u * 3 * C + 2 * C + h * hd;
        double s = 0.0;
        for (std::size_t i = 0; i < hd; ++i) {
          s += go[i] * v[i];
          dv[i] += p[u] * go[i];
        }
        dp[u] = s;
        weighted += p[u] * s;
      }
      const double* q = qkv + t * 3 * C + h * hd;
      double* dq = dqkv + t * 3 * C + h * hd;
      for (std::size_t u = 0; u <= t; ++u) {
        const double ds = p[u] * (dp[u] - weighted) * scale;
        const double* k = qkv + u * 3 * C + C + h * hd;
        double* dk = dqkv + u * 3 * C + C + h * hd;
        for (std::size_t i = 0; i < hd; ++i) {
          dq[i] += ds * k[i];
          dk[i] += ds * q[i];
        }
      }
    }
  }
}

const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

void gelu_forward(const double* in, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = in[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
  }
}

void gelu_backward(double* din, const double* in, const double* dout, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = in[i];
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    const double th = std::tanh(u);
    const double sech2 = 1.0 - th * th;
    const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    din[i] += dout[i] * (0.5 * (1.0 + th) + 0.5 * x * sech2 * du);
  }
}

}  // namespace

void forward_pass(std::span<const int> tokens, const LmWeights& w, const InjectionHook* hook,
                  Activations& acts) {
  const LmConfig& c = w.config;
  const std::size_t T = tokens.size();
  if (T > c.context) {
    throw LengthError("forward: " + std::to_string(T) + " tokens exceed context " +
                      std::to_string(c.context));
  }
  if (hook && (hook->layer >= c.n_layers || hook->vector.size() != c.d_model)) {
    throw ShapeError("forward: injection hook does not fit the model");
  }
  const std::size_t d = c.d_model, F = c.d_ff, H = c.n_heads, V = c.vocab_size;
  const ParamLayout lay = ParamLayout::of(c);
  const double* P = w.params.data();
  acts.tokens = T;
  acts.layers.resize(c.n_layers);

  std::vector<double> x(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    const int tok = tokens[t];
    if (tok < 0 || static_cast<std::size_t>(tok) >= V) throw IndexError("forward: token id out of range");
    const double* e = P + lay.wte + static_cast<std::size_t>(tok) * d;
    const double* pe = P + lay.wpe + t * d;
    for (std::size_t i = 0; i < d; ++i) x[t * d + i] = e[i] + pe[i];
  }

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& L = lay.layers[l];
    LayerActs& a = acts.layers[l];
    a.x_in = x;
    a.ln1.resize(T * d);
    a.ln1_mean.resize(T);
    a.ln1_rstd.resize(T);
    layernorm_forward(x.data(), P + L.ln1_g, P + L.ln1_b, a.ln1.data(), a.ln1_mean.data(),
                      a.ln1_rstd.data(), T, d);
    a.qkv.resize(T * 3 * d);
    linear_forward(a.ln1.data(), P + L.w_qkv, P + L.b_qkv, a.qkv.data(), T, d, 3 * d);
    a.att.resize(H * T * T);
    a.y.resize(T * d);
    attention_forward(a.qkv.data(), a.y.data(), a.att.data(), T, d, H);
    a.x_mid.resize(T * d);
    linear_forward(a.y.data(), P + L.w_o, P + L.b_o, a.x_mid.data(), T, d, d);
    for (std::size_t i = 0; i < T * d; ++i) a.x_mid[i] += x[i];

    a.ln2.resize(T * d);
    a.ln2_mean.resize(T);
    a.ln2_rstd.resize(T);
    layernorm_forward(a.x_mid.data(), P + L.ln2_g, P + L.ln2_b, a.ln2.data(), a.ln2_mean.data(),
                      a.ln2_rstd.data(), T, d);
    a.fc.resize(T * F);
    linear_forward(a.ln2.data(), P + L.w_fc, P + L.b_fc, a.fc.data(), T, d, F);
    a.act.resize(T * F);
    gelu_forward(a.fc.data(), a.act.data(), T * F);
    a.x_out.resize(T * d);
    linear_forward(a.act.data(), P + L.w_proj, P + L.b_proj, a.x_out.data(), T, F, d);
    for (std::size_t i = 0; i < T * d; ++i) a.x_out[i] += a.x_mid[i];

    if (hook && hook->layer == l) {
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < d; ++i) a.x_out[t * d + i] += hook->vector[i];
    }
    x = a.x_out;
  }

  acts.lnf.resize(T * d);
  acts.lnf_mean.resize(T);
  acts.lnf_rstd.resize(T);
  layernorm_forward(x.data(), P + lay.lnf_g, P + lay.lnf_b, acts.lnf.data(), acts.lnf_mean.data(),
                    acts.lnf_rstd.data(), T, d);
  acts.logits.resize(T * V);
  linear_forward(acts.lnf.data(), P + lay.w_out, nullptr, acts.logits.data(), T, d, V);
}

void backward_pass(std::span<const int> tokens, const LmWeights& w, const Activations& acts,
                   std::span<const double> dlogits, std::span<double> grad) {
  const LmConfig& c = w.config;
  const std::size_t T = acts.tokens;
  const std::size_t d = c.d_model, F = c.d_ff, H = c.n_heads, V = c.vocab_size;
  const ParamLayout lay = ParamLayout::of(c);
  const double* P = w.params.data();
  double* G = grad.data();

  std::vector<double> dlnf(T * d, 0.0);
  linear_backward(dlnf.data(), G + lay.w_out, nullptr, dlogits.data(), acts.lnf.data(),
                  P + lay.w_out, T, d, V);
  std::vector<double> dx(T * d, 0.0);
  const auto& last = acts.layers.back();
  layernorm_backward(dx.data(), G + lay.lnf_g, G + lay.lnf_b, dlnf.data(), last.x_out.data(),
                     acts.lnf_mean.data(), acts.lnf_rstd.data(), P + lay.lnf_g, T, d);

  std::vector<double> dact, dfc, dln2, dx_mid, dy, dqkv, dln1;
  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& L = lay.layers[li];
    const LayerActs& a = acts.layers[li];

    // x_out = x_mid + proj(gelu(fc(ln2(x_mid)))) [+ constant injection]
    dx_mid = dx;
    dact.assign(T * F, 0.0);
    linear_backward(dact.data(), G + L.w_proj, G + L.b_proj, dx.data(), a.act.data(),
                    P + L.w_proj, T, F, d);
    dfc.assign(T * F, 0.0);
    gelu_backward(dfc.data(), a.fc.data(), dact.data(), T * F);
    dln2.assign(T * d, 0.0);
    linear_backward(dln2.data(), G + L.w_fc, G + L.b_fc, dfc.data(), a.ln2.data(), P + L.w_fc,
                    T, d, F);
    layernorm_backward(dx_mid.data(), G + L.ln2_g, G + L.ln2_b, dln2.data(), a.x_mid.data(),
                       a.ln2_mean.data(), a.ln2_rstd.data(), P + L.ln2_g, T, d);

    // x_mid = x_in + o(attn(qkv(ln1(x_in))))
    dx = dx_mid;
    dy.assign(T * d, 0.0);
    linear_backward(dy.data(), G + L.w_o, G + L.b_o, dx_mid.data(), a.y.data(), P + L.w_o, T, d,
                    d);
    dqkv.assign(T * 3 * d, 0.0);
    attention_backward(dqkv.data(), dy.data(), a.qkv.data(), a.att.data(), T, d, H);
    dln1.assign(T * d, 0.0);
    linear_backward(dln1.data(), G + L.w_qkv, G + L.b_qkv, dqkv.data(), a.ln1.data(),
                    P + L.w_qkv, T, d, 3 * d);
    layernorm_backward(dx.data(), G + L.ln1_g, G + L.ln1_b, dln1.data(), a.x_in.data(),
                       a.ln1_mean.data(), a.ln1_rstd.data(), P + L.ln1_g, T, d);
  }

  for (std::size_t t = 0; t < T; ++t) {
    double* de = G + lay.wte + static_cast<std::size_t>(tokens[t]) * d;
    double* dpe = G + lay.wpe + t * d;
    for (std::size_t i = 0; i < d; ++i) {
      de[i] += dx[t * d + i];
      dpe[i] += dx[t * d + i];
    }
  }
}

}  // namespace detail

ForwardResult forward(std::span<const int> tokens, const LmWeights& weights,
                      const std::set<std::size_t>& capture_layers, const InjectionHook* hook) {
  for (std::size_t l : capture_layers) {
    if (l >= weights.config.n_layers) throw IndexError("forward: capture layer out of range");
  }
  detail::Activations acts;
  detail::forward_pass(tokens, weights, hook, acts);
  ForwardResult out;
  const std::size_t T = tokens.size();
  out.logits = Matrix(T, weights.config.vocab_size, std::move(acts.logits));
  for (std::size_t l : capture_layers) {
    out.captures.push_back({l, Matrix(T, weights.config.d_model, acts.layers[l].x_out)});
  }
  return out;
}

}  // namespace knobs::lm
