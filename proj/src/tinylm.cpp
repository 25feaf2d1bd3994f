#include "forge/tinylm.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace forge {

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || kv_heads < 1 || dim < 1 || hidden_dim < 1 ||
      vocab_size < 2 || seq_len < 2)
    fail("model config: all sizes must be positive");
  if (dim % heads != 0) fail("model config: dim must be divisible by heads");
  if (heads % kv_heads != 0)
    fail("model config: heads must be divisible by kv_heads");
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  const std::size_t D = static_cast<std::size_t>(cfg.dim);
  const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
  const std::size_t KV = static_cast<std::size_t>(cfg.kv_dim());
  const std::size_t F = static_cast<std::size_t>(cfg.hidden_dim);
  std::size_t off = 0;
  tok_emb = off;
  off += V * D;
  layer.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& L : layer) {
    L.ln1_g = off; off += D;
    L.wq = off; off += D * D;
    L.wk = off; off += D * KV;
    L.wv = off; off += D * KV;
    L.wo = off; off += D * D;
    L.ln2_g = off; off += D;
    L.w1 = off; off += D * F;
    L.w2 = off; off += F * D;
  }
  lnf_g = off;
  off += D;
  out_w = off;
  if (!cfg.tied_embeddings) off += D * V;
  total = off;
}

std::size_t ModelConfig::param_count() const { return ParamLayout(*this).total; }

std::uint64_t ModelCheckpoint::digest() const {
  std::uint64_t h = fnv1a64(&step, sizeof(step));
  h = fnv1a64(params.data(), params.size() * sizeof(double), h);
  return h;
}

ModelCheckpoint init_checkpoint(const ModelConfig& cfg, std::uint64_t seed,
                                double init_scale) {
  cfg.validate();
  ParamLayout lay(cfg);
  ModelCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.params.assign(lay.total, 0.0);
  ckpt.rng_state = seed;
  Rng rng(mix64(seed, 0x71e1a1u));
  for (double& p : ckpt.params) p = init_scale * rng.next_gaussian();
  // norm gains start at 1
  auto set_ones = [&](std::size_t off, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) ckpt.params[off + i] = 1.0;
  };
  const std::size_t D = static_cast<std::size_t>(cfg.dim);
  for (const auto& L : lay.layer) {
    set_ones(L.ln1_g, D);
    set_ones(L.ln2_g, D);
  }
  set_ones(lay.lnf_g, D);
  return ckpt;
}

namespace {

constexpr std::uint64_t kCkptMagic = 0x31544b4347524f46ull;  // "FORGCKT1"

}  // namespace

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write checkpoint: " + path);
  auto put_u64 = [&](std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  };
  put_u64(kCkptMagic);
  const auto& c = ckpt.config;
  for (int v : {c.layers, c.heads, c.kv_heads, c.dim, c.hidden_dim,
                c.vocab_size, c.seq_len, c.qk_norm ? 1 : 0,
                c.tied_embeddings ? 1 : 0})
    put_u64(static_cast<std::uint64_t>(v));
  put_u64(ckpt.step);
  put_u64(ckpt.rng_state);
  put_u64(ckpt.digest());
  put_u64(ckpt.params.size());
  for (double p : ckpt.params) {
    std::uint64_t bits;
    std::memcpy(&bits, &p, 8);
    put_u64(bits);
  }
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open checkpoint: " + path);
  auto get_u64 = [&]() {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) fail("truncated checkpoint: " + path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  };
  if (get_u64() != kCkptMagic) fail("bad checkpoint magic: " + path);
  ModelCheckpoint ckpt;
  auto& c = ckpt.config;
  c.layers = static_cast<int>(get_u64());
  c.heads = static_cast<int>(get_u64());
  c.kv_heads = static_cast<int>(get_u64());
  c.dim = static_cast<int>(get_u64());
  c.hidden_dim = static_cast<int>(get_u64());
  c.vocab_size = static_cast<int>(get_u64());
  c.seq_len = static_cast<int>(get_u64());
  c.qk_norm = get_u64() != 0;
  c.tied_embeddings = get_u64() != 0;
  ckpt.step = get_u64();
  ckpt.rng_state = get_u64();
  std::uint64_t digest = get_u64();
  std::uint64_t n = get_u64();
  ckpt.params.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint64_t bits = get_u64();
    std::memcpy(&ckpt.params[i], &bits, 8);
  }
  if (ckpt.digest() != digest) fail("checkpoint digest mismatch: " + path);
  return ckpt;
}

// ------------------------------------------------------------------ model

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kRopeBase = 10000.0;

struct LayerCache {
  std::vector<double> h_in;      // T x D, residual entering the block
  std::vector<double> ln1_inv;   // T
  std::vector<double> a;         // T x D
  std::vector<double> q_raw;     // T x D (pre qk-norm, pre rope)
  std::vector<double> k_raw;     // T x KV
  std::vector<double> q;         // T x D (post norm+rope)
  std::vector<double> k;         // T x KV
  std::vector<double> v;         // T x KV
  std::vector<double> q_inv;     // T x H   qk-norm inverse rms
  std::vector<double> k_inv;     // T x KVH
  std::vector<double> probs;     // H x T x T
  std::vector<double> attn_cat;  // T x D, heads concatenated
  std::vector<double> h_mid;     // T x D, residual entering the mlp
  std::vector<double> ln2_inv;   // T
  std::vector<double> b;         // T x D
  std::vector<double> u1;        // T x F, pre-activation
  std::vector<double> g;         // T x F, silu(u1)
};

struct Cache {
  std::size_t T = 0;
  std::vector<LayerCache> layers;
  std::vector<double> h_out;    // T x D
  std::vector<double> lnf_inv;  // T
  std::vector<double> f;        // T x D, post final norm
};

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

// y[t] = x[t] * W, W row-major [in][out]
void matmul(const double* x, const double* w, double* y, std::size_t T,
            std::size_t in, std::size_t out) {
  for (std::size_t t = 0; t < T; ++t) {
    double* yr = y + t * out;
    std::fill(yr, yr + out, 0.0);
    const double* xr = x + t * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wr = w + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wr[o];
    }
  }
}

// dx += dy * W^T; dW += x^T * dy
void matmul_backward(const double* x, const double* w, const double* dy,
                     double* dx, double* dw, std::size_t T, std::size_t in,
                     std::size_t out) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* xr = x + t * in;
    const double* dyr = dy + t * out;
    double* dxr = dx + t * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double* wr = w + i * out;
      double* dwr = dw + i * out;
      double acc = 0.0;
      const double xi = xr[i];
      for (std::size_t o = 0; o < out; ++o) {
        acc += dyr[o] * wr[o];
        dwr[o] += xi * dyr[o];
      }
      dxr[i] += acc;
    }
  }
}

void rmsnorm_forward(const double* x, const double* gain, double* y,
                     double* inv_rms, std::size_t T, std::size_t D) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* xr = x + t * D;
    double ss = 0.0;
    for (std::size_t i = 0; i < D; ++i) ss += xr[i] * xr[i];
    double r = 1.0 / std::sqrt(ss / static_cast<double>(D) + kNormEps);
    inv_rms[t] = r;
    double* yr = y + t * D;
    for (std::size_t i = 0; i < D; ++i) yr[i] = gain[i] * xr[i] * r;
  }
}

void rmsnorm_backward(const double* x, const double* gain,
                      const double* inv_rms, const double* dy, double* dx,
                      double* dgain, std::size_t T, std::size_t D) {
  for (std::size_t t = 0; t < T; ++t) {
    const double* xr = x + t * D;
    const double* dyr = dy + t * D;
    double* dxr = dx + t * D;
    const double r = inv_rms[t];
    double c = 0.0;
    for (std::size_t i = 0; i < D; ++i) c += dyr[i] * gain[i] * xr[i];
    c *= r * r * r / static_cast<double>(D);
    for (std::size_t i = 0; i < D; ++i) {
      dxr[i] += dyr[i] * gain[i] * r - xr[i] * c;
      dgain[i] += dyr[i] * xr[i] * r;
    }
  }
}

void rope_rotate(double* vec, std::size_t pos, std::size_t hd, bool inverse) {
  for (std::size_t i = 0; i + 1 < hd; i += 2) {
    double theta = std::pow(kRopeBase, -static_cast<double>(i) /
                                           static_cast<double>(hd));
    double ang = static_cast<double>(pos) * theta;
    double c = std::cos(ang), s = std::sin(ang);
    if (inverse) s = -s;
    double x0 = vec[i], x1 = vec[i + 1];
    vec[i] = x0 * c - x1 * s;
    vec[i + 1] = x0 * s + x1 * c;
  }
}

// Unit-RMS normalization of one head vector; returns inverse rms.
double vecnorm_forward(double* vec, std::size_t hd) {
  double ss = 0.0;
  for (std::size_t i = 0; i < hd; ++i) ss += vec[i] * vec[i];
  double r = 1.0 / std::sqrt(ss / static_cast<double>(hd) + kNormEps);
  for (std::size_t i = 0; i < hd; ++i) vec[i] *= r;
  return r;
}

void vecnorm_backward(const double* raw, double inv_rms, const double* dy,
                      double* dx, std::size_t hd) {
  double c = 0.0;
  for (std::size_t i = 0; i < hd; ++i) c += dy[i] * raw[i];
  c *= inv_rms * inv_rms * inv_rms / static_cast<double>(hd);
  for (std::size_t i = 0; i < hd; ++i)
    dx[i] += dy[i] * inv_rms - raw[i] * c;
}

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg), layout_(cfg) {
  cfg_.validate();
}

namespace {

// Forward pass over inputs[0..T), filling the cache through the final norm.
void run_forward(const ModelConfig& cfg, const ParamLayout& lay,
                 std::span<const double> p, std::span<const std::uint32_t> in,
                 Cache& cache) {
  const std::size_t T = in.size();
  const std::size_t D = static_cast<std::size_t>(cfg.dim);
  const std::size_t KV = static_cast<std::size_t>(cfg.kv_dim());
  const std::size_t F = static_cast<std::size_t>(cfg.hidden_dim);
  const std::size_t H = static_cast<std::size_t>(cfg.heads);
  const std::size_t KVH = static_cast<std::size_t>(cfg.kv_heads);
  const std::size_t hd = static_cast<std::size_t>(cfg.head_dim());
  const std::size_t group = H / KVH;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  cache.T = T;
  cache.layers.resize(static_cast<std::size_t>(cfg.layers));

  std::vector<double> h(T * D);
  for (std::size_t t = 0; t < T; ++t) {
    if (in[t] >= static_cast<std::uint32_t>(cfg.vocab_size))
      fail("token id out of range");
    const double* row = p.data() + lay.tok_emb + in[t] * D;
    std::copy(row, row + D, h.data() + t * D);
  }

  for (std::size_t l = 0; l < cache.layers.size(); ++l) {
    LayerCache& C = cache.layers[l];
    const auto& L = lay.layer[l];
    C.h_in = h;
    C.ln1_inv.resize(T);
    C.a.resize(T * D);
    rmsnorm_forward(h.data(), p.data() + L.ln1_g, C.a.data(), C.ln1_inv.data(),
                    T, D);

    C.q_raw.resize(T * D);
    C.k_raw.resize(T * KV);
    C.v.resize(T * KV);
    matmul(C.a.data(), p.data() + L.wq, C.q_raw.data(), T, D, D);
    matmul(C.a.data(), p.data() + L.wk, C.k_raw.data(), T, D, KV);
    matmul(C.a.data(), p.data() + L.wv, C.v.data(), T, D, KV);

    C.q = C.q_raw;
    C.k = C.k_raw;
    C.q_inv.assign(T * H, 1.0);
    C.k_inv.assign(T * KVH, 1.0);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t hh = 0; hh < H; ++hh) {
        double* qh = C.q.data() + t * D + hh * hd;
        if (cfg.qk_norm) C.q_inv[t * H + hh] = vecnorm_forward(qh, hd);
        rope_rotate(qh, t, hd, false);
      }
      for (std::size_t kh = 0; kh < KVH; ++kh) {
        double* khv = C.k.data() + t * KV + kh * hd;
        if (cfg.qk_norm) C.k_inv[t * KVH + kh] = vecnorm_forward(khv, hd);
        rope_rotate(khv, t, hd, false);
      }
    }

    C.probs.assign(H * T * T, 0.0);
    C.attn_cat.assign(T * D, 0.0);
    std::vector<double> scores(T);
    for (std::size_t hh = 0; hh < H; ++hh) {
      const std::size_t kh = hh / group;
      for (std::size_t t = 0; t < T; ++t) {
        const double* qh = C.q.data() + t * D + hh * hd;
        double mx = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          const double* khv = C.k.data() + u * KV + kh * hd;
          double s = 0.0;
          for (std::size_t i = 0; i < hd; ++i) s += qh[i] * khv[i];
          scores[u] = s * scale;
          mx = std::max(mx, scores[u]);
        }
        double z = 0.0;
        double* pr = C.probs.data() + (hh * T + t) * T;
        for (std::size_t u = 0; u <= t; ++u) {
          pr[u] = std::exp(scores[u] - mx);
          z += pr[u];
        }
        double* out = C.attn_cat.data() + t * D + hh * hd;
        for (std::size_t u = 0; u <= t; ++u) {
          pr[u] /= z;
          const double* vv = C.v.data() + u * KV + kh * hd;
          for (std::size_t i = 0; i < hd; ++i) out[i] += pr[u] * vv[i];
        }
      }
    }

    std::vector<double> attn_out(T * D);
    matmul(C.attn_cat.data(), p.data() + L.wo, attn_out.data(), T, D, D);
    for (std::size_t i = 0; i < T * D; ++i) h[i] += attn_out[i];
    C.h_mid = h;

    C.ln2_inv.resize(T);
    C.b.resize(T * D);
    rmsnorm_forward(h.data(), p.data() + L.ln2_g, C.b.data(), C.ln2_inv.data(),
                    T, D);
    C.u1.resize(T * F);
    matmul(C.b.data(), p.data() + L.w1, C.u1.data(), T, D, F);
    C.g.resize(T * F);
    for (std::size_t i = 0; i < T * F; ++i) C.g[i] = silu(C.u1[i]);
    std::vector<double> mlp_out(T * D);
    matmul(C.g.data(), p.data() + L.w2, mlp_out.data(), T, F, D);
    for (std::size_t i = 0; i < T * D; ++i) h[i] += mlp_out[i];
  }

  cache.h_out = h;
  cache.lnf_inv.resize(T);
  cache.f.resize(T * D);
  rmsnorm_forward(h.data(), p.data() + lay.lnf_g, cache.f.data(),
                  cache.lnf_inv.data(), T, D);
}

// Backward from df (gradient w.r.t. post-final-norm states) plus an extra
// gradient dh_extra applied directly to the residual stream (used by the
// tied output head, which also feeds tok_emb).
void run_backward(const ModelConfig& cfg, const ParamLayout& lay,
                  std::span<const double> p, std::span<const std::uint32_t> in,
                  const Cache& cache, std::vector<double>& df,
                  std::span<double> grad) {
  const std::size_t T = cache.T;
  const std::size_t D = static_cast<std::size_t>(cfg.dim);
  const std::size_t KV = static_cast<std::size_t>(cfg.kv_dim());
  const std::size_t F = static_cast<std::size_t>(cfg.hidden_dim);
  const std::size_t H = static_cast<std::size_t>(cfg.heads);
  const std::size_t KVH = static_cast<std::size_t>(cfg.kv_heads);
  const std::size_t hd = static_cast<std::size_t>(cfg.head_dim());
  const std::size_t group = H / KVH;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> dh(T * D, 0.0);
  rmsnorm_backward(cache.h_out.data(), p.data() + lay.lnf_g,
                   cache.lnf_inv.data(), df.data(), dh.data(),
                   grad.data() + lay.lnf_g, T, D);

  for (std::size_t l = cache.layers.size(); l-- > 0;) {
    const LayerCache& C = cache.layers[l];
    const auto& L = lay.layer[l];

    // mlp block
    std::vector<double> dg(T * F, 0.0);
    matmul_backward(C.g.data(), p.data() + L.w2, dh.data(), dg.data(),
                    grad.data() + L.w2, T, F, D);
    std::vector<double> du1(T * F);
    for (std::size_t i = 0; i < T * F; ++i)
      du1[i] = dg[i] * silu_grad(C.u1[i]);
    std::vector<double> db(T * D, 0.0);
    matmul_backward(C.b.data(), p.data() + L.w1, du1.data(), db.data(),
                    grad.data() + L.w1, T, D, F);
    rmsnorm_backward(C.h_mid.data(), p.data() + L.ln2_g, C.ln2_inv.data(),
                     db.data(), dh.data(), grad.data() + L.ln2_g, T, D);

    // attention block
    std::vector<double> dcat(T * D, 0.0);
    matmul_backward(C.attn_cat.data(), p.data() + L.wo, dh.data(), dcat.data(),
                    grad.data() + L.wo, T, D, D);

    std::vector<double> dq(T * D, 0.0);
    std::vector<double> dk(T * KV, 0.0);
    std::vector<double> dv(T * KV, 0.0);
    std::vector<double> dscore(T);
    for (std::size_t hh = 0; hh < H; ++hh) {
      const std::size_t kh = hh / group;
      for (std::size_t t = 0; t < T; ++t) {
        const double* do_h = dcat.data() + t * D + hh * hd;
        const double* pr = C.probs.data() + (hh * T + t) * T;
        double mean = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          const double* vv = C.v.data() + u * KV + kh * hd;
          double dp = 0.0;
          for (std::size_t i = 0; i < hd; ++i) dp += do_h[i] * vv[i];
          dscore[u] = dp;
          mean += pr[u] * dp;
        }
        const double* qh = C.q.data() + t * D + hh * hd;
        double* dqh = dq.data() + t * D + hh * hd;
        for (std::size_t u = 0; u <= t; ++u) {
          double ds = pr[u] * (dscore[u] - mean) * scale;
          const double* khv = C.k.data() + u * KV + kh * hd;
          double* dkh = dk.data() + u * KV + kh * hd;
          double* dvv = dv.data() + u * KV + kh * hd;
          for (std::size_t i = 0; i < hd; ++i) {
            dqh[i] += ds * khv[i];
            dkh[i] += ds * qh[i];
            dvv[i] += pr[u] * do_h[i];
          }
        }
      }
    }

    // undo rope, then qk-norm
    std::vector<double> dq_raw(T * D, 0.0);
    std::vector<double> dk_raw(T * KV, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t hh = 0; hh < H; ++hh) {
        double* dqh = dq.data() + t * D + hh * hd;
        rope_rotate(dqh, t, hd, true);
        if (cfg.qk_norm) {
          vecnorm_backward(C.q_raw.data() + t * D + hh * hd,
                           C.q_inv[t * H + hh], dqh,
                           dq_raw.data() + t * D + hh * hd, hd);
        } else {
          double* dst = dq_raw.data() + t * D + hh * hd;
          for (std::size_t i = 0; i < hd; ++i) dst[i] += dqh[i];
        }
      }
      for (std::size_t kh = 0; kh < KVH; ++kh) {
        double* dkh = dk.data() + t * KV + kh * hd;
        rope_rotate(dkh, t, hd, true);
        if (cfg.qk_norm) {
          vecnorm_backward(C.k_raw.data() + t * KV + kh * hd,
                           C.k_inv[t * KVH + kh], dkh,
                           dk_raw.data() + t * KV + kh * hd, hd);
        } else {
          double* dst = dk_raw.data() + t * KV + kh * hd;
          for (std::size_t i = 0; i < hd; ++i) dst[i] += dkh[i];
        }
      }
    }

    std::vector<double> da(T * D, 0.0);
    matmul_backward(C.a.data(), p.data() + L.wq, dq_raw.data(), da.data(),
                    grad.data() + L.wq, T, D, D);
    matmul_backward(C.a.data(), p.data() + L.wk, dk_raw.data(), da.data(),
                    grad.data() + L.wk, T, D, KV);
    matmul_backward(C.a.data(), p.data() + L.wv, dv.data(), da.data(),
                    grad.data() + L.wv, T, D, KV);

    std::vector<double> dh_in(T * D, 0.0);
    rmsnorm_backward(C.h_in.data(), p.data() + L.ln1_g, C.ln1_inv.data(),
                     da.data(), dh_in.data(), grad.data() + L.ln1_g, T, D);
    for (std::size_t i = 0; i < T * D; ++i) dh[i] += dh_in[i];
  }

  for (std::size_t t = 0; t < T; ++t) {
    double* erow = grad.data() + lay.tok_emb + in[t] * D;
    const double* dhr = dh.data() + t * D;
    for (std::size_t i = 0; i < D; ++i) erow[i] += dhr[i];
  }
}

// Softmax over logits for one position; returns log(sum exp) shift pieces.
void position_logits(const ModelConfig& cfg, const ParamLayout& lay,
                     std::span<const double> p, const double* frow,
                     std::vector<double>& logits) {
  const std::size_t D = static_cast<std::size_t>(cfg.dim);
  const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
  logits.assign(V, 0.0);
  const double* W =
      cfg.tied_embeddings ? p.data() + lay.tok_emb : p.data() + lay.out_w;
  if (cfg.tied_embeddings) {
    // logits[v] = f . emb[v]
    for (std::size_t v = 0; v < V; ++v) {
      const double* row = W + v * D;
      double s = 0.0;
      for (std::size_t i = 0; i < D; ++i) s += frow[i] * row[i];
      logits[v] = s;
    }
  } else {
    for (std::size_t i = 0; i < D; ++i) {
      const double fi = frow[i];
      const double* wr = W + i * V;
      for (std::size_t v = 0; v < V; ++v) logits[v] += fi * wr[v];
    }
  }
}

void softmax_inplace(std::vector<double>& x) {
  double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : x) v /= z;
}

std::span<const std::uint32_t> clip_inputs(const ModelConfig& cfg,
                                           const TokenizedSample& sample,
                                           bool for_loss) {
  std::size_t n = sample.tokens.size();
  if (for_loss) {
    if (n < 2) fail("sample " + std::to_string(sample.doc_id) +
                    " too short for NLL (needs >= 2 tokens)");
    n -= 1;  // inputs; targets are shifted by one
  }
  n = std::min(n, static_cast<std::size_t>(cfg.seq_len));
  return std::span<const std::uint32_t>(sample.tokens.data(), n);
}

}  // namespace

double Model::forward_nll(std::span<const double> params,
                          const TokenizedSample& sample) const {
  auto in = clip_inputs(cfg_, sample, true);
  Cache cache;
  run_forward(cfg_, layout_, params, in, cache);
  const std::size_t D = static_cast<std::size_t>(cfg_.dim);
  std::vector<double> logits;
  double nll = 0.0;
  for (std::size_t t = 0; t < cache.T; ++t) {
    position_logits(cfg_, layout_, params, cache.f.data() + t * D, logits);
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    nll += mx + std::log(z) - logits[sample.tokens[t + 1]];
  }
  return nll / static_cast<double>(cache.T);
}

double Model::grad_nll(std::span<const double> params,
                       const TokenizedSample& sample, std::span<double> grad,
                       double weight) const {
  auto in = clip_inputs(cfg_, sample, true);
  Cache cache;
  run_forward(cfg_, layout_, params, in, cache);
  const std::size_t T = cache.T;
  const std::size_t D = static_cast<std::size_t>(cfg_.dim);
  const std::size_t V = static_cast<std::size_t>(cfg_.vocab_size);

  std::vector<double> df(T * D, 0.0);
  std::vector<double> logits;
  double nll = 0.0;
  const double* W = cfg_.tied_embeddings ? params.data() + layout_.tok_emb
                                         : params.data() + layout_.out_w;
  for (std::size_t t = 0; t < T; ++t) {
    const double* frow = cache.f.data() + t * D;
    position_logits(cfg_, layout_, params, frow, logits);
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    nll += mx + std::log(z) - logits[sample.tokens[t + 1]];
    // dlogit = (softmax - onehot) * weight / T
    const double inv = weight / static_cast<double>(T);
    double* dfr = df.data() + t * D;
    for (std::size_t v = 0; v < V; ++v) {
      double pv = std::exp(logits[v] - mx) / z;
      double dl = pv * inv;
      if (v == sample.tokens[t + 1]) dl -= inv;
      if (dl == 0.0) continue;
      if (cfg_.tied_embeddings) {
        const double* row = W + v * D;
        double* erow = grad.data() + layout_.tok_emb + v * D;
        for (std::size_t i = 0; i < D; ++i) {
          dfr[i] += dl * row[i];
          erow[i] += dl * frow[i];
        }
      } else {
        double* gw = grad.data() + layout_.out_w;
        for (std::size_t i = 0; i < D; ++i) {
          dfr[i] += dl * W[i * V + v];
          gw[i * V + v] += dl * frow[i];
        }
      }
    }
  }
  // scale the rest of backprop by weight via df (already scaled)
  std::vector<double> dfv = std::move(df);
  run_backward(cfg_, layout_, params, in, cache, dfv, grad);
  return nll / static_cast<double>(T);
}

double Model::batch_loss_and_grad(std::span<const double> params,
                                  std::span<const TokenizedSample> batch,
                                  std::span<double> grad) const {
  double total_tokens = 0.0;
  for (const auto& s : batch)
    total_tokens += static_cast<double>(clip_inputs(cfg_, s, true).size());
  double loss = 0.0;
  for (const auto& s : batch) {
    double w = static_cast<double>(clip_inputs(cfg_, s, true).size()) /
               total_tokens;
    loss += w * grad_nll(params, s, grad, w);
  }
  return loss;
}

double Model::distill_loss_and_grad(std::span<const double> student_params,
                                    std::span<const double> teacher_params,
                                    std::span<const TokenizedSample> batch,
                                    std::span<double> grad) const {
  if (teacher_params.size() != student_params.size())
    fail("distill: teacher/student parameter shapes differ");
  const std::size_t D = static_cast<std::size_t>(cfg_.dim);
  const std::size_t V = static_cast<std::size_t>(cfg_.vocab_size);

  double total_tokens = 0.0;
  for (const auto& s : batch)
    total_tokens += static_cast<double>(clip_inputs(cfg_, s, true).size());

  double kl_total = 0.0;
  std::vector<double> t_logits, s_logits;
  for (const auto& sample : batch) {
    auto in = clip_inputs(cfg_, sample, true);
    Cache s_cache, t_cache;
    run_forward(cfg_, layout_, student_params, in, s_cache);
    run_forward(cfg_, layout_, teacher_params, in, t_cache);
    const std::size_t T = s_cache.T;
    std::vector<double> df(T * D, 0.0);
    const double* W = cfg_.tied_embeddings
                          ? student_params.data() + layout_.tok_emb
                          : student_params.data() + layout_.out_w;
    for (std::size_t t = 0; t < T; ++t) {
      const double* frow = s_cache.f.data() + t * D;
      position_logits(cfg_, layout_, student_params, frow, s_logits);
      position_logits(cfg_, layout_, teacher_params, t_cache.f.data() + t * D,
                      t_logits);
      softmax_inplace(s_logits);
      softmax_inplace(t_logits);
      const double inv = 1.0 / total_tokens;
      double* dfr = df.data() + t * D;
      for (std::size_t v = 0; v < V; ++v) {
        if (t_logits[v] > 0.0)
          kl_total += t_logits[v] * std::log(t_logits[v] /
                                             std::max(s_logits[v], 1e-300));
        double dl = (s_logits[v] - t_logits[v]) * inv;
        if (cfg_.tied_embeddings) {
          const double* row = W + v * D;
          double* erow = grad.data() + layout_.tok_emb + v * D;
          for (std::size_t i = 0; i < D; ++i) {
            dfr[i] += dl * row[i];
            erow[i] += dl * frow[i];
          }
        } else {
          double* gw = grad.data() + layout_.out_w;
          for (std::size_t i = 0; i < D; ++i) {
            dfr[i] += dl * W[i * V + v];
            gw[i * V + v] += dl * frow[i];
          }
        }
      }
    }
    run_backward(cfg_, layout_, student_params, in, s_cache, df, grad);
  }
  return kl_total / total_tokens;
}

std::vector<std::vector<double>> Model::output_embeddings(
    std::span<const double> params, std::span<const TokenizedSample> samples,
    bool logits) const {
  if (samples.empty()) fail("output_embeddings: no samples");
  const std::size_t D = static_cast<std::size_t>(cfg_.dim);
  std::vector<std::vector<double>> rows;
  std::vector<double> lg;
  for (const auto& s : samples) {
    auto in = clip_inputs(cfg_, s, false);
    if (in.empty()) continue;
    Cache cache;
    run_forward(cfg_, layout_, params, in, cache);
    for (std::size_t t = 0; t < cache.T; ++t) {
      if (logits) {
        position_logits(cfg_, layout_, params, cache.f.data() + t * D, lg);
        rows.push_back(lg);
      } else {
        rows.emplace_back(cache.f.begin() + static_cast<long>(t * D),
                          cache.f.begin() + static_cast<long>((t + 1) * D));
      }
    }
  }
  return rows;
}

// --------------------------------------------------------------- training

double LrSchedule::lr_at(std::uint64_t step) const {
  if (warmup_steps > 0 && step <= warmup_steps)
    return peak_lr * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return peak_lr;
  double frac = static_cast<double>(step - warmup_steps) /
                static_cast<double>(total_steps - warmup_steps);
  frac = std::min(frac, 1.0);
  return peak_lr * (1.0 - (1.0 - decay_floor) * frac);
}

void OptimState::apply(std::span<double> params, std::span<const double> grad) {
  ++step;
  const double lr = schedule.lr_at(step);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= lr * weight_decay * params[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    double mhat = m[i] / bc1;
    double vhat = v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

std::vector<ModelCheckpoint> train(const ModelCheckpoint& init,
                                   const TokenStream& stream, OptimState optim,
                                   const TrainOptions& opts) {
  if (stream.samples.empty()) fail("train: empty stream");
  Model model(init.config);
  ModelCheckpoint cur = init;
  if (optim.m.size() != cur.params.size()) optim.init(cur.params.size());
  if (optim.schedule.total_steps == 0)
    optim.schedule.total_steps = opts.steps + optim.step;

  std::vector<ModelCheckpoint> out;
  std::vector<double> grad(cur.params.size());
  std::vector<TokenizedSample> batch;
  std::size_t cursor = 0;
  const std::uint64_t first = optim.step;
  for (std::uint64_t s = 1; s <= opts.steps; ++s) {
    batch.clear();
    while (batch.size() < opts.batch_size) {
      const auto& cand = stream.samples[cursor];
      cursor = (cursor + 1) % stream.samples.size();
      if (cand.length() >= 2) batch.push_back(cand);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = model.batch_loss_and_grad(cur.params, batch, grad);
    if (!std::isfinite(loss))
      fail("training diverged (non-finite loss) at step " + std::to_string(s));
    optim.apply(cur.params, grad);
    cur.step = first + s;
    if (opts.on_step) opts.on_step(cur.step, loss);
    if (opts.checkpoint_every > 0 && s % opts.checkpoint_every == 0 &&
        s != opts.steps)
      out.push_back(cur);
  }
  out.push_back(cur);
  return out;
}

void distill_step(ModelCheckpoint& student, const ModelCheckpoint& teacher,
                  std::span<const TokenizedSample> batch, OptimState& optim) {
  if (teacher.config.vocab_size != student.config.vocab_size)
    fail("distill: vocabulary mismatch");
  Model model(student.config);
  if (optim.m.size() != student.params.size())
    optim.init(student.params.size());
  std::vector<double> grad(student.params.size(), 0.0);
  model.distill_loss_and_grad(student.params, teacher.params, batch, grad);
  optim.apply(student.params, grad);
  student.step += 1;
}

}  // namespace forge
