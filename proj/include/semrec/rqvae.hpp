#pragma once

#include <iostream>

#include "semrec/dataio.hpp"
#include "semrec/optim.hpp"

namespace semrec {

// ---------------------------------------------------------------------------
// Small GELU MLP used for the encoder/decoder halves.

class Mlp {
 public:
  Mlp() = default;

  Mlp(const std::string& prefix, int in_dim, const std::vector<int>& hidden, int out_dim,
      Rng& rng) {
    std::vector<int> dims{in_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out_dim);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      Tensor w({dims[l], dims[l + 1]});
      const double s = std::sqrt(2.0 / (dims[l] + dims[l + 1]));
      for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(rng.normal(0.0, s));
      params_.emplace_back(std::move(w), str_cat(prefix, ".w", l));
      params_.emplace_back(Tensor({dims[l + 1]}), str_cat(prefix, ".b", l));
    }
  }

  // x: [batch, in_dim]. GELU between layers, linear output.
  Var forward(const Var& x) const {
    Var h = x;
    const size_t n_layers = params_.size() / 2;
    for (size_t l = 0; l < n_layers; ++l) {
      h = add(matmul(h, params_[2 * l].var), params_[2 * l + 1].var);
      if (l + 1 < n_layers) h = gelu(h);
    }
    return h;
  }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

 private:
  std::vector<Parameter> params_;  // w0, b0, w1, b1, ...
};

// ---------------------------------------------------------------------------
// Config and stack

struct RqvaeConfig {
  int d_f = 16;
  int d_z = 16;
  int n_levels = 4;
  int64_t codebook_size = 256;  // k
  std::vector<int> hidden = {32, 32};
  double beta_commit = 0.25;
  int epochs = 25;
  int64_t batch_size = 256;
  double lr = 1e-3;
  double ema_decay = 0.99;
  uint64_t seed = 1;

  void validate() const {
    if (n_levels < 1 || codebook_size < 1 || d_z < 1 || d_f < 1) {
      throw ConfigError("rqvae: n_levels, codebook_size, d_z, d_f must all be >= 1");
    }
    if (epochs < 1 || batch_size < 1) throw ConfigError("rqvae: epochs/batch_size must be >= 1");
  }
};

struct QuantizeResult {
  std::vector<int64_t> codewords;      // one index per level
  std::vector<float> quantized;        // sum of chosen codewords, d_z
  std::vector<double> residual_norms;  // n_levels + 1 entries, [0] = ||latent||
};

class CodebookStack {
 public:
  RqvaeConfig cfg;                                 // codebook_size may be clamped
  std::vector<Tensor> levels;                      // n_levels x [k, d_z]
  Mlp encoder, decoder;
  std::vector<std::vector<int64_t>> usage_counts;  // per level, last training epoch
  FeatureStats feature_stats;                      // catalog normalization, for cold start

  // Deterministic encoder pass on an already-normalized feature vector.
  std::vector<float> encode(const std::vector<float>& features) const {
    Tensor batch = encode_batch({features});
    return std::vector<float>(batch.data(), batch.data() + cfg.d_z);
  }

  Tensor encode_batch(const std::vector<std::vector<float>>& features) const {
    NoGrad ng;
    Tensor x({static_cast<int64_t>(features.size()), cfg.d_f});
    for (size_t i = 0; i < features.size(); ++i) {
      if (static_cast<int>(features[i].size()) != cfg.d_f) {
        throw ShapeError(str_cat("encode: feature dim ", features[i].size(), " != d_f ",
                                 cfg.d_f));
      }
      std::copy(features[i].begin(), features[i].end(), x.data() + static_cast<int64_t>(i) * cfg.d_f);
    }
    return encoder.forward(constant(std::move(x)))->value;
  }

  // Greedy residual quantization: level l picks the squared-distance argmin
  // over its codebook (lowest index on ties), then the residual shrinks by
  // the chosen codeword.
  QuantizeResult quantize(const std::vector<float>& latent) const {
    if (static_cast<int>(latent.size()) != cfg.d_z) {
      throw ShapeError(str_cat("quantize: latent dim ", latent.size(), " != d_z ", cfg.d_z));
    }
    QuantizeResult out;
    std::vector<float> residual = latent;
    out.quantized.assign(latent.size(), 0.0f);
    out.residual_norms.push_back(l2_norm(residual));
    for (const Tensor& book : levels) {
      if (book.numel() == 0) throw ConfigError("quantize: empty codebook");
      const int64_t k = book.dim(0);
      int64_t best = 0;
      double best_dist = std::numeric_limits<double>::max();
      for (int64_t c = 0; c < k; ++c) {
        const float* row = book.data() + c * cfg.d_z;
        double d = 0.0;
        for (int j = 0; j < cfg.d_z; ++j) {
          const double diff = residual[static_cast<size_t>(j)] - row[j];
          d += diff * diff;
        }
        if (d < best_dist) {
          best_dist = d;
          best = c;
        }
      }
      const float* row = book.data() + best * cfg.d_z;
      for (int j = 0; j < cfg.d_z; ++j) {
        residual[static_cast<size_t>(j)] -= row[j];
        out.quantized[static_cast<size_t>(j)] += row[j];
      }
      out.codewords.push_back(best);
      out.residual_norms.push_back(l2_norm(residual));
    }
    return out;
  }

  std::vector<float> decode(const std::vector<float>& quantized) const {
    if (static_cast<int>(quantized.size()) != cfg.d_z) {
      throw ShapeError(str_cat("decode: input dim ", quantized.size(), " != d_z ", cfg.d_z));
    }
    NoGrad ng;
    Tensor x({1, cfg.d_z}, quantized);
    Tensor y = decoder.forward(constant(std::move(x)))->value;
    return std::vector<float>(y.data(), y.data() + cfg.d_f);
  }

  QuantizeResult encode_and_quantize(const std::vector<float>& features) const {
    return quantize(encode(features));
  }

  std::vector<Parameter*> trainable_params() {
    std::vector<Parameter*> ps;
    for (auto& p : encoder.params()) ps.push_back(&p);
    for (auto& p : decoder.params()) ps.push_back(&p);
    return ps;
  }

 private:
  static double l2_norm(const std::vector<float>& v) {
    double acc = 0.0;
    for (float x : v) acc += static_cast<double>(x) * x;
    return std::sqrt(acc);
  }
};

// ---------------------------------------------------------------------------
// Loss

struct RqvaeLossParts {
  Var loss;         // recon + codebook + beta * commit; gradients reach enc/dec only
  double recon = 0.0;
  double codebook = 0.0;
  double commit = 0.0;
  std::vector<std::vector<int64_t>> assignments;      // per level, per row
  std::vector<Tensor> level_residuals;                // per level, [B, d_z] inputs to that level
};

// Standard RQ-VAE composition: ||x - decode(q)||^2 + sum_l (||sg(r_l) - c_l||^2
// + beta * ||r_l - sg(c_l)||^2), straight-through through the quantizer. The
// codebook term carries no gradient here; codebooks learn by EMA.
inline RqvaeLossParts rqvae_loss(CodebookStack& stack, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != stack.cfg.d_f) {
    throw ShapeError(str_cat("rqvae_loss: input ", shape_str(x.shape()), ", expected [B, ",
                             stack.cfg.d_f, "]"));
  }
  const int64_t batch = x.dim(0);
  const int d_z = stack.cfg.d_z;
  const int n_levels = stack.cfg.n_levels;

  Var xin = constant(x);
  Var z = stack.encoder.forward(xin);

  RqvaeLossParts parts;
  parts.assignments.assign(static_cast<size_t>(n_levels), {});
  parts.level_residuals.reserve(static_cast<size_t>(n_levels));

  // Quantize rows; collect per-level residual inputs for EMA and the loss value.
  Tensor quantized({batch, d_z});
  Tensor residual = z->value;
  double codebook_term = 0.0;
  for (int l = 0; l < n_levels; ++l) {
    parts.level_residuals.push_back(residual);
    const Tensor& book = stack.levels[static_cast<size_t>(l)];
    if (book.numel() == 0) throw ConfigError("rqvae_loss: empty codebook");
    const int64_t k = book.dim(0);
    auto& assign = parts.assignments[static_cast<size_t>(l)];
    assign.resize(static_cast<size_t>(batch));
#pragma omp parallel for schedule(static) if (batch > 32 && k * d_z > 2048)
    for (int64_t i = 0; i < batch; ++i) {
      const float* r = residual.data() + i * d_z;
      int64_t best = 0;
      double best_dist = std::numeric_limits<double>::max();
      for (int64_t c = 0; c < k; ++c) {
        const float* row = book.data() + c * d_z;
        double d = 0.0;
        for (int j = 0; j < d_z; ++j) {
          const double diff = r[j] - row[j];
          d += diff * diff;
        }
        if (d < best_dist) {
          best_dist = d;
          best = c;
        }
      }
      assign[static_cast<size_t>(i)] = best;
    }
    double level_term = 0.0;
    for (int64_t i = 0; i < batch; ++i) {
      const float* row = book.data() + assign[static_cast<size_t>(i)] * d_z;
      float* r = residual.data() + i * d_z;
      float* q = quantized.data() + i * d_z;
      for (int j = 0; j < d_z; ++j) {
        const double diff = r[j] - row[j];
        level_term += diff * diff;
        r[j] -= row[j];
        q[j] += row[j];
      }
    }
    codebook_term += level_term / static_cast<double>(batch * d_z);
  }

  // Straight-through: values follow the quantized latent, gradients the encoder.
  Tensor st_shift(z->value.shape());
  for (int64_t i = 0; i < st_shift.numel(); ++i) st_shift[i] = quantized[i] - z->value[i];
  Var zq = add(z, constant(std::move(st_shift)));
  Var recon = stack.decoder.forward(zq);
  Var recon_diff = sub(recon, xin);
  Var recon_loss = mean(mul(recon_diff, recon_diff));
  Var commit_diff = sub(z, constant(quantized));
  Var commit_loss = mean(mul(commit_diff, commit_diff));

  parts.recon = recon_loss->value[0];
  parts.commit = commit_loss->value[0];
  parts.codebook = codebook_term;
  parts.loss = add(add(recon_loss, scale(commit_loss, static_cast<float>(stack.cfg.beta_commit))),
                   constant(Tensor::scalar(static_cast<float>(codebook_term))));
  return parts;
}

// ---------------------------------------------------------------------------
// k-means (Lloyd) used for codebook init

struct KmeansResult {
  Tensor centroids;             // [k, d]
  std::vector<int64_t> counts;  // assignment counts
  Tensor sums;                  // [k, d] per-centroid assigned sums
};

inline KmeansResult kmeans(const Tensor& points, int64_t k, int iters, Rng& rng) {
  const int64_t n = points.dim(0), d = points.dim(1);
  if (k > n) throw ConfigError(str_cat("kmeans: k=", k, " exceeds ", n, " points"));
  KmeansResult res;
  res.centroids = Tensor({k, d});
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  rng.shuffle(order);
  for (int64_t c = 0; c < k; ++c) {
    std::memcpy(res.centroids.data() + c * d, points.data() + order[static_cast<size_t>(c)] * d,
                static_cast<size_t>(d) * sizeof(float));
  }
  std::vector<int64_t> assign(static_cast<size_t>(n), 0);
  for (int it = 0; it < iters; ++it) {
#pragma omp parallel for schedule(static) if (n > 64 && k * d > 1024)
    for (int64_t i = 0; i < n; ++i) {
      const float* p = points.data() + i * d;
      int64_t best = 0;
      double best_dist = std::numeric_limits<double>::max();
      for (int64_t c = 0; c < k; ++c) {
        const float* ctr = res.centroids.data() + c * d;
        double dist = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double diff = p[j] - ctr[j];
          dist += diff * diff;
        }
        if (dist < best_dist) {
          best_dist = dist;
          best = c;
        }
      }
      assign[static_cast<size_t>(i)] = best;
    }
    res.sums = Tensor({k, d});
    res.counts.assign(static_cast<size_t>(k), 0);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t c = assign[static_cast<size_t>(i)];
      res.counts[static_cast<size_t>(c)]++;
      const float* p = points.data() + i * d;
      float* s = res.sums.data() + c * d;
      for (int64_t j = 0; j < d; ++j) s[j] += p[j];
    }
    for (int64_t c = 0; c < k; ++c) {
      if (res.counts[static_cast<size_t>(c)] == 0) {
        // empty cluster: restart at a random point
        const int64_t pick = rng.uniform_int(n);
        std::memcpy(res.centroids.data() + c * d, points.data() + pick * d,
                    static_cast<size_t>(d) * sizeof(float));
        continue;
      }
      const float inv = 1.0f / static_cast<float>(res.counts[static_cast<size_t>(c)]);
      const float* s = res.sums.data() + c * d;
      float* ctr = res.centroids.data() + c * d;
      for (int64_t j = 0; j < d; ++j) ctr[j] = s[j] * inv;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

struct EmaState {
  std::vector<double> cluster_size;  // per codeword
  Tensor embed_sum;                  // [k, d_z]
};

// VQ-VAE style EMA with Laplace-smoothed cluster sizes.
inline void ema_update(Tensor& book, EmaState& ema, const Tensor& residuals,
                       const std::vector<int64_t>& assign, double decay) {
  const int64_t k = book.dim(0), d = book.dim(1);
  std::vector<double> batch_count(static_cast<size_t>(k), 0.0);
  Tensor batch_sum({k, d});
  for (size_t i = 0; i < assign.size(); ++i) {
    const int64_t c = assign[i];
    batch_count[static_cast<size_t>(c)] += 1.0;
    const float* r = residuals.data() + static_cast<int64_t>(i) * d;
    float* s = batch_sum.data() + c * d;
    for (int64_t j = 0; j < d; ++j) s[j] += r[j];
  }
  double total = 0.0;
  for (int64_t c = 0; c < k; ++c) {
    ema.cluster_size[static_cast<size_t>(c)] =
        decay * ema.cluster_size[static_cast<size_t>(c)] +
        (1.0 - decay) * batch_count[static_cast<size_t>(c)];
    total += ema.cluster_size[static_cast<size_t>(c)];
    for (int64_t j = 0; j < d; ++j) {
      ema.embed_sum[c * d + j] = static_cast<float>(
          decay * ema.embed_sum[c * d + j] + (1.0 - decay) * batch_sum[c * d + j]);
    }
  }
  constexpr double kLaplace = 1e-5;
  for (int64_t c = 0; c < k; ++c) {
    const double smoothed =
        (ema.cluster_size[static_cast<size_t>(c)] + kLaplace) /
        (total + static_cast<double>(k) * kLaplace) * total;
    for (int64_t j = 0; j < d; ++j) {
      book[c * d + j] = static_cast<float>(ema.embed_sum[c * d + j] / std::max(smoothed, 1e-12));
    }
  }
}

}  // namespace detail

// Trains encoder/decoder by Adam on the straight-through loss while codebooks
// follow EMA statistics. Codebooks are initialized by sequential per-level
// k-means on the untrained latents; codewords unused for a full epoch are
// reseeded to a random residual from that epoch.
inline CodebookStack train_rqvae(const Catalog& catalog, RqvaeConfig cfg) {
  cfg.validate();
  if (catalog.size() == 0) throw DataError("train_rqvae: empty catalog");
  if (catalog.d_f != cfg.d_f) {
    throw ShapeError(str_cat("train_rqvae: catalog d_f=", catalog.d_f, " vs config d_f=",
                             cfg.d_f));
  }
  if (cfg.codebook_size > catalog.size()) {
    std::cerr << "train_rqvae: warning: codebook_size " << cfg.codebook_size
              << " exceeds catalog size " << catalog.size() << "; clamping\n";
    cfg.codebook_size = catalog.size();
  }

  Rng rng(cfg.seed);
  CodebookStack stack;
  stack.cfg = cfg;
  stack.feature_stats = catalog.stats;
  stack.encoder = Mlp("rqvae.encoder", cfg.d_f, cfg.hidden, cfg.d_z, rng);
  stack.decoder = Mlp("rqvae.decoder", cfg.d_z, cfg.hidden, cfg.d_f, rng);

  const int64_t n = catalog.size();
  std::vector<std::vector<float>> all_features(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    all_features[static_cast<size_t>(i)] = catalog.tracks[static_cast<size_t>(i)].features;
  }

  // Sequential per-level k-means on the initial latents.
  Tensor latents = stack.encode_batch(all_features);
  std::vector<detail::EmaState> ema(static_cast<size_t>(cfg.n_levels));
  Tensor residual = latents;
  for (int l = 0; l < cfg.n_levels; ++l) {
    KmeansResult km = kmeans(residual, cfg.codebook_size, 10, rng);
    stack.levels.push_back(km.centroids);
    auto& state = ema[static_cast<size_t>(l)];
    state.embed_sum = Tensor({cfg.codebook_size, cfg.d_z});
    state.cluster_size.assign(static_cast<size_t>(cfg.codebook_size), 0.0);
    for (int64_t c = 0; c < cfg.codebook_size; ++c) {
      state.cluster_size[static_cast<size_t>(c)] =
          std::max<double>(static_cast<double>(km.counts[static_cast<size_t>(c)]), 1.0);
      for (int j = 0; j < cfg.d_z; ++j) {
        // seed sums consistent with centroid = sum / count
        state.embed_sum[c * cfg.d_z + j] =
            km.centroids[c * cfg.d_z + j] *
            static_cast<float>(state.cluster_size[static_cast<size_t>(c)]);
      }
    }
    // advance residuals through this level
#pragma omp parallel for schedule(static) if (n > 64)
    for (int64_t i = 0; i < n; ++i) {
      float* r = residual.data() + i * cfg.d_z;
      const Tensor& book = stack.levels[static_cast<size_t>(l)];
      int64_t best = 0;
      double best_dist = std::numeric_limits<double>::max();
      for (int64_t c = 0; c < cfg.codebook_size; ++c) {
        const float* row = book.data() + c * cfg.d_z;
        double dist = 0.0;
        for (int j = 0; j < cfg.d_z; ++j) {
          const double diff = r[j] - row[j];
          dist += diff * diff;
        }
        if (dist < best_dist) {
          best_dist = dist;
          best = c;
        }
      }
      const float* row = stack.levels[static_cast<size_t>(l)].data() + best * cfg.d_z;
      for (int j = 0; j < cfg.d_z; ++j) r[j] -= row[j];
    }
  }

  std::vector<Parameter> params;
  for (auto& p : stack.encoder.params()) params.push_back(p);
  for (auto& p : stack.decoder.params()) params.push_back(p);
  // Parameter holds a shared Variable, so the copies above share storage with
  // the stack's own parameters.
  Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  stack.usage_counts.assign(static_cast<size_t>(cfg.n_levels),
                            std::vector<int64_t>(static_cast<size_t>(cfg.codebook_size), 0));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (auto& level : stack.usage_counts) std::fill(level.begin(), level.end(), 0);
    // one sampled residual row per level, refreshed per batch, for reseeding
    std::vector<Tensor> residual_pool(static_cast<size_t>(cfg.n_levels));

    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t bsz = std::min<int64_t>(cfg.batch_size, n - start);
      Tensor x({bsz, cfg.d_f});
      for (int64_t b = 0; b < bsz; ++b) {
        const auto& f = all_features[static_cast<size_t>(order[static_cast<size_t>(start + b)])];
        std::copy(f.begin(), f.end(), x.data() + b * cfg.d_f);
      }
      RqvaeLossParts parts = rqvae_loss(stack, x);
      backward(parts.loss);
      opt.step(params);
      for (int l = 0; l < cfg.n_levels; ++l) {
        detail::ema_update(stack.levels[static_cast<size_t>(l)], ema[static_cast<size_t>(l)],
                           parts.level_residuals[static_cast<size_t>(l)],
                           parts.assignments[static_cast<size_t>(l)], cfg.ema_decay);
        for (int64_t idx : parts.assignments[static_cast<size_t>(l)]) {
          stack.usage_counts[static_cast<size_t>(l)][static_cast<size_t>(idx)]++;
        }
        residual_pool[static_cast<size_t>(l)] = parts.level_residuals[static_cast<size_t>(l)];
      }
    }

    // Reseed dead codewords (skip after the final epoch: no training would
    // follow, and a reseed would perturb the learned assignment).
    if (epoch + 1 < cfg.epochs) {
      for (int l = 0; l < cfg.n_levels; ++l) {
        Tensor& book = stack.levels[static_cast<size_t>(l)];
        const Tensor& pool = residual_pool[static_cast<size_t>(l)];
        auto& state = ema[static_cast<size_t>(l)];
        for (int64_t c = 0; c < cfg.codebook_size; ++c) {
          if (stack.usage_counts[static_cast<size_t>(l)][static_cast<size_t>(c)] != 0) continue;
          const int64_t pick = rng.uniform_int(pool.dim(0));
          for (int j = 0; j < cfg.d_z; ++j) {
            const float v = pool.at(pick, j);
            book[c * cfg.d_z + j] = v;
            state.embed_sum[c * cfg.d_z + j] = v;
          }
          state.cluster_size[static_cast<size_t>(c)] = 1.0;
        }
      }
    }
  }
  return stack;
}

}  // namespace semrec
