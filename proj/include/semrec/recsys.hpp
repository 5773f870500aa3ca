#pragma once

#include "semrec/semid.hpp"

namespace semrec {

// ---------------------------------------------------------------------------
// Config

struct RecModelConfig {
  int64_t h = 60;
  int n_layers = 2;
  int n_heads = 2;
  int64_t max_seq_len = 50;  // L
  EmbedMode mode = EmbedMode::baseline;
  int64_t k = 0;  // semantic modes only
  int n = 4;
  int64_t tiebreak_buckets = 64;
  bool tiebreak_embedding = true;
  double dropout = 0.1;
  int epochs = 10;
  int64_t batch_size = 64;
  double lr = 1e-3;
  double val_fraction = 0.1;  // last 10% of train-window time
  int patience = 2;
  uint64_t seed = 1;

  void validate() const {
    if (h < 1 || n_layers < 1 || n_heads < 1 || max_seq_len < 1) {
      throw ConfigError("recsys: h, n_layers, n_heads, max_seq_len must be >= 1");
    }
    if (h % n_heads != 0) {
      throw ConfigError(str_cat("recsys: h=", h, " not divisible by n_heads=", n_heads));
    }
    if (is_semantic(mode) && (k < 1 || n < 1)) {
      throw ConfigError("recsys: semantic modes require k >= 1 and n >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("recsys: dropout in [0, 1)");
    if (epochs < 1 || batch_size < 1) throw ConfigError("recsys: epochs/batch_size >= 1");
    if (!(val_fraction >= 0.0 && val_fraction < 0.5)) {
      throw ConfigError("recsys: val_fraction in [0, 0.5)");
    }
  }
};

// ---------------------------------------------------------------------------
// Track embedder: one of four modes

class TrackEmbedder {
 public:
  TrackEmbedder() = default;

  TrackEmbedder(const RecModelConfig& cfg, const Catalog& catalog, const IdTable* ids,
                Rng& rng) {
    mode_ = cfg.mode;
    h_ = cfg.h;
    if (is_decomposed(mode_) && !catalog.has_decomposition()) {
      throw ConfigError("embedder: decomposition requested but catalog lacks artist/genre ids");
    }
    if (is_semantic(mode_)) {
      if (ids == nullptr) throw ConfigError("embedder: semantic mode requires an id table");
      id_table_ = *ids;
      if (id_table_.n != cfg.n || id_table_.k != cfg.k) {
        throw ConfigError(str_cat("embedder: id table (k=", id_table_.k, ", n=", id_table_.n,
                                  ") disagrees with config (k=", cfg.k, ", n=", cfg.n, ")"));
      }
      for (const auto& t : catalog.tracks) {
        if (!id_table_.contains(t.track_id)) {
          throw DataError(str_cat("embedder: no semantic ID for track ", t.track_id));
        }
      }
      tiebreak_rows_ = cfg.tiebreak_embedding
                           ? std::min<int64_t>(cfg.tiebreak_buckets, id_table_.max_tiebreak() + 1)
                           : 0;
      for (int l = 0; l < cfg.n; ++l) {
        levels_.emplace_back(init_table(cfg.k, rng), str_cat("embed.level", l));
      }
      if (tiebreak_rows_ > 0) {
        tiebreak_ = Parameter(init_table(tiebreak_rows_, rng), "embed.tiebreak");
      }
    } else {
      song_ = Parameter(init_table(catalog.size(), rng), "embed.song");
    }
    if (is_decomposed(mode_)) {
      artist_ = Parameter(init_table(static_cast<int64_t>(catalog.artist_ids.size()), rng),
                          "embed.artist");
      genre_ = Parameter(init_table(static_cast<int64_t>(catalog.genre_ids.size()), rng),
                         "embed.genre");
    }
    for (const auto& t : catalog.tracks) {
      TrackMeta meta;
      meta.row = catalog.row_of(t.track_id);
      if (catalog.has_artists) meta.artist_row = catalog.artist_row.at(t.artist_id);
      if (catalog.has_genres) meta.genre_row = catalog.genre_row.at(t.genre_id);
      meta_.emplace(t.track_id, meta);
    }
  }

  EmbedMode mode() const { return mode_; }
  int64_t tiebreak_rows() const { return tiebreak_rows_; }
  const IdTable& id_table() const { return id_table_; }

  // Composed embedding rows for a list of track ids: [n_ids, h].
  Var embed_tracks(const std::vector<int64_t>& track_ids) const {
    Var acc;
    if (is_semantic(mode_)) {
      std::vector<int64_t> idx(track_ids.size());
      for (int l = 0; l < static_cast<int>(levels_.size()); ++l) {
        for (size_t i = 0; i < track_ids.size(); ++i) {
          idx[i] = id_table_.id_of(track_ids[i]).codewords[static_cast<size_t>(l)];
        }
        Var rows = embedding_lookup(levels_[static_cast<size_t>(l)].var, idx);
        acc = acc ? add(acc, rows) : rows;
      }
      if (tiebreak_rows_ > 0) {
        for (size_t i = 0; i < track_ids.size(); ++i) {
          idx[i] = std::min(id_table_.id_of(track_ids[i]).tiebreak, tiebreak_rows_ - 1);
        }
        acc = add(acc, embedding_lookup(tiebreak_.var, idx));
      }
    } else {
      std::vector<int64_t> idx(track_ids.size());
      for (size_t i = 0; i < track_ids.size(); ++i) idx[i] = meta_at(track_ids[i]).row;
      acc = embedding_lookup(song_.var, idx);
    }
    if (is_decomposed(mode_)) {
      std::vector<int64_t> idx(track_ids.size());
      for (size_t i = 0; i < track_ids.size(); ++i) idx[i] = meta_at(track_ids[i]).artist_row;
      acc = add(acc, embedding_lookup(artist_.var, idx));
      for (size_t i = 0; i < track_ids.size(); ++i) idx[i] = meta_at(track_ids[i]).genre_row;
      acc = add(acc, embedding_lookup(genre_.var, idx));
    }
    return acc;
  }

  std::vector<Parameter*> params() {
    std::vector<Parameter*> ps;
    if (song_.var) ps.push_back(&song_);
    for (auto& l : levels_) ps.push_back(&l);
    if (tiebreak_.var) ps.push_back(&tiebreak_);
    if (artist_.var) ps.push_back(&artist_);
    if (genre_.var) ps.push_back(&genre_);
    return ps;
  }

 private:
  struct TrackMeta {
    int64_t row = 0;
    int64_t artist_row = -1;
    int64_t genre_row = -1;
  };

  const TrackMeta& meta_at(int64_t track_id) const {
    auto it = meta_.find(track_id);
    if (it == meta_.end()) throw DataError(str_cat("embedder: unknown track ", track_id));
    return it->second;
  }

  Tensor init_table(int64_t rows, Rng& rng) const {
    Tensor t({rows, h_});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal(0.0, 0.02));
    return t;
  }

  EmbedMode mode_ = EmbedMode::baseline;
  int64_t h_ = 0;
  int64_t tiebreak_rows_ = 0;
  IdTable id_table_;
  std::unordered_map<int64_t, TrackMeta> meta_;
  Parameter song_;
  std::vector<Parameter> levels_;
  Parameter tiebreak_;
  Parameter artist_;
  Parameter genre_;
};

// ---------------------------------------------------------------------------
// Model

struct ForwardInput {
  int64_t batch = 0;
  int64_t T = 0;                 // padded length
  std::vector<int64_t> tracks;   // batch*T, row-major, padded with pad_track
  std::vector<int64_t> feedbacks;  // 0 = negative, 1 = positive
  std::vector<int64_t> lengths;  // true lengths
};

class RecModel {
 public:
  RecModelConfig cfg;
  TrackEmbedder embedder;

  struct Block {
    Parameter ln1_g, ln1_b;
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln2_g, ln2_b;
    Parameter ff1_w, ff1_b, ff2_w, ff2_b;
  };

  Parameter feedback_table;  // [2, h]
  Parameter pos_table;       // [L, h]
  std::vector<Block> blocks;
  Parameter final_ln_g, final_ln_b;
  int64_t pad_track = 0;

  static RecModel init(const RecModelConfig& cfg, const Catalog& catalog, const IdTable* ids) {
    cfg.validate();
    RecModel m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    m.embedder = TrackEmbedder(cfg, catalog, ids, rng);
    m.pad_track = catalog.tracks.front().track_id;
    const int64_t h = cfg.h;
    auto emb_init = [&](int64_t rows, const char* name) {
      Tensor t({rows, h});
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal(0.0, 0.02));
      return Parameter(std::move(t), name);
    };
    m.feedback_table = emb_init(2, "feedback");
    m.pos_table = emb_init(cfg.max_seq_len, "position");
    auto linear_init = [&](int64_t rows, int64_t cols, const std::string& name) {
      Tensor t({rows, cols});
      const double s = std::sqrt(2.0 / static_cast<double>(rows + cols));
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal(0.0, s));
      return Parameter(std::move(t), name);
    };
    for (int l = 0; l < cfg.n_layers; ++l) {
      Block b;
      const std::string p = str_cat("block", l, ".");
      b.ln1_g = Parameter(Tensor::full({h}, 1.0f), p + "ln1_g");
      b.ln1_b = Parameter(Tensor({h}), p + "ln1_b");
      b.wq = linear_init(h, h, p + "wq");
      b.bq = Parameter(Tensor({h}), p + "bq");
      b.wk = linear_init(h, h, p + "wk");
      b.bk = Parameter(Tensor({h}), p + "bk");
      b.wv = linear_init(h, h, p + "wv");
      b.bv = Parameter(Tensor({h}), p + "bv");
      b.wo = linear_init(h, h, p + "wo");
      b.bo = Parameter(Tensor({h}), p + "bo");
      b.ln2_g = Parameter(Tensor::full({h}, 1.0f), p + "ln2_g");
      b.ln2_b = Parameter(Tensor({h}), p + "ln2_b");
      b.ff1_w = linear_init(h, h, p + "ff1_w");
      b.ff1_b = Parameter(Tensor({h}), p + "ff1_b");
      b.ff2_w = linear_init(h, h, p + "ff2_w");
      b.ff2_b = Parameter(Tensor({h}), p + "ff2_b");
      m.blocks.push_back(std::move(b));
    }
    m.final_ln_g = Parameter(Tensor::full({h}, 1.0f), "final_ln_g");
    m.final_ln_b = Parameter(Tensor({h}), "final_ln_b");
    return m;
  }

  std::vector<Parameter*> params() {
    std::vector<Parameter*> ps = embedder.params();
    ps.push_back(&feedback_table);
    ps.push_back(&pos_table);
    for (auto& b : blocks) {
      for (Parameter* p :
           {&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo,
            &b.ln2_g, &b.ln2_b, &b.ff1_w, &b.ff1_b, &b.ff2_w, &b.ff2_b}) {
        ps.push_back(p);
      }
    }
    ps.push_back(&final_ln_g);
    ps.push_back(&final_ln_b);
    return ps;
  }

  int64_t trainable_param_count() const {
    int64_t total = 0;
    for (const Parameter* p : const_cast<RecModel*>(this)->params()) {
      total += p->var->value.numel();
    }
    return total;
  }

  // Pads/truncates sequences to the model window; pad slots are masked out of
  // every loss and never read back (causality keeps them invisible).
  ForwardInput make_input(const std::vector<const std::vector<Interaction>*>& seqs) const {
    ForwardInput in;
    in.batch = static_cast<int64_t>(seqs.size());
    if (in.batch == 0) throw DataError("forward: empty batch");
    for (const auto* s : seqs) {
      if (s->empty()) throw DataError("forward: empty sequence");
      in.lengths.push_back(std::min<int64_t>(static_cast<int64_t>(s->size()), cfg.max_seq_len));
      in.T = std::max(in.T, in.lengths.back());
    }
    in.tracks.assign(static_cast<size_t>(in.batch * in.T), pad_track);
    in.feedbacks.assign(static_cast<size_t>(in.batch * in.T), 1);
    for (int64_t b = 0; b < in.batch; ++b) {
      const auto& events = *seqs[static_cast<size_t>(b)];
      const int64_t len = in.lengths[static_cast<size_t>(b)];
      const size_t start = events.size() - static_cast<size_t>(len);  // most recent window
      for (int64_t t = 0; t < len; ++t) {
        const auto& e = events[start + static_cast<size_t>(t)];
        in.tracks[static_cast<size_t>(b * in.T + t)] = e.track_id;
        in.feedbacks[static_cast<size_t>(b * in.T + t)] =
            e.feedback == Feedback::positive ? 1 : 0;
      }
    }
    return in;
  }

  // Causal transformer over the batch: [B, T, h] states at every position.
  Var forward(const ForwardInput& in, bool training = false, Rng* dropout_rng = nullptr) const {
    const int64_t B = in.batch, T = in.T, h = cfg.h;
    const int64_t H = cfg.n_heads, dh = h / H;
    const bool drop = training && cfg.dropout > 0.0;
    if (drop && dropout_rng == nullptr) throw ConfigError("forward: training needs a dropout rng");

    Var x = embedder.embed_tracks(in.tracks);                       // [B*T, h]
    x = add(x, embedding_lookup(feedback_table.var, in.feedbacks));  // token-type signal
    std::vector<int64_t> pos_idx(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) pos_idx[static_cast<size_t>(t)] = t;
    x = reshape(x, {B, T, h});
    x = add(x, embedding_lookup(pos_table.var, pos_idx));  // [T, h] broadcasts over batch
    if (drop) x = dropout(x, static_cast<float>(cfg.dropout), *dropout_rng, true);

    // causal mask: position t sees positions <= t
    Tensor mask({T, T});
    for (int64_t i = 0; i < T; ++i) {
      for (int64_t j = i + 1; j < T; ++j) mask.at(i, j) = -1e9f;
    }
    Var mask_c = constant(std::move(mask));
    const float attn_scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));

    for (const Block& blk : blocks) {
      Var a = layernorm(x, blk.ln1_g.var, blk.ln1_b.var);
      Var flat = reshape(a, {B * T, h});
      auto heads = [&](const Parameter& w, const Parameter& bias) {
        Var proj = add(matmul(flat, w.var), bias.var);      // [B*T, h]
        proj = reshape(proj, {B, T, H, dh});
        proj = permute(proj, {0, 2, 1, 3});                 // [B, H, T, dh]
        return reshape(proj, {B * H, T, dh});
      };
      Var q = heads(blk.wq, blk.bq);
      Var kk = heads(blk.wk, blk.bk);
      Var v = heads(blk.wv, blk.bv);
      Var scores = scale(bmm(q, permute(kk, {0, 2, 1})), attn_scale);  // [B*H, T, T]
      scores = add(scores, mask_c);
      Var probs = softmax(scores);
      Var ctx = bmm(probs, v);                              // [B*H, T, dh]
      ctx = reshape(ctx, {B, H, T, dh});
      ctx = permute(ctx, {0, 2, 1, 3});
      ctx = reshape(ctx, {B * T, h});
      Var attn_out = add(matmul(ctx, blk.wo.var), blk.bo.var);
      attn_out = reshape(attn_out, {B, T, h});
      if (drop) attn_out = dropout(attn_out, static_cast<float>(cfg.dropout), *dropout_rng, true);
      x = add(x, attn_out);

      Var f = layernorm(x, blk.ln2_g.var, blk.ln2_b.var);
      Var fflat = reshape(f, {B * T, h});
      Var ff = add(matmul(gelu(add(matmul(fflat, blk.ff1_w.var), blk.ff1_b.var)), blk.ff2_w.var),
                   blk.ff2_b.var);
      ff = reshape(ff, {B, T, h});
      if (drop) ff = dropout(ff, static_cast<float>(cfg.dropout), *dropout_rng, true);
      x = add(x, ff);
    }
    return layernorm(x, final_ln_g.var, final_ln_b.var);
  }

  // Final-position state per sequence; inference path, no graph kept.
  Tensor user_states(const std::vector<const std::vector<Interaction>*>& seqs) const {
    NoGrad ng;
    ForwardInput in = make_input(seqs);
    Var states = forward(in);
    Tensor out({in.batch, cfg.h});
    for (int64_t b = 0; b < in.batch; ++b) {
      const float* src =
          states->value.data() + (b * in.T + in.lengths[static_cast<size_t>(b)] - 1) * cfg.h;
      std::memcpy(out.data() + b * cfg.h, src, static_cast<size_t>(cfg.h) * sizeof(float));
    }
    return out;
  }

  Tensor user_state(const std::vector<Interaction>& events) const {
    return user_states({&events});
  }

  // Composed embeddings for candidate scoring, value-only: [n_ids, h].
  Tensor track_embeddings(const std::vector<int64_t>& track_ids) const {
    NoGrad ng;
    return embedder.embed_tracks(track_ids)->value;
  }

  // score(state, track) = dot(state, composed track embedding); tied weights.
  double score(const Tensor& state, int64_t track_id) const {
    Tensor emb = track_embeddings({track_id});
    double acc = 0.0;
    for (int64_t j = 0; j < cfg.h; ++j) acc += static_cast<double>(state[j]) * emb[j];
    return acc;
  }
};

inline double dot_state(const float* state, const float* emb, int64_t h) {
  double acc = 0.0;
  for (int64_t j = 0; j < h; ++j) acc += static_cast<double>(state[j]) * emb[j];
  return acc;
}

// ---------------------------------------------------------------------------
// Pairwise accuracy (the per-sequence evaluation primitive)

struct SequenceAccuracy {
  int64_t seq_id = 0;
  int64_t input_len = 0;
  double accuracy = 0.0;
  int64_t n_pairs = 0;
};

// Fraction of (positive, negative) test pairs ranked correctly, ties 0.5.
inline std::vector<SequenceAccuracy> pairwise_accuracies(const RecModel& model,
                                                         const std::vector<TestEntry>& entries) {
  std::vector<SequenceAccuracy> out(entries.size());
  if (entries.empty()) return out;
  const int64_t chunk = 256;
  for (size_t start = 0; start < entries.size(); start += static_cast<size_t>(chunk)) {
    const size_t end = std::min(entries.size(), start + static_cast<size_t>(chunk));
    std::vector<const std::vector<Interaction>*> seqs;
    for (size_t i = start; i < end; ++i) seqs.push_back(&entries[i].inputs);
    Tensor states = model.user_states(seqs);
#pragma omp parallel for schedule(static)
    for (int64_t i = static_cast<int64_t>(start); i < static_cast<int64_t>(end); ++i) {
      const TestEntry& entry = entries[static_cast<size_t>(i)];
      const float* state = states.data() + (i - static_cast<int64_t>(start)) * model.cfg.h;
      std::vector<int64_t> cand_ids;
      for (const auto& e : entry.positives) cand_ids.push_back(e.track_id);
      for (const auto& e : entry.negatives) cand_ids.push_back(e.track_id);
      Tensor embs = model.track_embeddings(cand_ids);
      const size_t n_pos = entry.positives.size();
      double wins = 0.0;
      int64_t pairs = 0;
      for (size_t p = 0; p < n_pos; ++p) {
        const double sp = dot_state(state, embs.data() + static_cast<int64_t>(p) * model.cfg.h,
                                    model.cfg.h);
        for (size_t q = n_pos; q < cand_ids.size(); ++q) {
          const double sn = dot_state(
              state, embs.data() + static_cast<int64_t>(q) * model.cfg.h, model.cfg.h);
          wins += sp > sn ? 1.0 : (sp == sn ? 0.5 : 0.0);
          ++pairs;
        }
      }
      out[static_cast<size_t>(i)] =
          SequenceAccuracy{entry.seq_id, static_cast<int64_t>(entry.inputs.size()),
                           pairs > 0 ? wins / static_cast<double>(pairs) : 0.0, pairs};
    }
  }
  return out;
}

inline double mean_pair_accuracy(const RecModel& model, const std::vector<TestEntry>& entries) {
  if (entries.empty()) throw DataError("mean_pair_accuracy: no test entries");
  auto accs = pairwise_accuracies(model, entries);
  double acc = 0.0;
  for (const auto& a : accs) acc += a.accuracy;
  return acc / static_cast<double>(accs.size());
}

// ---------------------------------------------------------------------------
// Training

struct TrainStats {
  std::vector<double> epoch_losses;
  std::vector<double> val_accuracies;
  int best_epoch = -1;
};

// Next-event objective: at each position whose next event is positive, BCE on
// the next track (label 1) against one uniformly sampled in-catalog negative
// (label 0); positions whose next event is negative feedback contribute the
// next track with the inverse label and draw no sampled negative.
inline RecModel train(const SplitDataset& split, const Catalog& catalog, const IdTable* ids,
                      const RecModelConfig& cfg, TrainStats* stats_out = nullptr) {
  cfg.validate();
  if (split.train.empty()) throw DataError("train: empty training split");

  RecModel model = RecModel::init(cfg, catalog, ids);
  std::vector<Parameter*> param_ptrs = model.params();
  std::vector<Parameter> params;
  for (Parameter* p : param_ptrs) params.push_back(*p);  // shared Variables
  Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  // Hold out the tail of the train window for early stopping.
  std::vector<InteractionSequence> core_train = split.train;
  std::vector<TestEntry> val_entries;
  if (cfg.val_fraction > 0.0) {
    SplitDataset val_split = time_split(split.train, cfg.val_fraction);
    core_train = std::move(val_split.train);
    val_entries = std::move(val_split.test_pairs);
  }

  std::vector<const InteractionSequence*> train_seqs;
  for (const auto& s : core_train) {
    if (s.events.size() >= 2) train_seqs.push_back(&s);
  }
  if (train_seqs.empty()) throw DataError("train: no sequence has two or more events");

  Rng rng(cfg.seed);
  Rng shuffle_rng = rng.fork(1);
  Rng negative_rng = rng.fork(2);
  Rng dropout_rng = rng.fork(3);
  const int64_t n_tracks = catalog.size();

  TrainStats stats;
  double best_val = -1.0;
  int since_best = 0;
  std::vector<Tensor> best_params;
  std::vector<size_t> order(train_seqs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t loss_batches = 0;
    for (size_t bstart = 0; bstart < order.size(); bstart += static_cast<size_t>(cfg.batch_size)) {
      const size_t bend = std::min(order.size(), bstart + static_cast<size_t>(cfg.batch_size));
      std::vector<const std::vector<Interaction>*> seqs;
      for (size_t i = bstart; i < bend; ++i) seqs.push_back(&train_seqs[order[i]]->events);
      ForwardInput in = model.make_input(seqs);
      const int64_t B = in.batch, T = in.T;
      if (T < 2) continue;

      // Candidate slot layout per position t in [0, T-1): {next track, sampled negative}.
      std::vector<int64_t> cand(static_cast<size_t>(B * (T - 1) * 2), model.pad_track);
      Tensor labels({B * (T - 1) * 2});
      Tensor weights({B * (T - 1) * 2});
      for (int64_t b = 0; b < B; ++b) {
        const int64_t len = in.lengths[static_cast<size_t>(b)];
        for (int64_t t = 0; t + 1 < len; ++t) {
          const int64_t slot = (b * (T - 1) + t) * 2;
          const int64_t next_track = in.tracks[static_cast<size_t>(b * T + t + 1)];
          const bool next_positive = in.feedbacks[static_cast<size_t>(b * T + t + 1)] == 1;
          cand[static_cast<size_t>(slot)] = next_track;
          labels[slot] = next_positive ? 1.0f : 0.0f;
          weights[slot] = 1.0f;
          if (next_positive) {
            const int64_t next_row = catalog.row_of(next_track);
            int64_t neg_row = negative_rng.uniform_int(n_tracks);
            while (neg_row == next_row && n_tracks > 1) {
              neg_row = negative_rng.uniform_int(n_tracks);
            }
            cand[static_cast<size_t>(slot + 1)] =
                catalog.tracks[static_cast<size_t>(neg_row)].track_id;
            labels[slot + 1] = 0.0f;
            weights[slot + 1] = 1.0f;
          }
        }
      }

      Var states = model.forward(in, true, &dropout_rng);          // [B, T, h]
      Var heads = slice(states, 1, 0, T - 1);                      // [B, T-1, h]
      Var cand_emb = model.embedder.embed_tracks(cand);            // [B*(T-1)*2, h]
      cand_emb = reshape(cand_emb, {B * (T - 1), 2, model.cfg.h});
      cand_emb = permute(cand_emb, {0, 2, 1});                     // [B*(T-1), h, 2]
      Var scores = bmm(reshape(heads, {B * (T - 1), 1, model.cfg.h}), cand_emb);
      scores = reshape(scores, {B * (T - 1) * 2});
      Var loss = bce_with_logits(scores, labels, weights);
      backward(loss);
      opt.step(params);
      loss_sum += loss->value[0];
      ++loss_batches;
    }
    stats.epoch_losses.push_back(loss_batches > 0 ? loss_sum / static_cast<double>(loss_batches)
                                                  : 0.0);

    if (!val_entries.empty()) {
      const double val_acc = mean_pair_accuracy(model, val_entries);
      stats.val_accuracies.push_back(val_acc);
      if (val_acc > best_val + 1e-6) {
        best_val = val_acc;
        stats.best_epoch = epoch;
        since_best = 0;
        best_params.clear();
        for (Parameter* p : param_ptrs) best_params.push_back(p->var->value);
      } else {
        ++since_best;
        if (since_best >= cfg.patience) break;
      }
    }
  }
  if (!best_params.empty()) {
    for (size_t i = 0; i < param_ptrs.size(); ++i) {
      param_ptrs[i]->var->value = best_params[i];
    }
  }
  if (stats_out != nullptr) *stats_out = std::move(stats);
  return model;
}

// ---------------------------------------------------------------------------
// Recommendation

// Top-m candidates by score; ties broken by ascending track_id.
inline std::vector<int64_t> recommend_top_m(const RecModel& model,
                                            const std::vector<Interaction>& inputs, int64_t m,
                                            const std::vector<int64_t>& candidates) {
  if (candidates.empty()) throw DataError("recommend: empty candidate set");
  if (m < 1 || m > static_cast<int64_t>(candidates.size())) {
    throw ConfigError(str_cat("recommend: m=", m, " out of range for ", candidates.size(),
                              " candidates"));
  }
  Tensor state = model.user_state(inputs);
  Tensor embs = model.track_embeddings(candidates);
  std::vector<std::pair<double, int64_t>> scored(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    scored[i] = {dot_state(state.data(), embs.data() + static_cast<int64_t>(i) * model.cfg.h,
                           model.cfg.h),
                 candidates[i]};
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int64_t> out(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) out[static_cast<size_t>(i)] = scored[static_cast<size_t>(i)].second;
  return out;
}

}  // namespace semrec
