#include <gtest/gtest.h>

#include "semrec/recsys.hpp"
#include "test_util.hpp"

namespace semrec {
namespace {

using testing::fd_gradient;
using testing::grad_rel_error;

Catalog small_catalog(int64_t n_tracks = 6, bool with_meta = true) {
  std::vector<TrackFeatures> rows;
  std::vector<std::vector<float>> raw;
  for (int64_t i = 0; i < n_tracks; ++i) {
    rows.push_back(TrackFeatures{i, {}, with_meta ? i % 2 : -1, with_meta ? i % 3 : -1});
    raw.push_back({static_cast<float>(i), static_cast<float>(i * i % 5)});
  }
  return make_catalog(std::move(rows), std::move(raw));
}

IdTable manual_table(int64_t n_tracks, int64_t k, int n,
                     const std::function<std::vector<int64_t>(int64_t)>& tuple_of) {
  IdTable t;
  t.variant = IdVariant::v1;
  t.k = k;
  t.n = n;
  for (int64_t i = 0; i < n_tracks; ++i) t.insert(i, t.propose(tuple_of(i)));
  return t;
}

RecModelConfig tiny_cfg(EmbedMode mode, int64_t h = 8, int heads = 2) {
  RecModelConfig cfg;
  cfg.h = h;
  cfg.n_layers = 1;
  cfg.n_heads = heads;
  cfg.max_seq_len = 8;
  cfg.mode = mode;
  cfg.dropout = 0.0;
  cfg.seed = 3;
  return cfg;
}

TEST(Embedder, AllTablesZeroGiveZeroVector) {
  Catalog cat = small_catalog();
  for (EmbedMode mode : {EmbedMode::baseline, EmbedMode::baseline_decomposed,
                         EmbedMode::semantic, EmbedMode::semantic_decomposed}) {
    RecModelConfig cfg = tiny_cfg(mode);
    cfg.k = 4;
    cfg.n = 2;
    IdTable ids = manual_table(6, 4, 2, [](int64_t i) {
      return std::vector<int64_t>{i % 4, (i / 2) % 4};
    });
    RecModel m = RecModel::init(cfg, cat, is_semantic(mode) ? &ids : nullptr);
    for (Parameter* p : m.embedder.params()) p->value().fill(0.0f);
    Tensor emb = m.track_embeddings({0, 3, 5});
    for (int64_t i = 0; i < emb.numel(); ++i) EXPECT_FLOAT_EQ(emb[i], 0.0f);
  }
}

TEST(Embedder, SharedSemanticIdRowsShareEmbeddings) {
  Catalog cat = small_catalog();
  RecModelConfig cfg = tiny_cfg(EmbedMode::semantic);
  cfg.k = 4;
  cfg.n = 2;
  cfg.tiebreak_embedding = false;  // identity beyond the learned tuple is ignored
  // tracks 0 and 1 share the tuple {2, 1} (tiebreaks 0 and 1)
  IdTable ids = manual_table(6, 4, 2, [](int64_t i) {
    if (i < 2) return std::vector<int64_t>{2, 1};
    return std::vector<int64_t>{i % 4, 3};
  });
  RecModel m = RecModel::init(cfg, cat, &ids);
  Tensor emb = m.track_embeddings({0, 1});
  for (int64_t j = 0; j < cfg.h; ++j) EXPECT_FLOAT_EQ(emb.at(0, j), emb.at(1, j));

  // identical scores against any fixed user state
  Tensor state({cfg.h});
  Rng rng(4);
  for (int64_t j = 0; j < cfg.h; ++j) state[j] = static_cast<float>(rng.normal());
  EXPECT_DOUBLE_EQ(m.score(state, 0), m.score(state, 1));
}

TEST(Embedder, SaturatedTiebreakBucketsShareRows) {
  Catalog cat = small_catalog();
  RecModelConfig cfg = tiny_cfg(EmbedMode::semantic);
  cfg.k = 4;
  cfg.n = 1;
  cfg.tiebreak_buckets = 2;  // tiebreaks >= 1 saturate into the last row
  IdTable ids = manual_table(6, 4, 1, [](int64_t) { return std::vector<int64_t>{1}; });
  ASSERT_EQ(ids.max_tiebreak(), 5);
  RecModel m = RecModel::init(cfg, cat, &ids);
  EXPECT_EQ(m.embedder.tiebreak_rows(), 2);
  Tensor emb = m.track_embeddings({1, 3, 5});  // tiebreaks 1, 3, 5 all saturate
  for (int64_t j = 0; j < cfg.h; ++j) {
    EXPECT_FLOAT_EQ(emb.at(0, j), emb.at(1, j));
    EXPECT_FLOAT_EQ(emb.at(1, j), emb.at(2, j));
  }
}

// Hand-set one-hot rows: decomposed embedding equals the component-wise sum.
TEST(Embedder, DecomposedSumMatchesHandFixture) {
  Catalog cat = small_catalog(3);  // artists 0,1,0; genres 0,1,2
  RecModelConfig cfg = tiny_cfg(EmbedMode::baseline_decomposed, 4, 1);
  RecModel m = RecModel::init(cfg, cat, nullptr);
  auto set_row = [&](Parameter& p, int64_t row, std::vector<float> vals) {
    for (size_t j = 0; j < vals.size(); ++j) p.value().at(row, static_cast<int64_t>(j)) = vals[j];
  };
  for (Parameter* p : m.embedder.params()) p->value().fill(0.0f);
  auto params = m.embedder.params();  // song, artist, genre
  set_row(*params[0], 1, {1, 0, 0, 0});  // song row of track 1
  set_row(*params[1], 1, {0, 2, 0, 0});  // artist row of artist 1
  set_row(*params[2], 1, {0, 0, 3, 0});  // genre row of genre 1
  Tensor emb = m.track_embeddings({1});
  EXPECT_EQ(emb.vec(), (std::vector<float>{1, 2, 3, 0}));
}

TEST(Forward, LengthOneSequenceWorks) {
  Catalog cat = small_catalog();
  RecModel m = RecModel::init(tiny_cfg(EmbedMode::baseline), cat, nullptr);
  std::vector<Interaction> seq{{2, Feedback::positive, 5}};
  Tensor state = m.user_state(seq);
  EXPECT_EQ(state.shape(), (Shape{1, 8}));
  std::vector<Interaction> empty;
  EXPECT_THROW(m.user_state(empty), DataError);
}

// Causal mask: states at positions <= t are bit-identical when only events
// after t differ.
TEST(Forward, CausalityUnderSuffixPerturbation) {
  Catalog cat = small_catalog();
  RecModel m = RecModel::init(tiny_cfg(EmbedMode::baseline), cat, nullptr);
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Interaction> a, b;
    const int64_t len = 3 + rng.uniform_int(5);
    const int64_t t = rng.uniform_int(len - 1);  // first differing position is t+1
    for (int64_t i = 0; i < len; ++i) {
      Interaction e{rng.uniform_int(6),
                    rng.uniform() < 0.5 ? Feedback::positive : Feedback::negative, i};
      a.push_back(e);
      if (i <= t) {
        b.push_back(e);
      } else {
        b.push_back(Interaction{rng.uniform_int(6),
                                rng.uniform() < 0.5 ? Feedback::positive : Feedback::negative, i});
      }
    }
    NoGrad ng;
    ForwardInput ia = m.make_input({&a});
    ForwardInput ib = m.make_input({&b});
    Var sa = m.forward(ia);
    Var sb = m.forward(ib);
    for (int64_t p = 0; p <= t; ++p) {
      for (int64_t j = 0; j < m.cfg.h; ++j) {
        ASSERT_EQ(sa->value.at(0, p, j), sb->value.at(0, p, j))
            << "trial " << trial << " pos " << p;
      }
    }
  }
}

// Independent scalar re-implementation of the tiny forward pass (h=4, one
// layer, one head, two tokens).
TEST(Forward, MatchesHandSteppedAttention) {
  Catalog cat = small_catalog(3);
  RecModelConfig cfg = tiny_cfg(EmbedMode::baseline, 4, 1);
  cfg.max_seq_len = 4;
  RecModel m = RecModel::init(cfg, cat, nullptr);
  // Overwrite every parameter with small fixed values.
  Rng rng(17);
  for (Parameter* p : m.params()) {
    Tensor& v = p->value();
    for (int64_t i = 0; i < v.numel(); ++i) {
      v[i] = static_cast<float>(0.1 * std::sin(0.7 * static_cast<double>(i + 1)) +
                                0.05 * rng.normal());
    }
  }
  std::vector<Interaction> seq{{1, Feedback::positive, 0}, {2, Feedback::negative, 1}};
  NoGrad ng;
  ForwardInput in = m.make_input({&seq});
  Var out = m.forward(in);

  // --- oracle ---
  auto song = [&](int64_t row, int j) { return static_cast<double>(m.embedder.params()[0]->value().at(row, j)); };
  auto fb = [&](int64_t row, int j) { return static_cast<double>(m.feedback_table.value().at(row, j)); };
  auto pos = [&](int64_t row, int j) { return static_cast<double>(m.pos_table.value().at(row, j)); };
  const auto& blk = m.blocks[0];
  auto vec_ln = [&](const std::array<double, 4>& x, const Parameter& g, const Parameter& b) {
    double mean = (x[0] + x[1] + x[2] + x[3]) / 4.0;
    double var = 0.0;
    for (double xi : x) var += (xi - mean) * (xi - mean);
    var /= 4.0;
    std::array<double, 4> y{};
    for (int j = 0; j < 4; ++j) {
      y[static_cast<size_t>(j)] = (x[static_cast<size_t>(j)] - mean) / std::sqrt(var + 1e-5) *
                                      g.value()[j] +
                                  b.value()[j];
    }
    return y;
  };
  auto affine = [&](const std::array<double, 4>& x, const Parameter& w, const Parameter& b) {
    std::array<double, 4> y{};
    for (int j = 0; j < 4; ++j) {
      double acc = b.value()[j];
      for (int i = 0; i < 4; ++i) acc += x[static_cast<size_t>(i)] * w.value().at(i, j);
      y[static_cast<size_t>(j)] = acc;
    }
    return y;
  };
  std::array<std::array<double, 4>, 2> x{};
  for (int j = 0; j < 4; ++j) {
    x[0][static_cast<size_t>(j)] = song(1, j) + fb(1, j) + pos(0, j);
    x[1][static_cast<size_t>(j)] = song(2, j) + fb(0, j) + pos(1, j);
  }
  std::array<std::array<double, 4>, 2> a{vec_ln(x[0], blk.ln1_g, blk.ln1_b),
                                         vec_ln(x[1], blk.ln1_g, blk.ln1_b)};
  std::array<std::array<double, 4>, 2> q{affine(a[0], blk.wq, blk.bq), affine(a[1], blk.wq, blk.bq)};
  std::array<std::array<double, 4>, 2> kk{affine(a[0], blk.wk, blk.bk), affine(a[1], blk.wk, blk.bk)};
  std::array<std::array<double, 4>, 2> v{affine(a[0], blk.wv, blk.bv), affine(a[1], blk.wv, blk.bv)};
  auto dot4 = [](const std::array<double, 4>& p, const std::array<double, 4>& r) {
    return p[0] * r[0] + p[1] * r[1] + p[2] * r[2] + p[3] * r[3];
  };
  // position 0 sees only itself; position 1 softmaxes over both
  std::array<std::array<double, 4>, 2> ctx{};
  ctx[0] = v[0];
  {
    const double s10 = dot4(q[1], kk[0]) / 2.0;  // scale 1/sqrt(4)
    const double s11 = dot4(q[1], kk[1]) / 2.0;
    const double mx = std::max(s10, s11);
    const double e0 = std::exp(s10 - mx), e1 = std::exp(s11 - mx);
    const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    for (int j = 0; j < 4; ++j) {
      ctx[1][static_cast<size_t>(j)] = p0 * v[0][static_cast<size_t>(j)] + p1 * v[1][static_cast<size_t>(j)];
    }
  }
  auto gelu_exact = [](double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); };
  std::array<std::array<double, 4>, 2> expected{};
  for (int t = 0; t < 2; ++t) {
    auto attn = affine(ctx[static_cast<size_t>(t)], blk.wo, blk.bo);
    std::array<double, 4> h1{};
    for (int j = 0; j < 4; ++j) h1[static_cast<size_t>(j)] = x[static_cast<size_t>(t)][static_cast<size_t>(j)] + attn[static_cast<size_t>(j)];
    auto f = vec_ln(h1, blk.ln2_g, blk.ln2_b);
    auto ff1 = affine(f, blk.ff1_w, blk.ff1_b);
    for (auto& z : ff1) z = gelu_exact(z);
    auto ff2 = affine(ff1, blk.ff2_w, blk.ff2_b);
    std::array<double, 4> h2{};
    for (int j = 0; j < 4; ++j) h2[static_cast<size_t>(j)] = h1[static_cast<size_t>(j)] + ff2[static_cast<size_t>(j)];
    expected[static_cast<size_t>(t)] = vec_ln(h2, m.final_ln_g, m.final_ln_b);
  }
  for (int t = 0; t < 2; ++t) {
    for (int j = 0; j < 4; ++j) {
      EXPECT_NEAR(out->value.at(0, t, j), expected[static_cast<size_t>(t)][static_cast<size_t>(j)], 1e-4)
          << "t=" << t << " j=" << j;
    }
  }
}

TEST(Score, OrthogonalAndLinear) {
  Catalog cat = small_catalog();
  RecModel m = RecModel::init(tiny_cfg(EmbedMode::baseline), cat, nullptr);
  Tensor emb = m.track_embeddings({3});
  // construct a state orthogonal to emb: swap two coordinates with sign flip
  Tensor state({8});
  state[0] = emb[1];
  state[1] = -emb[0];
  EXPECT_NEAR(m.score(state, 3), 0.0, 1e-7);

  Rng rng(5);
  Tensor u({8});
  for (int64_t j = 0; j < 8; ++j) u[j] = static_cast<float>(rng.normal());
  Tensor u2({8});
  for (int64_t j = 0; j < 8; ++j) u2[j] = 2.0f * u[j];
  EXPECT_NEAR(m.score(u2, 3), 2.0 * m.score(u, 3), 1e-6);
}

TEST(Recommend, TopMMatchesSortOracle) {
  Catalog cat = small_catalog(10);
  RecModel m = RecModel::init(tiny_cfg(EmbedMode::baseline), cat, nullptr);
  std::vector<Interaction> seq{{0, Feedback::positive, 1}, {5, Feedback::negative, 2}};
  std::vector<int64_t> cands{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

  auto all = recommend_top_m(m, seq, 10, cands);
  std::vector<int64_t> sorted_all = all;
  std::sort(sorted_all.begin(), sorted_all.end());
  EXPECT_EQ(sorted_all, cands);  // permutation

  auto top3 = recommend_top_m(m, seq, 3, cands);
  ASSERT_EQ(top3.size(), 3u);
  EXPECT_EQ(std::vector<int64_t>(all.begin(), all.begin() + 3), top3);  // sort-oracle prefix

  Tensor state = m.user_state(seq);
  std::vector<std::pair<double, int64_t>> oracle;
  for (int64_t c : cands) oracle.emplace_back(m.score(state, c), c);
  std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (size_t i = 0; i < 3; ++i) EXPECT_EQ(top3[i], oracle[i].second);

  EXPECT_THROW(recommend_top_m(m, seq, 11, cands), ConfigError);
  EXPECT_THROW(recommend_top_m(m, seq, 1, {}), DataError);
}

TEST(Recommend, TiesBreakByAscendingTrackId) {
  Catalog cat = small_catalog(6);
  RecModel m = RecModel::init(tiny_cfg(EmbedMode::baseline), cat, nullptr);
  for (Parameter* p : m.embedder.params()) p->value().fill(0.0f);  // all scores 0
  std::vector<Interaction> seq{{0, Feedback::positive, 1}};
  auto top = recommend_top_m(m, seq, 4, {5, 1, 3, 0});
  EXPECT_EQ(top, (std::vector<int64_t>{0, 1, 3, 5}));
}

TEST(ParamAccounting, LiveCountsEqualClosedFormAllModes) {
  SynthConfig scfg;
  scfg.n_tracks = 120;
  scfg.n_artists = 12;
  scfg.n_genres = 4;
  scfg.n_users = 4;
  auto ds = synth_generate(scfg);
  IdTable ids = assign_v0(
      [&] {
        std::vector<int64_t> v;
        for (const auto& t : ds.catalog.tracks) v.push_back(t.track_id);
        return v;
      }(),
      8, 3, 5);
  for (EmbedMode mode : {EmbedMode::baseline, EmbedMode::baseline_decomposed,
                         EmbedMode::semantic, EmbedMode::semantic_decomposed}) {
    RecModelConfig cfg;
    cfg.h = 12;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.max_seq_len = 20;
    cfg.mode = mode;
    cfg.k = 8;
    cfg.n = 3;
    cfg.tiebreak_buckets = 64;
    RecModel m = RecModel::init(cfg, ds.catalog, is_semantic(mode) ? &ids : nullptr);

    ParamCountInput in;
    in.catalog_size = ds.catalog.size();
    in.h = cfg.h;
    in.mode = mode;
    in.k = cfg.k;
    in.n = cfg.n;
    in.tiebreak_rows = m.embedder.tiebreak_rows();
    in.n_artists = static_cast<int64_t>(ds.catalog.artist_ids.size());
    in.n_genres = static_cast<int64_t>(ds.catalog.genre_ids.size());
    in.n_layers = cfg.n_layers;
    in.max_seq_len = cfg.max_seq_len;
    EXPECT_EQ(m.trainable_param_count(), param_count(in).total) << to_string(mode);
  }
}

// k = catalog size, n = 1, no collisions, no tiebreak table: the semantic
// model has exactly the baseline's parameter count.
TEST(ParamAccounting, DegenerateSemanticEqualsBaselineLive) {
  Catalog cat = small_catalog(20);
  IdTable ids = manual_table(20, 20, 1, [](int64_t i) { return std::vector<int64_t>{i}; });
  RecModelConfig base_cfg = tiny_cfg(EmbedMode::baseline);
  RecModel base = RecModel::init(base_cfg, cat, nullptr);
  RecModelConfig sem_cfg = tiny_cfg(EmbedMode::semantic);
  sem_cfg.k = 20;
  sem_cfg.n = 1;
  sem_cfg.tiebreak_embedding = false;
  RecModel sem = RecModel::init(sem_cfg, cat, &ids);
  EXPECT_EQ(base.trainable_param_count(), sem.trainable_param_count());
}

SplitDataset quick_split(uint64_t seed, int64_t n_users = 150) {
  SynthConfig cfg;
  cfg.n_tracks = 400;
  cfg.n_artists = 40;
  cfg.n_genres = 5;
  cfg.n_users = n_users;
  cfg.min_events = 10;
  cfg.max_events = 40;
  cfg.seed = seed;
  auto ds = synth_generate(cfg);
  return time_split(ds.sequences, 0.2);
}

TEST(Train, LossDecreasesOverFirstThreeEpochs) {
  SynthConfig scfg;
  scfg.n_tracks = 400;
  scfg.n_artists = 40;
  scfg.n_genres = 5;
  scfg.n_users = 150;
  scfg.min_events = 10;
  scfg.max_events = 40;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    scfg.seed = seed;
    auto ds = synth_generate(scfg);
    auto split = time_split(ds.sequences, 0.2);
    RecModelConfig cfg;
    cfg.h = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_seq_len = 40;
    cfg.epochs = 3;
    cfg.val_fraction = 0.0;  // plain 3 epochs, no early stop
    cfg.seed = seed;
    TrainStats stats;
    train(split, ds.catalog, nullptr, cfg, &stats);
    ASSERT_EQ(stats.epoch_losses.size(), 3u);
    EXPECT_LT(stats.epoch_losses[1], stats.epoch_losses[0]) << "seed " << seed;
    EXPECT_LT(stats.epoch_losses[2], stats.epoch_losses[1]) << "seed " << seed;
  }
}

TEST(Train, DeterministicTrajectoryAndEvaluation) {
  auto split = quick_split(7, 80);
  SynthConfig scfg;
  scfg.n_tracks = 400;
  scfg.n_artists = 40;
  scfg.n_genres = 5;
  scfg.n_users = 80;
  scfg.min_events = 10;
  scfg.max_events = 40;
  scfg.seed = 7;
  auto ds = synth_generate(scfg);
  split = time_split(ds.sequences, 0.2);

  RecModelConfig cfg;
  cfg.h = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_seq_len = 40;
  cfg.epochs = 2;
  cfg.dropout = 0.1;
  cfg.seed = 42;
  TrainStats s1, s2;
  RecModel m1 = train(split, ds.catalog, nullptr, cfg, &s1);
  RecModel m2 = train(split, ds.catalog, nullptr, cfg, &s2);
  ASSERT_EQ(s1.epoch_losses.size(), s2.epoch_losses.size());
  for (size_t i = 0; i < s1.epoch_losses.size(); ++i) {
    EXPECT_EQ(s1.epoch_losses[i], s2.epoch_losses[i]);  // bit-identical
  }
  auto a1 = pairwise_accuracies(m1, split.test_pairs);
  auto a2 = pairwise_accuracies(m2, split.test_pairs);
  ASSERT_EQ(a1.size(), a2.size());
  for (size_t i = 0; i < a1.size(); ++i) EXPECT_EQ(a1[i].accuracy, a2[i].accuracy);
}

TEST(Train, RejectsModeMismatches) {
  SynthConfig scfg;
  scfg.n_tracks = 50;
  scfg.n_artists = 5;
  scfg.n_genres = 2;
  scfg.n_users = 10;
  auto ds = synth_generate(scfg);
  auto split = time_split(ds.sequences, 0.2);

  // catalog without artist/genre
  std::vector<TrackFeatures> rows;
  std::vector<std::vector<float>> raw;
  for (int64_t i = 0; i < 50; ++i) {
    rows.push_back(TrackFeatures{i, {}, -1, -1});
    raw.push_back(ds.catalog.raw[static_cast<size_t>(i)]);
  }
  Catalog bare = make_catalog(std::move(rows), std::move(raw));
  RecModelConfig cfg;
  cfg.h = 8;
  cfg.n_heads = 2;
  cfg.mode = EmbedMode::baseline_decomposed;
  cfg.epochs = 1;
  EXPECT_THROW(train(split, bare, nullptr, cfg), ConfigError);

  RecModelConfig sem_cfg = cfg;
  sem_cfg.mode = EmbedMode::semantic;
  sem_cfg.k = 4;
  sem_cfg.n = 2;
  EXPECT_THROW(train(split, ds.catalog, nullptr, sem_cfg), ConfigError);  // no id table

  RecModelConfig bad_h = cfg;
  bad_h.mode = EmbedMode::baseline;
  bad_h.h = 9;  // not divisible by 2 heads
  EXPECT_THROW(train(split, ds.catalog, nullptr, bad_h), ConfigError);
}

// Full-model gradient vs finite differences on a miniature config.
TEST(Train, FullModelGradientMatchesFiniteDifferences) {
  Catalog cat = small_catalog(5);
  RecModelConfig cfg;
  cfg.h = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.max_seq_len = 4;
  cfg.dropout = 0.0;
  for (uint64_t seed : {1ull, 2ull}) {
    cfg.seed = seed;
    RecModel m = RecModel::init(cfg, cat, nullptr);
    std::vector<Interaction> s1{{0, Feedback::positive, 0},
                                {1, Feedback::negative, 1},
                                {2, Feedback::positive, 2},
                                {3, Feedback::positive, 3}};
    std::vector<Interaction> s2{{4, Feedback::positive, 0}, {2, Feedback::positive, 1}};
    ForwardInput in = m.make_input({&s1, &s2});
    std::vector<int64_t> cand{1, 3, 2, 0, 3, 4, 0, 1, 2, 2, 4, 0};
    Tensor labels({12}), weights({12});
    Rng lw(seed);
    for (int64_t i = 0; i < 12; ++i) {
      labels[i] = lw.uniform() < 0.5 ? 0.0f : 1.0f;
      weights[i] = i % 5 == 4 ? 0.0f : 1.0f;
    }
    auto scores_fn = [&]() {
      Var states = m.forward(in);
      Var heads = slice(states, 1, 0, in.T - 1);
      Var ce = m.embedder.embed_tracks(cand);
      ce = permute(reshape(ce, {in.batch * (in.T - 1), 2, cfg.h}), {0, 2, 1});
      return reshape(bmm(reshape(heads, {in.batch * (in.T - 1), 1, cfg.h}), ce),
                     {in.batch * (in.T - 1) * 2});
    };
    Var loss = bce_with_logits(scores_fn(), labels, weights);
    backward(loss);
    // 64-bit loss read keeps the difference quotient above float rounding
    auto f = [&]() { return bce_with_logits_value(scores_fn()->value, labels, weights); };
    testing::FullModelGradError err;
    for (Parameter* p : m.params()) {
      Tensor fd = testing::fd_gradient_richardson(f, p->value());
      err.accumulate(p->gradient(), fd);
    }
    EXPECT_LT(err.value(), 1e-3) << "seed " << seed;
  }
}

}  // namespace
}  // namespace semrec
