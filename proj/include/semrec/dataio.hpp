#pragma once

#include <map>
#include <optional>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "semrec/csv.hpp"
#include "semrec/rng.hpp"

namespace semrec {

// ---------------------------------------------------------------------------
// Domain types

struct TrackFeatures {
  int64_t track_id = 0;
  std::vector<float> features;  // z-scored with catalog stats
  int64_t artist_id = -1;       // -1 = absent
  int64_t genre_id = -1;
};

struct FeatureStats {
  std::vector<float> mean;
  std::vector<float> stddev;  // clamped at 1e-6
};

struct Catalog {
  std::vector<TrackFeatures> tracks;       // ascending track_id
  std::vector<std::vector<float>> raw;     // pre-normalization features, same order
  FeatureStats stats;
  int d_f = 0;
  bool has_artists = false;
  bool has_genres = false;
  std::unordered_map<int64_t, int64_t> track_row;   // track_id -> row
  std::vector<int64_t> artist_ids;                  // distinct, ascending
  std::vector<int64_t> genre_ids;
  std::unordered_map<int64_t, int64_t> artist_row;  // artist_id -> dense row
  std::unordered_map<int64_t, int64_t> genre_row;

  bool has_decomposition() const { return has_artists && has_genres; }
  int64_t size() const { return static_cast<int64_t>(tracks.size()); }

  int64_t row_of(int64_t track_id) const {
    auto it = track_row.find(track_id);
    if (it == track_row.end()) {
      throw DataError(str_cat("unknown track_id ", track_id));
    }
    return it->second;
  }

  std::vector<float> normalize(const std::vector<float>& raw_features) const {
    if (static_cast<int>(raw_features.size()) != d_f) {
      throw ShapeError(str_cat("feature vector has ", raw_features.size(),
                               " dims, catalog expects ", d_f));
    }
    std::vector<float> out(raw_features.size());
    for (size_t j = 0; j < out.size(); ++j) {
      out[j] = (raw_features[j] - stats.mean[j]) / stats.stddev[j];
    }
    return out;
  }
};

enum class Feedback { positive, negative };

struct Interaction {
  int64_t track_id = 0;
  Feedback feedback = Feedback::positive;
  int64_t ts = 0;
};

struct InteractionSequence {
  int64_t seq_id = 0;
  std::vector<Interaction> events;  // ts ascending
  int64_t seed_genre = -1;          // radio-seed analogue; -1 when unknown
};

// One evaluable test-window entry per surviving sequence.
struct TestEntry {
  int64_t seq_id = 0;
  std::vector<Interaction> inputs;  // pre-window model input
  std::vector<Interaction> positives;
  std::vector<Interaction> negatives;
  int64_t seed_genre = -1;
};

struct SplitDataset {
  std::vector<InteractionSequence> train;  // train-window parts, non-empty
  std::vector<TestEntry> test_pairs;
  int64_t cutoff_ts = 0;
};

// ---------------------------------------------------------------------------
// Catalog construction

namespace detail {

inline void index_id_column(const std::vector<TrackFeatures>& tracks, bool artists,
                            std::vector<int64_t>& ids,
                            std::unordered_map<int64_t, int64_t>& rows) {
  std::map<int64_t, int64_t> distinct;
  for (const auto& t : tracks) distinct.emplace(artists ? t.artist_id : t.genre_id, 0);
  ids.clear();
  rows.clear();
  for (auto& [id, row] : distinct) {
    row = static_cast<int64_t>(ids.size());
    ids.push_back(id);
    rows.emplace(id, row);
  }
}

}  // namespace detail

// Builds a catalog from raw rows: sorts by track_id, z-scores features with
// std clamped at 1e-6, and indexes artist/genre vocabularies.
inline Catalog make_catalog(std::vector<TrackFeatures> rows,
                            std::vector<std::vector<float>> raw) {
  if (rows.empty()) throw DataError("catalog: no tracks");
  if (rows.size() != raw.size()) throw ShapeError("catalog: rows/raw size mismatch");

  std::vector<size_t> order(rows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return rows[a].track_id < rows[b].track_id; });

  Catalog cat;
  cat.d_f = static_cast<int>(raw[0].size());
  cat.tracks.reserve(rows.size());
  cat.raw.reserve(rows.size());
  size_t with_artist = 0, with_genre = 0;
  for (size_t oi : order) {
    if (static_cast<int>(raw[oi].size()) != cat.d_f) {
      throw DataError(str_cat("catalog: track ", rows[oi].track_id, " has ",
                              raw[oi].size(), " features, expected ", cat.d_f));
    }
    for (float v : raw[oi]) {
      if (!std::isfinite(v)) {
        throw DataError(str_cat("catalog: non-finite feature for track ", rows[oi].track_id));
      }
    }
    if (!cat.track_row.emplace(rows[oi].track_id, static_cast<int64_t>(cat.tracks.size()))
             .second) {
      throw DataError(str_cat("catalog: duplicate track_id ", rows[oi].track_id));
    }
    with_artist += rows[oi].artist_id >= 0;
    with_genre += rows[oi].genre_id >= 0;
    cat.tracks.push_back(std::move(rows[oi]));
    cat.raw.push_back(std::move(raw[oi]));
  }
  if (with_artist != 0 && with_artist != cat.tracks.size()) {
    throw DataError("catalog: artist_id present on some tracks but not all");
  }
  if (with_genre != 0 && with_genre != cat.tracks.size()) {
    throw DataError("catalog: genre_id present on some tracks but not all");
  }
  cat.has_artists = with_artist == cat.tracks.size();
  cat.has_genres = with_genre == cat.tracks.size();

  cat.stats.mean.assign(static_cast<size_t>(cat.d_f), 0.0f);
  cat.stats.stddev.assign(static_cast<size_t>(cat.d_f), 1.0f);
  const double n = static_cast<double>(cat.raw.size());
  for (int j = 0; j < cat.d_f; ++j) {
    double s = 0.0;
    for (const auto& r : cat.raw) s += r[static_cast<size_t>(j)];
    const double mean = s / n;
    double var = 0.0;
    for (const auto& r : cat.raw) {
      const double d = r[static_cast<size_t>(j)] - mean;
      var += d * d;
    }
    var /= n;
    cat.stats.mean[static_cast<size_t>(j)] = static_cast<float>(mean);
    cat.stats.stddev[static_cast<size_t>(j)] =
        static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
  for (size_t i = 0; i < cat.tracks.size(); ++i) {
    cat.tracks[i].features = cat.normalize(cat.raw[i]);
  }
  if (cat.has_artists) detail::index_id_column(cat.tracks, true, cat.artist_ids, cat.artist_row);
  if (cat.has_genres) detail::index_id_column(cat.tracks, false, cat.genre_ids, cat.genre_row);
  return cat;
}

// ---------------------------------------------------------------------------
// File I/O: catalog CSV

// Header: track_id,artist_id,genre_id,f0..f{d_f-1}; artist/genre may be empty.
inline Catalog load_catalog(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(str_cat(path, ": empty file"));
  auto header = csv_split(line);
  if (header.size() < 4 || header[0] != "track_id" || header[1] != "artist_id" ||
      header[2] != "genre_id") {
    throw DataError(str_cat(path, ": bad header, expected track_id,artist_id,genre_id,f0..."));
  }
  const size_t d_f = header.size() - 3;
  std::vector<TrackFeatures> rows;
  std::vector<std::vector<float>> raw;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = csv_split(line);
    const std::string ctx = str_cat(path, ":", line_no);
    if (cells.size() != header.size()) {
      throw DataError(str_cat(ctx, ": ragged row, ", cells.size(), " cells vs ",
                              header.size(), " header columns"));
    }
    TrackFeatures t;
    t.track_id = parse_int(cells[0], ctx);
    if (!cells[1].empty()) t.artist_id = parse_int(cells[1], ctx);
    if (!cells[2].empty()) t.genre_id = parse_int(cells[2], ctx);
    std::vector<float> fs(d_f);
    for (size_t j = 0; j < d_f; ++j) {
      fs[j] = static_cast<float>(parse_real(cells[3 + j], ctx));
    }
    rows.push_back(std::move(t));
    raw.push_back(std::move(fs));
  }
  return make_catalog(std::move(rows), std::move(raw));
}

inline void save_catalog(const std::string& path, const Catalog& cat) {
  auto out = open_output(path);
  out << "track_id,artist_id,genre_id";
  for (int j = 0; j < cat.d_f; ++j) out << ",f" << j;
  out << "\n";
  for (size_t i = 0; i < cat.tracks.size(); ++i) {
    const auto& t = cat.tracks[i];
    out << t.track_id << ",";
    if (t.artist_id >= 0) out << t.artist_id;
    out << ",";
    if (t.genre_id >= 0) out << t.genre_id;
    for (float v : cat.raw[i]) out << "," << fmt_real(v);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// File I/O: interactions JSONL

namespace detail {

// Dominant genre over a sequence's events: most frequent genre among
// positively rated tracks (all events as fallback), smallest id on ties.
inline int64_t derive_seed_genre(const std::vector<Interaction>& events, const Catalog& cat) {
  if (!cat.has_genres) return -1;
  std::map<int64_t, int64_t> counts;
  for (int pass = 0; pass < 2 && counts.empty(); ++pass) {
    for (const auto& e : events) {
      if (pass == 0 && e.feedback != Feedback::positive) continue;
      counts[cat.tracks[static_cast<size_t>(cat.row_of(e.track_id))].genre_id]++;
    }
  }
  int64_t best = -1, best_count = 0;
  for (const auto& [g, c] : counts) {
    if (c > best_count) {
      best = g;
      best_count = c;
    }
  }
  return best;
}

inline void finalize_sequence(InteractionSequence& seq, const Catalog& cat, int64_t max_len) {
  std::stable_sort(seq.events.begin(), seq.events.end(),
                   [](const Interaction& a, const Interaction& b) { return a.ts < b.ts; });
  if (max_len > 0 && static_cast<int64_t>(seq.events.size()) > max_len) {
    seq.events.erase(seq.events.begin(),
                     seq.events.end() - static_cast<ptrdiff_t>(max_len));
  }
  seq.seed_genre = derive_seed_genre(seq.events, cat);
}

}  // namespace detail

// One object per line: {"seq_id":int,"track_id":int,"feedback":"pos"|"neg","ts":int}.
// Sequences longer than max_len keep the most recent max_len events.
inline std::vector<InteractionSequence> load_interactions(const std::string& path,
                                                          const Catalog& catalog,
                                                          int64_t max_len = 50) {
  auto in = open_input(path);
  std::map<int64_t, InteractionSequence> by_seq;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(str_cat(path, ":", line_no, ": malformed JSON: ", e.what()));
    }
    Interaction ev;
    int64_t seq_id = 0;
    try {
      seq_id = j.at("seq_id").get<int64_t>();
      ev.track_id = j.at("track_id").get<int64_t>();
      ev.ts = j.at("ts").get<int64_t>();
      const std::string fb = j.at("feedback").get<std::string>();
      if (fb == "pos") {
        ev.feedback = Feedback::positive;
      } else if (fb == "neg") {
        ev.feedback = Feedback::negative;
      } else {
        throw DataError(str_cat(path, ":", line_no, ": feedback must be 'pos' or 'neg', got '",
                                fb, "'"));
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(str_cat(path, ":", line_no, ": bad record: ", e.what()));
    }
    if (catalog.track_row.find(ev.track_id) == catalog.track_row.end()) {
      throw DataError(str_cat(path, ":", line_no, ": unknown track_id ", ev.track_id));
    }
    auto& seq = by_seq[seq_id];
    seq.seq_id = seq_id;
    seq.events.push_back(ev);
  }
  std::vector<InteractionSequence> out;
  out.reserve(by_seq.size());
  for (auto& [id, seq] : by_seq) {
    detail::finalize_sequence(seq, catalog, max_len);
    out.push_back(std::move(seq));
  }
  return out;
}

inline void save_interactions(const std::string& path,
                              const std::vector<InteractionSequence>& sequences) {
  auto out = open_output(path);
  for (const auto& seq : sequences) {
    for (const auto& e : seq.events) {
      out << "{\"seq_id\":" << seq.seq_id << ",\"track_id\":" << e.track_id
          << ",\"feedback\":\"" << (e.feedback == Feedback::positive ? "pos" : "neg")
          << "\",\"ts\":" << e.ts << "}\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic data with planted content structure

struct SynthConfig {
  int64_t n_tracks = 10000;
  int64_t n_artists = 500;
  int64_t n_genres = 8;
  int d_f = 16;
  int64_t n_users = 2000;
  int64_t min_events = 5;
  int64_t max_events = 50;
  double noise_sigma = 0.25;   // track spread around its artist centroid
  double feedback_gain = 6.0;  // a in sigmoid(a * cos + b); 0 = fair coin
  double feedback_bias = 0.0;  // b
  uint64_t seed = 42;
};

struct SynthDataset {
  Catalog catalog;
  std::vector<InteractionSequence> sequences;
  std::vector<std::vector<float>> user_prefs;  // aligned with sequences
  double feedback_gain = 6.0;
  double feedback_bias = 0.0;

  // True probability of positive feedback; the evaluation oracle scorer.
  double affinity(size_t seq_index, int64_t track_id) const;
};

namespace detail {

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

inline double SynthDataset::affinity(size_t seq_index, int64_t track_id) const {
  const auto& raw = catalog.raw[static_cast<size_t>(catalog.row_of(track_id))];
  return detail::sigmoid(feedback_gain * detail::cosine(user_prefs[seq_index], raw) +
                         feedback_bias);
}

// Hierarchical generative model: genre centroids ~ N(0, I); artist centroids
// ~ N(genre, 0.5^2 I); track features ~ N(artist, noise_sigma^2 I). Each user
// mixes 1-3 genres into a preference vector; feedback on a played track is
// positive with probability sigmoid(a * cos(pref, features) + b). Content is
// genuinely predictive, so trained semantic IDs have signal to exploit.
inline SynthDataset synth_generate(const SynthConfig& cfg) {
  if (cfg.n_genres < 1 || cfg.n_genres > cfg.n_artists || cfg.n_artists > cfg.n_tracks) {
    throw ConfigError(str_cat("synth: need 1 <= n_genres <= n_artists <= n_tracks, got ",
                              cfg.n_genres, "/", cfg.n_artists, "/", cfg.n_tracks));
  }
  if (cfg.d_f < 1 || cfg.n_users < 1 || cfg.min_events < 1 ||
      cfg.min_events > cfg.max_events || cfg.noise_sigma < 0.0) {
    throw ConfigError("synth: invalid config bounds");
  }
  Rng rng(cfg.seed);
  const size_t df = static_cast<size_t>(cfg.d_f);

  std::vector<std::vector<float>> genre_centroids(static_cast<size_t>(cfg.n_genres));
  for (auto& g : genre_centroids) {
    g.resize(df);
    for (auto& v : g) v = static_cast<float>(rng.normal());
  }
  std::vector<std::vector<float>> artist_centroids(static_cast<size_t>(cfg.n_artists));
  std::vector<int64_t> artist_genre(static_cast<size_t>(cfg.n_artists));
  for (int64_t a = 0; a < cfg.n_artists; ++a) {
    const int64_t g = a % cfg.n_genres;
    artist_genre[static_cast<size_t>(a)] = g;
    auto& c = artist_centroids[static_cast<size_t>(a)];
    c.resize(df);
    for (size_t j = 0; j < df; ++j) {
      c[j] = static_cast<float>(rng.normal(genre_centroids[static_cast<size_t>(g)][j], 0.5));
    }
  }

  std::vector<TrackFeatures> rows(static_cast<size_t>(cfg.n_tracks));
  std::vector<std::vector<float>> raw(static_cast<size_t>(cfg.n_tracks));
  for (int64_t t = 0; t < cfg.n_tracks; ++t) {
    const int64_t a = t % cfg.n_artists;
    auto& r = raw[static_cast<size_t>(t)];
    r.resize(df);
    for (size_t j = 0; j < df; ++j) {
      r[j] = static_cast<float>(
          rng.normal(artist_centroids[static_cast<size_t>(a)][j], cfg.noise_sigma));
    }
    rows[static_cast<size_t>(t)] = TrackFeatures{t, {}, a, artist_genre[static_cast<size_t>(a)]};
  }

  SynthDataset ds;
  ds.catalog = make_catalog(std::move(rows), std::move(raw));
  ds.feedback_gain = cfg.feedback_gain;
  ds.feedback_bias = cfg.feedback_bias;
  ds.sequences.reserve(static_cast<size_t>(cfg.n_users));
  ds.user_prefs.reserve(static_cast<size_t>(cfg.n_users));

  std::vector<int64_t> genre_pool(static_cast<size_t>(cfg.n_genres));
  for (int64_t g = 0; g < cfg.n_genres; ++g) genre_pool[static_cast<size_t>(g)] = g;

  for (int64_t u = 0; u < cfg.n_users; ++u) {
    const int64_t n_pref = std::min<int64_t>(1 + rng.uniform_int(3), cfg.n_genres);
    rng.shuffle(genre_pool);
    std::vector<double> weights(static_cast<size_t>(n_pref));
    double wsum = 0.0;
    for (auto& w : weights) {
      w = rng.uniform();
      wsum += w;
    }
    std::vector<float> pref(df, 0.0f);
    int64_t dominant = genre_pool[0];
    double dominant_w = -1.0;
    for (int64_t p = 0; p < n_pref; ++p) {
      const double w = weights[static_cast<size_t>(p)] / std::max(wsum, 1e-12);
      const int64_t g = genre_pool[static_cast<size_t>(p)];
      for (size_t j = 0; j < df; ++j) {
        pref[j] += static_cast<float>(w * genre_centroids[static_cast<size_t>(g)][j]);
      }
      if (w > dominant_w) {
        dominant_w = w;
        dominant = g;
      }
    }

    InteractionSequence seq;
    seq.seq_id = u;
    seq.seed_genre = dominant;
    const int64_t n_events = cfg.min_events + rng.uniform_int(cfg.max_events - cfg.min_events + 1);
    seq.events.reserve(static_cast<size_t>(n_events));
    for (int64_t e = 0; e < n_events; ++e) {
      Interaction ev;
      ev.track_id = rng.uniform_int(cfg.n_tracks);
      ev.ts = rng.uniform_int(1000000000);
      const double p = detail::sigmoid(
          cfg.feedback_gain *
              detail::cosine(pref, ds.catalog.raw[static_cast<size_t>(ev.track_id)]) +
          cfg.feedback_bias);
      ev.feedback = rng.uniform() < p ? Feedback::positive : Feedback::negative;
      seq.events.push_back(ev);
    }
    std::stable_sort(seq.events.begin(), seq.events.end(),
                     [](const Interaction& a, const Interaction& b) { return a.ts < b.ts; });
    ds.sequences.push_back(std::move(seq));
    ds.user_prefs.push_back(std::move(pref));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Time-separated split

// Cutoff at the (1 - test_fraction) quantile of the global timestamp range.
// Sequences failing the test filters (>=1 positive, >=1 negative in the test
// window, non-empty input) stay in train but are excluded from test_pairs.
inline SplitDataset time_split(const std::vector<InteractionSequence>& sequences,
                               double test_fraction) {
  if (sequences.empty()) throw DataError("time_split: empty input");
  if (!(test_fraction > 0.0 && test_fraction < 0.5)) {
    throw ConfigError(str_cat("time_split: test_fraction must be in (0, 0.5), got ",
                              test_fraction));
  }
  int64_t ts_min = std::numeric_limits<int64_t>::max();
  int64_t ts_max = std::numeric_limits<int64_t>::min();
  for (const auto& s : sequences) {
    for (const auto& e : s.events) {
      ts_min = std::min(ts_min, e.ts);
      ts_max = std::max(ts_max, e.ts);
    }
  }
  if (ts_min > ts_max) throw DataError("time_split: no events");

  SplitDataset split;
  split.cutoff_ts = ts_min + static_cast<int64_t>(
                                 (1.0 - test_fraction) *
                                 static_cast<double>(ts_max - ts_min));
  for (const auto& s : sequences) {
    InteractionSequence train_part;
    train_part.seq_id = s.seq_id;
    train_part.seed_genre = s.seed_genre;
    TestEntry entry;
    entry.seq_id = s.seq_id;
    entry.seed_genre = s.seed_genre;
    for (const auto& e : s.events) {
      if (e.ts <= split.cutoff_ts) {
        train_part.events.push_back(e);
      } else if (e.feedback == Feedback::positive) {
        entry.positives.push_back(e);
      } else {
        entry.negatives.push_back(e);
      }
    }
    if (train_part.events.empty()) continue;
    if (!entry.positives.empty() && !entry.negatives.empty()) {
      entry.inputs = train_part.events;
      split.test_pairs.push_back(std::move(entry));
    }
    split.train.push_back(std::move(train_part));
  }
  if (split.train.empty()) throw DataError("time_split: no training data before cutoff");
  return split;
}

// ---------------------------------------------------------------------------
// Sanity oracle: logistic regression + pooled AUC

struct LogisticModel {
  std::vector<float> weights;
  float bias = 0.0f;

  double score(const std::vector<float>& x) const {
    double s = bias;
    for (size_t j = 0; j < weights.size(); ++j) s += static_cast<double>(weights[j]) * x[j];
    return s;
  }
};

// Full-batch gradient descent on logistic loss; deterministic.
inline LogisticModel fit_logistic(const std::vector<std::vector<float>>& xs,
                                  const std::vector<int>& ys, int iters = 200,
                                  double lr = 0.5) {
  if (xs.empty() || xs.size() != ys.size()) throw DataError("fit_logistic: bad inputs");
  const size_t d = xs[0].size();
  LogisticModel m;
  m.weights.assign(d, 0.0f);
  const double n = static_cast<double>(xs.size());
  std::vector<double> gw(d);
  for (int it = 0; it < iters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
      const double p = detail::sigmoid(m.score(xs[i]));
      const double err = p - ys[i];
      for (size_t j = 0; j < d; ++j) gw[j] += err * xs[i][j];
      gb += err;
    }
    for (size_t j = 0; j < d; ++j) m.weights[j] -= static_cast<float>(lr * gw[j] / n);
    m.bias -= static_cast<float>(lr * gb / n);
  }
  return m;
}

// Pooled (unstratified) AUC, ties count 0.5.
inline double auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  if (pairs == 0) throw DataError("auc: need at least one positive and one negative");
  return wins / static_cast<double>(pairs);
}

}  // namespace semrec
