#pragma once

#include "semrec/recsys.hpp"

namespace semrec {

// ---------------------------------------------------------------------------
// Report types

struct BucketStat {
  int64_t lo = 0, hi = 0;  // input-length bucket [lo, hi)
  double accuracy = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;  // 90% bootstrap CI
  int64_t n_sequences = 0;
};

struct DiversityStats {
  double distinct_tracks_per_seed = 0.0;
  double distinct_artists_per_seed = 0.0;
  double repetition_rate = 0.0;
  int64_t n_seeds = 0;
};

struct EvalReport {
  double stratified_auc = 0.0;
  int64_t n_sequences = 0;
  std::vector<BucketStat> per_bucket;
  std::vector<SequenceAccuracy> per_sequence;  // retained for lift analysis
  DiversityStats diversity;
  bool has_diversity = false;
  ParamCount param_counts;
};

struct EvalOptions {
  std::vector<int64_t> bucket_edges;  // empty = powers of two up to max length
  int bootstrap_resamples = 1000;
  double ci_level = 0.90;
  uint64_t bootstrap_seed = 12345;
};

inline std::vector<int64_t> default_bucket_edges(int64_t max_len) {
  std::vector<int64_t> edges{1};
  while (edges.back() <= max_len) edges.push_back(edges.back() * 2);
  return edges;
}

namespace detail {

inline double percentile(std::vector<double>& xs, double q) {
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

// Percentile bootstrap over per-sequence values.
inline std::pair<double, double> bootstrap_ci(const std::vector<double>& values,
                                              int resamples, double level, Rng& rng) {
  std::vector<double> stats(static_cast<size_t>(resamples));
  const size_t n = values.size();
  for (int r = 0; r < resamples; ++r) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      acc += values[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(n)))];
    }
    stats[static_cast<size_t>(r)] = acc / static_cast<double>(n);
  }
  const double alpha = (1.0 - level) / 2.0;
  const double lo = percentile(stats, alpha);
  std::vector<double> stats_hi = stats;
  const double hi = percentile(stats_hi, 1.0 - alpha);
  return {lo, hi};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stratified AUC

// Per-sequence pairwise ranking accuracy averaged over sequences; buckets by
// input-prefix length with bootstrap CIs.
inline EvalReport aggregate_report(std::vector<SequenceAccuracy> per_sequence,
                                   const EvalOptions& opts = {}) {
  if (per_sequence.empty()) throw DataError("eval: no test sequences");
  EvalReport report;
  report.n_sequences = static_cast<int64_t>(per_sequence.size());
  double acc = 0.0;
  int64_t max_len = 1;
  for (const auto& s : per_sequence) {
    acc += s.accuracy;
    max_len = std::max(max_len, s.input_len);
  }
  report.stratified_auc = acc / static_cast<double>(per_sequence.size());

  std::vector<int64_t> edges = opts.bucket_edges.empty() ? default_bucket_edges(max_len)
                                                         : opts.bucket_edges;
  Rng rng(opts.bootstrap_seed);
  for (size_t b = 0; b + 1 < edges.size(); ++b) {
    std::vector<double> vals;
    for (const auto& s : per_sequence) {
      if (s.input_len >= edges[b] && s.input_len < edges[b + 1]) vals.push_back(s.accuracy);
    }
    if (vals.empty()) continue;
    BucketStat stat;
    stat.lo = edges[b];
    stat.hi = edges[b + 1];
    stat.n_sequences = static_cast<int64_t>(vals.size());
    stat.accuracy = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    std::tie(stat.ci_lo, stat.ci_hi) =
        detail::bootstrap_ci(vals, opts.bootstrap_resamples, opts.ci_level, rng);
    report.per_bucket.push_back(stat);
  }
  report.per_sequence = std::move(per_sequence);
  return report;
}

inline EvalReport stratified_auc(const RecModel& model, const SplitDataset& split,
                                 const EvalOptions& opts = {}) {
  if (split.test_pairs.empty()) throw DataError("stratified_auc: empty test_pairs");
  return aggregate_report(pairwise_accuracies(model, split.test_pairs), opts);
}

// Same protocol for an arbitrary scorer (oracles, random baselines).
using EventScorer = std::function<double(const TestEntry&, const Interaction&)>;

inline std::vector<SequenceAccuracy> pairwise_accuracies_scored(
    const std::vector<TestEntry>& entries, const EventScorer& scorer) {
  std::vector<SequenceAccuracy> out;
  out.reserve(entries.size());
  for (const auto& entry : entries) {
    double wins = 0.0;
    int64_t pairs = 0;
    for (const auto& p : entry.positives) {
      const double sp = scorer(entry, p);
      for (const auto& n : entry.negatives) {
        const double sn = scorer(entry, n);
        wins += sp > sn ? 1.0 : (sp == sn ? 0.5 : 0.0);
        ++pairs;
      }
    }
    out.push_back(SequenceAccuracy{entry.seq_id, static_cast<int64_t>(entry.inputs.size()),
                                   pairs > 0 ? wins / static_cast<double>(pairs) : 0.0, pairs});
  }
  return out;
}

inline EvalReport stratified_auc_scored(const SplitDataset& split, const EventScorer& scorer,
                                        const EvalOptions& opts = {}) {
  if (split.test_pairs.empty()) throw DataError("stratified_auc: empty test_pairs");
  return aggregate_report(pairwise_accuracies_scored(split.test_pairs, scorer), opts);
}

// ---------------------------------------------------------------------------
// Lift by input length

struct LiftBucket {
  int64_t lo = 0, hi = 0;
  double delta = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  int64_t n_sequences = 0;
};

// Per-bucket accuracy delta (candidate - baseline) with a paired bootstrap CI.
// Both reports must cover the identical sequence set.
inline std::vector<LiftBucket> lift_by_length(const EvalReport& baseline,
                                              const EvalReport& candidate,
                                              std::vector<int64_t> edges = {},
                                              int resamples = 1000, double level = 0.90,
                                              uint64_t seed = 12345) {
  if (baseline.per_sequence.size() != candidate.per_sequence.size()) {
    throw DataError(str_cat("lift_by_length: sequence sets differ (", baseline.per_sequence.size(),
                            " vs ", candidate.per_sequence.size(), ")"));
  }
  std::unordered_map<int64_t, const SequenceAccuracy*> base_by_id;
  for (const auto& s : baseline.per_sequence) base_by_id.emplace(s.seq_id, &s);
  struct PairedDelta {
    int64_t input_len;
    double delta;
  };
  std::vector<PairedDelta> deltas;
  int64_t max_len = 1;
  for (const auto& c : candidate.per_sequence) {
    auto it = base_by_id.find(c.seq_id);
    if (it == base_by_id.end()) {
      throw DataError(str_cat("lift_by_length: sequence ", c.seq_id, " missing from baseline"));
    }
    if (it->second->input_len != c.input_len) {
      throw DataError(str_cat("lift_by_length: sequence ", c.seq_id, " input lengths differ"));
    }
    deltas.push_back(PairedDelta{c.input_len, c.accuracy - it->second->accuracy});
    max_len = std::max(max_len, c.input_len);
  }
  if (edges.empty()) edges = default_bucket_edges(max_len);
  Rng rng(seed);
  std::vector<LiftBucket> out;
  for (size_t b = 0; b + 1 < edges.size(); ++b) {
    std::vector<double> vals;
    for (const auto& d : deltas) {
      if (d.input_len >= edges[b] && d.input_len < edges[b + 1]) vals.push_back(d.delta);
    }
    if (vals.empty()) continue;
    LiftBucket lift;
    lift.lo = edges[b];
    lift.hi = edges[b + 1];
    lift.n_sequences = static_cast<int64_t>(vals.size());
    lift.delta = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    std::tie(lift.ci_lo, lift.ci_hi) = detail::bootstrap_ci(vals, resamples, level, rng);
    out.push_back(lift);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diversity (offline Table-2 analogues)

using Recommender = std::function<std::vector<int64_t>(const TestEntry&)>;

inline DiversityStats diversity_from_recommender(const std::vector<TestEntry>& entries,
                                                 const Recommender& recommend,
                                                 const Catalog& catalog, int64_t m) {
  DiversityStats stats;
  std::map<int64_t, std::set<int64_t>> tracks_per_seed;
  std::map<int64_t, std::set<int64_t>> artists_per_seed;
  std::map<int64_t, int64_t> total_per_seed;
  for (const auto& entry : entries) {
    if (entry.seed_genre < 0) {
      throw DataError(str_cat("diversity: sequence ", entry.seq_id, " has no seed label"));
    }
    const auto recs = recommend(entry);
    if (static_cast<int64_t>(recs.size()) != m) {
      throw DataError("diversity: recommender returned wrong list size");
    }
    for (int64_t track : recs) {
      tracks_per_seed[entry.seed_genre].insert(track);
      if (catalog.has_artists) {
        artists_per_seed[entry.seed_genre].insert(
            catalog.tracks[static_cast<size_t>(catalog.row_of(track))].artist_id);
      }
    }
    total_per_seed[entry.seed_genre] += m;
  }
  if (tracks_per_seed.empty()) throw DataError("diversity: no sequences");
  stats.n_seeds = static_cast<int64_t>(tracks_per_seed.size());
  for (const auto& [seed, tracks] : tracks_per_seed) {
    stats.distinct_tracks_per_seed += static_cast<double>(tracks.size());
    if (catalog.has_artists) {
      stats.distinct_artists_per_seed += static_cast<double>(artists_per_seed[seed].size());
    }
    stats.repetition_rate +=
        1.0 - static_cast<double>(tracks.size()) / static_cast<double>(total_per_seed[seed]);
  }
  stats.distinct_tracks_per_seed /= static_cast<double>(stats.n_seeds);
  stats.distinct_artists_per_seed /= static_cast<double>(stats.n_seeds);
  stats.repetition_rate /= static_cast<double>(stats.n_seeds);
  return stats;
}

// Top-m over the full catalog per sequence, pooled per seed label.
inline DiversityStats diversity_metrics(const RecModel& model, const SplitDataset& split,
                                        const Catalog& catalog, int64_t m = 10) {
  if (split.test_pairs.empty()) throw DataError("diversity: empty test_pairs");
  std::vector<int64_t> all_tracks;
  all_tracks.reserve(static_cast<size_t>(catalog.size()));
  for (const auto& t : catalog.tracks) all_tracks.push_back(t.track_id);
  Tensor cand_emb = model.track_embeddings(all_tracks);  // [N, h]
  const int64_t N = catalog.size(), h = model.cfg.h;

  // score all entries in chunks: states [B, h] x emb^T
  std::vector<std::vector<int64_t>> recs(split.test_pairs.size());
  const int64_t chunk = 256;
  for (size_t start = 0; start < split.test_pairs.size(); start += static_cast<size_t>(chunk)) {
    const size_t end = std::min(split.test_pairs.size(), start + static_cast<size_t>(chunk));
    std::vector<const std::vector<Interaction>*> seqs;
    for (size_t i = start; i < end; ++i) seqs.push_back(&split.test_pairs[i].inputs);
    Tensor states = model.user_states(seqs);
#pragma omp parallel for schedule(static)
    for (int64_t i = static_cast<int64_t>(start); i < static_cast<int64_t>(end); ++i) {
      const float* state = states.data() + (i - static_cast<int64_t>(start)) * h;
      std::vector<std::pair<double, int64_t>> scored(static_cast<size_t>(N));
      for (int64_t t = 0; t < N; ++t) {
        scored[static_cast<size_t>(t)] = {dot_state(state, cand_emb.data() + t * h, h),
                                          all_tracks[static_cast<size_t>(t)]};
      }
      std::partial_sort(scored.begin(), scored.begin() + m, scored.end(),
                        [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                        });
      auto& out = recs[static_cast<size_t>(i)];
      out.reserve(static_cast<size_t>(m));
      for (int64_t r = 0; r < m; ++r) out.push_back(scored[static_cast<size_t>(r)].second);
    }
  }
  size_t idx = 0;
  auto lookup = [&recs, &idx](const TestEntry&) { return recs[idx++]; };
  return diversity_from_recommender(split.test_pairs, lookup, catalog, m);
}

}  // namespace semrec
