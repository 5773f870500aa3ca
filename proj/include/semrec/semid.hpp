#pragma once

#include <set>

#include "semrec/rqvae.hpp"

namespace semrec {

// n learned codeword indices plus the non-learned tie-break index.
struct SemanticId {
  std::vector<int64_t> codewords;
  int64_t tiebreak = 0;

  bool operator==(const SemanticId& o) const {
    return codewords == o.codewords && tiebreak == o.tiebreak;
  }
};

enum class IdVariant { v0, v1 };

inline const char* to_string(IdVariant v) { return v == IdVariant::v0 ? "v0" : "v1"; }

class IdTable {
 public:
  IdVariant variant = IdVariant::v1;
  int64_t k = 0;
  int n = 0;

  const SemanticId& id_of(int64_t track_id) const {
    auto it = ids_.find(track_id);
    if (it == ids_.end()) {
      throw DataError(str_cat("id table: no semantic ID for track ", track_id));
    }
    return it->second;
  }

  bool contains(int64_t track_id) const { return ids_.count(track_id) != 0; }
  int64_t size() const { return static_cast<int64_t>(ids_.size()); }
  int64_t max_tiebreak() const { return max_tiebreak_; }
  const std::map<int64_t, SemanticId>& entries() const { return ids_; }

  int64_t collision_count(const std::vector<int64_t>& codewords) const {
    auto it = tuple_counts_.find(codewords);
    return it == tuple_counts_.end() ? 0 : it->second;
  }

  // Appends a track with explicit tiebreak; enforces the contiguous-range
  // invariant (tiebreak == current collision count for its tuple).
  void insert(int64_t track_id, SemanticId id) {
    if (static_cast<int>(id.codewords.size()) != n) {
      throw ShapeError(str_cat("id table: expected ", n, " codewords, got ",
                               id.codewords.size()));
    }
    for (int64_t c : id.codewords) {
      if (c < 0 || c >= k) throw DataError(str_cat("id table: codeword ", c, " out of [0, ", k, ")"));
    }
    if (ids_.count(track_id)) throw DataError(str_cat("id table: duplicate track ", track_id));
    int64_t& count = tuple_counts_[id.codewords];
    if (id.tiebreak != count) {
      throw DataError(str_cat("id table: track ", track_id, " tiebreak ", id.tiebreak,
                              " breaks the contiguous range (expected ", count, ")"));
    }
    ++count;
    max_tiebreak_ = std::max(max_tiebreak_, id.tiebreak);
    ids_.emplace(track_id, std::move(id));
  }

  // Next free tiebreak slot for a tuple, without mutating the table.
  SemanticId propose(std::vector<int64_t> codewords) const {
    SemanticId id;
    id.tiebreak = collision_count(codewords);
    id.codewords = std::move(codewords);
    return id;
  }

 private:
  std::map<int64_t, SemanticId> ids_;  // ascending track_id
  std::map<std::vector<int64_t>, int64_t> tuple_counts_;
  int64_t max_tiebreak_ = 0;
};

// ---------------------------------------------------------------------------
// Assignment

// Trained (v1) IDs: encode+quantize per track in ascending track_id order;
// tiebreak starts at 0 per tuple and increments on each collision.
inline IdTable assign_v1(const Catalog& catalog, const CodebookStack& stack) {
  if (catalog.d_f != stack.cfg.d_f) {
    throw ShapeError(str_cat("assign_v1: catalog d_f=", catalog.d_f, " vs stack d_f=",
                             stack.cfg.d_f));
  }
  IdTable table;
  table.variant = IdVariant::v1;
  table.k = stack.cfg.codebook_size;
  table.n = stack.cfg.n_levels;

  const int64_t n_tracks = catalog.size();
  std::vector<std::vector<float>> features(static_cast<size_t>(n_tracks));
  for (int64_t i = 0; i < n_tracks; ++i) {
    features[static_cast<size_t>(i)] = catalog.tracks[static_cast<size_t>(i)].features;
  }
  Tensor latents = stack.encode_batch(features);
  std::vector<std::vector<int64_t>> tuples(static_cast<size_t>(n_tracks));
#pragma omp parallel for schedule(static) if (n_tracks > 64)
  for (int64_t i = 0; i < n_tracks; ++i) {
    std::vector<float> latent(latents.data() + i * stack.cfg.d_z,
                              latents.data() + (i + 1) * stack.cfg.d_z);
    tuples[static_cast<size_t>(i)] = stack.quantize(latent).codewords;
  }
  // catalog rows are ascending by track_id already
  for (int64_t i = 0; i < n_tracks; ++i) {
    table.insert(catalog.tracks[static_cast<size_t>(i)].track_id,
                 table.propose(tuples[static_cast<size_t>(i)]));
  }
  return table;
}

// Random (v0) IDs: n independent uniform draws per track, tiebreaks as in v1.
inline IdTable assign_v0(std::vector<int64_t> track_ids, int64_t k, int n, uint64_t seed) {
  if (k < 1) throw ConfigError("assign_v0: k must be >= 1");
  if (n < 1) throw ConfigError("assign_v0: n must be >= 1");
  std::sort(track_ids.begin(), track_ids.end());
  IdTable table;
  table.variant = IdVariant::v0;
  table.k = k;
  table.n = n;
  Rng rng(seed);
  for (int64_t tid : track_ids) {
    std::vector<int64_t> tuple(static_cast<size_t>(n));
    for (auto& c : tuple) c = rng.uniform_int(k);
    table.insert(tid, table.propose(std::move(tuple)));
  }
  return table;
}

// Interpolated ID for a new track from its raw (unnormalized) features. The
// table is not mutated; the caller commits via IdTable::insert.
inline SemanticId assign_cold_start(const std::vector<float>& raw_features,
                                    const CodebookStack& stack, const IdTable& table) {
  if (table.variant == IdVariant::v0) {
    throw ConfigError("assign_cold_start: v0 tables have no feature mapping");
  }
  std::vector<float> normalized(raw_features.size());
  if (raw_features.size() != stack.feature_stats.mean.size()) {
    throw ShapeError(str_cat("assign_cold_start: feature dim ", raw_features.size(),
                             " vs stack d_f ", stack.feature_stats.mean.size()));
  }
  for (size_t j = 0; j < raw_features.size(); ++j) {
    normalized[j] = (raw_features[j] - stack.feature_stats.mean[j]) / stack.feature_stats.stddev[j];
  }
  auto q = stack.encode_and_quantize(normalized);
  return table.propose(q.codewords);
}

// ---------------------------------------------------------------------------
// Parameter accounting

enum class EmbedMode { baseline, baseline_decomposed, semantic, semantic_decomposed };

inline const char* to_string(EmbedMode m) {
  switch (m) {
    case EmbedMode::baseline: return "baseline";
    case EmbedMode::baseline_decomposed: return "baseline_decomposed";
    case EmbedMode::semantic: return "semantic";
    case EmbedMode::semantic_decomposed: return "semantic_decomposed";
  }
  return "?";
}

inline EmbedMode embed_mode_from_string(const std::string& s) {
  if (s == "baseline") return EmbedMode::baseline;
  if (s == "baseline_decomposed") return EmbedMode::baseline_decomposed;
  if (s == "semantic") return EmbedMode::semantic;
  if (s == "semantic_decomposed") return EmbedMode::semantic_decomposed;
  throw ConfigError(str_cat("unknown embedding mode '", s, "'"));
}

inline bool is_semantic(EmbedMode m) {
  return m == EmbedMode::semantic || m == EmbedMode::semantic_decomposed;
}
inline bool is_decomposed(EmbedMode m) {
  return m == EmbedMode::baseline_decomposed || m == EmbedMode::semantic_decomposed;
}

struct ParamCountInput {
  int64_t catalog_size = 0;  // N
  int64_t h = 0;
  EmbedMode mode = EmbedMode::baseline;
  int64_t k = 0;
  int64_t n = 0;
  int64_t tiebreak_rows = 0;  // live tiebreak table rows; 0 = table disabled
  int64_t n_artists = 0;
  int64_t n_genres = 0;
  int64_t n_layers = 2;
  int64_t max_seq_len = 50;  // L
};

struct ParamCount {
  int64_t embedding_params = 0;
  int64_t transformer_params = 0;
  int64_t total = 0;
};

// Closed-form trainable-parameter count; must equal the live model exactly.
// Transformer side (per layer, feed-forward inner width == h):
//   2 layernorms (2h each) + 4 attention projections (h^2 + h each)
//   + 2 feed-forward linears (h^2 + h each)
// plus positional table L*h, feedback table 2*h, final layernorm 2h.
inline ParamCount param_count(const ParamCountInput& in) {
  ParamCount out;
  const int64_t h = in.h;
  if (is_semantic(in.mode)) {
    out.embedding_params = in.n * in.k * h + in.tiebreak_rows * h;
  } else {
    out.embedding_params = in.catalog_size * h;
  }
  if (is_decomposed(in.mode)) {
    out.embedding_params += in.n_artists * h + in.n_genres * h;
  }
  const int64_t per_layer = 6 * h * h + 10 * h;
  out.transformer_params = in.n_layers * per_layer + in.max_seq_len * h + 2 * h + 2 * h;
  out.total = out.embedding_params + out.transformer_params;
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: CSV, header track_id,c0..c{n-1},tiebreak,variant,k,n

inline void save_id_table(const std::string& path, const IdTable& table) {
  auto out = open_output(path);
  out << "track_id";
  for (int i = 0; i < table.n; ++i) out << ",c" << i;
  out << ",tiebreak,variant,k,n\n";
  for (const auto& [tid, id] : table.entries()) {
    out << tid;
    for (int64_t c : id.codewords) out << "," << c;
    out << "," << id.tiebreak << "," << to_string(table.variant) << "," << table.k << ","
        << table.n << "\n";
  }
}

inline IdTable load_id_table(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(str_cat(path, ": empty file"));
  auto header = csv_split(line);
  if (header.size() < 5 || header[0] != "track_id") {
    throw DataError(str_cat(path, ": bad id table header"));
  }
  const int n = static_cast<int>(header.size()) - 5;
  struct Row {
    int64_t track_id;
    SemanticId id;
  };
  std::vector<Row> rows;
  std::optional<IdVariant> variant;
  int64_t k = -1;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = csv_split(line);
    const std::string ctx = str_cat(path, ":", line_no);
    if (cells.size() != header.size()) throw DataError(str_cat(ctx, ": ragged row"));
    Row row;
    row.track_id = parse_int(cells[0], ctx);
    row.id.codewords.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      row.id.codewords[static_cast<size_t>(i)] = parse_int(cells[static_cast<size_t>(1 + i)], ctx);
    }
    row.id.tiebreak = parse_int(cells[static_cast<size_t>(n + 1)], ctx);
    const std::string& var = cells[static_cast<size_t>(n + 2)];
    IdVariant v = var == "v0" ? IdVariant::v0 : IdVariant::v1;
    if (var != "v0" && var != "v1") throw DataError(str_cat(ctx, ": bad variant '", var, "'"));
    const int64_t row_k = parse_int(cells[static_cast<size_t>(n + 3)], ctx);
    const int64_t row_n = parse_int(cells[static_cast<size_t>(n + 4)], ctx);
    if (row_n != n) throw DataError(str_cat(ctx, ": n=", row_n, " disagrees with header"));
    if (variant && *variant != v) throw DataError(str_cat(ctx, ": mixed variants"));
    if (k >= 0 && k != row_k) throw DataError(str_cat(ctx, ": mixed k"));
    variant = v;
    k = row_k;
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(str_cat(path, ": no id rows"));
  IdTable table;
  table.variant = *variant;
  table.k = k;
  table.n = n;
  // Re-insert in ascending tiebreak order so each tuple replays 0..c-1; this
  // validates the contiguous-range invariant regardless of assignment order
  // (cold-start commits can carry high tiebreaks on low track ids).
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.id.tiebreak, a.track_id) < std::tie(b.id.tiebreak, b.track_id);
  });
  for (auto& r : rows) table.insert(r.track_id, std::move(r.id));
  return table;
}

}  // namespace semrec
