#pragma once

#include <nlohmann/json.hpp>

#include "semrec/eval.hpp"

namespace semrec {

using json = nlohmann::json;

constexpr int kFormatVersion = 1;

// ---------------------------------------------------------------------------
// Tensor

inline json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape();
  j["data"] = t.vec();
  return j;
}

inline Tensor tensor_from_json(const json& j) {
  try {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<float>>());
  } catch (const json::exception& e) {
    throw DataError(str_cat("tensor: bad JSON: ", e.what()));
  }
}

namespace detail {

inline json load_json_file(const std::string& path, const char* expected_type) {
  auto in = open_input(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(str_cat(path, ": malformed JSON: ", e.what()));
  }
  if (j.value("format_version", -1) != kFormatVersion) {
    throw DataError(str_cat(path, ": unsupported format_version"));
  }
  if (j.value("type", "") != expected_type) {
    throw DataError(str_cat(path, ": expected type '", expected_type, "', got '",
                            j.value("type", "?"), "'"));
  }
  return j;
}

inline void write_json_file(const std::string& path, const json& j) {
  auto out = open_output(path);
  out << j.dump(2) << "\n";
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configs

inline json rqvae_config_to_json(const RqvaeConfig& c) {
  return json{{"d_f", c.d_f},
              {"d_z", c.d_z},
              {"n_levels", c.n_levels},
              {"codebook_size", c.codebook_size},
              {"hidden", c.hidden},
              {"beta_commit", c.beta_commit},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"ema_decay", c.ema_decay},
              {"seed", c.seed}};
}

inline RqvaeConfig rqvae_config_from_json(const json& j) {
  RqvaeConfig c;
  try {
    c.d_f = detail::get_or(j, "d_f", c.d_f);
    c.d_z = detail::get_or(j, "d_z", c.d_z);
    c.n_levels = detail::get_or(j, "n_levels", c.n_levels);
    c.codebook_size = detail::get_or(j, "codebook_size", c.codebook_size);
    c.hidden = detail::get_or(j, "hidden", c.hidden);
    c.beta_commit = detail::get_or(j, "beta_commit", c.beta_commit);
    c.epochs = detail::get_or(j, "epochs", c.epochs);
    c.batch_size = detail::get_or(j, "batch_size", c.batch_size);
    c.lr = detail::get_or(j, "lr", c.lr);
    c.ema_decay = detail::get_or(j, "ema_decay", c.ema_decay);
    c.seed = detail::get_or(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(str_cat("rqvae config: ", e.what()));
  }
  return c;
}

inline json synth_config_to_json(const SynthConfig& c) {
  return json{{"n_tracks", c.n_tracks},
              {"n_artists", c.n_artists},
              {"n_genres", c.n_genres},
              {"d_f", c.d_f},
              {"n_users", c.n_users},
              {"min_events", c.min_events},
              {"max_events", c.max_events},
              {"noise_sigma", c.noise_sigma},
              {"feedback_gain", c.feedback_gain},
              {"feedback_bias", c.feedback_bias},
              {"seed", c.seed}};
}

inline SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  try {
    c.n_tracks = detail::get_or(j, "n_tracks", c.n_tracks);
    c.n_artists = detail::get_or(j, "n_artists", c.n_artists);
    c.n_genres = detail::get_or(j, "n_genres", c.n_genres);
    c.d_f = detail::get_or(j, "d_f", c.d_f);
    c.n_users = detail::get_or(j, "n_users", c.n_users);
    c.min_events = detail::get_or(j, "min_events", c.min_events);
    c.max_events = detail::get_or(j, "max_events", c.max_events);
    c.noise_sigma = detail::get_or(j, "noise_sigma", c.noise_sigma);
    c.feedback_gain = detail::get_or(j, "feedback_gain", c.feedback_gain);
    c.feedback_bias = detail::get_or(j, "feedback_bias", c.feedback_bias);
    c.seed = detail::get_or(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(str_cat("synth config: ", e.what()));
  }
  return c;
}

inline json rec_config_to_json(const RecModelConfig& c) {
  return json{{"h", c.h},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"max_seq_len", c.max_seq_len},
              {"mode", to_string(c.mode)},
              {"k", c.k},
              {"n", c.n},
              {"tiebreak_buckets", c.tiebreak_buckets},
              {"tiebreak_embedding", c.tiebreak_embedding},
              {"dropout", c.dropout},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"val_fraction", c.val_fraction},
              {"patience", c.patience},
              {"seed", c.seed}};
}

inline RecModelConfig rec_config_from_json(const json& j) {
  RecModelConfig c;
  try {
    c.h = detail::get_or(j, "h", c.h);
    c.n_layers = detail::get_or(j, "n_layers", c.n_layers);
    c.n_heads = detail::get_or(j, "n_heads", c.n_heads);
    c.max_seq_len = detail::get_or(j, "max_seq_len", c.max_seq_len);
    if (j.contains("mode")) c.mode = embed_mode_from_string(j.at("mode").get<std::string>());
    c.k = detail::get_or(j, "k", c.k);
    c.n = detail::get_or(j, "n", c.n);
    c.tiebreak_buckets = detail::get_or(j, "tiebreak_buckets", c.tiebreak_buckets);
    c.tiebreak_embedding = detail::get_or(j, "tiebreak_embedding", c.tiebreak_embedding);
    c.dropout = detail::get_or(j, "dropout", c.dropout);
    c.epochs = detail::get_or(j, "epochs", c.epochs);
    c.batch_size = detail::get_or(j, "batch_size", c.batch_size);
    c.lr = detail::get_or(j, "lr", c.lr);
    c.val_fraction = detail::get_or(j, "val_fraction", c.val_fraction);
    c.patience = detail::get_or(j, "patience", c.patience);
    c.seed = detail::get_or(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(str_cat("model config: ", e.what()));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Codebook stack

inline void save_stack(const std::string& path, const CodebookStack& stack) {
  json j;
  j["format_version"] = kFormatVersion;
  j["type"] = "codebook_stack";
  j["config"] = rqvae_config_to_json(stack.cfg);
  j["levels"] = json::array();
  for (const auto& book : stack.levels) j["levels"].push_back(tensor_to_json(book));
  auto mlp_to_json = [](const Mlp& mlp) {
    json params = json::array();
    for (const auto& p : mlp.params()) {
      params.push_back(json{{"name", p.name}, {"tensor", tensor_to_json(p.value())}});
    }
    return params;
  };
  j["encoder"] = mlp_to_json(stack.encoder);
  j["decoder"] = mlp_to_json(stack.decoder);
  j["usage_counts"] = stack.usage_counts;
  j["feature_stats"] = json{{"mean", stack.feature_stats.mean},
                            {"stddev", stack.feature_stats.stddev}};
  detail::write_json_file(path, j);
}

inline CodebookStack load_stack(const std::string& path) {
  json j = detail::load_json_file(path, "codebook_stack");
  CodebookStack stack;
  try {
    stack.cfg = rqvae_config_from_json(j.at("config"));
    for (const auto& jb : j.at("levels")) stack.levels.push_back(tensor_from_json(jb));
    Rng rng(0);
    stack.encoder = Mlp("rqvae.encoder", stack.cfg.d_f, stack.cfg.hidden, stack.cfg.d_z, rng);
    stack.decoder = Mlp("rqvae.decoder", stack.cfg.d_z, stack.cfg.hidden, stack.cfg.d_f, rng);
    auto mlp_from_json = [](Mlp& mlp, const json& params) {
      if (params.size() != mlp.params().size()) {
        throw DataError("stack: encoder/decoder parameter count mismatch");
      }
      for (size_t i = 0; i < params.size(); ++i) {
        Tensor t = tensor_from_json(params[i].at("tensor"));
        if (t.shape() != mlp.params()[i].value().shape()) {
          throw DataError(str_cat("stack: parameter shape mismatch at ",
                                  params[i].value("name", "?")));
        }
        mlp.params()[i].value() = std::move(t);
      }
    };
    mlp_from_json(stack.encoder, j.at("encoder"));
    mlp_from_json(stack.decoder, j.at("decoder"));
    stack.usage_counts = j.at("usage_counts").get<std::vector<std::vector<int64_t>>>();
    stack.feature_stats.mean = j.at("feature_stats").at("mean").get<std::vector<float>>();
    stack.feature_stats.stddev = j.at("feature_stats").at("stddev").get<std::vector<float>>();
  } catch (const json::exception& e) {
    throw DataError(str_cat(path, ": bad stack JSON: ", e.what()));
  }
  if (static_cast<int>(stack.levels.size()) != stack.cfg.n_levels) {
    throw DataError(str_cat(path, ": expected ", stack.cfg.n_levels, " codebooks, got ",
                            stack.levels.size()));
  }
  return stack;
}

// ---------------------------------------------------------------------------
// Id table in JSON (embedded in model checkpoints)

inline json id_table_to_json(const IdTable& table) {
  json rows = json::array();
  for (const auto& [tid, id] : table.entries()) {
    json row = json::array();
    row.push_back(tid);
    for (int64_t c : id.codewords) row.push_back(c);
    row.push_back(id.tiebreak);
    rows.push_back(std::move(row));
  }
  return json{{"variant", to_string(table.variant)},
              {"k", table.k},
              {"n", table.n},
              {"rows", std::move(rows)}};
}

inline IdTable id_table_from_json(const json& j) {
  IdTable table;
  try {
    table.variant = j.at("variant").get<std::string>() == "v0" ? IdVariant::v0 : IdVariant::v1;
    table.k = j.at("k").get<int64_t>();
    table.n = j.at("n").get<int>();
    struct Row {
      int64_t tid;
      SemanticId id;
    };
    std::vector<Row> rows;
    for (const auto& jr : j.at("rows")) {
      Row r;
      r.tid = jr.at(0).get<int64_t>();
      for (int i = 0; i < table.n; ++i) {
        r.id.codewords.push_back(jr.at(static_cast<size_t>(1 + i)).get<int64_t>());
      }
      r.id.tiebreak = jr.at(static_cast<size_t>(1 + table.n)).get<int64_t>();
      rows.push_back(std::move(r));
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      return std::tie(a.id.tiebreak, a.tid) < std::tie(b.id.tiebreak, b.tid);
    });
    for (auto& r : rows) table.insert(r.tid, std::move(r.id));
  } catch (const json::exception& e) {
    throw DataError(str_cat("id table: bad JSON: ", e.what()));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Model checkpoint

inline void save_model(const std::string& path, RecModel& model) {
  json j;
  j["format_version"] = kFormatVersion;
  j["type"] = "rec_model";
  j["config"] = rec_config_to_json(model.cfg);
  if (is_semantic(model.cfg.mode)) {
    j["id_table"] = id_table_to_json(model.embedder.id_table());
  }
  json params = json::object();
  for (Parameter* p : model.params()) {
    params[p->name] = tensor_to_json(p->value());
  }
  j["params"] = std::move(params);
  detail::write_json_file(path, j);
}

// Rebuilds the model against the catalog, then overwrites every named
// parameter from the checkpoint.
inline RecModel load_model(const std::string& path, const Catalog& catalog) {
  json j = detail::load_json_file(path, "rec_model");
  RecModelConfig cfg = rec_config_from_json(j.at("config"));
  IdTable ids;
  const bool semantic = is_semantic(cfg.mode);
  if (semantic) {
    if (!j.contains("id_table")) throw DataError(str_cat(path, ": semantic model lacks id_table"));
    ids = id_table_from_json(j.at("id_table"));
  }
  RecModel model = RecModel::init(cfg, catalog, semantic ? &ids : nullptr);
  try {
    const json& params = j.at("params");
    for (Parameter* p : model.params()) {
      if (!params.contains(p->name)) {
        throw DataError(str_cat(path, ": checkpoint missing parameter ", p->name));
      }
      Tensor t = tensor_from_json(params.at(p->name));
      if (t.shape() != p->value().shape()) {
        throw DataError(str_cat(path, ": parameter ", p->name, " has shape ",
                                shape_str(t.shape()), ", expected ",
                                shape_str(p->value().shape())));
      }
      p->value() = std::move(t);
    }
  } catch (const json::exception& e) {
    throw DataError(str_cat(path, ": bad model JSON: ", e.what()));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Eval report

inline json report_to_json(const EvalReport& r) {
  json j;
  j["format_version"] = kFormatVersion;
  j["type"] = "eval_report";
  j["stratified_auc"] = r.stratified_auc;
  j["n_sequences"] = r.n_sequences;
  j["per_bucket"] = json::array();
  for (const auto& b : r.per_bucket) {
    j["per_bucket"].push_back(json{{"lo", b.lo},
                                   {"hi", b.hi},
                                   {"accuracy", b.accuracy},
                                   {"ci_lo", b.ci_lo},
                                   {"ci_hi", b.ci_hi},
                                   {"n_sequences", b.n_sequences}});
  }
  j["per_sequence"] = json::array();
  for (const auto& s : r.per_sequence) {
    j["per_sequence"].push_back(json{{"seq_id", s.seq_id},
                                     {"input_len", s.input_len},
                                     {"accuracy", s.accuracy},
                                     {"n_pairs", s.n_pairs}});
  }
  if (r.has_diversity) {
    j["diversity"] = json{{"distinct_tracks_per_seed", r.diversity.distinct_tracks_per_seed},
                          {"distinct_artists_per_seed", r.diversity.distinct_artists_per_seed},
                          {"repetition_rate", r.diversity.repetition_rate},
                          {"n_seeds", r.diversity.n_seeds}};
  }
  j["param_counts"] = json{{"embedding_params", r.param_counts.embedding_params},
                           {"transformer_params", r.param_counts.transformer_params},
                           {"total", r.param_counts.total}};
  return j;
}

inline EvalReport report_from_json(const json& j) {
  EvalReport r;
  try {
    r.stratified_auc = j.at("stratified_auc").get<double>();
    r.n_sequences = j.at("n_sequences").get<int64_t>();
    for (const auto& jb : j.at("per_bucket")) {
      BucketStat b;
      b.lo = jb.at("lo").get<int64_t>();
      b.hi = jb.at("hi").get<int64_t>();
      b.accuracy = jb.at("accuracy").get<double>();
      b.ci_lo = jb.at("ci_lo").get<double>();
      b.ci_hi = jb.at("ci_hi").get<double>();
      b.n_sequences = jb.at("n_sequences").get<int64_t>();
      r.per_bucket.push_back(b);
    }
    for (const auto& js : j.at("per_sequence")) {
      r.per_sequence.push_back(SequenceAccuracy{
          js.at("seq_id").get<int64_t>(), js.at("input_len").get<int64_t>(),
          js.at("accuracy").get<double>(), js.at("n_pairs").get<int64_t>()});
    }
    if (j.contains("diversity")) {
      r.has_diversity = true;
      r.diversity.distinct_tracks_per_seed =
          j.at("diversity").at("distinct_tracks_per_seed").get<double>();
      r.diversity.distinct_artists_per_seed =
          j.at("diversity").at("distinct_artists_per_seed").get<double>();
      r.diversity.repetition_rate = j.at("diversity").at("repetition_rate").get<double>();
      r.diversity.n_seeds = j.at("diversity").at("n_seeds").get<int64_t>();
    }
    if (j.contains("param_counts")) {
      r.param_counts.embedding_params = j.at("param_counts").at("embedding_params").get<int64_t>();
      r.param_counts.transformer_params =
          j.at("param_counts").at("transformer_params").get<int64_t>();
      r.param_counts.total = j.at("param_counts").at("total").get<int64_t>();
    }
  } catch (const json::exception& e) {
    throw DataError(str_cat("eval report: bad JSON: ", e.what()));
  }
  return r;
}

inline void save_report(const std::string& path, const EvalReport& r) {
  detail::write_json_file(path, report_to_json(r));
}

inline EvalReport load_report(const std::string& path) {
  return report_from_json(detail::load_json_file(path, "eval_report"));
}

}  // namespace semrec
