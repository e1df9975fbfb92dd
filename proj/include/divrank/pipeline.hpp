#pragma once

// Batch stages behind the command-line driver: synthetic data, clustering,
// model training, re-ranking, evaluation, and the alpha sweep. Every stage
// reads and writes only the files it is handed.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "divrank/accuracy_model.hpp"
#include "divrank/data_model.hpp"
#include "divrank/diversity_kernel.hpp"
#include "divrank/graph_clustering.hpp"
#include "divrank/interest.hpp"
#include "divrank/metrics.hpp"
#include "divrank/selection.hpp"

namespace divrank {

/// Stable sub-seed for a named stage: FNV-1a over the name, mixed with the
/// base seed through splitmix64.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : stage) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::string format_double(double v, int precision = 10) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::int64_t clusters = 8;
  std::int64_t items_per_cluster = 40;
  std::int64_t dim = 16;
  double noise = 0.6;
  std::int64_t users = 50;
  std::int64_t behaviors_per_user = 120;
  std::int64_t page_size = 10;
  std::int64_t candidates = 100;
  double sharpness = 6.0;
  // Logit noise of the upstream point-wise score relative to the true model.
  double upstream_noise = 1.5;
  std::uint64_t seed = 42;
};

inline void validate_synthetic(const SyntheticSpec& s) {
  std::vector<std::string> errors;
  if (s.clusters < 1) errors.push_back("clusters must be at least 1");
  if (s.items_per_cluster < 1) errors.push_back("items_per_cluster must be at least 1");
  if (s.dim < 1) errors.push_back("dim must be at least 1");
  if (s.users < 1) errors.push_back("users must be at least 1");
  if (s.behaviors_per_user < 1) errors.push_back("behaviors_per_user must be at least 1");
  if (s.page_size < 1) errors.push_back("page_size must be at least 1");
  if (s.candidates < 1) errors.push_back("candidates must be at least 1");
  if (s.candidates > s.clusters * s.items_per_cluster) errors.push_back("candidates exceeds item count");
  if (!(s.noise >= 0.0)) errors.push_back("noise must be non-negative");
  if (!(s.sharpness >= 0.0)) errors.push_back("sharpness must be non-negative");
  if (!(s.upstream_noise >= 0.0)) errors.push_back("upstream_noise must be non-negative");
  if (!errors.empty()) {
    std::string msg = "invalid synthetic spec: ";
    for (std::size_t i = 0; i < errors.size(); ++i) msg += (i ? "; " : "") + errors[i];
    throw ValidationError(msg);
  }
}

struct CandidateLabel {
  std::string user_id;
  std::string item_id;
  int label = 0;
};

inline json to_json(const CandidateLabel& l) {
  return json{{"user_id", l.user_id}, {"item_id", l.item_id}, {"label", l.label}};
}

struct SyntheticData {
  EmbeddingTable items;
  std::vector<BehaviorEvent> behaviors;
  std::vector<CandidateSet> candidates;
  std::vector<CandidateLabel> labels;
};

namespace detail {

inline std::string padded(const char* prefix, std::int64_t i, int width = 4) {
  std::ostringstream s;
  s << prefix << std::setw(width) << std::setfill('0') << i;
  return s.str();
}

}  // namespace detail

/// Items scatter around unit-norm cluster centroids. Each user leans toward
/// one to three clusters; clicks follow a logistic model on the dot product
/// between the item and the user's latent taste. Upstream base scores are
/// the same model seen through extra logit noise.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  validate_synthetic(spec);
  std::mt19937_64 rng(derive_seed(spec.seed, "synth"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const auto d = static_cast<std::size_t>(spec.dim);
  const auto C = static_cast<std::size_t>(spec.clusters);

  std::vector<Vector> centroids(C, Vector(d));
  for (auto& c : centroids) {
    for (double& v : c) v = normal(rng);
    c = l2_normalized(c);
  }
  SyntheticData out;
  std::vector<std::size_t> item_cluster;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::int64_t k = 0; k < spec.items_per_cluster; ++k) {
      ItemRecord it;
      it.item_id = detail::padded("i", static_cast<std::int64_t>(out.items.size()));
      it.embedding = centroids[c];
      for (double& v : it.embedding) v += spec.noise * normal(rng) / std::sqrt(static_cast<double>(d));
      out.items.insert(std::move(it));
      item_cluster.push_back(c);
    }
  }
  const std::size_t n_items = out.items.size();
  std::vector<std::vector<std::size_t>> members(C);
  for (std::size_t i = 0; i < n_items; ++i) members[item_cluster[i]].push_back(i);

  const double bias = 0.5 * spec.sharpness;
  auto true_logit = [&](const Vector& taste, std::size_t i) {
    return spec.sharpness * dot(taste, out.items[i].embedding) - bias;
  };

  const std::int64_t t0 = 1'600'000'000;
  for (std::int64_t u = 0; u < spec.users; ++u) {
    const std::string uid = detail::padded("u", u, 3);
    const std::size_t n_fav = 1 + static_cast<std::size_t>(uniform(rng) * 3.0) % 3;
    std::vector<std::size_t> fav;
    while (fav.size() < std::min(n_fav, C)) {
      const auto c = static_cast<std::size_t>(uniform(rng) * static_cast<double>(C)) % C;
      if (std::find(fav.begin(), fav.end(), c) == fav.end()) fav.push_back(c);
    }
    Vector taste(d, 0.0);
    for (std::size_t c : fav) {
      const double w = 0.5 + uniform(rng);
      for (std::size_t k = 0; k < d; ++k) taste[k] += w * centroids[c][k];
    }
    taste = l2_normalized(taste);

    auto draw_item = [&](double focus) {
      if (uniform(rng) < focus) {
        const auto& m = members[fav[static_cast<std::size_t>(uniform(rng) * static_cast<double>(fav.size())) % fav.size()]];
        return m[static_cast<std::size_t>(uniform(rng) * static_cast<double>(m.size())) % m.size()];
      }
      return static_cast<std::size_t>(uniform(rng) * static_cast<double>(n_items)) % n_items;
    };

    std::int64_t ts = t0 + static_cast<std::int64_t>(uniform(rng) * 86400.0);
    for (std::int64_t b = 0; b < spec.behaviors_per_user; ++b) {
      if (b % spec.page_size == 0 && b > 0) ts += 3600 + static_cast<std::int64_t>(uniform(rng) * 86400.0);
      const std::size_t i = draw_item(0.6);
      const int label = uniform(rng) < ad::sigmoid_scalar(true_logit(taste, i)) ? 1 : 0;
      out.behaviors.push_back({uid, out.items[i].item_id, ts, label});
    }

    CandidateSet cs;
    cs.user_id = uid;
    cs.now = ts + 3600;
    std::set<std::size_t> chosen;
    while (chosen.size() < static_cast<std::size_t>(spec.candidates)) chosen.insert(draw_item(0.5));
    for (std::size_t i : chosen) {
      ItemRecord it = out.items[i];
      const double logit = true_logit(taste, i);
      it.base_score = ad::sigmoid_scalar(logit + spec.upstream_noise * normal(rng));
      const int label = uniform(rng) < ad::sigmoid_scalar(logit) ? 1 : 0;
      out.labels.push_back({uid, it.item_id, label});
      cs.items.push_back(std::move(it));
    }
    out.candidates.push_back(std::move(cs));
  }
  return out;
}

struct SynthPaths {
  std::string items, behaviors, candidates, labels;

  static SynthPaths in(const std::filesystem::path& dir) {
    return {(dir / "items.jsonl").string(), (dir / "behaviors.jsonl").string(), (dir / "candidates.jsonl").string(),
            (dir / "labels.jsonl").string()};
  }
};

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline SynthPaths cmd_synth(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  auto data = generate_synthetic(spec);
  ensure_dir(out_dir);
  auto paths = SynthPaths::in(out_dir);
  write_jsonl(paths.items, data.items.items());
  write_jsonl(paths.behaviors, data.behaviors);
  write_jsonl(paths.candidates, data.candidates);
  write_jsonl(paths.labels, data.labels);
  return paths;
}

inline std::map<std::string, std::map<std::string, int>> load_labels(const std::string& path) {
  std::map<std::string, std::map<std::string, int>> out;
  detail::for_each_line(path, [&](const json& j, std::size_t) {
    const int label = j.at("label").get<int>();
    if (label != 0 && label != 1) throw ValidationError("label must be 0 or 1");
    out[j.at("user_id").get<std::string>()][j.at("item_id").get<std::string>()] = label;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Clustering

/// Interactions that count as interest: clicks, or unlabeled events.
inline std::vector<BehaviorEvent> positive_events(std::span<const BehaviorEvent> events) {
  std::vector<BehaviorEvent> out;
  for (const auto& e : events)
    if (!e.label || *e.label == 1) out.push_back(e);
  return out;
}

struct ClusterStageResult {
  std::map<std::string, std::int64_t> item_clusters;
  std::map<std::string, std::int64_t> user_clusters;
  double modularity = 0.0;
};

inline ClusterStageResult cluster_items(const EmbeddingTable& items, std::span<const BehaviorEvent> behaviors,
                                        std::uint64_t seed, int max_passes = 100) {
  auto pos = positive_events(behaviors);
  for (const auto& e : pos) items.at(e.item_id);
  auto graph = build_graph(pos);
  auto assignment = louvain(graph, derive_seed(seed, "cluster"), max_passes);
  ClusterStageResult r;
  r.item_clusters = cluster_all_items(items, graph, assignment);
  for (std::size_t u = 0; u < graph.user_count(); ++u)
    r.user_clusters[graph.node_name(u)] = static_cast<std::int64_t>(assignment[u]);
  r.modularity = modularity(graph, assignment);
  return r;
}

inline ClusterStageResult cmd_cluster(const std::string& items_path, const std::string& behaviors_path,
                                      const std::string& out_path, std::uint64_t seed,
                                      const std::string& user_out_path = {}) {
  auto items = load_items(items_path);
  auto behaviors = load_behaviors(behaviors_path);
  auto r = cluster_items(items, behaviors, seed);
  write_cluster_file(out_path, r.item_clusters);
  if (!user_out_path.empty()) {
    std::string text;
    for (const auto& [u, c] : r.user_clusters) text += json{{"user_id", u}, {"cluster_id", c}}.dump() + "\n";
    write_text(user_out_path, text);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingSet {
  std::vector<InterestInputs> users;
  std::vector<TrainingSample> samples;
};

inline std::int64_t latest_timestamp(std::span<const BehaviorEvent> events) {
  std::int64_t now = 0;
  for (const auto& e : events) now = std::max(now, e.timestamp);
  return now;
}

inline TrainingSet build_training_set(const EmbeddingTable& items, std::span<const BehaviorEvent> behaviors,
                                      const std::map<std::string, std::int64_t>& clusters,
                                      const ExperimentConfig& cfg) {
  TrainingSet ts;
  const std::int64_t now = latest_timestamp(behaviors);
  std::map<std::string, std::vector<BehaviorEvent>> by_user;
  for (const auto& e : behaviors) by_user[e.user_id].push_back(e);
  std::map<std::string, std::size_t> index;
  for (const auto& [uid, evs] : by_user) {
    index[uid] = ts.users.size();
    auto pos = positive_events(evs);
    ts.users.push_back(build_interest_inputs(uid, pos, clusters, items, static_cast<std::size_t>(cfg.top_M),
                                             static_cast<std::size_t>(cfg.recent_window), now));
  }
  ts.samples = build_training_samples(behaviors, items, index);
  return ts;
}

struct TrainStageResult {
  TrainedModel model;
  std::vector<InterestProfile> profiles;
};

inline TrainStageResult train_models(const EmbeddingTable& items, std::span<const BehaviorEvent> behaviors,
                                     const std::map<std::string, std::int64_t>& clusters,
                                     const ExperimentConfig& cfg) {
  validate_config(cfg);
  if (items.empty()) throw ValidationError("train: item table is empty");
  const std::size_t d = *items.dim();
  auto ts = build_training_set(items, behaviors, clusters, cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed, "train-init"));
  auto mie = MieParams::random(d, static_cast<std::size_t>(cfg.heads), static_cast<std::size_t>(cfg.time_buckets),
                               static_cast<std::size_t>(cfg.time_dim), rng);
  auto cae = CaeParams::random(d, static_cast<std::size_t>(cfg.reduction), static_cast<std::size_t>(cfg.mlp_hidden), rng);
  TrainOptions opt{cfg.learning_rate, cfg.optimizer == "adam", cfg.epochs, derive_seed(cfg.seed, "train-order")};
  TrainStageResult r{train_cae(ts.users, ts.samples, std::move(mie), std::move(cae), opt), {}};
  for (const auto& u : ts.users) r.profiles.push_back(compute_profile(u, r.model.mie));
  return r;
}

inline std::string training_log_csv(std::span<const EpochStats> curve) {
  std::string out = "epoch,loss,auc\n";
  for (const auto& s : curve)
    out += std::to_string(s.epoch) + "," + format_double(s.loss, 12) + "," + format_double(s.auc, 12) + "\n";
  return out;
}

struct TrainPaths {
  std::string params, profiles, log;

  static TrainPaths in(const std::filesystem::path& dir) {
    return {(dir / "model.ckpt").string(), (dir / "profiles.jsonl").string(), (dir / "train_log.csv").string()};
  }
};

inline TrainPaths cmd_train(const std::string& items_path, const std::string& behaviors_path,
                            const std::string& clusters_path, const ExperimentConfig& cfg,
                            const std::filesystem::path& out_dir) {
  auto items = load_items(items_path);
  auto behaviors = load_behaviors(behaviors_path);
  auto clusters = load_cluster_file(clusters_path);
  auto r = train_models(items, behaviors, clusters, cfg);
  ensure_dir(out_dir);
  auto paths = TrainPaths::in(out_dir);
  ad::save_checkpoint(paths.params, named_parameters(r.model.mie, r.model.cae));
  write_jsonl(paths.profiles, r.profiles);
  write_text(paths.log, training_log_csv(r.model.curve));
  return paths;
}

// ---------------------------------------------------------------------------
// Re-ranking

enum class Method { kBsDpp, kFixedDpp, kMmr };

inline Method parse_method(const std::string& s) {
  if (s == "bs-dpp") return Method::kBsDpp;
  if (s == "fixed-dpp") return Method::kFixedDpp;
  if (s == "mmr") return Method::kMmr;
  throw ValidationError("unknown method '" + s + "' (expected bs-dpp, fixed-dpp, or mmr)");
}

inline std::vector<double> base_scores(const CandidateSet& c) {
  std::vector<double> g;
  for (const auto& it : c.items) g.push_back(*it.base_score);
  return g;
}

inline std::vector<std::string> candidate_ids(const CandidateSet& c) {
  std::vector<std::string> ids;
  for (const auto& it : c.items) ids.push_back(it.item_id);
  return ids;
}

inline InterestProfile profile_for(const std::map<std::string, InterestProfile>& profiles, const CandidateSet& c) {
  auto it = profiles.find(c.user_id);
  if (it != profiles.end()) {
    if (it->second.h_macro.size() != c.dim())
      throw ValidationError("profile for '" + c.user_id + "' does not match candidate dimension");
    return it->second;
  }
  return {c.user_id, Vector(c.dim(), 0.0), Vector(c.dim(), 0.0)};
}

struct RerankInputs {
  const std::map<std::string, InterestProfile>* profiles = nullptr;
  const CaeParams* cae = nullptr;  // absent: base scores stand in for g
};

inline SelectionOptions selection_options(const ExperimentConfig& cfg) {
  SelectionOptions opt;
  opt.alpha = cfg.alpha;
  opt.K = static_cast<std::size_t>(cfg.K);
  opt.epsilon = cfg.epsilon;
  opt.paper_literal_init = cfg.paper_literal_init;
  return opt;
}

/// Re-ranks one candidate set. `kernel_out`, when given, receives the
/// kernel used by the DPP methods.
inline RerankResult rerank_one(const CandidateSet& c, const ExperimentConfig& cfg, Method method,
                               const RerankInputs& in, double mmr_lambda = -1.0, KernelMatrix* kernel_out = nullptr) {
  validate_candidates(c);
  const auto ids = candidate_ids(c);
  const auto opt = selection_options(cfg);
  const auto hp = KernelHyperparams::from_config(cfg);
  RerankResult r;
  switch (method) {
    case Method::kBsDpp: {
      const InterestProfile profile =
          in.profiles ? profile_for(*in.profiles, c) : InterestProfile{c.user_id, Vector(c.dim(), 0.0), Vector(c.dim(), 0.0)};
      auto D = composite_matrix(c, profile, hp);
      if (in.cae) {
        CaeContextScorer scorer(c, profile, *in.cae);
        r = bs_dpp_select(D, scorer, opt, ids);
      } else {
        FixedScorer scorer(base_scores(c));
        r = bs_dpp_select(D, scorer, opt, ids);
      }
      if (kernel_out) *kernel_out = std::move(D);
      break;
    }
    case Method::kFixedDpp: {
      auto D = item_kernel_matrix(c, hp);
      r = fixed_score_dpp_select(D, base_scores(c), opt, ids);
      if (kernel_out) *kernel_out = std::move(D);
      break;
    }
    case Method::kMmr: {
      const double lambda = mmr_lambda >= 0.0 ? mmr_lambda : 1.0 / (1.0 + cfg.alpha);
      const auto g = base_scores(c);
      auto order = mmr_select(g, cosine_similarity(c), lambda, opt.K);
      for (std::size_t i : order) {
        r.item_ids.push_back(ids[i]);
        r.steps.push_back({ids[i], g[i], 0.0, g[i]});
        r.objective += g[i];
      }
      break;
    }
  }
  r.user_id = c.user_id;
  return r;
}

inline std::string diagnostics_csv(std::span<const RerankResult> results) {
  std::string out = "user_id,step,chosen_id,g,log_d2,marginal\n";
  for (const auto& r : results)
    for (std::size_t s = 0; s < r.steps.size(); ++s) {
      const auto& st = r.steps[s];
      out += r.user_id + "," + std::to_string(s) + "," + st.item_id + "," + format_double(st.score, 12) + "," +
             format_double(st.log_d2, 12) + "," + format_double(st.marginal, 12) + "\n";
    }
  return out;
}

struct RerankOptions {
  std::string method = "bs-dpp";
  double mmr_lambda = -1.0;
  std::string diagnostics_path;
  std::string dump_kernel_dir;
};

inline std::vector<RerankResult> cmd_rerank(const std::string& candidates_path, const std::string& profiles_path,
                                            const std::string& params_path, const ExperimentConfig& cfg,
                                            const std::string& out_path, const RerankOptions& ro = {}) {
  validate_config(cfg);
  const Method method = parse_method(ro.method);
  auto sets = load_candidates(candidates_path);
  std::map<std::string, InterestProfile> profiles;
  if (!profiles_path.empty()) profiles = load_profiles(profiles_path);
  std::optional<CaeParams> cae;
  if (!params_path.empty()) cae = params_from_named(ad::load_checkpoint(params_path)).second;
  RerankInputs in{profiles_path.empty() ? nullptr : &profiles, cae ? &*cae : nullptr};
  if (!ro.dump_kernel_dir.empty()) ensure_dir(ro.dump_kernel_dir);
  std::vector<RerankResult> results;
  for (const auto& c : sets) {
    KernelMatrix D;
    results.push_back(rerank_one(c, cfg, method, in, ro.mmr_lambda, ro.dump_kernel_dir.empty() ? nullptr : &D));
    if (!ro.dump_kernel_dir.empty() && D.size() > 0)
      write_text((std::filesystem::path(ro.dump_kernel_dir) / ("kernel_" + c.user_id + ".csv")).string(),
                 kernel_to_csv(D));
  }
  write_jsonl(out_path, results);
  if (!ro.diagnostics_path.empty()) write_text(ro.diagnostics_path, diagnostics_csv(results));
  return results;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ListMetrics {
  double ndcg = 0.0;
  double map = 0.0;
  double ilad = 0.0;
};

inline ListMetrics list_metrics(const RerankResult& r, const CandidateSet& c, const std::map<std::string, int>& labels,
                                std::size_t k) {
  LabeledRanking lr;
  for (const auto& [id, l] : labels)
    if (l == 1) ++lr.total_relevant;
  std::vector<Vector> embs;
  std::map<std::string, const ItemRecord*> by_id;
  for (const auto& it : c.items) by_id[it.item_id] = &it;
  for (const auto& id : r.item_ids) {
    auto l = labels.find(id);
    lr.labels.push_back(l == labels.end() ? 0 : l->second);
    auto e = by_id.find(id);
    if (e == by_id.end()) throw ValidationError("result item '" + id + "' is not a candidate of '" + r.user_id + "'");
    embs.push_back(e->second->embedding);
  }
  ListMetrics m;
  m.ndcg = ndcg_at_k(lr, k);
  m.map = map_at_k(lr, k);
  m.ilad = embs.size() >= 2 ? ilad(embs) : 0.0;
  return m;
}

struct MetricRow {
  std::string metric;
  std::size_t k = 0;
  double value = 0.0;
};

inline std::string metrics_csv(std::span<const MetricRow> rows) {
  std::string out = "metric,k,value\n";
  for (const auto& r : rows) out += r.metric + "," + std::to_string(r.k) + "," + format_double(r.value, 12) + "\n";
  return out;
}

/// Mean nDCG@K, MAP@K and ILAD over users, plus AUC and logloss of the
/// upstream base scores over all candidates.
inline std::vector<MetricRow> evaluate_results(std::span<const RerankResult> results,
                                               std::span<const CandidateSet> candidates,
                                               const std::map<std::string, std::map<std::string, int>>& labels,
                                               std::size_t k) {
  std::map<std::string, const CandidateSet*> by_user;
  for (const auto& c : candidates) by_user[c.user_id] = &c;
  double ndcg = 0.0, map = 0.0, div = 0.0;
  for (const auto& r : results) {
    auto c = by_user.find(r.user_id);
    if (c == by_user.end()) throw ValidationError("no candidate set for user '" + r.user_id + "'");
    auto l = labels.find(r.user_id);
    const std::map<std::string, int> empty;
    auto m = list_metrics(r, *c->second, l == labels.end() ? empty : l->second, k);
    ndcg += m.ndcg;
    map += m.map;
    div += m.ilad;
  }
  const double n = results.empty() ? 1.0 : static_cast<double>(results.size());
  std::vector<MetricRow> rows{{"ndcg", k, ndcg / n}, {"map", k, map / n}, {"ilad", k, div / n}};
  std::vector<double> scores;
  std::vector<int> ys;
  for (const auto& c : candidates) {
    auto l = labels.find(c.user_id);
    if (l == labels.end()) continue;
    for (const auto& it : c.items) {
      auto y = l->second.find(it.item_id);
      if (y == l->second.end()) continue;
      scores.push_back(*it.base_score);
      ys.push_back(y->second);
    }
  }
  const auto pos = std::count(ys.begin(), ys.end(), 1);
  if (pos > 0 && pos < static_cast<std::ptrdiff_t>(ys.size())) {
    rows.push_back({"base_auc", 0, auc(scores, ys)});
    rows.push_back({"base_logloss", 0, logloss(scores, ys)});
  }
  return rows;
}

inline std::vector<MetricRow> cmd_eval(const std::string& results_path, const std::string& labels_path,
                                       const std::string& candidates_path, std::size_t k,
                                       const std::string& out_path) {
  auto results = load_results(results_path);
  auto labels = load_labels(labels_path);
  auto candidates = load_candidates(candidates_path);
  auto rows = evaluate_results(results, candidates, labels, k);
  write_text(out_path, metrics_csv(rows));
  return rows;
}

// ---------------------------------------------------------------------------
// Alpha sweep

struct SweepRow {
  std::string method;
  double alpha = 0.0;
  double param = 0.0;  // alpha for the DPP methods, lambda for MMR
  double ndcg = 0.0;
  double ilad = 0.0;
  double objective = 0.0;
  double wall_ms = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // ordered by (method, alpha)

  std::vector<SweepRow> curve(const std::string& method) const {
    std::vector<SweepRow> out;
    for (const auto& r : rows)
      if (r.method == method) out.push_back(r);
    return out;
  }
};

/// Averages nDCG@K, ILAD and the objective over `runs` passes for every alpha
/// and method. Run 0 uses every candidate set; later runs use seeded
/// bootstrap resamples of the users.
inline SweepResult run_sweep(std::span<const CandidateSet> sets, const std::map<std::string, InterestProfile>& profiles,
                             const CaeParams* cae, const std::map<std::string, std::map<std::string, int>>& labels,
                             const ExperimentConfig& base_cfg, std::span<const double> alphas, std::size_t runs) {
  if (alphas.empty()) throw ValidationError("sweep: alpha list is empty");
  if (runs < 1) throw ValidationError("sweep: runs must be at least 1");
  for (std::size_t i = 1; i < alphas.size(); ++i)
    if (!(alphas[i] > alphas[i - 1])) throw ValidationError("sweep: alphas must be strictly increasing");
  validate_config(base_cfg);
  const std::size_t k = static_cast<std::size_t>(base_cfg.K);

  std::vector<std::vector<std::size_t>> samples(runs);
  std::mt19937_64 rng(derive_seed(base_cfg.seed, "sweep"));
  for (std::size_t r = 0; r < runs; ++r) {
    samples[r].resize(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i)
      samples[r][i] = r == 0 ? i : std::uniform_int_distribution<std::size_t>(0, sets.size() - 1)(rng);
  }
  RerankInputs in{&profiles, cae};
  const std::map<std::string, int> no_labels;
  SweepResult out;
  for (Method method : {Method::kBsDpp, Method::kFixedDpp, Method::kMmr}) {
    const std::string name = method == Method::kBsDpp ? "bs-dpp" : method == Method::kFixedDpp ? "fixed-dpp" : "mmr";
    for (double alpha : alphas) {
      ExperimentConfig cfg = base_cfg;
      cfg.alpha = alpha;
      SweepRow row{name, alpha, method == Method::kMmr ? 1.0 / (1.0 + alpha) : alpha};
      double count = 0.0;
      const auto start = std::chrono::steady_clock::now();
      for (std::size_t r = 0; r < runs; ++r)
        for (std::size_t idx : samples[r]) {
          const auto& c = sets[idx];
          auto res = rerank_one(c, cfg, method, in, row.param);
          auto l = labels.find(c.user_id);
          auto m = list_metrics(res, c, l == labels.end() ? no_labels : l->second, k);
          row.ndcg += m.ndcg;
          row.ilad += m.ilad;
          row.objective += res.objective;
          count += 1.0;
        }
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      row.ndcg /= count;
      row.ilad /= count;
      row.objective /= count;
      out.rows.push_back(row);
    }
  }
  return out;
}

inline std::string sweep_csv(const SweepResult& s) {
  std::string out = "method,alpha,param,ndcg,ilad,objective\n";
  for (const auto& r : s.rows)
    out += r.method + "," + format_double(r.alpha) + "," + format_double(r.param) + "," + format_double(r.ndcg, 12) +
           "," + format_double(r.ilad, 12) + "," + format_double(r.objective, 12) + "\n";
  return out;
}

inline std::string sweep_timing_csv(const SweepResult& s) {
  std::string out = "method,alpha,wall_ms\n";
  for (const auto& r : s.rows) out += r.method + "," + format_double(r.alpha) + "," + format_double(r.wall_ms, 6) + "\n";
  return out;
}

/// Piecewise-linear ILAD as a function of nDCG along a method's curve.
inline std::optional<double> ilad_at_ndcg(std::vector<SweepRow> curve, double x) {
  if (curve.empty()) return std::nullopt;
  std::stable_sort(curve.begin(), curve.end(), [](const SweepRow& a, const SweepRow& b) { return a.ndcg < b.ndcg; });
  constexpr double tol = 1e-12;
  if (x < curve.front().ndcg - tol || x > curve.back().ndcg + tol) return std::nullopt;
  std::optional<double> best;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (std::abs(curve[i].ndcg - x) <= tol) best = std::max(best.value_or(curve[i].ilad), curve[i].ilad);
    if (i + 1 < curve.size() && curve[i].ndcg < x && x < curve[i + 1].ndcg) {
      const double t = (x - curve[i].ndcg) / (curve[i + 1].ndcg - curve[i].ndcg);
      const double v = curve[i].ilad + t * (curve[i + 1].ilad - curve[i].ilad);
      best = std::max(best.value_or(v), v);
    }
  }
  return best;
}

struct DominanceReport {
  std::vector<double> grid;
  std::vector<double> ours, theirs;
  std::size_t dominated = 0;  // grid points where ours >= theirs
};

/// Compares two curves at `points` evenly spaced nDCG levels spanning the
/// overlap of their nDCG ranges.
inline DominanceReport weak_dominance(const std::vector<SweepRow>& ours, const std::vector<SweepRow>& theirs,
                                      std::size_t points = 5, double tol = 1e-9) {
  DominanceReport rep;
  if (ours.empty() || theirs.empty() || points == 0) return rep;
  auto range = [](const std::vector<SweepRow>& c) {
    double lo = c.front().ndcg, hi = c.front().ndcg;
    for (const auto& r : c) {
      lo = std::min(lo, r.ndcg);
      hi = std::max(hi, r.ndcg);
    }
    return std::pair{lo, hi};
  };
  const auto [lo1, hi1] = range(ours);
  const auto [lo2, hi2] = range(theirs);
  const double lo = std::max(lo1, lo2), hi = std::min(hi1, hi2);
  if (lo > hi) return rep;
  for (std::size_t p = 0; p < points; ++p) {
    const double x = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(p) / static_cast<double>(points - 1);
    auto a = ilad_at_ndcg(ours, x);
    auto b = ilad_at_ndcg(theirs, x);
    if (!a || !b) continue;
    rep.grid.push_back(x);
    rep.ours.push_back(*a);
    rep.theirs.push_back(*b);
    if (*a >= *b - tol) ++rep.dominated;
  }
  return rep;
}

inline std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (tok.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ValidationError("cannot parse number '" + tok + "'");
    }
  }
  return out;
}

inline SweepResult cmd_sweep(const std::string& candidates_path, const std::string& profiles_path,
                             const std::string& params_path, const std::string& labels_path,
                             const ExperimentConfig& cfg, std::span<const double> alphas, std::size_t runs,
                             const std::string& out_path) {
  auto sets = load_candidates(candidates_path);
  auto profiles = profiles_path.empty() ? std::map<std::string, InterestProfile>{} : load_profiles(profiles_path);
  std::optional<CaeParams> cae;
  if (!params_path.empty()) cae = params_from_named(ad::load_checkpoint(params_path)).second;
  auto labels = load_labels(labels_path);
  auto result = run_sweep(sets, profiles, cae ? &*cae : nullptr, labels, cfg, alphas, runs);
  write_text(out_path, sweep_csv(result));
  write_text(out_path + ".timing.csv", sweep_timing_csv(result));
  return result;
}

}  // namespace divrank
