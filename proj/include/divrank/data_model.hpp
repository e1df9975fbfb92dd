#pragma once

// Core domain records, validation, and line-delimited JSON serialization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

namespace divrank {

using Vector = std::vector<double>;
using json = nlohmann::json;

// Exit-code mapping used by the CLI: validation 1, io 2, numerical 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

struct ItemRecord {
  std::string item_id;
  Vector embedding;
  std::optional<std::int64_t> cluster_id;
  std::optional<double> base_score;

  friend bool operator==(const ItemRecord&, const ItemRecord&) = default;
};

struct BehaviorEvent {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
  std::optional<int> label;

  friend bool operator==(const BehaviorEvent&, const BehaviorEvent&) = default;
};

/// Item table with a uniform embedding dimension fixed by the first insert.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  void insert(ItemRecord item) {
    if (dim_ && item.embedding.size() != *dim_) {
      throw ValidationError("item '" + item.item_id + "' has embedding dimension " +
                            std::to_string(item.embedding.size()) + ", expected " +
                            std::to_string(*dim_));
    }
    if (index_.count(item.item_id)) {
      throw ValidationError("duplicate item_id '" + item.item_id + "'");
    }
    if (item.base_score && !(*item.base_score >= 0.0 && *item.base_score <= 1.0)) {
      throw ValidationError("item '" + item.item_id + "' base_score outside [0,1]");
    }
    if (item.cluster_id && *item.cluster_id < 0) {
      throw ValidationError("item '" + item.item_id + "' has negative cluster_id");
    }
    for (double v : item.embedding) {
      if (!std::isfinite(v)) throw ValidationError("item '" + item.item_id + "' has non-finite embedding");
    }
    if (!dim_) dim_ = item.embedding.size();
    index_.emplace(item.item_id, items_.size());
    items_.push_back(std::move(item));
  }

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::optional<std::size_t> dim() const { return dim_; }
  const std::vector<ItemRecord>& items() const { return items_; }
  const ItemRecord& operator[](std::size_t i) const { return items_[i]; }

  const ItemRecord* find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  const ItemRecord& at(const std::string& id) const {
    const ItemRecord* item = find(id);
    if (!item) throw ValidationError("unknown item_id '" + id + "'");
    return *item;
  }

 private:
  std::optional<std::size_t> dim_;
  std::vector<ItemRecord> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct CandidateSet {
  std::string user_id;
  std::int64_t now = 0;  // reference time for time-decay features
  std::vector<ItemRecord> items;

  std::size_t size() const { return items.size(); }
  std::size_t dim() const { return items.empty() ? 0 : items.front().embedding.size(); }
  friend bool operator==(const CandidateSet&, const CandidateSet&) = default;
};

inline void validate_candidates(const CandidateSet& c) {
  if (c.items.empty()) throw ValidationError("candidate set for '" + c.user_id + "' is empty");
  const std::size_t d = c.items.front().embedding.size();
  std::unordered_set<std::string> seen;
  for (const auto& it : c.items) {
    if (it.embedding.size() != d) {
      throw ValidationError("candidate '" + it.item_id + "' has embedding dimension " +
                            std::to_string(it.embedding.size()) + ", expected " + std::to_string(d));
    }
    if (!seen.insert(it.item_id).second) {
      throw ValidationError("duplicate candidate item_id '" + it.item_id + "'");
    }
    if (!it.base_score) {
      throw ValidationError("candidate '" + it.item_id + "' is missing base_score");
    }
    if (!(*it.base_score >= 0.0 && *it.base_score <= 1.0)) {
      throw ValidationError("candidate '" + it.item_id + "' base_score outside [0,1]");
    }
  }
}

struct StepRecord {
  std::string item_id;
  double score = 0.0;   // g(u,i|S) at the time of selection
  double log_d2 = 0.0;  // log of the Cholesky residual
  double marginal = 0.0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct RerankResult {
  std::string user_id;
  std::vector<std::string> item_ids;
  std::vector<StepRecord> steps;
  double objective = 0.0;
  // Set when every remaining residual fell to epsilon before K picks.
  bool short_list = false;

  friend bool operator==(const RerankResult&, const RerankResult&) = default;
};

struct ExperimentConfig {
  double alpha = 1.0;
  double beta1 = 0.5;
  double beta2 = 0.5;
  double a_l = 1.0, b_l = 1.0;
  double a_s = 1.0, b_s = 1.0;
  double a_item = 1.0, b_item = 1.0;
  double epsilon = 1e-9;
  std::int64_t K = 10;
  std::int64_t top_M = 5;
  std::int64_t time_buckets = 16;
  double jitter = 1e-6;

  // Kernel switches.
  bool normalize = true;
  std::string kernel_form = "distance";          // "distance" | "dot"
  std::string interest_product = "elementwise";  // "elementwise" | "scalar"
  bool paper_literal_init = false;

  // Model shape and training.
  std::int64_t heads = 2;
  std::int64_t reduction = 4;
  std::int64_t mlp_hidden = 32;
  std::int64_t time_dim = 4;
  std::int64_t recent_window = 20;
  std::string optimizer = "adam";  // "adam" | "sgd"
  double learning_rate = 0.003;
  std::int64_t epochs = 20;
  std::uint64_t seed = 42;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Checks every constraint and reports all violations together.
inline ExperimentConfig validate_config(const ExperimentConfig& cfg) {
  std::vector<std::string> errors;
  auto non_negative = [&](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) errors.push_back(std::string(name) + " must be non-negative");
  };
  auto positive = [&](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) errors.push_back(std::string(name) + " must be positive");
  };
  non_negative(cfg.alpha, "alpha");
  non_negative(cfg.beta1, "beta1");
  non_negative(cfg.beta2, "beta2");
  positive(cfg.a_l, "a_l");
  positive(cfg.b_l, "b_l");
  positive(cfg.a_s, "a_s");
  positive(cfg.b_s, "b_s");
  positive(cfg.a_item, "a_item");
  positive(cfg.b_item, "b_item");
  positive(cfg.epsilon, "epsilon");
  non_negative(cfg.jitter, "jitter");
  if (cfg.K < 1) errors.push_back("K must be at least 1");
  if (cfg.top_M < 1) errors.push_back("top_M must be positive");
  if (cfg.time_buckets < 1) errors.push_back("time_buckets must be positive");
  if (cfg.kernel_form != "distance" && cfg.kernel_form != "dot")
    errors.push_back("kernel_form must be \"distance\" or \"dot\"");
  if (cfg.interest_product != "elementwise" && cfg.interest_product != "scalar")
    errors.push_back("interest_product must be \"elementwise\" or \"scalar\"");
  if (cfg.heads < 1) errors.push_back("heads must be positive");
  if (cfg.reduction < 1) errors.push_back("reduction must be at least 1");
  if (cfg.mlp_hidden < 1) errors.push_back("mlp_hidden must be positive");
  if (cfg.time_dim < 0) errors.push_back("time_dim must be non-negative");
  if (cfg.recent_window < 1) errors.push_back("recent_window must be positive");
  if (cfg.optimizer != "adam" && cfg.optimizer != "sgd") errors.push_back("optimizer must be \"adam\" or \"sgd\"");
  non_negative(cfg.learning_rate, "learning_rate");
  if (cfg.epochs < 0) errors.push_back("epochs must be non-negative");
  if (!errors.empty()) {
    std::string msg = "invalid config: ";
    for (std::size_t i = 0; i < errors.size(); ++i) msg += (i ? "; " : "") + errors[i];
    throw ValidationError(msg);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// JSON conversion

inline json to_json(const ItemRecord& it) {
  json j;
  j["item_id"] = it.item_id;
  j["embedding"] = it.embedding;
  if (it.cluster_id) j["cluster_id"] = *it.cluster_id;
  if (it.base_score) j["base_score"] = *it.base_score;
  return j;
}

inline ItemRecord item_from_json(const json& j) {
  ItemRecord it;
  it.item_id = j.at("item_id").get<std::string>();
  it.embedding = j.at("embedding").get<Vector>();
  if (j.contains("cluster_id") && !j["cluster_id"].is_null()) it.cluster_id = j["cluster_id"].get<std::int64_t>();
  if (j.contains("base_score") && !j["base_score"].is_null()) it.base_score = j["base_score"].get<double>();
  return it;
}

inline json to_json(const BehaviorEvent& e) {
  json j;
  j["user_id"] = e.user_id;
  j["item_id"] = e.item_id;
  j["ts"] = e.timestamp;
  if (e.label) j["label"] = *e.label;
  return j;
}

inline BehaviorEvent behavior_from_json(const json& j) {
  BehaviorEvent e;
  e.user_id = j.at("user_id").get<std::string>();
  e.item_id = j.at("item_id").get<std::string>();
  e.timestamp = j.at("ts").get<std::int64_t>();
  if (e.timestamp < 0) throw ValidationError("negative timestamp for user '" + e.user_id + "'");
  if (j.contains("label") && !j["label"].is_null()) {
    int label = j["label"].get<int>();
    if (label != 0 && label != 1) throw ValidationError("label must be 0 or 1");
    e.label = label;
  }
  return e;
}

inline json to_json(const CandidateSet& c) {
  json items = json::array();
  for (const auto& it : c.items) items.push_back(to_json(it));
  return json{{"user_id", c.user_id}, {"now", c.now}, {"items", std::move(items)}};
}

inline CandidateSet candidates_from_json(const json& j) {
  CandidateSet c;
  c.user_id = j.at("user_id").get<std::string>();
  c.now = j.value("now", std::int64_t{0});
  for (const auto& it : j.at("items")) c.items.push_back(item_from_json(it));
  validate_candidates(c);
  return c;
}

inline json to_json(const RerankResult& r) {
  json steps = json::array();
  for (const auto& s : r.steps) {
    // A zero residual has log -inf, which JSON cannot carry; it is written as null.
    json log_d2 = std::isfinite(s.log_d2) ? json(s.log_d2) : json(nullptr);
    steps.push_back(json{{"item_id", s.item_id}, {"score", s.score}, {"log_d2", log_d2}, {"marginal", s.marginal}});
  }
  return json{{"user_id", r.user_id}, {"items", r.item_ids}, {"steps", std::move(steps)},
              {"objective", r.objective}, {"short_list", r.short_list}};
}

inline RerankResult result_from_json(const json& j) {
  RerankResult r;
  r.user_id = j.at("user_id").get<std::string>();
  r.item_ids = j.at("items").get<std::vector<std::string>>();
  for (const auto& s : j.at("steps")) {
    const double log_d2 =
        s.at("log_d2").is_null() ? -std::numeric_limits<double>::infinity() : s.at("log_d2").get<double>();
    r.steps.push_back({s.at("item_id").get<std::string>(), s.at("score").get<double>(), log_d2,
                       s.at("marginal").get<double>()});
  }
  r.objective = j.at("objective").get<double>();
  r.short_list = j.value("short_list", false);
  return r;
}

inline json to_json(const ExperimentConfig& c) {
  return json{{"alpha", c.alpha},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"a_l", c.a_l},
              {"b_l", c.b_l},
              {"a_s", c.a_s},
              {"b_s", c.b_s},
              {"a_item", c.a_item},
              {"b_item", c.b_item},
              {"epsilon", c.epsilon},
              {"K", c.K},
              {"top_M", c.top_M},
              {"time_buckets", c.time_buckets},
              {"jitter", c.jitter},
              {"normalize", c.normalize},
              {"kernel_form", c.kernel_form},
              {"interest_product", c.interest_product},
              {"paper_literal_init", c.paper_literal_init},
              {"heads", c.heads},
              {"reduction", c.reduction},
              {"mlp_hidden", c.mlp_hidden},
              {"time_dim", c.time_dim},
              {"recent_window", c.recent_window},
              {"optimizer", c.optimizer},
              {"learning_rate", c.learning_rate},
              {"epochs", c.epochs},
              {"seed", c.seed}};
}

/// Missing fields keep their defaults; unknown fields are rejected.
inline ExperimentConfig config_from_json(const json& j, ExperimentConfig cfg = {}) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    try {
      if (k == "alpha") cfg.alpha = v.get<double>();
      else if (k == "beta1") cfg.beta1 = v.get<double>();
      else if (k == "beta2") cfg.beta2 = v.get<double>();
      else if (k == "a_l") cfg.a_l = v.get<double>();
      else if (k == "b_l") cfg.b_l = v.get<double>();
      else if (k == "a_s") cfg.a_s = v.get<double>();
      else if (k == "b_s") cfg.b_s = v.get<double>();
      else if (k == "a_item") cfg.a_item = v.get<double>();
      else if (k == "b_item") cfg.b_item = v.get<double>();
      else if (k == "epsilon") cfg.epsilon = v.get<double>();
      else if (k == "K") cfg.K = v.get<std::int64_t>();
      else if (k == "top_M") cfg.top_M = v.get<std::int64_t>();
      else if (k == "time_buckets") cfg.time_buckets = v.get<std::int64_t>();
      else if (k == "jitter") cfg.jitter = v.get<double>();
      else if (k == "normalize") cfg.normalize = v.get<bool>();
      else if (k == "kernel_form") cfg.kernel_form = v.get<std::string>();
      else if (k == "interest_product") cfg.interest_product = v.get<std::string>();
      else if (k == "paper_literal_init") cfg.paper_literal_init = v.get<bool>();
      else if (k == "heads") cfg.heads = v.get<std::int64_t>();
      else if (k == "reduction") cfg.reduction = v.get<std::int64_t>();
      else if (k == "mlp_hidden") cfg.mlp_hidden = v.get<std::int64_t>();
      else if (k == "time_dim") cfg.time_dim = v.get<std::int64_t>();
      else if (k == "recent_window") cfg.recent_window = v.get<std::int64_t>();
      else if (k == "optimizer") cfg.optimizer = v.get<std::string>();
      else if (k == "learning_rate") cfg.learning_rate = v.get<double>();
      else if (k == "epochs") cfg.epochs = v.get<std::int64_t>();
      else if (k == "seed") cfg.seed = v.get<std::uint64_t>();
      else throw ValidationError("unknown config field '" + k + "'");
    } catch (const json::exception& e) {
      throw ValidationError("config field '" + k + "' has wrong type: " + e.what());
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// File IO

namespace detail {

template <typename F>
void for_each_line(const std::string& path, F&& on_line) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON in '") + path + "': " + e.what(), lineno);
    }
    try {
      on_line(j, lineno);
    } catch (const ParseError&) {
      throw;
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad record in '") + path + "': " + e.what(), lineno);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
}

}  // namespace detail

inline EmbeddingTable load_items(const std::string& path) {
  EmbeddingTable table;
  detail::for_each_line(path, [&](const json& j, std::size_t) { table.insert(item_from_json(j)); });
  return table;
}

/// Events come back stably sorted by (user_id, timestamp).
inline std::vector<BehaviorEvent> load_behaviors(const std::string& path) {
  std::vector<BehaviorEvent> events;
  detail::for_each_line(path, [&](const json& j, std::size_t) { events.push_back(behavior_from_json(j)); });
  std::stable_sort(events.begin(), events.end(), [](const BehaviorEvent& a, const BehaviorEvent& b) {
    if (a.user_id != b.user_id) return a.user_id < b.user_id;
    return a.timestamp < b.timestamp;
  });
  return events;
}

inline std::vector<CandidateSet> load_candidates(const std::string& path) {
  std::vector<CandidateSet> sets;
  detail::for_each_line(path, [&](const json& j, std::size_t) { sets.push_back(candidates_from_json(j)); });
  return sets;
}

inline std::vector<RerankResult> load_results(const std::string& path) {
  std::vector<RerankResult> out;
  detail::for_each_line(path, [&](const json& j, std::size_t) { out.push_back(result_from_json(j)); });
  return out;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed config '" + path + "': " + e.what());
  }
  return validate_config(config_from_json(j));
}

template <typename Range>
void write_jsonl(const std::string& path, const Range& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace divrank
