#include "distsearch/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "distsearch/errors.hpp"
#include "distsearch/network.hpp"
#include "distsearch/text.hpp"

namespace distsearch {

namespace {

struct KeyBinding {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

int64_t to_int(const std::string& key, const std::string& value) {
  int64_t v = 0;
  auto r = std::from_chars(value.data(), value.data() + value.size(), v);
  if (r.ec != std::errc() || r.ptr != value.data() + value.size())
    throw ConfigError(key + ": bad integer '" + value + "'");
  return v;
}

uint64_t to_uint(const std::string& key, const std::string& value) {
  uint64_t v = 0;
  auto r = std::from_chars(value.data(), value.data() + value.size(), v);
  if (r.ec != std::errc() || r.ptr != value.data() + value.size())
    throw ConfigError(key + ": bad unsigned integer '" + value + "'");
  return v;
}

double to_real(const std::string& key, const std::string& value) {
  try {
    return parse_double(value, key);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError(key + ": bad boolean '" + value + "' (true|false)");
}

#define INT_KEY(name, field)                                                        \
  KeyBinding {                                                                      \
    name, [](const RunConfig& c) { return std::to_string(c.field); },               \
        [](RunConfig& c, const std::string& v) { c.field = to_int(name, v); }       \
  }
#define REAL_KEY(name, field)                                                       \
  KeyBinding {                                                                      \
    name, [](const RunConfig& c) { return fmt_double(c.field); },                   \
        [](RunConfig& c, const std::string& v) { c.field = to_real(name, v); }      \
  }
#define BOOL_KEY(name, field)                                                       \
  KeyBinding {                                                                      \
    name, [](const RunConfig& c) { return c.field ? "true" : "false"; },            \
        [](RunConfig& c, const std::string& v) { c.field = to_bool(name, v); }      \
  }
#define STR_KEY(name, field)                                                        \
  KeyBinding {                                                                      \
    name, [](const RunConfig& c) { return c.field; },                               \
        [](RunConfig& c, const std::string& v) { c.field = v; }                     \
  }

const std::vector<KeyBinding>& key_table() {
  static const std::vector<KeyBinding> table = {
      KeyBinding{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& v) { c.seed = to_uint("seed", v); }},
      STR_KEY("data.path", data_path),
      INT_KEY("data.n", data_n),
      INT_KEY("data.classes", data_classes),
      REAL_KEY("data.sigma", data_sigma),
      INT_KEY("data.h", data_h),
      INT_KEY("data.w", data_w),
      REAL_KEY("split.ratio", split_ratio),
      STR_KEY("teacher.spec", teacher_spec),
      STR_KEY("teacher.path", teacher_path),
      INT_KEY("teacher.epochs", teacher_epochs),
      REAL_KEY("teacher.lr", teacher_lr),
      INT_KEY("teacher.batch_size", teacher_batch),
      STR_KEY("student.spec", student_spec),
      STR_KEY("pathway.kinds", pathway_kinds),
      INT_KEY("search.steps", search_steps),
      REAL_KEY("search.gamma", search_gamma),
      REAL_KEY("search.xi", search_xi),
      KeyBinding{"search.epsilon_mode",
                 [](const RunConfig& c) { return epsilon_mode_name(c.search_epsilon_mode); },
                 [](RunConfig& c, const std::string& v) {
                   c.search_epsilon_mode = parse_epsilon_mode(v);
                 }},
      REAL_KEY("search.epsilon", search_epsilon),
      REAL_KEY("search.g", search_g),
      REAL_KEY("search.tau", search_tau),
      BOOL_KEY("search.clip", search_clip),
      KeyBinding{"search.strategy",
                 [](const RunConfig& c) { return norm_strategy_name(c.search_strategy); },
                 [](RunConfig& c, const std::string& v) {
                   c.search_strategy = parse_norm_strategy(v);
                 }},
      KeyBinding{"search.delta",
                 [](const RunConfig& c) { return distance_kind_name(c.search_delta); },
                 [](RunConfig& c, const std::string& v) {
                   c.search_delta = parse_distance_kind(v);
                 }},
      INT_KEY("search.batch_size", search_batch),
      STR_KEY("schedule.path", schedule_path),
      INT_KEY("retrain.steps", retrain_steps),
      INT_KEY("retrain.batch_size", retrain_batch),
      REAL_KEY("retrain.lr", retrain_lr),
      REAL_KEY("retrain.momentum", retrain_momentum),
      STR_KEY("retrain.baseline", retrain_baseline),
      STR_KEY("eval.checkpoint", eval_checkpoint),
      STR_KEY("eval.on", eval_on),
      INT_KEY("eval.batch_size", eval_batch),
      INT_KEY("check.warm_steps", check_warm_steps),
      INT_KEY("check.train_batch", check_train_batch),
      INT_KEY("check.val_batch", check_val_batch),
      REAL_KEY("check.h", check_h),
      REAL_KEY("check.rel_tol", check_rel_tol),
      REAL_KEY("check.cos_tol", check_cos_tol),
      REAL_KEY("check.floor", check_floor),
  };
  return table;
}

#undef INT_KEY
#undef REAL_KEY
#undef BOOL_KEY
#undef STR_KEY

const KeyBinding* find_key(const std::string& key) {
  for (const auto& b : key_table())
    if (key == b.name) return &b;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig()
    : teacher_spec(small_teacher_spec(4).to_text()),
      student_spec(small_student_spec(4).to_text()) {}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("config: cannot open " + path);
  RunConfig cfg;
  std::vector<std::string> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string where = path + ":" + std::to_string(line_no);
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    for (const auto& s : seen)
      if (s == key) throw ConfigError(where + ": duplicate key '" + key + "'");
    const KeyBinding* b = find_key(key);
    if (!b) throw ConfigError(where + ": unknown key '" + key + "'");
    b->set(cfg, value);
    seen.push_back(key);
  }
  return cfg;
}

void RunConfig::set_key(const std::string& key, const std::string& value) {
  const KeyBinding* b = find_key(key);
  if (!b) throw ConfigError("unknown key '" + key + "'");
  b->set(*this, value);
}

std::string RunConfig::get_key(const std::string& key) const {
  const KeyBinding* b = find_key(key);
  if (!b) throw ConfigError("unknown key '" + key + "'");
  return b->get(*this);
}

void RunConfig::apply_override(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  set_key(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  for (const auto& b : key_table()) os << b.name << " = " << b.get(*this) << "\n";
  return os.str();
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("config: cannot open " + path + " for writing");
  os << resolved_text();
  if (!os) throw FormatError("config: write failed for " + path);
}

void RunConfig::validate() const {
  if (data_n < 2) throw ConfigError("data.n: need at least 2 samples");
  if (data_classes < 2) throw ConfigError("data.classes: need at least 2 classes");
  if (data_sigma < 0.0) throw ConfigError("data.sigma: negative noise");
  if (data_h < 4 || data_w < 4) throw ConfigError("data.h/data.w: image too small");
  if (teacher_epochs < 0) throw ConfigError("teacher.epochs: negative");
  if (!(teacher_lr > 0.0)) throw ConfigError("teacher.lr: must be positive");
  if (teacher_batch < 1) throw ConfigError("teacher.batch_size: must be >= 1");
  if (eval_on != "train" && eval_on != "val" && eval_on != "all")
    throw ConfigError("eval.on: expected train|val|all, got '" + eval_on + "'");
  if (retrain_baseline != "schedule" && retrain_baseline != "equal" &&
      retrain_baseline != "none")
    throw ConfigError("retrain.baseline: expected schedule|equal|none, got '" +
                      retrain_baseline + "'");
  if (check_warm_steps < 0) throw ConfigError("check.warm_steps: negative");
  if (check_train_batch < 0 || check_val_batch < 0)
    throw ConfigError("check.train_batch/check.val_batch: negative");
  if (!(check_h > 0.0)) throw ConfigError("check.h: must be positive");
  if (!(check_rel_tol > 0.0)) throw ConfigError("check.rel_tol: must be positive");
  if (check_cos_tol < -1.0 || check_cos_tol > 1.0)
    throw ConfigError("check.cos_tol: outside [-1,1]");
  if (check_floor < 0.0) throw ConfigError("check.floor: negative");
  search_config().validate();
  retrain_config().validate();
}

SearchConfig RunConfig::search_config() const {
  SearchConfig s;
  s.gamma = search_gamma;
  s.xi = search_xi;
  s.epsilon_mode = search_epsilon_mode;
  s.epsilon = search_epsilon;
  s.g = search_g;
  s.tau = search_tau;
  s.search_steps = search_steps;
  s.retrain_steps = retrain_steps;
  s.split_ratio = split_ratio;
  s.batch_size = search_batch;
  s.seed = seed;
  s.strategy = search_strategy;
  s.delta_feature = search_delta;
  s.clip = search_clip;
  return s;
}

RetrainConfig RunConfig::retrain_config() const {
  RetrainConfig r;
  r.steps = retrain_steps;
  r.batch_size = retrain_batch;
  r.lr = retrain_lr;
  r.momentum = retrain_momentum;
  r.seed = seed;
  r.loss = loss_spec();
  return r;
}

LossSpec RunConfig::loss_spec() const {
  LossSpec l;
  l.delta_feature = search_delta;
  l.tau = search_tau;
  l.clip = search_clip;
  return l;
}

std::vector<std::string> RunConfig::known_keys() {
  std::vector<std::string> keys;
  keys.reserve(key_table().size());
  for (const auto& b : key_table()) keys.emplace_back(b.name);
  return keys;
}

std::string RunConfig::substitute_out(const std::string& value, const std::string& out_dir) {
  static const std::string token = "<out>";
  std::string out = value;
  size_t pos = 0;
  while ((pos = out.find(token, pos)) != std::string::npos) {
    out.replace(pos, token.size(), out_dir);
    pos += out_dir.size();
  }
  return out;
}

}  // namespace distsearch
