#include "volumix/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace volumix {

namespace {

int64_t parse_i64(const std::string& key, const std::string& value) {
  size_t pos = 0;
  int64_t out = 0;
  try {
    out = std::stoll(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || value.empty())
    throw DataError("key '" + key + "': invalid integer '" + value + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& value) {
  const int64_t v = parse_i64(key, value);
  if (v < INT32_MIN || v > INT32_MAX)
    throw DataError("key '" + key + "': value '" + value + "' out of range");
  return static_cast<int>(v);
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  size_t pos = 0;
  uint64_t out = 0;
  try {
    out = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || value.empty() || value[0] == '-')
    throw DataError("key '" + key + "': invalid unsigned integer '" + value + "'");
  return out;
}

double parse_f64(const std::string& key, const std::string& value) {
  size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || value.empty())
    throw DataError("key '" + key + "': invalid number '" + value + "'");
  return out;
}

std::vector<int64_t> parse_i64_list(const std::string& key, const std::string& value) {
  std::vector<int64_t> out;
  std::string cur;
  std::stringstream ss(value);
  while (std::getline(ss, cur, ',')) out.push_back(parse_i64(key, cur));
  if (out.empty()) throw DataError("key '" + key + "': empty list");
  return out;
}

std::string join_i64(const std::vector<int64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt_f64(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&t](const std::string& key, Field f) { t.emplace_back(key, std::move(f)); };
    auto str_field = [](std::string RunConfig::*m) {
      return Field{[m](RunConfig& c, const std::string&, const std::string& v) { c.*m = v; },
                   [m](const RunConfig& c) { return c.*m; }};
    };
    auto i64_field = [](int64_t RunConfig::*m) {
      return Field{
          [m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_i64(k, v); },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
    };
    auto int_field = [](int RunConfig::*m) {
      return Field{
          [m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_int(k, v); },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
    };
    auto f64_field = [](double RunConfig::*m) {
      return Field{
          [m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_f64(k, v); },
          [m](const RunConfig& c) { return fmt_f64(c.*m); }};
    };
    auto list_field = [](std::vector<int64_t> RunConfig::*m) {
      return Field{[m](RunConfig& c, const std::string& k, const std::string& v) {
                     c.*m = parse_i64_list(k, v);
                   },
                   [m](const RunConfig& c) { return join_i64(c.*m); }};
    };

    add("regime", str_field(&RunConfig::regime));
    add("extent_d", i64_field(&RunConfig::extent_d));
    add("extent_h", i64_field(&RunConfig::extent_h));
    add("extent_w", i64_field(&RunConfig::extent_w));
    add("num_classes", int_field(&RunConfig::num_classes));
    add("noise_std", f64_field(&RunConfig::noise_std));
    add("roi_frac_lo", f64_field(&RunConfig::roi_frac_lo));
    add("roi_frac_hi", f64_field(&RunConfig::roi_frac_hi));
    add("n_distractors", int_field(&RunConfig::n_distractors));
    add("n_train", int_field(&RunConfig::n_train));
    add("n_val", int_field(&RunConfig::n_val));
    add("n_test", int_field(&RunConfig::n_test));
    add("variant", str_field(&RunConfig::variant));
    add("in_channels", i64_field(&RunConfig::in_channels));
    add("stem_channels", i64_field(&RunConfig::stem_channels));
    add("stage_depths", list_field(&RunConfig::stage_depths));
    add("channels", list_field(&RunConfig::channels));
    add("state_dim", i64_field(&RunConfig::state_dim));
    add("window", int_field(&RunConfig::window));
    add("heads", int_field(&RunConfig::heads));
    add("epochs", int_field(&RunConfig::epochs));
    add("lr", f64_field(&RunConfig::lr));
    add("batch_size", int_field(&RunConfig::batch_size));
    add("dice_weight", f64_field(&RunConfig::dice_weight));
    add("ce_weight", f64_field(&RunConfig::ce_weight));
    add("val_interval", int_field(&RunConfig::val_interval));
    add("precision", str_field(&RunConfig::precision));
    add("tau_mm", f64_field(&RunConfig::tau_mm));
    add("seed", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                        c.seed = parse_u64(k, v);
                      },
                      [](const RunConfig& c) { return std::to_string(c.seed); }});
    add("manifest", str_field(&RunConfig::manifest));
    return t;
  }();
  return table;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.first);
    return k;
  }();
  return keys;
}

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.first == key) {
      f.second.set(cfg, key, value);
      return;
    }
  }
  throw DataError("unknown key '" + key + "'");
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw DataError("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected key=value, got '" + line +
                      "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw DataError(path + ":" + std::to_string(lineno) + ": empty key");
    try {
      apply_kv(base, key, value);
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.first;
    out += '=';
    out += f.second.get(cfg);
    out += '\n';
  }
  return out;
}

uint64_t config_digest(const RunConfig& cfg) {
  const std::string text = serialize_config(cfg) + "threads=" + std::to_string(max_threads()) + "\n";
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

PhantomSpec phantom_of(const RunConfig& cfg) {
  PhantomSpec sp;
  sp.regime = regime_from_name(cfg.regime);
  sp.d = cfg.extent_d;
  sp.h = cfg.extent_h;
  sp.w = cfg.extent_w;
  sp.num_classes = cfg.num_classes;
  sp.seed = cfg.seed;
  sp.noise_std = cfg.noise_std;
  sp.roi_frac_lo = cfg.roi_frac_lo;
  sp.roi_frac_hi = cfg.roi_frac_hi;
  sp.n_distractors = cfg.n_distractors;
  return sp;
}

SegConfig model_of(const RunConfig& cfg) {
  SegConfig sc;
  sc.variant = block_kind_from_name(cfg.variant);
  sc.in_channels = cfg.in_channels;
  sc.num_classes = cfg.num_classes;
  sc.stem_channels = cfg.stem_channels;
  sc.stage_depths = cfg.stage_depths;
  sc.channels = cfg.channels;
  sc.state_dim = cfg.state_dim;
  sc.window = cfg.window;
  sc.heads = cfg.heads;
  return sc;
}

TrainConfig train_of(const RunConfig& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.lr = cfg.lr;
  tc.batch_size = cfg.batch_size;
  tc.dice_weight = cfg.dice_weight;
  tc.ce_weight = cfg.ce_weight;
  tc.val_interval = cfg.val_interval;
  tc.seed = cfg.seed;
  tc.tau_mm = cfg.tau_mm;
  if (cfg.precision == "train")
    tc.precision = Precision::Train;
  else if (cfg.precision == "verify")
    tc.precision = Precision::Verify;
  else
    throw DataError("key 'precision': expected train|verify, got '" + cfg.precision + "'");
  return tc;
}

}  // namespace volumix
