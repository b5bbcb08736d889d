#pragma once

// Flat `key = value` run configuration. Lines starting with '#' (after
// whitespace) are comments, trailing '# ...' is stripped, unknown keys fail.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "suda/errors.hpp"
#include "suda/spectrum_transformer.hpp"
#include "suda/synth_data.hpp"
#include "suda/trainer.hpp"

namespace suda::cfg {

struct RunConfig {
  std::size_t n_bands = 32;
  std::size_t heads = 8;
  std::size_t image_size = 32;
  std::size_t classes = 4;
  std::size_t batch = 32;
  std::size_t max_iter = 3000;
  double lr_gen = 0.01;
  double lr_disc = 0.01;
  double momentum = 0.9;
  double lambda_c = 0.1;
  double lambda_s = 1.0;
  double lambda_dis = 1.0;  // weight of L_dis inside L_self
  double lambda_sim = 1.0;  // weight of L_sim inside L_self
  std::string tier = "two_st_msl";
  std::uint64_t seed = 42;
  std::size_t eval_every = 200;
  std::size_t eval_samples = 500;
  std::size_t disc_steps = 1;
  std::size_t checkpoint_every = 500;
  std::string attention_mode = "faithful";
  std::size_t source_count = 2000;
  std::size_t target_count = 2000;
  double shift_amplitude = 1.0;  // multiplies every default shift amplitude
  std::string source_data = "data/source.sudadata";
  std::string target_data = "data/target.sudadata";
  std::string out_dir = "runs/default";
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>) {
    r = std::from_chars(first, last, value, std::chars_format::general);
  } else {
    if (!text.empty() && text.front() == '-') throw ConfigError(key + " must be non-negative, got '" + text + "'");
    r = std::from_chars(first, last, value);
  }
  if (r.ec != std::errc() || r.ptr != last) throw ConfigError("cannot parse " + key + " = '" + text + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw ConfigError(key + " must be finite");
  }
  return value;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field field(T RunConfig::*member) {
  Field f;
  f.get = [member](const RunConfig& c) {
    if constexpr (std::is_same_v<T, std::string>) {
      return c.*member;
    } else if constexpr (std::is_floating_point_v<T>) {
      std::ostringstream os;
      os.precision(17);
      os << c.*member;
      return os.str();
    } else {
      return std::to_string(c.*member);
    }
  };
  return f;
}

// Ordered so the echo file reads the same every time.
inline const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&t](const std::string& key, auto member) {
      Field f = field(member);
      using T = std::remove_reference_t<decltype(RunConfig{}.*member)>;
      f.set = [member, key](RunConfig& c, const std::string& v) {
        if constexpr (std::is_same_v<T, std::string>) {
          if (v.empty()) throw ConfigError(key + " must not be empty");
          c.*member = v;
        } else {
          c.*member = parse_number<T>(key, v);
        }
      };
      t.emplace_back(key, std::move(f));
    };
    add("n_bands", &RunConfig::n_bands);
    add("heads", &RunConfig::heads);
    add("image_size", &RunConfig::image_size);
    add("classes", &RunConfig::classes);
    add("batch", &RunConfig::batch);
    add("max_iter", &RunConfig::max_iter);
    add("lr_gen", &RunConfig::lr_gen);
    add("lr_disc", &RunConfig::lr_disc);
    add("momentum", &RunConfig::momentum);
    add("lambda_c", &RunConfig::lambda_c);
    add("lambda_s", &RunConfig::lambda_s);
    add("lambda_dis", &RunConfig::lambda_dis);
    add("lambda_sim", &RunConfig::lambda_sim);
    add("tier", &RunConfig::tier);
    add("seed", &RunConfig::seed);
    add("eval_every", &RunConfig::eval_every);
    add("eval_samples", &RunConfig::eval_samples);
    add("disc_steps", &RunConfig::disc_steps);
    add("checkpoint_every", &RunConfig::checkpoint_every);
    add("attention_mode", &RunConfig::attention_mode);
    add("source_count", &RunConfig::source_count);
    add("target_count", &RunConfig::target_count);
    add("shift_amplitude", &RunConfig::shift_amplitude);
    add("source_data", &RunConfig::source_data);
    add("target_data", &RunConfig::target_data);
    add("out_dir", &RunConfig::out_dir);
    return t;
  }();
  return table;
}

inline const Field* find(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return &f;
  return nullptr;
}

}  // namespace detail

inline std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : detail::fields()) out.push_back(k);
  return out;
}

// Sets one key; throws ConfigError on an unknown key or a bad value.
inline void set(RunConfig& c, const std::string& key, const std::string& value) {
  const auto* f = detail::find(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(c, value);
}

inline std::string get(const RunConfig& c, const std::string& key) {
  const auto* f = detail::find(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  return f->get(c);
}

inline void validate(const RunConfig& c);

inline RunConfig parse(std::istream& in, const std::string& origin = "config") {
  RunConfig c;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(where + ": duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    }
    seen[key] = lineno;
    try {
      set(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  validate(c);
  return c;
}

inline RunConfig parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

inline RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse(in, path.string());
}

// Every key with its resolved value, one per line, in a fixed order.
inline std::string echo(const RunConfig& c) {
  std::string out;
  for (const auto& [k, f] : detail::fields()) out += k + " = " + f.get(c) + "\n";
  return out;
}

inline train::TrainConfig to_train_config(const RunConfig& c) {
  train::TrainConfig t;
  t.max_iter = c.max_iter;
  t.batch = c.batch;
  t.lr_gen = c.lr_gen;
  t.lr_disc = c.lr_disc;
  t.momentum = c.momentum;
  t.weights.lambda_c = c.lambda_c;
  t.weights.lambda_s = c.lambda_s;
  t.weights.dis_weight = c.lambda_dis;
  t.weights.sim_weight = c.lambda_sim;
  t.seed = c.seed;
  t.tier = train::parse_tier(c.tier);
  t.eval_every = c.eval_every;
  t.disc_steps = c.disc_steps;
  t.classes = c.classes;
  t.image_size = c.image_size;
  t.asa.bands = c.n_bands;
  t.asa.heads = c.heads;
  t.asa.mode = st::parse_attention_mode(c.attention_mode);
  t.eval_samples = c.eval_samples;
  return t;
}

inline data::GenerateConfig to_generate_config(const RunConfig& c) {
  data::GenerateConfig g;
  g.classes = c.classes;
  g.source_count = c.source_count;
  g.target_count = c.target_count;
  g.height = c.image_size;
  g.width = c.image_size;
  g.bands = c.n_bands;
  g.shift = data::default_shift(c.n_bands).scaled(c.shift_amplitude);
  g.seed = c.seed;
  return g;
}

inline void validate(const RunConfig& c) {
  if (c.image_size < 2 || c.image_size > 65535) throw ConfigError("image_size must be in [2, 65535]");
  if (c.source_count == 0 || c.target_count == 0) throw ConfigError("dataset counts must be at least 1");
  if (c.checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
  if (c.disc_steps == 0) throw ConfigError("disc_steps must be positive");
  if (c.shift_amplitude < 0) throw ConfigError("shift_amplitude must be >= 0");
  to_train_config(c).validate();
}

}  // namespace suda::cfg
