#include "deari/config.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <vector>

#include "deari/metric.hpp"

namespace deari {

namespace {

std::string format_real(real v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected boolean, got '" + v + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define DEARI_STR_FIELD(name) \
  Field{#name, [](const RunConfig& c) { return c.name; }, \
        [](RunConfig& c, const std::string& v) { c.name = v; }}
#define DEARI_INT_FIELD(name) \
  Field{#name, [](const RunConfig& c) { return std::to_string(c.name); }, \
        [](RunConfig& c, const std::string& v) { c.name = std::stoll(v); }}
#define DEARI_REAL_FIELD(name) \
  Field{#name, [](const RunConfig& c) { return format_real(c.name); }, \
        [](RunConfig& c, const std::string& v) { c.name = static_cast<real>(std::stod(v)); }}
#define DEARI_BOOL_FIELD(name) \
  Field{#name, [](const RunConfig& c) { return c.name ? "true" : "false"; }, \
        [](RunConfig& c, const std::string& v) { c.name = parse_bool(v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DEARI_STR_FIELD(variant),
      DEARI_INT_FIELD(layers),
      DEARI_INT_FIELD(hidden),
      DEARI_INT_FIELD(encoder_depth),
      DEARI_INT_FIELD(heads),
      DEARI_INT_FIELD(ffn_width),
      DEARI_STR_FIELD(cell),
      DEARI_REAL_FIELD(consistency_weight),
      DEARI_STR_FIELD(dml_strategy),
      DEARI_REAL_FIELD(dml_margin),
      DEARI_REAL_FIELD(dml_alpha),
      DEARI_REAL_FIELD(dml_beta),
      DEARI_REAL_FIELD(dml_epsilon),
      DEARI_REAL_FIELD(dml_weight),
      DEARI_BOOL_FIELD(dml_printed_sign),
      DEARI_REAL_FIELD(prior_std),
      DEARI_REAL_FIELD(rho_init),
      DEARI_INT_FIELD(unfreeze_every),
      DEARI_INT_FIELD(open_window),
      DEARI_INT_FIELD(n_sim),
      DEARI_REAL_FIELD(mask_fraction),
      DEARI_REAL_FIELD(val_fraction),
      DEARI_REAL_FIELD(test_fraction),
      DEARI_INT_FIELD(folds),
      DEARI_INT_FIELD(batch_size),
      DEARI_INT_FIELD(epochs),
      DEARI_INT_FIELD(patience),
      DEARI_REAL_FIELD(learning_rate),
      DEARI_REAL_FIELD(clip_norm),
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); }},
  };
  return table;
}

#undef DEARI_STR_FIELD
#undef DEARI_INT_FIELD
#undef DEARI_REAL_FIELD
#undef DEARI_BOOL_FIELD

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void validate(const RunConfig& config) {
  static const std::vector<std::string> variants = {
      "brits",          "brits+dml",          "deari",          "deari+dml",
      "bayesian-brits", "bayesian-brits+dml", "bayesian-deari", "bayesian-deari+dml"};
  bool known = false;
  for (const auto& v : variants) known = known || v == config.variant;
  if (!known) throw std::invalid_argument("unknown variant: '" + config.variant + "'");
  if (config.cell != "gru" && config.cell != "lstm") {
    throw std::invalid_argument("cell must be gru or lstm, got '" + config.cell + "'");
  }
  parse_strategy(config.dml_strategy);
  if (config.layers < 1) throw std::invalid_argument("layers must be >= 1");
  if (config.hidden < 1) throw std::invalid_argument("hidden must be >= 1");
  if (config.heads < 1 || config.hidden % config.heads != 0) {
    throw std::invalid_argument("hidden must be divisible by heads");
  }
  if (config.encoder_depth < 1) throw std::invalid_argument("encoder_depth must be >= 1");
  if (config.dml_alpha <= 0 || config.dml_beta <= 0) {
    throw std::invalid_argument("dml_alpha and dml_beta must be positive");
  }
  if (config.mask_fraction < 0 || config.mask_fraction > 1) {
    throw std::invalid_argument("mask_fraction must be in [0,1]");
  }
  if (config.val_fraction < 0 || config.test_fraction < 0 ||
      config.val_fraction + config.test_fraction >= 1) {
    throw std::invalid_argument("val_fraction + test_fraction must be below 1");
  }
  if (config.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (config.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (config.learning_rate <= 0) throw std::invalid_argument("learning_rate must be positive");
  if (config.unfreeze_every < 1) throw std::invalid_argument("unfreeze_every must be >= 1");
  if (config.open_window < 1) throw std::invalid_argument("open_window must be >= 1");
  if (config.n_sim < 1) throw std::invalid_argument("n_sim must be >= 1");
  if (config.prior_std <= 0) throw std::invalid_argument("prior_std must be positive");
}

RunConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> entries;
  std::istringstream in(text);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    }
    entries[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto version = entries.find("config_version");
  if (version == entries.end() || version->second != "1") {
    throw std::invalid_argument("config requires config_version = 1");
  }
  entries.erase(version);
  RunConfig config = config_from_map(entries);
  validate(config);
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

std::string config_to_text(const RunConfig& config) {
  std::string out = "config_version = 1\n";
  for (const Field& f : fields()) {
    out += std::string(f.key) + " = " + f.get(config) + "\n";
  }
  return out;
}

std::map<std::string, std::string> config_to_map(const RunConfig& config) {
  std::map<std::string, std::string> out;
  for (const Field& f : fields()) out[f.key] = f.get(config);
  return out;
}

RunConfig config_from_map(const std::map<std::string, std::string>& entries) {
  RunConfig config;
  for (const auto& [key, value] : entries) {
    bool found = false;
    for (const Field& f : fields()) {
      if (key == f.key) {
        try {
          f.set(config, value);
        } catch (const std::exception& e) {
          throw std::invalid_argument("config key '" + key + "': " + e.what());
        }
        found = true;
        break;
      }
    }
    if (!found) throw std::invalid_argument("unknown config key: '" + key + "'");
  }
  return config;
}

}  // namespace deari
