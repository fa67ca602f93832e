#include "pmt/runconfig.hpp"

#include <fstream>
#include <iomanip>
#include <functional>
#include <map>
#include <sstream>

namespace pmt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

Index parse_index(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<Index>(n);
  } catch (const std::exception&) {
    throw ConfigError("invalid-config-value", key + "=" + v + " is not an integer");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("invalid-config-value", key + "=" + v + " is not an unsigned integer");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("invalid-config-value", key + "=" + v + " is not a number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid-config-value", key + "=" + v + " is not a boolean");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct KeySpec {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// One entry per documented key, in the order the effective config is echoed.
const std::vector<std::pair<std::string, KeySpec>>& key_table() {
  static const std::vector<std::pair<std::string, KeySpec>> table = {
      {"height",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.height = parse_index(k, v); },
        [](const RunConfig& c) { return std::to_string(c.model.height); }}},
      {"width",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.width = parse_index(k, v); },
        [](const RunConfig& c) { return std::to_string(c.model.width); }}},
      {"channels",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.channels = parse_index(k, v); },
        [](const RunConfig& c) { return std::to_string(c.model.channels); }}},
      {"base_channels",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.base_channels = parse_index(k, v); },
        [](const RunConfig& c) { return std::to_string(c.model.base_channels); }}},
      {"heads",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.heads = parse_index(k, v); },
        [](const RunConfig& c) { return std::to_string(c.model.heads); }}},
      {"fusion_swap_gate",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.fusion_swap_gate = parse_bool(k, v); },
        [](const RunConfig& c) { return c.model.fusion_swap_gate ? std::string("true") : std::string("false"); }}},
      {"gate_init",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.gate_init = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.model.gate_init); }}},
      {"enc_init_bound",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.enc_init_bound = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.model.enc_init_bound); }}},
      {"loss_weight_full",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.w_full = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.model.w_full); }}},
      {"loss_weight_half",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.w_half = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.model.w_half); }}},
      {"loss_weight_quarter",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.model.w_quarter = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.model.w_quarter); }}},
      {"batch_size",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_index(k, v); },
        [](const RunConfig& c) { return std::to_string(c.train.batch_size); }}},
      {"base_lr",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.base_lr = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.train.base_lr); }}},
      {"max_epochs",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.max_epochs = parse_index(k, v); },
        [](const RunConfig& c) { return std::to_string(c.train.max_epochs); }}},
      {"poly_power",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.poly_power = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.train.poly_power); }}},
      {"gate_freeze_epochs",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.gate_freeze_epochs = parse_index(k, v); },
        [](const RunConfig& c) { return std::to_string(c.train.gate_freeze_epochs); }}},
      {"adam_beta1",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam_beta1 = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.train.adam_beta1); }}},
      {"adam_beta2",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam_beta2 = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.train.adam_beta2); }}},
      {"adam_eps",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam_eps = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.train.adam_eps); }}},
      {"aug_shift",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.aug_shift = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.train.aug_shift); }}},
      {"aug_rotate_deg",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.aug_rotate_deg = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.train.aug_rotate_deg); }}},
      {"aug_flip_prob",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.aug_flip_prob = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.train.aug_flip_prob); }}},
      {"val_fraction",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.val_fraction = parse_double(k, v); },
        [](const RunConfig& c) { return fmt_double(c.train.val_fraction); }}},
      {"seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          const std::uint64_t s = parse_u64(k, v);
          c.train.seed = s;
          c.model.seed = s;
        },
        [](const RunConfig& c) { return std::to_string(c.train.seed); }}},
      {"split_seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.split_seed = parse_u64(k, v); },
        [](const RunConfig& c) { return std::to_string(c.train.split_seed); }}},
      {"precision",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.train.precision = v; },
        [](const RunConfig& c) { return c.train.precision; }}},
  };
  return table;
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [name, spec] : key_table()) {
    if (name == key) {
      spec.set(cfg, key, value);
      return;
    }
  }
  throw ConfigError("unknown-config-key", key);
}

RunConfig parse_run_config_text(const std::string& text) {
  RunConfig cfg = default_run_config();
  std::istringstream in(text);
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("invalid-config-line",
                        "line " + std::to_string(line_no) + " has no '=': " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("invalid-config-line", "line " + std::to_string(line_no));
    apply_config_key(cfg, key, value);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot-open-file", path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& [name, spec] : key_table()) os << name << "=" << spec.get(cfg) << "\n";
  return os.str();
}

std::string serialize_model_config(const PMTransConfig& cfg) {
  RunConfig rc;
  rc.model = cfg;
  std::ostringstream os;
  static const char* kModelKeys[] = {"height",         "width",
                                     "channels",       "base_channels",
                                     "heads",          "fusion_swap_gate",
                                     "gate_init",      "enc_init_bound",
                                     "loss_weight_full", "loss_weight_half",
                                     "loss_weight_quarter"};
  for (const auto& [name, spec] : key_table()) {
    for (const char* mk : kModelKeys)
      if (name == mk) os << name << "=" << spec.get(rc) << "\n";
  }
  os << "model_seed=" << cfg.seed << "\n";
  return os.str();
}

PMTransConfig parse_model_config(const std::string& text) {
  RunConfig rc;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("bad-config-entry", line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "model_seed") {
      rc.model.seed = parse_u64(key, value);
      continue;
    }
    apply_config_key(rc, key, value);
  }
  return rc.model;
}

}  // namespace pmt
