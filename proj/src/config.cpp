#include "fmamba/config.hpp"

#include <cerrno>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace fmamba {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_real(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Real parse_real(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const Real r = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ValidationError(key + ": expected a number, got '" + v + "'");
  return r;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long r = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ValidationError(key + ": expected an integer, got '" + v + "'");
  return r;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (!v.empty() && v[0] == '-') throw ValidationError(key + ": expected a non-negative integer, got '" + v + "'");
  errno = 0;
  char* end = nullptr;
  const unsigned long long r = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ValidationError(key + ": expected an integer, got '" + v + "'");
  return r;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError(key + ": expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(static_cast<int>(parse_int(key, trim(cell))));
  return out;
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
};

#define FM_INT(expr)                                                                                \
  Field {                                                                                          \
    [](const TrainConfig& c) { return std::to_string(c.expr); },                                   \
        [](TrainConfig& c, const std::string& k, const std::string& v) {                           \
          c.expr = static_cast<decltype(c.expr)>(parse_int(k, v));                                 \
        }                                                                                          \
  }
#define FM_U64(expr)                                                                               \
  Field {                                                                                          \
    [](const TrainConfig& c) { return std::to_string(c.expr); },                                   \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.expr = parse_u64(k, v); } \
  }
#define FM_REAL(expr)                                                                              \
  Field {                                                                                          \
    [](const TrainConfig& c) { return fmt_real(c.expr); },                                         \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.expr = parse_real(k, v); } \
  }
#define FM_BOOL(expr)                                                                              \
  Field {                                                                                          \
    [](const TrainConfig& c) { return std::string(c.expr ? "true" : "false"); },                   \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.expr = parse_bool(k, v); } \
  }
#define FM_STR(expr)                                                                               \
  Field {                                                                                          \
    [](const TrainConfig& c) { return c.expr; },                                                   \
        [](TrainConfig& c, const std::string&, const std::string& v) { c.expr = v; }               \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"model.dims", FM_INT(model.dims)},
      {"model.in_channels", FM_INT(model.in_channels)},
      {"model.stem_channels", FM_INT(model.stem_channels)},
      {"model.latent_channels", FM_INT(model.latent_channels)},
      {"model.dgcb_blocks", FM_INT(model.dgcb_blocks)},
      {"model.dgcb_dilations",
       Field{[](const TrainConfig& c) {
               std::string s;
               for (std::size_t i = 0; i < c.model.dgcb_dilations.size(); ++i) {
                 if (i) s += ',';
                 s += std::to_string(c.model.dgcb_dilations[i]);
               }
               return s;
             },
             [](TrainConfig& c, const std::string& k, const std::string& v) {
               c.model.dgcb_dilations = parse_int_list(k, v);
             }}},
      {"model.k_mamba", FM_INT(model.k_mamba)},
      {"model.cmca_enabled", FM_BOOL(model.cmca_enabled)},
      {"model.scan_strategy",
       Field{[](const TrainConfig& c) { return std::string(strategy_name(c.model.scan_strategy)); },
             [](TrainConfig& c, const std::string&, const std::string& v) {
               c.model.scan_strategy = parse_strategy(v);
             }}},
      {"model.downsample_3d", FM_INT(model.downsample_3d)},
      {"model.decoder_layers", FM_INT(model.decoder_layers)},
      {"model.decoder_min_channels", FM_INT(model.decoder_min_channels)},
      {"model.cmca_reduction", FM_INT(model.cmca_reduction)},
      {"model.mamba_expand", FM_INT(model.mamba_expand)},
      {"model.mamba_d_state", FM_INT(model.mamba_d_state)},
      {"model.mamba_dconv", FM_INT(model.mamba_dconv)},
      {"model.triplane_reverse", FM_BOOL(model.triplane_reverse)},
      {"model.init_seed", FM_U64(model.init_seed)},
      {"loss.pixel", FM_REAL(loss.pixel)},
      {"loss.grad", FM_REAL(loss.grad)},
      {"loss.ssim", FM_REAL(loss.ssim)},
      {"optim.lr", FM_REAL(adam.lr)},
      {"optim.beta1", FM_REAL(adam.beta1)},
      {"optim.beta2", FM_REAL(adam.beta2)},
      {"optim.eps", FM_REAL(adam.eps)},
      {"train.batch_size", FM_INT(batch_size)},
      {"train.steps", FM_INT(steps)},
      {"train.seed", FM_U64(seed)},
      {"train.checkpoint_every", FM_INT(checkpoint_every)},
      {"train.checkpoint_path", FM_STR(checkpoint_path)},
      {"train.log_path", FM_STR(log_path)},
      {"data.source",
       Field{[](const TrainConfig& c) {
               return std::string(c.data.source == DataSource::Synthetic ? "synthetic" : "manifest");
             },
             [](TrainConfig& c, const std::string& k, const std::string& v) {
               if (v == "synthetic") {
                 c.data.source = DataSource::Synthetic;
               } else if (v == "manifest") {
                 c.data.source = DataSource::Manifest;
               } else {
                 throw ValidationError(k + ": expected synthetic or manifest, got '" + v + "'");
               }
             }}},
      {"data.manifest", FM_STR(data.manifest)},
      {"data.synth_count", FM_INT(data.synth_count)},
      {"data.synth_size", FM_INT(data.synth_size)},
      {"data.synth_seed", FM_U64(data.synth_seed)},
      {"data.split_train", FM_INT(data.split.train)},
      {"data.split_validation", FM_INT(data.split.validation)},
      {"data.split_test", FM_INT(data.split.test)},
      {"data.split_seed", FM_U64(data.split_seed)},
  };
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  if (!(adam.lr >= 0.0)) throw ValidationError("optim.lr must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ValidationError("optim.beta1 must be in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ValidationError("optim.beta2 must be in [0, 1)");
  if (!(adam.eps > 0.0)) throw ValidationError("optim.eps must be > 0");
  if (batch_size < 0) throw ValidationError("train.batch_size must be >= 1 (or 0 for the default)");
  if (steps < 1) throw ValidationError("train.steps must be >= 1");
  if (checkpoint_every < 0) throw ValidationError("train.checkpoint_every must be >= 0");
  if (data.source == DataSource::Manifest && data.manifest.empty()) {
    throw ValidationError("data.manifest is required when data.source = manifest");
  }
  if (data.source == DataSource::Synthetic) {
    if (data.synth_count < 1) throw ValidationError("data.synth_count must be >= 1");
    if (data.synth_size < 4) throw ValidationError("data.synth_size must be >= 4");
  }
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw ValidationError("config key '" + key + "' given twice");
    kv[key] = trim(t.substr(eq + 1));
  }
  return kv;
}

TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig cfg;
  const auto& table = fields();
  for (const auto& [k, v] : kv) {
    const auto it = table.find(k);
    if (it == table.end()) throw ValidationError("unknown config key '" + k + "'");
    it->second.set(cfg, k, v);
  }
  if (cfg.model.dims == 3 && !kv.count("model.scan_strategy")) cfg.model.scan_strategy = ScanStrategy::Triplane;
  cfg.validate();
  return cfg;
}

KeyValues to_key_values(const TrainConfig& cfg) {
  KeyValues kv;
  for (const auto& [k, f] : fields()) kv[k] = f.get(cfg);
  return kv;
}

std::string to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : to_key_values(cfg)) out += k + " = " + v + "\n";
  return out;
}

TrainConfig parse_train_config(const std::string& text) { return train_config_from(parse_key_values(text)); }

TrainConfig load_train_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  TrainConfig cfg = parse_train_config(ss.str());
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).string();
  };
  resolve(cfg.data.manifest);
  resolve(cfg.checkpoint_path);
  resolve(cfg.log_path);
  return cfg;
}

void save_train_config(const std::string& path, const TrainConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << to_text(cfg);
}

}  // namespace fmamba
