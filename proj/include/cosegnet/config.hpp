#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cosegnet/backbone.hpp"
#include "cosegnet/error.hpp"
#include "cosegnet/ops.hpp"
#include "cosegnet/spatial_modulator.hpp"

namespace coseg {

// Training and model configuration. Serialised as `key = value` lines; see
// README for the key list. Lines starting with '#' are comments.
struct TrainConfig {
  std::size_t group_size = 5;
  std::size_t groups_per_batch = 4;
  std::size_t image_size = 64;
  double learning_rate = 1e-4;
  std::size_t lr_halving_interval_steps = 25000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;
  double lambda_spa = 1.0;
  double lambda_sem = 1.0;
  double lambda_seg = 1.0;
  bool disable_spatial = false;
  bool disable_semantic = false;
  bool detach_spatial_loss = false;
  bool balance_swap = false;

  BackboneConfig backbone{};
  std::size_t sp_channels = 16;
  std::size_t head_channels = 16;
  std::size_t num_classes = 0;  // 0: taken from the dataset
  bool raw_second_moment = false;
  ops::ResampleMode fpn_upsample = ops::ResampleMode::bilinear;
  spatial::Orientation orientation = spatial::Orientation::minority_foreground;

  double spectral_tol = 1e-8;
  std::size_t spectral_max_iter = 10000;
  bool abort_on_nonconverged = false;

  std::size_t checkpoint_interval = 0;  // 0: only at the end

  void validate() const {
    if (group_size < 1 || groups_per_batch < 1) throw ConfigError("group_size and groups_per_batch must be >= 1");
    if (image_size < 32 || image_size % 32 != 0) throw ConfigError("image_size must be a positive multiple of 32");
    if (!(learning_rate > 0.0) || lr_halving_interval_steps < 1) throw ConfigError("learning rate settings must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_epsilon > 0.0)) {
      throw ConfigError("adam betas must lie in [0,1) and epsilon must be > 0");
    }
    if (lambda_spa < 0.0 || lambda_sem < 0.0 || lambda_seg < 0.0) throw ConfigError("loss weights must be nonnegative");
    if (sp_channels < 2) throw ConfigError("sp_channels must be >= 2");
    if (head_channels < 1) throw ConfigError("head_channels must be >= 1");
    if (!(spectral_tol > 0.0) || spectral_max_iter < 1) throw ConfigError("spectral solver settings must be positive");
    backbone.validate();
  }

  // Weights after applying the ablation switches.
  double effective_lambda_spa() const { return disable_spatial ? 0.0 : lambda_spa; }
  double effective_lambda_sem() const { return disable_semantic ? 0.0 : lambda_sem; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    std::size_t pos = 0;
    unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a nonnegative integer: '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': not a boolean: '" + v + "'");
}

inline std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

}  // namespace detail

// Applies one key=value assignment to `cfg`.
inline void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  auto u = [&] { return static_cast<std::size_t>(parse_uint(key, value)); };
  auto f = [&] { return parse_double(key, value); };
  auto b = [&] { return parse_bool(key, value); };
  if (key == "group_size") cfg.group_size = u();
  else if (key == "groups_per_batch") cfg.groups_per_batch = u();
  else if (key == "image_size") cfg.image_size = u();
  else if (key == "learning_rate") cfg.learning_rate = f();
  else if (key == "lr_halving_interval_steps") cfg.lr_halving_interval_steps = u();
  else if (key == "adam_beta1") cfg.adam_beta1 = f();
  else if (key == "adam_beta2") cfg.adam_beta2 = f();
  else if (key == "adam_epsilon") cfg.adam_epsilon = f();
  else if (key == "max_steps") cfg.max_steps = u();
  else if (key == "seed") cfg.seed = parse_uint(key, value);
  else if (key == "lambda_spa") cfg.lambda_spa = f();
  else if (key == "lambda_sem") cfg.lambda_sem = f();
  else if (key == "lambda_seg") cfg.lambda_seg = f();
  else if (key == "disable_spatial") cfg.disable_spatial = b();
  else if (key == "disable_semantic") cfg.disable_semantic = b();
  else if (key == "detach_spatial_loss") cfg.detach_spatial_loss = b();
  else if (key == "balance_swap") cfg.balance_swap = b();
  else if (key == "stage_channels") {
    std::stringstream ss(value);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
      if (i >= 4) throw ConfigError("stage_channels: expected 4 comma-separated values");
      cfg.backbone.stage_channels[i++] = static_cast<std::size_t>(parse_uint(key, trim(item)));
    }
    if (i != 4) throw ConfigError("stage_channels: expected 4 comma-separated values");
  } else if (key == "fused_channels") cfg.backbone.fused_channels = u();
  else if (key == "working_resolution") {
    cfg.backbone.working_h = cfg.backbone.working_w = u();
  } else if (key == "convs_per_stage") cfg.backbone.convs_per_stage = u();
  else if (key == "sp_channels") cfg.sp_channels = u();
  else if (key == "head_channels") cfg.head_channels = u();
  else if (key == "num_classes") cfg.num_classes = u();
  else if (key == "raw_second_moment") cfg.raw_second_moment = b();
  else if (key == "fpn_upsample") {
    if (value == "bilinear") cfg.fpn_upsample = ops::ResampleMode::bilinear;
    else if (value == "nearest") cfg.fpn_upsample = ops::ResampleMode::nearest;
    else throw ConfigError("fpn_upsample: expected bilinear or nearest, got '" + value + "'");
  } else if (key == "orientation") {
    if (value == "minority") cfg.orientation = spatial::Orientation::minority_foreground;
    else if (value == "majority") cfg.orientation = spatial::Orientation::majority_foreground;
    else throw ConfigError("orientation: expected minority or majority, got '" + value + "'");
  } else if (key == "spectral_tol") cfg.spectral_tol = f();
  else if (key == "spectral_max_iter") cfg.spectral_max_iter = u();
  else if (key == "abort_on_nonconverged") cfg.abort_on_nonconverged = b();
  else if (key == "checkpoint_interval") cfg.checkpoint_interval = u();
  else throw ConfigError("unknown config key '" + key + "'");
}

inline TrainConfig parse_config(const std::string& text, TrainConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_config_entry(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), cfg);
}

// Round-trips through parse_config exactly.
inline std::string to_text(const TrainConfig& c) {
  using detail::fmt_double;
  std::ostringstream os;
  auto line = [&](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
  auto flag = [](bool v) { return std::string(v ? "true" : "false"); };
  line("group_size", std::to_string(c.group_size));
  line("groups_per_batch", std::to_string(c.groups_per_batch));
  line("image_size", std::to_string(c.image_size));
  line("learning_rate", fmt_double(c.learning_rate));
  line("lr_halving_interval_steps", std::to_string(c.lr_halving_interval_steps));
  line("adam_beta1", fmt_double(c.adam_beta1));
  line("adam_beta2", fmt_double(c.adam_beta2));
  line("adam_epsilon", fmt_double(c.adam_epsilon));
  line("max_steps", std::to_string(c.max_steps));
  line("seed", std::to_string(c.seed));
  line("lambda_spa", fmt_double(c.lambda_spa));
  line("lambda_sem", fmt_double(c.lambda_sem));
  line("lambda_seg", fmt_double(c.lambda_seg));
  line("disable_spatial", flag(c.disable_spatial));
  line("disable_semantic", flag(c.disable_semantic));
  line("detach_spatial_loss", flag(c.detach_spatial_loss));
  line("balance_swap", flag(c.balance_swap));
  const auto& sc = c.backbone.stage_channels;
  line("stage_channels", std::to_string(sc[0]) + "," + std::to_string(sc[1]) + "," +
                             std::to_string(sc[2]) + "," + std::to_string(sc[3]));
  line("fused_channels", std::to_string(c.backbone.fused_channels));
  line("working_resolution", std::to_string(c.backbone.working_h));
  line("convs_per_stage", std::to_string(c.backbone.convs_per_stage));
  line("sp_channels", std::to_string(c.sp_channels));
  line("head_channels", std::to_string(c.head_channels));
  line("num_classes", std::to_string(c.num_classes));
  line("raw_second_moment", flag(c.raw_second_moment));
  line("fpn_upsample", c.fpn_upsample == ops::ResampleMode::bilinear ? "bilinear" : "nearest");
  line("orientation", c.orientation == spatial::Orientation::minority_foreground ? "minority" : "majority");
  line("spectral_tol", fmt_double(c.spectral_tol));
  line("spectral_max_iter", std::to_string(c.spectral_max_iter));
  line("abort_on_nonconverged", flag(c.abort_on_nonconverged));
  line("checkpoint_interval", std::to_string(c.checkpoint_interval));
  return os.str();
}

}  // namespace coseg
