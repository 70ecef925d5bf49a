// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "ddpolab/binary_io.hpp"
#include "ddpolab/error.hpp"

namespace ddpolab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("'" + s + "' is not a number");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("'" + s + "' is not a nonnegative integer");
  }
  return v;
}

int to_int(const std::string& s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("'" + s + "' is not an integer");
  return v;
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_u64(s)); }

bool to_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("'" + s + "' is not true or false");
}

std::vector<double> to_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(to_double(item));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

struct Field {
  const char* key;  // "section.name"
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define DDPOLAB_FIELD(KEY, MEMBER, PARSE, FORMAT)                                 \
  Field {                                                                       \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = PARSE(v); },       \
        [](const RunConfig& c) { return FORMAT(c.MEMBER); }                     \
  }

std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }
std::string fmt_int(int v) { return std::to_string(v); }
std::string same(const std::string& v) { return v; }
std::vector<std::size_t> to_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) out.push_back(to_size(item));
  return out;
}
std::string fmt_sizes(const std::vector<std::size_t>& v) { return fmt_list(v); }
std::string fmt_doubles(const std::vector<double>& v) { return fmt_list(v); }
std::string fmt_double(double v) { return fmt(v); }
std::string fmt_bool(bool v) { return fmt(v); }
std::string fmt_activation(Activation a) { return to_string(a); }
std::string fmt_domain(DataDomain d) { return to_string(d); }
std::string fmt_algorithm(Algorithm a) { return to_string(a); }
std::string fmt_advantage(AdvantageMode m) { return to_string(m); }
std::string fmt_reward(RewardKind k) { return to_string(k); }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      DDPOLAB_FIELD("run.seed", seed, to_u64, fmt_u64),
      DDPOLAB_FIELD("run.workers", workers, to_int, fmt_int),
      DDPOLAB_FIELD("run.out_dir", out_dir, same, same),
      DDPOLAB_FIELD("run.base_checkpoint", base_checkpoint, same, same),

      DDPOLAB_FIELD("model.hidden", hidden, to_sizes, fmt_sizes),
      DDPOLAB_FIELD("model.activation", activation, parse_activation, fmt_activation),

      DDPOLAB_FIELD("data.domain", domain, parse_domain, fmt_domain),
      DDPOLAB_FIELD("data.num_contexts", num_contexts, to_size, fmt_u64),

      DDPOLAB_FIELD("diffusion.steps", steps, to_int, fmt_int),
      DDPOLAB_FIELD("diffusion.beta_min", beta_min, to_double, fmt_double),
      DDPOLAB_FIELD("diffusion.beta_max", beta_max, to_double, fmt_double),
      DDPOLAB_FIELD("diffusion.guidance_weight", guidance.weight, to_double, fmt_double),
      DDPOLAB_FIELD("diffusion.cfg_training", guidance.cfg_training, to_bool, fmt_bool),
      DDPOLAB_FIELD("diffusion.uncond_mask_prob", guidance.uncond_mask_prob, to_double, fmt_double),

      DDPOLAB_FIELD("pretrain.steps", pretrain.steps, to_size, fmt_u64),
      DDPOLAB_FIELD("pretrain.batch_size", pretrain.batch_size, to_size, fmt_u64),
      DDPOLAB_FIELD("pretrain.lr", pretrain.adam.lr, to_double, fmt_double),
      DDPOLAB_FIELD("pretrain.weight_decay", pretrain.adam.weight_decay, to_double, fmt_double),
      DDPOLAB_FIELD("pretrain.grad_clip", pretrain.adam.grad_clip, to_double, fmt_double),

      DDPOLAB_FIELD("train.algorithm", train.algorithm, parse_algorithm, fmt_algorithm),
      DDPOLAB_FIELD("train.iterations", train.iterations, to_size, fmt_u64),
      DDPOLAB_FIELD("train.samples_per_iter", train.samples_per_iter, to_size, fmt_u64),
      DDPOLAB_FIELD("train.batch_size", train.batch_size, to_size, fmt_u64),
      DDPOLAB_FIELD("train.updates_per_iter", train.updates_per_iter, to_size, fmt_u64),
      DDPOLAB_FIELD("train.clip_range", train.clip_range, to_double, fmt_double),
      DDPOLAB_FIELD("train.beta_rwr", train.beta_rwr, to_double, fmt_double),
      DDPOLAB_FIELD("train.percentile", train.percentile, to_double, fmt_double),
      DDPOLAB_FIELD("train.lr", train.adam.lr, to_double, fmt_double),
      DDPOLAB_FIELD("train.weight_decay", train.adam.weight_decay, to_double, fmt_double),
      DDPOLAB_FIELD("train.adam_beta1", train.adam.beta1, to_double, fmt_double),
      DDPOLAB_FIELD("train.adam_beta2", train.adam.beta2, to_double, fmt_double),
      DDPOLAB_FIELD("train.adam_eps", train.adam.eps, to_double, fmt_double),
      DDPOLAB_FIELD("train.grad_clip", train.adam.grad_clip, to_double, fmt_double),
      DDPOLAB_FIELD("train.advantage", train.advantage, parse_advantage_mode, fmt_advantage),
      DDPOLAB_FIELD("train.reward_path_gradient", train.reward_path_gradient, to_bool, fmt_bool),

      DDPOLAB_FIELD("reward.kind", reward.kind, parse_reward_kind, fmt_reward),
      DDPOLAB_FIELD("reward.targets", reward.targets, to_doubles, fmt_doubles),
      DDPOLAB_FIELD("reward.bounds", reward.bounds, to_doubles, fmt_doubles),
      DDPOLAB_FIELD("reward.quality", reward.quality, to_int, fmt_int),
  };
  return table;
}

#undef DDPOLAB_FIELD

std::map<std::string, std::string> read_entries(const std::string& text) {
  std::map<std::string, std::string> entries;
  std::vector<std::string> problems;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto comment = raw.find_first_of("#;");
    const std::string line = trim(comment == std::string::npos ? raw : raw.substr(0, comment));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back("line " + std::to_string(line_no) + ": malformed section header");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(line_no) + ": expected key = value");
      continue;
    }
    if (section.empty()) {
      problems.push_back("line " + std::to_string(line_no) + ": key outside any section");
      continue;
    }
    const std::string key = section + "." + trim(line.substr(0, eq));
    if (!entries.emplace(key, trim(line.substr(eq + 1))).second) {
      problems.push_back("line " + std::to_string(line_no) + ": duplicate key " + key);
    }
  }
  if (!problems.empty()) {
    std::string msg = "config: ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw ConfigError(msg);
  }
  return entries;
}

}  // namespace

DenoiserSpec RunConfig::denoiser() const {
  DenoiserSpec spec;
  spec.data_dim = domain_dim(domain);
  spec.num_contexts = num_contexts;
  spec.hidden = hidden;
  spec.activation = activation;
  spec.steps = steps;
  return spec;
}

NoiseSchedule RunConfig::schedule() const { return make_schedule(steps, beta_min, beta_max); }

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  t.workers = workers;
  t.steps = steps;
  t.guidance_weight = guidance.weight;
  return t;
}

PretrainConfig RunConfig::pretrain_config() const {
  PretrainConfig p = pretrain;
  p.seed = seed;
  return p;
}

void RunConfig::validate() const {
  if (workers < 1) throw ConfigError("run.workers must be at least 1");
  if (num_contexts < 1) throw ConfigError("data.num_contexts must be at least 1");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("model.hidden widths must be positive");
  }
  if (steps < 1) throw ConfigError("diffusion.steps must be at least 1");
  if (!(pretrain.adam.lr > 0.0)) throw ConfigError("pretrain.lr must be positive");
  if (pretrain.batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
  guidance.validate();
  try {
    schedule();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("diffusion: ") + e.what());
  }
  train_config().validate();
  RewardSpec r = reward;
  r.num_contexts = num_contexts;
  r.data_dim = domain_dim(domain);
  make_reward(r);
}

RunConfig parse_config(const std::string& text, const ConfigOverrides& overrides) {
  auto entries = read_entries(text);
  for (const auto& [k, v] : overrides) entries[k] = v;

  RunConfig c;
  std::vector<std::string> problems;
  // Defaults that depend on other keys. Bad values are reported by the main pass.
  auto pre = [&](const char* key, auto apply) {
    const auto it = entries.find(key);
    if (it == entries.end()) return;
    try {
      apply(it->second);
    } catch (const ConfigError&) {
    }
  };
  Algorithm algorithm = c.train.algorithm;
  pre("train.algorithm", [&](const std::string& v) { algorithm = parse_algorithm(v); });
  pre("diffusion.steps", [&](const std::string& v) { c.steps = to_int(v); });
  c.train = TrainConfig::defaults(algorithm);
  if (c.steps >= 1) {
    c.beta_min = default_beta_min(c.steps);
    c.beta_max = default_beta_max(c.steps);
  }

  std::vector<std::string> unknown;
  for (const auto& [key, value] : entries) {
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (key == f.key) field = &f;
    }
    if (field == nullptr) {
      unknown.push_back(key);
      continue;
    }
    try {
      field->set(c, value);
    } catch (const ConfigError& e) {
      problems.push_back(key + ": " + e.what());
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    problems.insert(problems.begin(), msg);
  }
  if (!problems.empty()) {
    std::string msg;
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw ConfigError(msg);
  }
  c.reward.num_contexts = c.num_contexts;
  c.reward.data_dim = domain_dim(c.domain);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(std::string(bytes.begin(), bytes.end()), overrides);
}

std::string emit_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    const std::string value = f.get(config);
    out += key.substr(dot + 1) + (value.empty() ? " =\n" : " = " + value + "\n");
  }
  return out;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return emit_config(a) == emit_config(b); }

}  // namespace ddpolab
