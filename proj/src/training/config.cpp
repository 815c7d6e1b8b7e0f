#include "g2s/training/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

namespace g2s {

void LossWeights::validate() const {
  if (!(lambda_dur >= 0.0) || !(lambda_al >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

void TrainConfig::validate() const {
  if (version != kVersion) throw ConfigError("unsupported config version " + std::to_string(version));
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
  weights.validate();
  if (corpus.empty() && corpus_size < 2) throw ConfigError("corpus_size must be at least 2");
  if (!(jitter_std >= 0.0)) throw ConfigError("jitter_std must be non-negative");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must lie in (0, 1)");
  if (eval_every < 0) throw ConfigError("eval_every must be non-negative");
  fusion_config().validate();
  decoder_config().validate();
}

FusionConfig TrainConfig::fusion_config() const {
  FusionConfig f;
  f.dim = d_model;
  f.n_mels = n_mels;
  f.joints = joints;
  f.leaky_slope = leaky_slope;
  f.xattn_heads = heads;
  f.perceiver.latents = latents;
  f.perceiver.blocks = perceiver_blocks;
  f.perceiver.heads = heads;
  MoESpec spec;
  spec.config.num_experts = hierarchical ? experts_per_group : experts;
  spec.config.top_k = top_k;
  spec.config.expert_layers = expert_layers;
  spec.config.hidden_dim = expert_hidden;
  spec.config.capacity_factor = capacity_factor;
  spec.config.fallback_prob = fallback_prob;
  spec.config.lb_weight = lb_weight;
  spec.config.leaky_slope = leaky_slope;
  spec.hierarchical = hierarchical;
  spec.groups = groups;
  spec.experts_per_group = experts_per_group;
  f.speech_moe = spec;
  f.motion_moe = spec;
  f.style_moe = spec;
  f.mode = fusion;
  return f;
}

DecoderConfig TrainConfig::decoder_config() const {
  DecoderConfig d;
  d.layers = decoder_layers;
  d.dim = d_model;
  d.heads = heads;
  d.max_steps = decoder_steps;
  d.mel_dim = n_mels;
  d.vocab_size = vocab_size;
  d.temperature = temperature;
  d.cond_drop_prob = cond_drop_prob;
  d.reduction = reduction;
  d.leaky_slope = leaky_slope;
  return d;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One binding per key: a parser into the config and a printer out of it.
struct KeyBinding {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> parse;
  std::function<std::string(const TrainConfig&)> print;
};

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw InputError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

template <typename T, typename Field>
KeyBinding number_key(const char* key, Field field) {
  return {key,
          [key, field](TrainConfig& c, const std::string& v) { c.*field = parse_number<T>(key, v); },
          [field](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(static_cast<double>(c.*field));
            } else {
              return std::to_string(c.*field);
            }
          }};
}

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> b = [] {
    using C = TrainConfig;
    std::vector<KeyBinding> v;
    v.push_back(number_key<int>("version", &C::version));
    v.push_back(number_key<std::uint64_t>("seed", &C::seed));
    v.push_back(number_key<int>("steps", &C::steps));
    v.push_back(number_key<int>("batch_size", &C::batch_size));
    v.push_back(number_key<double>("lr", &C::lr));
    v.push_back({"lambda_dur",
                 [](C& c, const std::string& s) { c.weights.lambda_dur = parse_number<double>("lambda_dur", s); },
                 [](const C& c) { return fmt_double(c.weights.lambda_dur); }});
    v.push_back({"lambda_al",
                 [](C& c, const std::string& s) { c.weights.lambda_al = parse_number<double>("lambda_al", s); },
                 [](const C& c) { return fmt_double(c.weights.lambda_al); }});
    v.push_back({"fusion",
                 [](C& c, const std::string& s) {
                   try {
                     c.fusion = parse_fusion_mode(s);
                   } catch (const ConfigError&) {
                     throw InputError("config key 'fusion': expected moe, xattn or concat, got '" + s + "'");
                   }
                 },
                 [](const C& c) { return std::string(fusion_mode_name(c.fusion)); }});
    v.push_back(number_key<int>("corpus_size", &C::corpus_size));
    v.push_back(number_key<double>("jitter_std", &C::jitter_std));
    v.push_back(number_key<double>("split_ratio", &C::split_ratio));
    v.push_back({"corpus", [](C& c, const std::string& s) { c.corpus = s; }, [](const C& c) { return c.corpus; }});
    v.push_back(number_key<Index>("d_model", &C::d_model));
    v.push_back(number_key<int>("heads", &C::heads));
    v.push_back(number_key<int>("decoder_layers", &C::decoder_layers));
    v.push_back(number_key<int>("decoder_steps", &C::decoder_steps));
    v.push_back(number_key<int>("reduction", &C::reduction));
    v.push_back(number_key<int>("vocab_size", &C::vocab_size));
    v.push_back(number_key<int>("joints", &C::joints));
    v.push_back(number_key<Index>("n_mels", &C::n_mels));
    v.push_back(number_key<int>("latents", &C::latents));
    v.push_back(number_key<int>("perceiver_blocks", &C::perceiver_blocks));
    v.push_back(number_key<int>("experts", &C::experts));
    v.push_back(number_key<int>("top_k", &C::top_k));
    v.push_back(number_key<int>("expert_layers", &C::expert_layers));
    v.push_back(number_key<int>("expert_hidden", &C::expert_hidden));
    v.push_back({"hierarchical",
                 [](C& c, const std::string& s) {
                   if (s != "true" && s != "false") {
                     throw InputError("config key 'hierarchical': expected true or false, got '" + s + "'");
                   }
                   c.hierarchical = s == "true";
                 },
                 [](const C& c) { return std::string(c.hierarchical ? "true" : "false"); }});
    v.push_back(number_key<int>("groups", &C::groups));
    v.push_back(number_key<int>("experts_per_group", &C::experts_per_group));
    v.push_back({"capacity_factor",
                 [](C& c, const std::string& s) {
                   c.capacity_factor =
                       s == "inf" ? MoEConfig::kUnlimitedCapacity : parse_number<double>("capacity_factor", s);
                 },
                 [](const C& c) { return std::isinf(c.capacity_factor) ? std::string("inf") : fmt_double(c.capacity_factor); }});
    v.push_back(number_key<double>("fallback_prob", &C::fallback_prob));
    v.push_back(number_key<double>("lb_weight", &C::lb_weight));
    v.push_back(number_key<double>("cond_drop_prob", &C::cond_drop_prob));
    v.push_back(number_key<double>("temperature", &C::temperature));
    v.push_back(number_key<double>("leaky_slope", &C::leaky_slope));
    v.push_back(number_key<int>("eval_every", &C::eval_every));
    return v;
  }();
  return b;
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!values.emplace(key, trim(line.substr(eq + 1))).second) throw InputError("config key '" + key + "' repeated");
  }
  for (const char* key : kRequiredConfigKeys) {
    if (!values.count(key)) throw InputError("config is missing required key '" + std::string(key) + "'");
  }
  TrainConfig cfg;
  for (const auto& b : bindings()) {
    const auto it = values.find(b.key);
    if (it == values.end()) continue;
    b.parse(cfg, it->second);
    values.erase(it);
  }
  if (!values.empty()) throw InputError("config has unknown key '" + values.begin()->first + "'");
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw InputError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& cfg) {
  std::string out = "# g2sk training config\n";
  for (const auto& b : bindings()) out += std::string(b.key) + " = " + b.print(cfg) + "\n";
  return out;
}

double total_loss(const LossComponents& c, const LossWeights& w, double aux) {
  const std::pair<const char*, double> parts[] = {{"L_text", c.text}, {"L_mel", c.mel}, {"L_dur", c.dur},
                                                  {"L_AL", c.al},     {"aux", aux}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite loss component ") + name);
  }
  return c.text + c.mel + w.lambda_dur * c.dur + w.lambda_al * c.al + aux;
}

}  // namespace g2s
