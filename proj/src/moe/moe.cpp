#include "g2s/moe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace g2s {

void MoEConfig::validate() const {
  if (num_experts < 1) throw ConfigError("MoE needs at least one expert");
  if (top_k < 1 || top_k > num_experts) {
    throw ConfigError("MoE top_k=" + std::to_string(top_k) + " must lie in [1, K=" + std::to_string(num_experts) + "]");
  }
  if (expert_layers < 1) throw ConfigError("expert_layers must be >= 1");
  if (!(capacity_factor > 0.0)) throw ConfigError("capacity_factor must be positive");
  if (!(fallback_prob >= 0.0 && fallback_prob <= 1.0)) throw ConfigError("fallback_prob must lie in [0, 1]");
  if (lb_weight < 0.0) throw ConfigError("lb_weight must be non-negative");
}

// --- Expert ---------------------------------------------------------------

Expert::Expert(Index dim, Index hidden, int layers, double slope, Rng& rng, const std::string& name)
    : slope_(slope) {
  for (int l = 0; l < layers; ++l) {
    const Index in = l == 0 ? dim : hidden;
    const Index out = l == layers - 1 ? dim : hidden;
    layers_.emplace_back(in, out, rng, name + ".fc" + std::to_string(l));
  }
}

DTensor Expert::operator()(const DTensor& x) const {
  if (kind_ == ExpertKind::kIdentity) return x;
  DTensor h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = layers_[l](h);
    if (l + 1 < layers_.size()) h = leaky_relu(h, slope_);
  }
  return h;
}

void Expert::collect(DParameterRefs& out) {
  for (auto& l : layers_) l.collect(out);
}

// --- Routing cache ----------------------------------------------------------

const RoutingTrace& RoutingCache::next() {
  if (cursor_ >= traces_.size()) throw ContractError("routing replay ran past the recorded traces");
  return traces_[cursor_++];
}

// --- Layer ------------------------------------------------------------------

MoELayer::MoELayer(Index dim, const MoEConfig& config, Rng& rng, const std::string& name) : config_(config) {
  config_.validate();
  gate_ = Linear<double>(dim, config_.num_experts, rng, name + ".gate");
  const Index hidden = config_.hidden_dim > 0 ? config_.hidden_dim : 4 * dim;
  for (int i = 0; i < config_.num_experts; ++i) {
    experts_.emplace_back(dim, hidden, config_.expert_layers, config_.leaky_slope, rng,
                          name + ".expert" + std::to_string(i));
  }
}

void MoELayer::set_expert_kind(ExpertKind k) {
  for (auto& e : experts_) e.set_kind(k);
}

void MoELayer::collect(DParameterRefs& out) {
  gate_.collect(out);
  for (auto& e : experts_) e.collect(out);
}

// --- Routing ----------------------------------------------------------------

RoutingTrace route_tokens(const MatrixD& gate_probs, const MoEConfig& config, std::uint64_t stream_seed,
                          bool training, const RouterOptions& options) {
  config.validate();
  const int K = config.num_experts;
  if (gate_probs.cols() != K) throw ShapeError("route_tokens: gate width != num_experts");
  const int k = config.top_k;
  RoutingTrace trace;
  trace.num_experts = K;
  trace.top_k = k;
  trace.load.assign(static_cast<std::size_t>(K), 0);
  trace.tokens.resize(static_cast<std::size_t>(gate_probs.rows()));

  std::vector<int> order(static_cast<std::size_t>(K));
  for (Index t = 0; t < gate_probs.rows(); ++t) {
    const auto p = gate_probs.row(t);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&p](int a, int b) { return p(a) > p(b); });

    auto& route = trace.tokens[static_cast<std::size_t>(t)];
    route.experts.assign(order.begin(), order.begin() + (k - 1));

    int last = order[static_cast<std::size_t>(k - 1)];
    if (training && config.fallback_prob > 0.0 && k < K) {
      Rng rng(mix_seed(stream_seed ^ mix_seed(static_cast<std::uint64_t>(t))));
      if (rng.uniform() < config.fallback_prob) {
        double mass = 0.0;
        for (int j = k - 1; j < K; ++j) mass += p(order[static_cast<std::size_t>(j)]);
        const double u = rng.uniform();
        if (mass > 0.0) {
          double acc = 0.0;
          for (int j = k - 1; j < K; ++j) {
            last = order[static_cast<std::size_t>(j)];
            acc += p(last) / mass;
            if (u < acc) break;
          }
        } else {
          last = order[static_cast<std::size_t>(k - 1 + static_cast<int>(u * (K - k + 1)))];
        }
      }
    }
    route.experts.push_back(last);

    double norm = 0.0;
    for (int e : route.experts) norm += p(e);
    for (int e : route.experts) {
      route.weights.push_back(options.renormalize ? p(e) / norm : p(e));
      trace.load[static_cast<std::size_t>(e)] += 1;
    }
  }
  return trace;
}

RoutingTrace gate_route(const MatrixD& x, const MoELayer& layer, Rng& rng, bool training) {
  MatrixD logits = (x * layer.gate().weight.value).rowwise() + layer.gate().bias.value.row(0);
  MatrixD probs(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    probs.row(r) = (logits.row(r).array() - logits.row(r).maxCoeff()).exp();
    probs.row(r) /= probs.row(r).sum();
  }
  return route_tokens(probs, layer.config(), rng.next_u64(), training);
}

double expert_capacity(const MoEConfig& config, Index tokens) {
  if (std::isinf(config.capacity_factor)) return MoEConfig::kUnlimitedCapacity;
  return std::ceil(config.capacity_factor * static_cast<double>(tokens) * config.top_k / config.num_experts);
}

void apply_capacity(RoutingTrace& trace, double capacity) {
  trace.capacity = capacity;
  trace.load.assign(static_cast<std::size_t>(trace.num_experts), 0);
  trace.dropped = 0;
  for (auto& route : trace.tokens) {
    std::vector<int> kept;
    std::vector<double> kept_w;
    for (std::size_t s = 0; s < route.experts.size(); ++s) {
      const int e = route.experts[s];
      auto& load = trace.load[static_cast<std::size_t>(e)];
      if (static_cast<double>(load) < capacity) {
        ++load;
        kept.push_back(e);
        kept_w.push_back(route.weights[s]);
      } else {
        route.dropped.push_back(e);
        ++trace.dropped;
      }
    }
    if (kept.empty()) {
      route.passthrough = true;
    } else if (kept.size() < route.experts.size()) {
      const double norm = std::accumulate(kept_w.begin(), kept_w.end(), 0.0);
      for (auto& w : kept_w) w /= norm;
    }
    route.experts = std::move(kept);
    route.weights = std::move(kept_w);
  }
}

namespace {

// Runs the experts of `experts` over their assigned tokens and combines
// them with the weights in column i of `weights`.
DTensor combine_experts(const DTensor& x, const DTensor& weights, const RoutingTrace& trace,
                        const std::vector<Expert>* experts, const std::vector<MoELayer>* groups,
                        const ForwardContext& ctx, MoEOutput& out) {
  auto& tape = x.tape();
  const Index T = x.rows();
  const int K = trace.num_experts;
  std::vector<std::vector<Index>> tokens(static_cast<std::size_t>(K));
  for (Index t = 0; t < T; ++t) {
    for (int e : trace.tokens[static_cast<std::size_t>(t)].experts) tokens[static_cast<std::size_t>(e)].push_back(t);
  }
  DTensor y = tape.constant(MatrixD::Zero(T, x.cols()));
  for (int e = 0; e < K; ++e) {
    const auto& idx = tokens[static_cast<std::size_t>(e)];
    if (groups != nullptr) out.inner.emplace_back();
    if (idx.empty()) continue;
    const auto xe = gather_rows(x, std::span<const Index>(idx));
    DTensor ye;
    if (experts != nullptr) {
      ye = (*experts)[static_cast<std::size_t>(e)](xe);
    } else {
      auto inner = moe_forward(xe, (*groups)[static_cast<std::size_t>(e)], ctx);
      ye = inner.y;
      out.aux_loss = out.aux_loss + inner.aux_loss;
      out.inner.back() = std::move(inner.trace);
    }
    const auto we = gather_rows(slice_cols(weights, e, 1), std::span<const Index>(idx));
    y = y + scatter_rows(scale_rows(ye, we), std::span<const Index>(idx), T);
  }
  return y;
}

struct GateResult {
  DTensor logits;
  DTensor probs;
  RoutingTrace trace;
};

GateResult run_gate(const DTensor& x, const Linear<double>& gate, const MoEConfig& cfg, const ForwardContext& ctx) {
  GateResult g;
  g.logits = gate(x);
  g.probs = softmax_rows(g.logits);
  // Always consume one draw so record and replay passes stay in step.
  const std::uint64_t seed = ctx.rng != nullptr ? ctx.rng->next_u64() : 0;
  if (ctx.routing != nullptr && ctx.routing->mode() == RoutingCache::Mode::kReplay) {
    g.trace = ctx.routing->next();
    if (static_cast<Index>(g.trace.size()) != x.rows()) throw ContractError("replayed routing has wrong token count");
  } else {
    g.trace = route_tokens(g.probs.value(), cfg, seed, ctx.training, ctx.router);
    apply_capacity(g.trace, expert_capacity(cfg, x.rows()));
    if (ctx.routing != nullptr && ctx.routing->mode() == RoutingCache::Mode::kRecord) ctx.routing->push(g.trace);
  }
  return g;
}

DTensor selection_weights(const GateResult& g, bool renormalize) {
  auto& tape = g.logits.tape();
  const Index T = g.logits.rows(), K = g.logits.cols();
  if (!renormalize) {
    MatrixD keep = MatrixD::Zero(T, K);
    for (Index t = 0; t < T; ++t) {
      for (int e : g.trace.tokens[static_cast<std::size_t>(t)].experts) keep(t, e) = 1.0;
    }
    return hadamard(g.probs, tape.constant(std::move(keep)));
  }
  MatrixD mask = MatrixD::Constant(T, K, -std::numeric_limits<double>::infinity());
  for (Index t = 0; t < T; ++t) {
    const auto& route = g.trace.tokens[static_cast<std::size_t>(t)];
    if (route.passthrough) {
      mask.row(t).setZero();
      continue;
    }
    for (int e : route.experts) mask(t, e) = 0.0;
  }
  return softmax_rows(g.logits + tape.constant(std::move(mask)));
}

// lb_weight * K * sum_i f_i * P_i, with f_i the fraction of routing slots
// assigned to expert i before capacity and P_i the mean gate probability.
DTensor balance_loss(const GateResult& g, const MoEConfig& cfg) {
  auto& tape = g.logits.tape();
  const Index T = g.logits.rows(), K = g.logits.cols();
  MatrixD frac = MatrixD::Zero(K, 1);
  for (const auto& route : g.trace.tokens) {
    for (int e : route.experts) frac(e, 0) += 1.0;
    for (int e : route.dropped) frac(e, 0) += 1.0;
  }
  frac /= static_cast<double>(T * cfg.top_k);
  return (cfg.lb_weight * static_cast<double>(K)) * matmul(mean_rows(g.probs), tape.constant(std::move(frac)));
}

void fill_weights(RoutingTrace& trace, const MatrixD& w) {
  for (std::size_t t = 0; t < trace.tokens.size(); ++t) {
    auto& route = trace.tokens[t];
    route.weights.clear();
    for (int e : route.experts) route.weights.push_back(w(static_cast<Index>(t), e));
  }
}

}  // namespace

MoEOutput moe_forward(const DTensor& x, const MoELayer& layer, const ForwardContext& ctx) {
  if (x.cols() != layer.dim()) throw ShapeError("moe_forward: input width != layer width");
  auto& tape = x.tape();
  const auto& cfg = layer.config();
  auto g = run_gate(x, layer.gate(), cfg, ctx);
  const auto weights = selection_weights(g, ctx.router.renormalize);

  MoEOutput out;
  out.aux_loss = balance_loss(g, cfg);
  out.y = combine_experts(x, weights, g.trace, &layer.experts(), nullptr, ctx, out);

  MatrixD pass = MatrixD::Zero(x.rows(), 1);
  bool any_pass = false;
  for (std::size_t t = 0; t < g.trace.tokens.size(); ++t) {
    if (g.trace.tokens[t].passthrough) {
      pass(static_cast<Index>(t), 0) = 1.0;
      any_pass = true;
    }
  }
  if (any_pass) out.y = out.y + scale_rows(x, tape.constant(std::move(pass)));

  fill_weights(g.trace, weights.value());
  g.trace.aux_loss = out.aux_loss.item();
  out.trace = std::move(g.trace);
  return out;
}

LoadStats load_balance_stats(const RoutingTrace& trace) {
  LoadStats s;
  if (trace.tokens.empty()) return s;
  s.counts.assign(static_cast<std::size_t>(trace.num_experts), 0);
  for (const auto& route : trace.tokens) {
    for (int e : route.experts) s.counts[static_cast<std::size_t>(e)] += 1;
  }
  const double n = static_cast<double>(s.counts.size());
  const double mean = std::accumulate(s.counts.begin(), s.counts.end(), 0.0) / n;
  if (mean == 0.0) return s;
  double var = 0.0;
  for (int c : s.counts) var += (c - mean) * (c - mean);
  s.cv = std::sqrt(var / n) / mean;
  return s;
}

// --- Hierarchical -----------------------------------------------------------

HierarchicalMoE::HierarchicalMoE(Index dim, int groups, int experts_per_group, const MoEConfig& inner, Rng& rng,
                                 const std::string& name) {
  if (groups < 1 || experts_per_group < 1) throw ConfigError("hierarchical MoE needs >= 1 group and expert");
  outer_gate_ = Linear<double>(dim, groups, rng, name + ".outer_gate");
  outer_top_k_ = std::min(2, groups);
  MoEConfig cfg = inner;
  cfg.num_experts = experts_per_group;
  cfg.top_k = std::min(inner.top_k, experts_per_group);
  for (int g = 0; g < groups; ++g) groups_.emplace_back(dim, cfg, rng, name + ".group" + std::to_string(g));
}

void HierarchicalMoE::set_expert_kind(ExpertKind k) {
  for (auto& g : groups_) g.set_expert_kind(k);
}

void HierarchicalMoE::collect(DParameterRefs& out) {
  outer_gate_.collect(out);
  for (auto& g : groups_) g.collect(out);
}

MoEOutput hmoe_forward(const DTensor& x, const HierarchicalMoE& hmoe, const ForwardContext& ctx) {
  if (x.cols() != hmoe.dim()) throw ShapeError("hmoe_forward: input width != layer width");
  MoEConfig outer;
  outer.num_experts = static_cast<int>(hmoe.groups().size());
  outer.top_k = hmoe.outer_top_k();
  outer.fallback_prob = 0.0;
  outer.capacity_factor = MoEConfig::kUnlimitedCapacity;
  outer.lb_weight = hmoe.groups().front().config().lb_weight;

  auto g = run_gate(x, hmoe.outer_gate(), outer, ctx);
  const auto weights = selection_weights(g, ctx.router.renormalize);
  MoEOutput out;
  out.aux_loss = balance_loss(g, outer);
  out.y = combine_experts(x, weights, g.trace, nullptr, &hmoe.groups(), ctx, out);
  fill_weights(g.trace, weights.value());
  g.trace.aux_loss = out.aux_loss.item();
  out.trace = std::move(g.trace);
  return out;
}

// --- StyleMoE ---------------------------------------------------------------

MoEOutput StyleMoE::operator()(const DTensor& x, const ForwardContext& ctx) const {
  if (const auto* flat = std::get_if<MoELayer>(&impl_)) return moe_forward(x, *flat, ctx);
  return hmoe_forward(x, std::get<HierarchicalMoE>(impl_), ctx);
}

void StyleMoE::set_expert_kind(ExpertKind k) {
  std::visit([k](auto& m) { m.set_expert_kind(k); }, impl_);
}

void StyleMoE::collect(DParameterRefs& out) {
  std::visit([&out](auto& m) { m.collect(out); }, impl_);
}

}  // namespace g2s
