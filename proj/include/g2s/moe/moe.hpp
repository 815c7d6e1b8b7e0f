#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "g2s/core/layers.hpp"
#include "g2s/core/rng.hpp"

namespace g2s {

struct MoEConfig {
  int num_experts = 8;
  int top_k = 2;
  int expert_layers = 4;
  int hidden_dim = 0;  // 0 selects 4 * d
  double capacity_factor = 1.25;
  double fallback_prob = 0.5;
  double lb_weight = 0.01;
  double leaky_slope = 0.01;

  static constexpr double kUnlimitedCapacity = std::numeric_limits<double>::infinity();

  void validate() const;
};

enum class ExpertKind { kFeedForward, kIdentity };

/// Feedforward stack d -> h -> ... -> h -> d with LeakyReLU between layers.
class Expert {
 public:
  Expert() = default;
  Expert(Index dim, Index hidden, int layers, double slope, Rng& rng, const std::string& name);

  DTensor operator()(const DTensor& x) const;

  ExpertKind kind() const { return kind_; }
  void set_kind(ExpertKind k) { kind_ = k; }
  std::vector<Linear<double>>& layers() { return layers_; }
  const std::vector<Linear<double>>& layers() const { return layers_; }
  void collect(DParameterRefs& out);

 private:
  std::vector<Linear<double>> layers_;
  double slope_ = 0.01;
  ExpertKind kind_ = ExpertKind::kFeedForward;
};

struct TokenRoute {
  std::vector<int> experts;   // surviving selections, routing order
  std::vector<double> weights;  // renormalised over `experts`
  std::vector<int> dropped;   // selections removed by the capacity limit
  bool passthrough = false;   // every selection dropped: y = x
};

struct RoutingTrace {
  int num_experts = 0;
  int top_k = 0;
  double capacity = MoEConfig::kUnlimitedCapacity;  // per-expert token budget
  std::vector<TokenRoute> tokens;
  std::vector<int> load;   // surviving assignments per expert
  int dropped = 0;
  double aux_loss = 0.0;

  std::size_t size() const { return tokens.size(); }
};

// Test hook for mutation testing: disabling renormalisation leaves the raw
// gate probabilities on the selected experts.
struct RouterOptions {
  bool renormalize = true;
};

/// Records routing decisions on the first pass and replays them on later
/// passes, so finite-difference probes see a fixed expert assignment.
class RoutingCache {
 public:
  enum class Mode { kOff, kRecord, kReplay };

  void record() {
    mode_ = Mode::kRecord;
    traces_.clear();
    cursor_ = 0;
  }
  void replay() {
    mode_ = Mode::kReplay;
    cursor_ = 0;
  }
  Mode mode() const { return mode_; }

  void push(const RoutingTrace& t) { traces_.push_back(t); }
  const RoutingTrace& next();

 private:
  Mode mode_ = Mode::kOff;
  std::vector<RoutingTrace> traces_;
  std::size_t cursor_ = 0;
};

struct ForwardContext {
  Rng* rng = nullptr;
  bool training = false;
  RoutingCache* routing = nullptr;
  RouterOptions router;
};

class MoELayer {
 public:
  MoELayer() = default;
  MoELayer(Index dim, const MoEConfig& config, Rng& rng, const std::string& name);

  const MoEConfig& config() const { return config_; }
  Index dim() const { return gate_.in_dim(); }
  Linear<double>& gate() { return gate_; }
  const Linear<double>& gate() const { return gate_; }
  std::vector<Expert>& experts() { return experts_; }
  const std::vector<Expert>& experts() const { return experts_; }
  void set_expert_kind(ExpertKind k);
  void collect(DParameterRefs& out);

 private:
  MoEConfig config_;
  Linear<double> gate_;
  std::vector<Expert> experts_;
};

struct MoEOutput {
  DTensor y;
  DTensor aux_loss;  // 1 x 1
  RoutingTrace trace;
  std::vector<RoutingTrace> inner;  // hierarchical only, one per group
};

/// Top-k selection from gate probabilities. The first top_k - 1 slots are the
/// highest-probability experts; the final slot is, with probability
/// fallback_prob while training, drawn from the remaining experts in
/// proportion to their gate probability, otherwise the next-highest expert.
/// Weights are renormalised over the selection. No capacity limit applied.
RoutingTrace route_tokens(const MatrixD& gate_probs, const MoEConfig& config, std::uint64_t stream_seed,
                          bool training, const RouterOptions& options = {});

RoutingTrace gate_route(const MatrixD& x, const MoELayer& layer, Rng& rng, bool training);

// Capacity per expert: ceil(capacity_factor * T * top_k / K).
double expert_capacity(const MoEConfig& config, Index tokens);

/// Removes selections beyond each expert's capacity in token order, spreads
/// the dropped weight over surviving selections and marks tokens with no
/// survivors as passthrough.
void apply_capacity(RoutingTrace& trace, double capacity);

/// Sparse forward: y_t = sum over selected i of w_ti E_i(x_t).
MoEOutput moe_forward(const DTensor& x, const MoELayer& layer, const ForwardContext& ctx);

struct LoadStats {
  std::vector<int> counts;
  double cv = 0.0;  // population std / mean of counts
};

LoadStats load_balance_stats(const RoutingTrace& trace);

/// Outer gate over G_out groups, each an inner MoELayer with G_in experts.
class HierarchicalMoE {
 public:
  HierarchicalMoE() = default;
  HierarchicalMoE(Index dim, int groups, int experts_per_group, const MoEConfig& inner, Rng& rng,
                  const std::string& name);

  Index dim() const { return outer_gate_.in_dim(); }
  int outer_top_k() const { return outer_top_k_; }
  Linear<double>& outer_gate() { return outer_gate_; }
  const Linear<double>& outer_gate() const { return outer_gate_; }
  std::vector<MoELayer>& groups() { return groups_; }
  const std::vector<MoELayer>& groups() const { return groups_; }
  void set_expert_kind(ExpertKind k);
  void collect(DParameterRefs& out);

 private:
  Linear<double> outer_gate_;
  std::vector<MoELayer> groups_;
  int outer_top_k_ = 2;
};

MoEOutput hmoe_forward(const DTensor& x, const HierarchicalMoE& hmoe, const ForwardContext& ctx);

/// Either a flat or a hierarchical MoE behind one forward call.
class StyleMoE {
 public:
  StyleMoE() = default;
  explicit StyleMoE(MoELayer flat) : impl_(std::move(flat)) {}
  explicit StyleMoE(HierarchicalMoE h) : impl_(std::move(h)) {}

  MoEOutput operator()(const DTensor& x, const ForwardContext& ctx) const;
  bool hierarchical() const { return std::holds_alternative<HierarchicalMoE>(impl_); }
  void set_expert_kind(ExpertKind k);
  void collect(DParameterRefs& out);

  MoELayer& flat() { return std::get<MoELayer>(impl_); }
  HierarchicalMoE& nested() { return std::get<HierarchicalMoE>(impl_); }

 private:
  std::variant<MoELayer, HierarchicalMoE> impl_;
};

}  // namespace g2s
