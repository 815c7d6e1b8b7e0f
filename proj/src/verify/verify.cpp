#include "g2s/verify/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "json.hpp"

#include "g2s/alignment/metrics.hpp"
#include "g2s/alignment/pitch.hpp"
#include "g2s/alignment/wer.hpp"
#include "g2s/core/grad_check.hpp"
#include "g2s/core/ops.hpp"
#include "g2s/training/model.hpp"

namespace g2s {

namespace {

MatrixD random_matrix(Index r, Index c, Rng& rng, double scale = 1.0) {
  MatrixD m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
  return m;
}

// sum(y .* w) for a fixed random w, so every output entry gets its own weight.
DTensor probe(const DTensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(hadamard(y, y.tape().constant(random_matrix(y.rows(), y.cols(), rng))));
}

// A scalar function whose routing is recorded on the first call and
// replayed on every later one.
class ReplayFunction {
 public:
  using Body = std::function<DTensor(DTape&, const DTensor&, const ForwardContext&)>;
  explicit ReplayFunction(Body body) : body_(std::move(body)) {}

  DTensor operator()(DTape& tape, const DTensor& x) {
    if (calls_++ == 0) {
      cache_.record();
    } else {
      cache_.replay();
    }
    Rng rng(1);
    ForwardContext ctx{&rng, true, &cache_, {}};
    return body_(tape, x, ctx);
  }

 private:
  Body body_;
  RoutingCache cache_;
  int calls_ = 0;
};

}  // namespace

std::vector<GradCheckResult> primitive_grad_checks(std::uint64_t seed, double eps) {
  Rng rng = Rng(seed).split(0x505249);
  const Index R = 3, C = 4;
  const MatrixD x0 = random_matrix(R, C, rng);
  const MatrixD A = random_matrix(R, C, rng);
  const MatrixD W = random_matrix(C, 3, rng);
  const MatrixD row = random_matrix(1, C, rng);
  const std::uint64_t w = seed * 31 + 1;

  std::vector<std::pair<std::string, ScalarFunction<double>>> fns;
  auto add = [&](std::string name, ScalarFunction<double> f) { fns.emplace_back(std::move(name), std::move(f)); };
  auto c = [](DTape& t, const MatrixD& m) { return t.constant(m); };

  add("matmul", [&](DTape& t, const DTensor& x) { return probe(matmul(x, c(t, W)), w); });
  add("matmul_right", [&](DTape& t, const DTensor& x) { return probe(matmul(c(t, MatrixD(A.transpose())), x), w); });
  add("add", [&](DTape& t, const DTensor& x) { return probe(x + c(t, A), w); });
  add("sub", [&](DTape& t, const DTensor& x) { return probe(c(t, A) - x, w); });
  add("scale", [&](DTape&, const DTensor& x) { return probe(1.7 * x, w); });
  add("add_scalar", [&](DTape&, const DTensor& x) { return probe(add_scalar(x, 0.3), w); });
  add("hadamard", [&](DTape& t, const DTensor& x) { return probe(hadamard(x, hadamard(x, c(t, A))), w); });
  add("add_row", [&](DTape& t, const DTensor& x) { return probe(add_row(x, c(t, row)) + add_row(c(t, A), slice_rows(x, 0, 1)), w); });
  add("mul_row", [&](DTape&, const DTensor& x) { return probe(mul_row(x, slice_rows(x, 1, 1)), w); });
  add("scale_rows", [&](DTape&, const DTensor& x) { return probe(scale_rows(x, slice_cols(x, 0, 1)), w); });
  add("transpose", [&](DTape&, const DTensor& x) { return probe(transpose(x), w); });
  add("leaky_relu", [&](DTape&, const DTensor& x) { return probe(leaky_relu(x, 0.01), w); });
  add("sigmoid", [&](DTape&, const DTensor& x) { return probe(sigmoid(x), w); });
  add("abs", [&](DTape&, const DTensor& x) { return probe(abs(x), w); });
  add("softmax_rows", [&](DTape&, const DTensor& x) { return probe(softmax_rows(x), w); });
  add("softmax_cols", [&](DTape&, const DTensor& x) { return probe(softmax(x, Axis::kCols), w); });
  add("layer_norm_rows", [&](DTape&, const DTensor& x) { return probe(layer_norm_rows(x), w); });
  add("concat_rows", [&](DTape&, const DTensor& x) { return probe(concat_rows<double>({x, sigmoid(x)}), w); });
  add("concat_cols", [&](DTape&, const DTensor& x) { return probe(concat_cols<double>({sigmoid(x), x}), w); });
  add("slice_rows", [&](DTape&, const DTensor& x) { return probe(slice_rows(x, 1, 2), w); });
  add("slice_cols", [&](DTape&, const DTensor& x) { return probe(slice_cols(x, 1, 2), w); });
  add("gather_rows", [&](DTape&, const DTensor& x) {
    const Index idx[] = {2, 0, 2, 1};
    return probe(gather_rows(x, std::span<const Index>(idx)), w);
  });
  add("scatter_rows", [&](DTape&, const DTensor& x) {
    const Index idx[] = {4, 1, 4};
    return probe(scatter_rows(x, std::span<const Index>(idx), 5), w);
  });
  add("sum", [&](DTape&, const DTensor& x) { return sum(hadamard(x, x)); });
  add("mean", [&](DTape&, const DTensor& x) { return mean(hadamard(x, x)); });
  add("mean_rows", [&](DTape&, const DTensor& x) { return probe(mean_rows(x), w); });
  add("cross_entropy_rows", [&](DTape&, const DTensor& x) {
    const int targets[] = {0, 3, 1};
    return cross_entropy_rows(x, std::span<const int>(targets));
  });
  add("expected_stop_time", [&](DTape&, const DTensor& x) {
    return expected_stop_time(transpose(slice_rows(x, 0, 1)), 0.2);
  });
  add("cmtd_loss", [&](DTape&, const DTensor& x) {
    const double g[] = {0.5, -0.25, 1.5};
    return cmtd_loss(slice_cols(x, 2, 1), std::span<const double>(g));
  });

  Rng layer_rng = rng.split(1);
  const Linear<double> linear(C, 5, layer_rng, "linear");
  const LayerNorm<double> norm(C, "norm");
  const FeedForward<double> ff(C, 6, layer_rng, "ff");
  const MultiHeadAttention<double> mha(C, 2, layer_rng, "mha");
  const MatrixD mask = causal_mask<double>(R);
  const MatrixD memory = random_matrix(5, C, rng);
  add("linear", [&](DTape&, const DTensor& x) { return probe(linear(x), w); });
  add("layer_norm", [&](DTape&, const DTensor& x) { return probe(norm(x), w); });
  add("feedforward", [&](DTape&, const DTensor& x) { return probe(ff(x), w); });
  add("self_attention", [&](DTape&, const DTensor& x) { return probe(mha(x, x, x, &mask), w); });
  add("cross_attention", [&](DTape& t, const DTensor& x) {
    const auto m = c(t, memory);
    return probe(mha(x, m, m) + mha(c(t, A), x, x), w);
  });

  std::vector<GradCheckResult> out;
  for (auto& [name, f] : fns) out.push_back({name, grad_check<double>(f, x0, eps), static_cast<int>(x0.size())});

  // Sparse MoE layers, selection fixed by replay.
  const Index T = 6, d = 4;
  const MatrixD tokens = random_matrix(T, d, rng);
  MoEConfig mc;
  mc.num_experts = 4;
  mc.top_k = 2;
  mc.expert_layers = 3;
  mc.hidden_dim = 6;
  const MoELayer moe(d, mc, layer_rng, "moe");
  const HierarchicalMoE hmoe(d, 2, 2, mc, layer_rng, "hmoe");
  {
    ReplayFunction f([&](DTape&, const DTensor& x, const ForwardContext& ctx) {
      const auto o = moe_forward(x, moe, ctx);
      return probe(o.y, w) + o.aux_loss;
    });
    out.push_back({"moe_forward", grad_check<double>(std::ref(f), tokens, eps), static_cast<int>(tokens.size())});
  }
  {
    ReplayFunction f([&](DTape&, const DTensor& x, const ForwardContext& ctx) {
      const auto o = hmoe_forward(x, hmoe, ctx);
      return probe(o.y, w) + o.aux_loss;
    });
    out.push_back({"hmoe_forward", grad_check<double>(std::ref(f), tokens, eps), static_cast<int>(tokens.size())});
  }
  return out;
}

GradCheckResult full_path_grad_check(std::uint64_t seed, FusionMode mode, bool hierarchical, int param_probes,
                                     double eps) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.fusion = mode;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.decoder_layers = 1;
  cfg.decoder_steps = 5;
  cfg.reduction = 3;
  cfg.vocab_size = 5;
  cfg.joints = 2;
  cfg.n_mels = 6;
  cfg.latents = 3;
  cfg.perceiver_blocks = 1;
  cfg.experts = 4;
  cfg.top_k = 2;
  cfg.expert_layers = 2;
  cfg.expert_hidden = 6;
  cfg.hierarchical = hierarchical;
  cfg.groups = 2;
  cfg.experts_per_group = 2;
  cfg.weights = {1.0, 0.5};
  Model model(cfg, NormStats{-4.0, 2.0, 0.5});

  Rng rng = Rng(seed).split(0x46554c4c);
  const Index T = 6, F = 10;
  TrainSample s;
  s.id = "probe";
  s.text_ids = {3, 17, 42, 8};
  s.mel = random_matrix(F, cfg.n_mels, rng, 2.0).array() - 4.0;
  s.keypoints.fps = 5.0;
  s.keypoints.coords = random_matrix(T, 2 * cfg.joints, rng);
  s.duration = rng.uniform(0.4, 1.0);
  s.targets = make_decoder_targets(s.mel, s.duration, model.decoder().config(), -1e9);
  s.t_gesture = rng.uniform(0.1, 0.9);

  // Row t of the velocities is coords[t] - coords[t-1], row 0 repeats row 1.
  std::vector<Index> cur(static_cast<std::size_t>(T)), prev(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    cur[static_cast<std::size_t>(t)] = std::max<Index>(t, 1);
    prev[static_cast<std::size_t>(t)] = std::max<Index>(t, 1) - 1;
  }
  const Decoder& dec = model.decoder();
  auto objective = [&](const DTensor& mel, const DTensor& coords, const ForwardContext& ctx) {
    const DTensor vel = s.keypoints.fps * (gather_rows(coords, std::span<const Index>(cur)) -
                                           gather_rows(coords, std::span<const Index>(prev)));
    const auto fo = model.fusion().forward(mel, vel, coords, ctx);
    const auto text = dec.embed_text(mel.tape(), s.text_ids);
    const auto memory = dec.memory(text, fo.gestures, s.keypoints.fps, fo.fused, false);
    const auto decoded = dec.teacher_forced(memory, s.targets);
    const auto l = teacher_forced_losses(decoded, s.targets, dec.config());
    const auto al = cmtd_loss(l.t_expected, std::span<const double>(&s.t_gesture, 1));
    return l.text + l.mel + cfg.weights.lambda_dur * l.duration + cfg.weights.lambda_al * al + fo.fused.aux_loss;
  };

  GradCheckResult r;
  r.name = std::string("full_path_") + fusion_mode_name(mode) + (hierarchical ? "_hier" : "");
  {
    ReplayFunction f([&](DTape& tape, const DTensor& x, const ForwardContext& ctx) {
      return objective(tape.constant(s.mel), x, ctx);
    });
    r.max_rel_error = std::max(r.max_rel_error, grad_check<double>(std::ref(f), s.keypoints.coords, eps));
    r.probes += static_cast<int>(s.keypoints.coords.size());
  }
  {
    ReplayFunction f([&](DTape& tape, const DTensor& x, const ForwardContext& ctx) {
      return objective(x, tape.constant(s.keypoints.coords), ctx);
    });
    r.max_rel_error = std::max(r.max_rel_error, grad_check<double>(std::ref(f), s.mel, eps));
    r.probes += static_cast<int>(s.mel.size());
  }

  // Parameter entries against the tape gradient of one recorded pass.
  RoutingCache cache;
  auto run = [&](DTape& tape) {
    Rng ctx_rng(1);
    ForwardContext ctx{&ctx_rng, true, &cache, {}};
    return objective(tape.constant(s.mel), tape.constant(s.keypoints.coords), ctx);
  };
  const auto& params = model.parameters();
  std::vector<MatrixD> grads(params.size());
  {
    cache.record();
    DTape tape;
    const auto loss = run(tape);
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) grads[i] = MatrixD::Zero(params[i]->value.rows(), params[i]->value.cols());
    tape.for_each_parameter([&](const DParameter& p, const MatrixD& g) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i] == &p) grads[i] = g;
      }
    });
  }
  auto eval = [&] {
    cache.replay();
    DTape tape;
    return run(tape).item();
  };
  for (int k = 0; k < param_probes; ++k) {
    const auto pi = static_cast<std::size_t>(rng.next_u64() % params.size());
    auto& p = *params[pi];
    const auto e = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(p.value.size()));
    const double orig = p.value.data()[e];
    p.value.data()[e] = orig + eps;
    const double up = eval();
    p.value.data()[e] = orig - eps;
    const double down = eval();
    p.value.data()[e] = orig;
    const double fd = (up - down) / (2.0 * eps);
    r.max_rel_error = std::max(r.max_rel_error, std::abs(grads[pi].data()[e] - fd) / std::max(1.0, std::abs(fd)));
    ++r.probes;
  }
  return r;
}

bool VerifySummary::ok() const {
  for (const auto& s : suites) {
    if (s.failed > 0) return false;
  }
  return true;
}

namespace {

class SuiteBuilder {
 public:
  explicit SuiteBuilder(std::string name) { r_.name = std::move(name); }

  void check(bool ok, const std::string& what) {
    if (ok) {
      ++r_.passed;
      return;
    }
    ++r_.failed;
    if (r_.failures.size() < 8) r_.failures.push_back(what);
  }
  SuiteResult result() const { return r_; }

 private:
  SuiteResult r_;
};

SuiteResult gradient_suite(std::uint64_t seed) {
  SuiteBuilder s("gradients");
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    for (const auto& g : primitive_grad_checks(seed + trial)) {
      s.check(g.max_rel_error < 1e-4, g.name + " rel error " + std::to_string(g.max_rel_error));
    }
  }
  const FusionMode modes[] = {FusionMode::kMoE, FusionMode::kCrossAttention, FusionMode::kConcat};
  for (int i = 0; i < 3; ++i) {
    const auto g = full_path_grad_check(seed + static_cast<std::uint64_t>(i), modes[i], false, 12);
    s.check(g.max_rel_error < 1e-4, g.name + " rel error " + std::to_string(g.max_rel_error));
  }
  const auto h = full_path_grad_check(seed + 3, FusionMode::kMoE, true, 12);
  s.check(h.max_rel_error < 1e-4, h.name + " rel error " + std::to_string(h.max_rel_error));
  return s.result();
}

SuiteResult routing_suite(std::uint64_t seed, const RouterOptions& router) {
  SuiteBuilder s("routing");
  Rng rng = Rng(seed).split(0x524f5554);
  for (int K : {4, 8, 16}) {
    MoEConfig cfg;
    cfg.num_experts = K;
    cfg.top_k = 2;
    cfg.capacity_factor = MoEConfig::kUnlimitedCapacity;
    for (int trial = 0; trial < 20; ++trial) {
      MatrixD logits = random_matrix(16, K, rng, 2.0);
      MatrixD probs = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp();
      probs = probs.array().colwise() / probs.rowwise().sum().array();
      auto trace = route_tokens(probs, cfg, rng.next_u64(), trial % 2 == 0, router);
      apply_capacity(trace, expert_capacity(cfg, probs.rows()));
      bool sums = true, counts = true;
      for (const auto& t : trace.tokens) {
        double total = 0.0;
        for (double w : t.weights) total += w;
        sums = sums && std::abs(total - 1.0) <= 1e-6;
        counts = counts && t.experts.size() <= static_cast<std::size_t>(cfg.top_k);
      }
      const std::string where = "K=" + std::to_string(K) + " trial " + std::to_string(trial);
      s.check(sums, where + ": selected weights do not sum to 1");
      s.check(counts, where + ": more than top_k experts");
      s.check(trace.dropped == 0, where + ": drops at unlimited capacity");
    }
  }

  // Fallback slot frequencies against the gate mass of the remaining experts.
  MoEConfig cfg;
  cfg.num_experts = 4;
  cfg.top_k = 2;
  cfg.fallback_prob = 1.0;
  const int draws = 10000;
  MatrixD probs(draws, 4);
  for (Index t = 0; t < draws; ++t) probs.row(t) << 0.4, 0.3, 0.2, 0.1;
  const auto trace = route_tokens(probs, cfg, rng.next_u64(), true, router);
  std::vector<int> hits(4, 0);
  for (const auto& t : trace.tokens) hits[static_cast<std::size_t>(t.experts.back())] += 1;
  for (int e = 1; e < 4; ++e) {
    const double p = probs(0, e) / 0.6;
    const double sigma = std::sqrt(draws * p * (1.0 - p));
    s.check(std::abs(hits[static_cast<std::size_t>(e)] - draws * p) <= 3.0 * sigma,
            "fallback frequency of expert " + std::to_string(e) + " off by more than 3 sigma");
  }
  return s.result();
}

SuiteResult metrics_suite(std::uint64_t seed) {
  SuiteBuilder s("metrics");
  Rng rng = Rng(seed).split(0x4d455452);
  for (int b = 0; b < 10; ++b) {
    const int n = 1 + static_cast<int>(rng.next_u64() % 16);
    std::vector<double> p(static_cast<std::size_t>(n)), g(static_cast<std::size_t>(n));
    double hand = 0.0;
    for (int i = 0; i < n; ++i) {
      p[static_cast<std::size_t>(i)] = rng.uniform(0.0, 15.0);
      g[static_cast<std::size_t>(i)] = rng.uniform(0.0, 15.0);
      hand += std::abs(p[static_cast<std::size_t>(i)] - g[static_cast<std::size_t>(i)]);
    }
    s.check(std::abs(cmtd_loss(p, g) - hand / n) <= 1e-12, "cmtd differs from the hand-computed mean");
    s.check(cmtd_loss(p, p) == 0.0, "cmtd of identical inputs is not zero");
  }
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> events;
    for (double t = rng.uniform(0.0, 0.5); t < 10.0; t += rng.uniform(0.2, 1.5)) events.push_back(t);
    const auto occ = occupancy(events, 10.0, 50);
    s.check(mutual_information(events, events, 10.0, 50) == occupancy_entropy(occ),
            "MI of identical streams differs from their entropy");
  }
  const std::vector<double> apexes{1.0, 2.0, 3.0};
  const std::vector<double> peaks{1.1, 2.05, 5.0};
  const auto pairs = match_peaks(apexes, peaks, 1.0);
  s.check(pairs.size() == 2 && std::abs(*gesture_offset(pairs) - 0.075) < 1e-12, "gesture offset oracle");
  const auto er = wer_cer("the cat sat", "the cat sat down");
  s.check(er && std::abs(er->wer - 100.0 / 3.0) < 1e-9, "WER of one insertion over three words");
  const auto cr = wer_cer("abc", "abd");
  s.check(cr && std::abs(cr->cer - 100.0 / 3.0) < 1e-9, "CER of one substitution over three characters");
  s.check(!wer_cer("", "anything"), "WER of an empty reference must be undefined");
  return s.result();
}

SuiteResult pitch_suite() {
  SuiteBuilder s("pitch");
  const double sr = 22050.0;
  for (double f : {220.0, 440.0}) {
    std::vector<double> x(static_cast<std::size_t>(sr));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * std::sin(2.0 * std::numbers::pi * f * i / sr);
    const auto pc = extract_pitch(x, sr);
    std::vector<double> voiced;
    for (std::size_t i = 0; i < pc.f0.size(); ++i) {
      if (pc.voiced[i]) voiced.push_back(pc.f0[i]);
    }
    std::sort(voiced.begin(), voiced.end());
    const bool ok = !voiced.empty() && std::abs(voiced[voiced.size() / 2] - f) <= 2.0;
    s.check(ok, "tone at " + std::to_string(f) + " Hz not recovered within 2 Hz");
  }
  const std::vector<double> silence(22050, 0.0);
  const auto pc = extract_pitch(silence, sr);
  s.check(std::none_of(pc.voiced.begin(), pc.voiced.end(), [](bool v) { return v; }), "silence has voiced frames");
  return s.result();
}

}  // namespace

VerifySummary run_verify(const VerifyOptions& options) {
  VerifySummary v;
  v.suites.push_back(gradient_suite(options.seed));
  v.suites.push_back(routing_suite(options.seed, options.router));
  v.suites.push_back(metrics_suite(options.seed));
  v.suites.push_back(pitch_suite());
  return v;
}

std::string verify_summary_json(const VerifySummary& summary) {
  nlohmann::ordered_json j;
  j["ok"] = summary.ok();
  auto& suites = j["suites"] = nlohmann::ordered_json::array();
  for (const auto& s : summary.suites) {
    suites.push_back({{"name", s.name}, {"passed", s.passed}, {"failed", s.failed}, {"failures", s.failures}});
  }
  return j.dump(2) + "\n";
}

}  // namespace g2s
