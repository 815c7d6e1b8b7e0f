#include "g2s/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "g2s/alignment/metrics.hpp"
#include "g2s/alignment/pitch.hpp"
#include "g2s/core/optim.hpp"
#include "g2s/core/parallel.hpp"
#include "g2s/dataio/mel.hpp"

namespace g2s {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) { open_out(path) << text; }

std::string optional_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

// Seeds for the per-sample streams of one step: independent of batch order
// and worker count.
constexpr std::uint64_t kShuffleStream = 0x5348554646ull;
constexpr std::uint64_t kStepStream = 0x53544550ull;
constexpr std::uint64_t kEvalStream = 0x4556414cull;

}  // namespace

Corpus build_corpus(const TrainConfig& cfg, std::ostream* log) {
  const DecoderConfig dc = cfg.decoder_config();
  Corpus c;
  if (cfg.corpus.empty()) {
    SynthOptions opt;
    opt.joints = cfg.joints;
    opt.mel.n_mels = static_cast<int>(cfg.n_mels);
    Rng rng(cfg.seed);
    const auto samples = gen_synthetic_corpus(cfg.corpus_size, cfg.jitter_std, rng, opt);
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(samples.size()) * cfg.split_ratio));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      (i < n_train ? c.train : c.test).push_back(make_train_sample(samples[i], dc));
    }
  } else {
    const std::filesystem::path root = cfg.corpus;
    ManifestOptions mo;
    mo.split_ratio = cfg.split_ratio;
    const CorpusManifest manifest = std::filesystem::exists(root / "manifest.csv")
                                        ? read_manifest_csv(root / "manifest.csv")
                                        : build_manifest(root, cfg.seed, mo);
    for (const auto& e : manifest.entries) {
      try {
        (e.split == Split::kTrain ? c.train : c.test).push_back(load_train_sample(manifest, e, dc));
      } catch (const InputError& err) {
        if (log) *log << "skipping " << e.clip_id << ": " << err.what() << "\n";
      }
    }
  }
  if (c.train.empty() || c.test.empty()) throw InputError("corpus needs at least one train and one test clip");
  c.stats = fit_norm_stats(c.train);
  return c;
}

EvalMetrics evaluate(const Model& model, const std::vector<TrainSample>& samples, const TrainConfig& cfg,
                     CondDrop drop) {
  if (samples.empty()) throw InputError("evaluation needs at least one sample");
  const DecoderConfig& dc = model.decoder().config();
  const Eigen::VectorXd centers = mel_band_centers(static_cast<int>(dc.mel_dim), 0.0, 8000.0);
  constexpr double kSilence = -9.0;

  struct PerSample {
    double soft = 0.0, hard = 0.0, dur = 0.0, loss = 0.0, mi = 0.0;
    std::optional<double> offset;
  };
  std::vector<PerSample> out(samples.size());
  parallel_for(samples.size(), thread_budget(), [&](std::size_t i) {
    const auto& s = samples[i];
    DTape tape;
    Rng rng = Rng(cfg.seed).split(kEvalStream).split(i);
    ForwardContext ctx{&rng, false, nullptr, {}};
    const auto f = model.forward(tape, s, ctx, drop, cfg.weights);
    auto& r = out[i];
    const double t_exp = f.losses.t_expected.item();
    r.soft = std::abs(t_exp - s.t_gesture);
    r.dur = std::abs(t_exp - s.duration);
    r.loss = f.total.item();

    const MatrixD& logits = f.decoded.stop_logits.value();
    std::vector<double> probs(static_cast<std::size_t>(logits.rows()));
    for (Index k = 0; k < logits.rows(); ++k) probs[static_cast<std::size_t>(k)] = 1.0 / (1.0 + std::exp(-logits(k, 0)));
    const StopDecision stop = stop_time(probs, dc.stop_threshold, dc.step_seconds());
    r.hard = std::abs(stop.t_pred - s.t_gesture);

    const MatrixD& mel = f.decoded.mel.value();
    PitchContour pc;
    pc.hop = dc.step_seconds();
    for (int k = 0; k < stop.steps; ++k) {
      Index band = 0;
      const double loudest = mel.row(k).maxCoeff(&band);
      pc.frame_times.push_back((k + 0.5) * dc.step_seconds());
      const bool voiced = loudest >= kSilence;
      pc.voiced.push_back(voiced);
      pc.f0.push_back(voiced ? centers(band) : 0.0);
    }
    const auto peaks = detect_prominences(pc);
    const auto pairs = match_peaks(s.apexes, peaks);
    r.offset = gesture_offset(pairs);
    r.mi = mutual_information(s.apexes, peaks, s.duration);
  });

  EvalMetrics m;
  double offset_sum = 0.0;
  int offset_n = 0;
  for (const auto& r : out) {
    m.cmtd_soft += r.soft;
    m.cmtd_hard += r.hard;
    m.duration_error += r.dur;
    m.loss += r.loss;
    m.mutual_info += r.mi;
    if (r.offset) {
      offset_sum += *r.offset;
      ++offset_n;
    }
  }
  const double n = static_cast<double>(out.size());
  m.cmtd_soft /= n;
  m.cmtd_hard /= n;
  m.duration_error /= n;
  m.loss /= n;
  m.mutual_info /= n;
  if (offset_n > 0) m.gesture_offset = offset_sum / offset_n;
  return m;
}

void write_runlog_csv(const std::filesystem::path& path, const RunLog& log) {
  auto out = open_out(path);
  out << "step,epoch,L_text,L_mel,L_dur,L_AL,aux,total\n";
  for (const auto& s : log.steps) {
    out << s.step << ',' << s.epoch << ',' << format_number(s.components.text) << ','
        << format_number(s.components.mel) << ',' << format_number(s.components.dur) << ','
        << format_number(s.components.al) << ',' << format_number(s.aux) << ',' << format_number(s.total) << '\n';
  }
}

void write_eval_csv(const std::filesystem::path& path, const RunLog& log) {
  auto out = open_out(path);
  out << "step,epoch,cmtd_soft,cmtd_hard,duration_error,heldout_loss,gesture_offset,mutual_info\n";
  for (const auto& e : log.evals) {
    const auto& m = e.metrics;
    out << e.step << ',' << e.epoch << ',' << format_number(m.cmtd_soft) << ',' << format_number(m.cmtd_hard) << ','
        << format_number(m.duration_error) << ',' << format_number(m.loss) << ','
        << optional_number(m.gesture_offset) << ',' << format_number(m.mutual_info) << '\n';
  }
}

TrainResult train(const Corpus& corpus, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const auto n = corpus.train.size();
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  if (n < B) throw InputError("training split has fewer samples than batch_size");
  const bool write = !options.out_dir.empty();
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    write_text(options.out_dir / "config.txt", format_config(cfg));
  }
  const CondDrop eval_drop = options.cond_drop == CondDrop::kForceOn ? CondDrop::kForceOn : CondDrop::kForceOff;

  TrainResult result;
  result.model = std::make_unique<Model>(cfg, corpus.stats);
  Model& model = *result.model;
  const DParameterRefs& params = model.parameters();
  std::unordered_map<const DParameter*, std::size_t> slot;
  for (std::size_t i = 0; i < params.size(); ++i) slot.emplace(params[i], i);

  AdamState<double> adam;
  adam.reset(params);
  const AdamConfig adam_cfg{cfg.lr};
  std::vector<MatrixD> previous(params.size());

  const int steps_per_epoch = static_cast<int>(n / B);
  const int eval_every = cfg.eval_every > 0 ? cfg.eval_every : steps_per_epoch;
  const int threads = thread_budget();
  Rng shuffle_rng = Rng(cfg.seed).split(kShuffleStream);
  std::vector<std::size_t> order(n);
  std::size_t pos = n;
  int epoch = 0;
  double best = std::numeric_limits<double>::infinity();

  auto record_eval = [&](int step) {
    EvalLog e{step, epoch, evaluate(model, corpus.test, cfg, eval_drop)};
    result.log.evals.push_back(e);
    if (e.metrics.cmtd_hard < best) {
      best = e.metrics.cmtd_hard;
      result.best = e;
      if (write) model.save(options.out_dir / "best.g2sk");
    }
    if (options.progress) {
      *options.progress << "  eval step " << step << ": cmtd " << e.metrics.cmtd_hard << " s, duration error "
                        << e.metrics.duration_error << " s\n";
    }
  };

  // `restore`: the current parameters already produced the bad value.
  auto diverged = [&](int step, const std::string& what, bool restore) {
    if (write) {
      if (restore && step > 1) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = previous[i];
      }
      model.save(options.out_dir / "last_good.g2sk");
      write_runlog_csv(options.out_dir / "runlog.csv", result.log);
    }
    throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + what);
  };

  struct SampleGrad {
    LossComponents values;
    double aux = 0.0;
    std::vector<std::pair<std::size_t, MatrixD>> grads;
  };
  std::vector<SampleGrad> per_sample(B);

  for (int step = 1; step <= cfg.steps; ++step) {
    if (pos + B > n) {
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.next_u64() % (i + 1)]);
      pos = 0;
      ++epoch;
    }
    try {
      parallel_for(B, threads, [&](std::size_t b) {
        const auto& sample = corpus.train[order[pos + b]];
        DTape tape;
        Rng rng = Rng(cfg.seed).split(kStepStream).split(static_cast<std::uint64_t>(step)).split(b);
        ForwardContext ctx{&rng, true, nullptr, {}};
        const auto f = model.forward(tape, sample, ctx, options.cond_drop, cfg.weights);
        tape.backward(f.total);
        auto& sg = per_sample[b];
        sg.values = f.values;
        sg.aux = f.aux;
        sg.grads.clear();
        tape.for_each_parameter([&](const DParameter& p, const MatrixD& g) {
          const auto it = slot.find(&p);
          if (it != slot.end()) sg.grads.emplace_back(it->second, g);
        });
      });
    } catch (const DivergenceError& e) {
      diverged(step, e.what(), true);
    }
    pos += B;

    StepLog log;
    log.step = step;
    log.epoch = epoch;
    for (auto* p : params) p->grad.setZero();
    for (const auto& sg : per_sample) {
      log.components.text += sg.values.text;
      log.components.mel += sg.values.mel;
      log.components.dur += sg.values.dur;
      log.components.al += sg.values.al;
      log.aux += sg.aux;
      for (const auto& [i, g] : sg.grads) params[i]->grad += g;
    }
    const double inv = 1.0 / static_cast<double>(B);
    log.components.text *= inv;
    log.components.mel *= inv;
    log.components.dur *= inv;
    log.components.al *= inv;
    log.aux *= inv;
    log.total = total_loss(log.components, cfg.weights, log.aux);
    result.log.steps.push_back(log);
    for (auto* p : params) {
      p->grad *= inv;
      if (!p->grad.allFinite()) diverged(step, "non-finite gradient for " + p->name, false);
    }

    for (std::size_t i = 0; i < params.size(); ++i) previous[i] = params[i]->value;
    adam_step(params, adam, adam_cfg);

    if (options.progress && (step == 1 || step % 10 == 0)) {
      *options.progress << "  step " << step << ": total " << log.total << "\n";
    }
    if (step % eval_every == 0 || step == cfg.steps) {
      try {
        record_eval(step);
      } catch (const DivergenceError& e) {
        diverged(step + 1, e.what(), true);
      }
    }
  }
  if (cfg.steps == 0) record_eval(0);
  result.final_eval = result.log.evals.back().metrics;
  if (write) {
    model.save(options.out_dir / "final.g2sk");
    write_runlog_csv(options.out_dir / "runlog.csv", result.log);
    write_eval_csv(options.out_dir / "eval.csv", result.log);
  }
  return result;
}

namespace {

std::string ablation_row(const std::string& name, double lambda_al, const TrainResult& r) {
  const auto& m = r.final_eval;
  const double first = r.log.steps.empty() ? 0.0 : r.log.steps.front().total;
  const double last = r.log.steps.empty() ? 0.0 : r.log.steps.back().total;
  return name + ',' + format_number(lambda_al) + ',' + format_number(m.cmtd_soft) + ',' + format_number(m.cmtd_hard) +
         ',' + format_number(m.duration_error) + ',' + format_number(m.loss) + ',' + format_number(first) + ',' +
         format_number(last) + '\n';
}

}  // namespace

AlignmentAblation ablate_alignment(const Corpus& corpus, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                                   bool with_baseline, std::ostream* progress) {
  TrainConfig off = cfg;
  off.weights.lambda_al = 0.0;
  TrainConfig on = cfg;
  if (!(on.weights.lambda_al > 0.0)) on.weights.lambda_al = 0.1;
  const bool write = !out_dir.empty();

  AlignmentAblation a;
  if (progress) *progress << "run lambda_al = 0\n";
  a.without = train(corpus, off, {write ? out_dir / "al0" : std::filesystem::path(), CondDrop::kSample, progress});
  if (progress) *progress << "run lambda_al = " << on.weights.lambda_al << "\n";
  a.with = train(corpus, on, {write ? out_dir / "al" : std::filesystem::path(), CondDrop::kSample, progress});
  if (with_baseline) {
    if (progress) *progress << "run without gesture conditioning\n";
    a.no_gesture = train(corpus, on, {write ? out_dir / "baseline" : std::filesystem::path(), CondDrop::kForceOn, progress});
  }
  if (write) {
    auto out = open_out(out_dir / "alignment_ablation.csv");
    out << "run,lambda_al,cmtd_soft,cmtd_hard,duration_error,heldout_loss,first_total,last_total\n";
    out << ablation_row("al0", 0.0, a.without) << ablation_row("al", on.weights.lambda_al, a.with);
    if (a.no_gesture) out << ablation_row("no_gesture", on.weights.lambda_al, *a.no_gesture);

    auto epochs = open_out(out_dir / "alignment_epochs.csv");
    epochs << "step,epoch,cmtd_soft_al0,cmtd_soft_al,cmtd_hard_al0,cmtd_hard_al\n";
    const auto& e0 = a.without.log.evals;
    const auto& e1 = a.with.log.evals;
    for (std::size_t i = 0; i < std::min(e0.size(), e1.size()); ++i) {
      epochs << e0[i].step << ',' << e0[i].epoch << ',' << format_number(e0[i].metrics.cmtd_soft) << ','
             << format_number(e1[i].metrics.cmtd_soft) << ',' << format_number(e0[i].metrics.cmtd_hard) << ','
             << format_number(e1[i].metrics.cmtd_hard) << '\n';
    }
  }
  return a;
}

std::vector<FusionAblationRow> ablate_fusion(const Corpus& corpus, const TrainConfig& cfg,
                                             const std::filesystem::path& out_dir, std::ostream* progress) {
  std::vector<FusionAblationRow> rows;
  const bool write = !out_dir.empty();
  for (FusionMode mode : {FusionMode::kMoE, FusionMode::kCrossAttention, FusionMode::kConcat}) {
    TrainConfig c = cfg;
    c.fusion = mode;
    if (progress) *progress << "run fusion = " << fusion_mode_name(mode) << "\n";
    const auto r = train(corpus, c, {write ? out_dir / fusion_mode_name(mode) : std::filesystem::path(),
                                     CondDrop::kSample, progress});
    rows.push_back({mode, r.final_eval, r.log.steps.empty() ? StepLog{} : r.log.steps.back()});
  }
  if (write) {
    auto out = open_out(out_dir / "fusion_ablation.csv");
    out << "mode,gesture_offset,mutual_info,cmtd_soft,cmtd_hard,duration_error,heldout_loss,L_text,L_mel,total\n";
    for (const auto& r : rows) {
      const auto& m = r.metrics;
      out << fusion_mode_name(r.mode) << ',' << optional_number(m.gesture_offset) << ','
          << format_number(m.mutual_info) << ',' << format_number(m.cmtd_soft) << ',' << format_number(m.cmtd_hard)
          << ',' << format_number(m.duration_error) << ',' << format_number(m.loss) << ','
          << format_number(r.last.components.text) << ',' << format_number(r.last.components.mel) << ','
          << format_number(r.last.total) << '\n';
    }
  }
  return rows;
}

}  // namespace g2s
