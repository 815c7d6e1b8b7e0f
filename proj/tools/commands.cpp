#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "g2s/alignment/report.hpp"
#include "g2s/dataio/manifest.hpp"
#include "g2s/dataio/synth.hpp"
#include "g2s/training/trainer.hpp"
#include "g2s/verify/verify.hpp"

namespace g2s::cli {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::string num(double v) { return format_number(v); }

// key = value lines in insertion order; the echo that lets a run be repeated.
class Echo {
 public:
  explicit Echo(std::string command) { add("command", std::move(command)); }
  void add(const std::string& k, const std::string& v) { text_ += k + " = " + v + "\n"; }
  void write(const fs::path& dir) const { write_file(dir / "invocation.txt", text_); }

 private:
  std::string text_;
};

struct AnalyzeArgs {
  std::string keypoints, wav, corpus, out, clip_id;
  std::uint64_t seed = 0;
  int bins = 50;
  double min_gap = 0.25;
  double threshold = 0.5;
  bool svg = true;
};

AnalysisOptions analysis_options(const AnalyzeArgs& a) {
  AnalysisOptions o;
  o.n_bins = a.bins;
  o.apex_min_gap = a.min_gap;
  o.prominence_min_gap = a.min_gap;
  o.rel_threshold = a.threshold;
  return o;
}

std::optional<std::string> undefined_reason(const AlignmentReport& r) {
  if (r.gesture_offset) return std::nullopt;
  if (r.prominences.empty()) return "no speech prominences";
  if (r.apexes.times.empty()) return "no gesture apexes";
  return "no apex and prominence pair within the matching window";
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
  const AnalysisOptions opt = analysis_options(a);
  fs::create_directories(a.out);
  Echo echo("analyze");
  echo.add("seed", std::to_string(a.seed));
  echo.add("bins", std::to_string(a.bins));
  echo.add("min_gap", num(a.min_gap));
  echo.add("threshold", num(a.threshold));

  if (!a.corpus.empty()) {
    echo.add("corpus", a.corpus);
    echo.write(a.out);
    const fs::path root = a.corpus;
    const CorpusManifest m =
        fs::exists(root / "manifest.csv") ? read_manifest_csv(root / "manifest.csv") : build_manifest(root, a.seed);
    std::string csv = report_csv_header();
    int defined = 0;
    for (const auto& e : m.entries) {
      const auto r = analyze_clip(e.clip_id, parse_keypoints(m.root / e.keypoint_path), read_wav(m.root / e.audio_path), opt);
      csv += report_csv_row(r);
      defined += r.gesture_offset ? 1 : 0;
    }
    write_file(fs::path(a.out) / "summary.csv", csv);
    out << "analyzed " << m.entries.size() << " clips, " << defined << " with a defined offset\n";
    return kOk;
  }

  if (a.keypoints.empty() || a.wav.empty()) throw InputError("analyze needs --keypoints and --wav, or --corpus");
  const std::string id = a.clip_id.empty() ? fs::path(a.wav).parent_path().filename().string() : a.clip_id;
  echo.add("keypoints", a.keypoints);
  echo.add("wav", a.wav);
  echo.add("clip_id", id);
  echo.write(a.out);
  const auto r = analyze_clip(id, parse_keypoints(a.keypoints), read_wav(a.wav), opt);
  write_file(fs::path(a.out) / "report.json", report_json(r));
  write_file(fs::path(a.out) / "report.csv", report_csv_header() + report_csv_row(r));
  if (a.svg) write_file(fs::path(a.out) / "report.svg", report_svg(r));
  if (const auto why = undefined_reason(r)) {
    err << "undefined gesture offset: " << *why << "\n";
    return kUndefinedMetric;
  }
  out << "gesture offset " << *r.gesture_offset << " s, MI " << r.mutual_info << " bits\n";
  return kOk;
}

struct GenArgs {
  int n = 10;
  double jitter = 0.0;
  std::uint64_t seed = 7;
  std::string out;
};

int cmd_gen_synth(const GenArgs& a, std::ostream& out) {
  if (a.n < 1) throw InputError("--n must be at least 1");
  if (!(a.jitter >= 0.0)) throw InputError("--jitter must be non-negative");
  Rng rng(a.seed);
  const auto samples = gen_synthetic_corpus(a.n, a.jitter, rng);
  const fs::path root = a.out;
  write_synthetic_corpus(root, samples, a.jitter, a.seed);
  const auto manifest = build_manifest(root, a.seed);
  write_manifest_csv(root / "manifest.csv", manifest);
  write_rejects_csv(root / "rejects.csv", manifest);
  Echo echo("gen-synth");
  echo.add("n", std::to_string(a.n));
  echo.add("jitter_std", num(a.jitter));
  echo.add("seed", std::to_string(a.seed));
  echo.write(root);

  std::map<int, int> hist;
  for (const auto& s : samples) hist[static_cast<int>(s.duration)] += 1;
  out << "clips " << samples.size() << " (train " << manifest.train_count() << ", test " << manifest.test_count()
      << ", rejected " << manifest.rejects.size() << ")\n";
  out << "duration histogram (s):\n";
  for (const auto& [sec, count] : hist) {
    out << "  [" << sec << ", " << sec + 1 << ") " << std::string(static_cast<std::size_t>(count), '#') << " " << count
        << "\n";
  }
  return kOk;
}

struct TrainArgs {
  std::string config, out, fusion;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_al;
};

TrainConfig resolve_config(const TrainArgs& a) {
  TrainConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.fusion.empty()) {
    try {
      cfg.fusion = parse_fusion_mode(a.fusion);
    } catch (const ConfigError& e) {
      throw InputError(e.what());
    }
  }
  if (a.lambda_al) cfg.weights.lambda_al = *a.lambda_al;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw InputError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

void print_eval(std::ostream& out, const std::string& label, const EvalMetrics& m) {
  out << label << ": held-out cmtd " << m.cmtd_hard << " s (expected-stop " << m.cmtd_soft << " s), duration error "
      << m.duration_error << " s, loss " << m.loss << "\n";
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const TrainConfig cfg = resolve_config(a);
  const Corpus corpus = build_corpus(cfg, &err);
  TrainOptions opt;
  opt.out_dir = a.out;
  opt.progress = &err;
  const auto r = train(corpus, cfg, opt);
  out << "steps " << r.log.steps.size() << ": total " << r.log.steps.front().total << " -> "
      << r.log.steps.back().total << "\n";
  print_eval(out, "final", r.final_eval);
  return kOk;
}

struct AblateArgs {
  TrainArgs train;
  std::string kind = "both";
  bool baseline = true;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const TrainConfig cfg = resolve_config(a.train);
  const Corpus corpus = build_corpus(cfg, &err);
  const fs::path root = a.train.out;
  fs::create_directories(root);
  write_file(root / "config.txt", format_config(cfg));
  if (a.kind == "alignment" || a.kind == "both") {
    const auto r = ablate_alignment(corpus, cfg, root / "alignment", a.baseline, &err);
    print_eval(out, "lambda_al=0", r.without.final_eval);
    print_eval(out, "lambda_al>0", r.with.final_eval);
    if (r.no_gesture) print_eval(out, "no gesture", r.no_gesture->final_eval);
  }
  if (a.kind == "fusion" || a.kind == "both") {
    for (const auto& row : ablate_fusion(corpus, cfg, root / "fusion", &err)) {
      print_eval(out, std::string("fusion ") + fusion_mode_name(row.mode), row.metrics);
    }
  }
  return kOk;
}

struct VerifyArgs {
  std::string out;
  std::uint64_t seed = 7;
  bool fault_unnormalized = false;
};

int cmd_verify(const VerifyArgs& a, std::ostream& out) {
  VerifyOptions opt;
  opt.seed = a.seed;
  opt.router.renormalize = !a.fault_unnormalized;
  const auto summary = run_verify(opt);
  const std::string json = verify_summary_json(summary);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_file(fs::path(a.out) / "verify.json", json);
    Echo echo("verify");
    echo.add("seed", std::to_string(a.seed));
    echo.add("fault_unnormalized", a.fault_unnormalized ? "true" : "false");
    echo.write(a.out);
  }
  out << json;
  return summary.ok() ? kOk : kPropertyFailure;
}

struct AuditArgs {
  TrainArgs train;
  std::string checkpoint;
  int samples = 4;
};

int cmd_routing_audit(const AuditArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig cfg = resolve_config(a.train);
  if (cfg.fusion != FusionMode::kMoE) throw InputError("routing-audit needs fusion = moe");
  const Corpus corpus = build_corpus(cfg, &err);
  const auto model = a.checkpoint.empty() ? std::make_unique<Model>(cfg, corpus.stats) : Model::load(a.checkpoint, cfg);
  fs::create_directories(a.train.out);
  write_file(fs::path(a.train.out) / "config.txt", format_config(cfg));

  static const char* kModules[] = {"speech", "motion", "style"};
  std::string lines;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(a.samples, 0)), corpus.test.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = corpus.test[i];
    DTape tape;
    Rng rng = Rng(cfg.seed).split(i);
    const auto f = model->forward(tape, s, ForwardContext{&rng, false, nullptr, {}}, CondDrop::kForceOff, cfg.weights);
    for (std::size_t m = 0; m < f.fusion.fused.traces.size(); ++m) {
      const auto& trace = f.fusion.fused.traces[m];
      for (std::size_t t = 0; t < trace.tokens.size(); ++t) {
        const auto& tok = trace.tokens[t];
        nlohmann::ordered_json j;
        j["sample"] = s.id;
        j["module"] = kModules[m];
        j["token_idx"] = t;
        j["experts"] = tok.experts;
        j["weights"] = tok.weights;
        j["dropped"] = tok.dropped;
        lines += j.dump() + "\n";
      }
    }
  }
  write_file(fs::path(a.train.out) / "routing.jsonl", lines);
  out << "wrote routing decisions for " << n << " held-out samples\n";
  return kOk;
}

void add_train_flags(CLI::App* sub, TrainArgs& a) {
  sub->add_option("--config", a.config, "training config file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", a.out, "output directory")->required();
  sub->add_option("--seed", a.seed, "override the config seed");
  sub->add_option("--fusion", a.fusion, "override the fusion mode")->check(CLI::IsMember({"moe", "xattn", "concat"}));
  sub->add_option("--lambda-al", a.lambda_al, "override lambda_al")->check(CLI::NonNegativeNumber);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"g2sk: gesture-conditioned speech toolkit"};
  app.require_subcommand(1);

  AnalyzeArgs analyze;
  auto* an = app.add_subcommand("analyze", "gesture/prosody alignment report for a clip or a corpus");
  an->add_option("--keypoints", analyze.keypoints, "keypoint JSON file or directory");
  an->add_option("--wav", analyze.wav, "audio file");
  an->add_option("--corpus", analyze.corpus, "corpus root; writes summary.csv");
  an->add_option("--out", analyze.out, "output directory")->required();
  an->add_option("--clip-id", analyze.clip_id, "identifier used in the report");
  an->add_option("--seed", analyze.seed, "seed for manifest shuffling");
  an->add_option("--bins", analyze.bins, "MI histogram bins")->check(CLI::PositiveNumber);
  an->add_option("--min-gap", analyze.min_gap, "minimum gap between detected events, seconds")
      ->check(CLI::NonNegativeNumber);
  an->add_option("--threshold", analyze.threshold, "apex threshold relative to the peak magnitude");
  an->add_flag("!--no-svg", analyze.svg, "skip the SVG plot");

  GenArgs gen;
  auto* gs = app.add_subcommand("gen-synth", "write a synthetic paired corpus with a manifest");
  gs->add_option("--n", gen.n, "number of clips")->required();
  gs->add_option("--jitter", gen.jitter, "std of prominence jitter around gesture apexes, seconds");
  gs->add_option("--seed", gen.seed, "generator seed");
  gs->add_option("--out", gen.out, "corpus root")->required();

  TrainArgs tr;
  auto* trs = app.add_subcommand("train", "train fusion and decoder on a corpus");
  add_train_flags(trs, tr);

  AblateArgs ab;
  auto* abs_cmd = app.add_subcommand("ablate", "alignment-loss and fusion-strategy ablations");
  add_train_flags(abs_cmd, ab.train);
  abs_cmd->add_option("--kind", ab.kind, "which ablation to run")->check(CLI::IsMember({"alignment", "fusion", "both"}));
  abs_cmd->add_flag("!--no-baseline", ab.baseline, "skip the run without gesture conditioning");

  VerifyArgs ver;
  auto* vs = app.add_subcommand("verify", "run the embedded invariant suites");
  vs->add_option("--out", ver.out, "also write verify.json here");
  vs->add_option("--seed", ver.seed, "seed for randomized checks");
  vs->add_flag("--fault-unnormalized-routing", ver.fault_unnormalized, "inject unnormalized gate weights");

  AuditArgs au;
  auto* aus = app.add_subcommand("routing-audit", "dump MoE routing decisions as JSON lines");
  add_train_flags(aus, au.train);
  aus->add_option("--checkpoint", au.checkpoint, "model checkpoint (default: fresh initialisation)");
  aus->add_option("--samples", au.samples, "held-out samples to audit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "g2sk: " << e.what() << "\n";
    return kInputError;
  }

  try {
    if (an->parsed()) return cmd_analyze(analyze, out, err);
    if (gs->parsed()) return cmd_gen_synth(gen, out);
    if (trs->parsed()) return cmd_train(tr, out, err);
    if (abs_cmd->parsed()) return cmd_ablate(ab, out, err);
    if (vs->parsed()) return cmd_verify(ver, out);
    if (aus->parsed()) return cmd_routing_audit(au, out, err);
  } catch (const DivergenceError& e) {
    err << "g2sk: " << e.what() << "\n";
    return kDivergence;
  } catch (const InputError& e) {
    err << "g2sk: " << e.what() << "\n";
    return kInputError;
  } catch (const ParseError& e) {
    err << "g2sk: " << e.what() << "\n";
    return kInputError;
  } catch (const FormatError& e) {
    err << "g2sk: " << e.what() << "\n";
    return kInputError;
  } catch (const ConfigError& e) {
    err << "g2sk: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    err << "g2sk: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "g2sk: internal error: " << e.what() << "\n";
    return kPropertyFailure;
  }
  return kInputError;
}

}  // namespace g2s::cli
