#pragma once

// End-to-end dataflow: grayscale clip + caption -> candidate exemplars ->
// selected exemplar -> temporally propagated colour clip, plus the ablation
// modes, run records and metric reports.

#include <chrono>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "controlcol/backends.hpp"
#include "controlcol/color.hpp"
#include "controlcol/error.hpp"
#include "controlcol/frame_io.hpp"
#include "controlcol/metrics.hpp"
#include "controlcol/quality.hpp"
#include "controlcol/selection.hpp"

namespace controlcol {

// ---------------------------------------------------------------------------
// Configuration

struct BackendSpec {
  std::string id;                     // "palette" / "lut" / "external"
  std::vector<std::string> command;   // external only
  double timeout_s = 600.0;

  bool external() const noexcept { return id == "external"; }
  BackendCommand to_command() const {
    return {command, std::chrono::milliseconds(static_cast<std::int64_t>(timeout_s * 1000.0))};
  }
};

enum class SelectionMode { fiq, bn, fixed_index };
enum class Ablation { full, no_exemplar, per_frame_only };

inline std::string to_string(SelectionMode m) {
  return m == SelectionMode::fiq ? "fiq" : m == SelectionMode::bn ? "bn" : "fixed-index";
}
inline SelectionMode selection_mode_from_string(const std::string& s) {
  if (s == "fiq") return SelectionMode::fiq;
  if (s == "bn") return SelectionMode::bn;
  if (s == "fixed-index" || s == "fixed_index") return SelectionMode::fixed_index;
  throw InvalidArgument("unknown selection method '" + s + "'");
}
inline std::string to_string(Ablation a) {
  return a == Ablation::full ? "full" : a == Ablation::no_exemplar ? "no_exemplar" : "per_frame_only";
}
inline Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_exemplar") return Ablation::no_exemplar;
  if (s == "per_frame_only") return Ablation::per_frame_only;
  throw InvalidArgument("unknown ablation mode '" + s + "'");
}

struct ScorerSpec {
  std::string id = "face-proxy";  // or "external"
  std::vector<std::string> command;
  Polarity polarity = Polarity::higher_is_better;
};

struct PipelineConfig {
  fs::path clip_manifest;
  std::optional<std::string> caption;
  BackendSpec candidate_backend{"palette", {}, 600.0};
  std::size_t candidate_count = 8;
  std::uint64_t seed = 0;
  std::size_t candidate_frame = 0;
  SelectionMode selection = SelectionMode::fiq;
  std::size_t fixed_index = 0;
  ScorerSpec scorer;
  std::optional<fs::path> niqe_model;
  std::optional<fs::path> brisque_model;
  BackendSpec propagator_backend{"lut", {}, 600.0};
  double alpha = kDefaultAlpha;
  Ablation ablation = Ablation::full;
  fs::path output_dir;
  std::string method_label;  // row label in the metric report; derived when empty

  void validate() const {
    auto check_backend = [](const BackendSpec& b, const char* builtin, const char* role) {
      if (b.id != builtin && b.id != "external") {
        throw InvalidArgument(std::string("unknown ") + role + " backend id '" + b.id + "'");
      }
      if (b.external() && b.command.empty()) {
        throw InvalidArgument(std::string(role) + " backend 'external' requires a command");
      }
      if (!(b.timeout_s > 0.0)) throw InvalidArgument(std::string(role) + " backend timeout must be positive");
    };
    check_backend(candidate_backend, "palette", "candidate");
    check_backend(propagator_backend, "lut", "propagator");
    if (candidate_count < 1) throw InvalidArgument("candidate_count must be at least 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0,1]");
    if (selection == SelectionMode::fixed_index && fixed_index >= candidate_count) {
      throw InvalidArgument("fixed index " + std::to_string(fixed_index) + " out of range for " +
                            std::to_string(candidate_count) + " candidates");
    }
    if (scorer.id != "face-proxy" && scorer.id != "external") {
      throw InvalidArgument("unknown scorer id '" + scorer.id + "'");
    }
    if (scorer.id == "external" && scorer.command.empty()) throw InvalidArgument("external scorer requires a command");
    if (clip_manifest.empty()) throw InvalidArgument("clip_manifest is required");
    if (output_dir.empty()) throw InvalidArgument("output_dir is required");
  }

  std::string label() const {
    if (!method_label.empty()) return method_label;
    if (ablation != Ablation::full) return "ablation:" + to_string(ablation);
    return "pipeline:" + to_string(selection);
  }
};

namespace detail {

inline BackendSpec backend_from_json(const json& j, const std::string& fallback_id) {
  BackendSpec b{fallback_id, {}, 600.0};
  if (j.is_null()) return b;
  if (j.is_string()) {
    b.id = j.get<std::string>();
    return b;
  }
  b.id = j.value("id", fallback_id);
  if (j.contains("command")) b.command = j["command"].get<std::vector<std::string>>();
  b.timeout_s = j.value("timeout_s", 600.0);
  return b;
}

inline json backend_to_json(const BackendSpec& b) {
  json j = {{"id", b.id}};
  if (b.external()) {
    j["command"] = b.command;
    j["timeout_s"] = b.timeout_s;
  }
  return j;
}

inline fs::path resolve_against(const fs::path& base, const fs::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace detail

// Relative paths resolve against `base_dir` (the config file's directory).
inline PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base_dir = {}) {
  PipelineConfig c;
  try {
    c.clip_manifest = detail::resolve_against(base_dir, j.at("clip_manifest").get<std::string>());
    if (j.contains("caption") && !j["caption"].is_null()) c.caption = j["caption"].get<std::string>();
    c.candidate_backend = detail::backend_from_json(j.value("candidate_backend", json(nullptr)), "palette");
    c.candidate_count = j.value("candidate_count", std::size_t{8});
    c.seed = j.value("seed", std::uint64_t{0});
    c.candidate_frame = j.value("candidate_frame", std::size_t{0});
    if (j.contains("selection")) {
      const json& s = j["selection"];
      c.selection = selection_mode_from_string(s.value("method", std::string("fiq")));
      c.fixed_index = s.value("index", std::size_t{0});
      if (s.contains("scorer")) {
        const json& sc = s["scorer"];
        if (sc.is_string()) {
          c.scorer.id = sc.get<std::string>();
        } else {
          c.scorer.id = sc.value("id", std::string("face-proxy"));
          if (sc.contains("command")) c.scorer.command = sc["command"].get<std::vector<std::string>>();
          if (sc.contains("polarity")) c.scorer.polarity = polarity_from_string(sc["polarity"].get<std::string>());
        }
      }
      if (s.contains("niqe_model") && !s["niqe_model"].is_null()) {
        c.niqe_model = detail::resolve_against(base_dir, s["niqe_model"].get<std::string>());
      }
      if (s.contains("brisque_model") && !s["brisque_model"].is_null()) {
        c.brisque_model = detail::resolve_against(base_dir, s["brisque_model"].get<std::string>());
      }
    }
    c.propagator_backend = detail::backend_from_json(j.value("propagator_backend", json(nullptr)), "lut");
    c.alpha = j.value("alpha", kDefaultAlpha);
    c.ablation = ablation_from_string(j.value("ablation", std::string("full")));
    c.output_dir = detail::resolve_against(base_dir, j.at("output_dir").get<std::string>());
    c.method_label = j.value("method_label", std::string{});
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json to_json(const PipelineConfig& c) {
  json sel = {{"method", to_string(c.selection)}};
  if (c.selection == SelectionMode::fixed_index) sel["index"] = c.fixed_index;
  json scorer = {{"id", c.scorer.id}};
  if (c.scorer.id == "external") {
    scorer["command"] = c.scorer.command;
    scorer["polarity"] = to_string(c.scorer.polarity);
  }
  sel["scorer"] = scorer;
  if (c.niqe_model) sel["niqe_model"] = c.niqe_model->string();
  if (c.brisque_model) sel["brisque_model"] = c.brisque_model->string();
  json j = {{"clip_manifest", c.clip_manifest.string()},
            {"caption", c.caption ? json(*c.caption) : json(nullptr)},
            {"candidate_backend", detail::backend_to_json(c.candidate_backend)},
            {"candidate_count", c.candidate_count},
            {"seed", c.seed},
            {"candidate_frame", c.candidate_frame},
            {"selection", sel},
            {"propagator_backend", detail::backend_to_json(c.propagator_backend)},
            {"alpha", c.alpha},
            {"ablation", to_string(c.ablation)},
            {"output_dir", c.output_dir.string()}};
  if (!c.method_label.empty()) j["method_label"] = c.method_label;
  return j;
}

inline PipelineConfig read_pipeline_config(const fs::path& p) {
  return pipeline_config_from_json(read_json_file(p), p.parent_path());
}

// ---------------------------------------------------------------------------
// Metric reports

struct MetricRow {
  std::string method;
  double psnr = 0.0;  // +infinity when every frame pair is identical
  double ssim = 0.0;
  double fid = 0.0;
  double fvd = 0.0;
};

struct MetricReport {
  std::string dataset;
  std::vector<MetricRow> rows;
};

namespace detail {

inline json metric_value(double v) {
  if (std::isinf(v) && v > 0.0) return "inf";
  return v;
}

inline double metric_from_json(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw InvalidArgument("unexpected metric string '" + j.get<std::string>() + "'");
  }
  return j.get<double>();
}

inline std::string metric_text(double v, int precision) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace detail

inline json to_json(const MetricRow& r) {
  return {{"method", r.method},
          {"psnr", detail::metric_value(r.psnr)},
          {"ssim", r.ssim},
          {"fid", r.fid},
          {"fvd", r.fvd}};
}

inline MetricRow metric_row_from_json(const json& j) {
  return {j.at("method").get<std::string>(), detail::metric_from_json(j.at("psnr")), j.at("ssim").get<double>(),
          j.at("fid").get<double>(), j.at("fvd").get<double>()};
}

inline json to_json(const MetricReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  return {{"dataset", r.dataset}, {"rows", rows}};
}

inline MetricReport metric_report_from_json(const json& j) {
  MetricReport r;
  try {
    r.dataset = j.at("dataset").get<std::string>();
    for (const auto& row : j.at("rows")) r.rows.push_back(metric_row_from_json(row));
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed metric report: ") + e.what());
  }
  return r;
}

// Aligned text table: dataset, method, PSNR (higher better), SSIM (higher
// better), FID (lower better), FVD (lower better).
inline std::string format_report_table(const MetricReport& r) {
  std::size_t mw = 6;
  for (const auto& row : r.rows) mw = std::max(mw, row.method.size());
  std::size_t dw = std::max<std::size_t>(7, r.dataset.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(dw)) << "Dataset" << "  " << std::setw(static_cast<int>(mw))
     << "Method" << std::right << std::setw(10) << "PSNR^" << std::setw(8) << "SSIM^" << std::setw(11) << "FIDv"
     << std::setw(11) << "FVDv" << '\n';
  for (const auto& row : r.rows) {
    os << std::left << std::setw(static_cast<int>(dw)) << r.dataset << "  " << std::setw(static_cast<int>(mw))
       << row.method << std::right << std::setw(10) << detail::metric_text(row.psnr, 2) << std::setw(8)
       << detail::metric_text(row.ssim, 4) << std::setw(11) << detail::metric_text(row.fid, 2) << std::setw(11)
       << detail::metric_text(row.fvd, 2) << '\n';
  }
  return os.str();
}

// Optional externally extracted features replacing the toy extractors:
// each pair is (real, generated).
struct ExternalFeatures {
  std::optional<std::pair<FeatureSet, FeatureSet>> frames;
  std::optional<std::pair<FeatureSet, FeatureSet>> clips;
};

// Mean PSNR/SSIM over frame pairs, FID over frame features, FVD over
// 16-frame windows of clip features.
inline MetricRow evaluate_clips(const Clip& output, const Clip& truth, const std::string& method,
                                const ExternalFeatures& ext = {}) {
  output.validate();
  truth.validate();
  if (output.size() != truth.size()) {
    throw DimensionMismatch("frame counts differ: " + std::to_string(output.size()) + " vs " +
                            std::to_string(truth.size()));
  }
  if (output.width() != truth.width() || output.height() != truth.height()) {
    throw DimensionMismatch("frame sizes differ between output and ground truth");
  }
  MetricRow row;
  row.method = method;
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (std::size_t t = 0; t < output.size(); ++t) {
    psnr_sum += psnr(output.frames[t], truth.frames[t]);
    ssim_sum += ssim(output.frames[t], truth.frames[t]);
  }
  const double n = static_cast<double>(output.size());
  row.psnr = psnr_sum / n;
  row.ssim = ssim_sum / n;
  row.fid = ext.frames ? fid(ext.frames->first, ext.frames->second)
                       : fid(frame_feature_set(truth.frames), frame_feature_set(output.frames));
  row.fvd = ext.clips ? fvd(ext.clips->first, ext.clips->second)
                      : fvd(clip_feature_set(truth.frames), clip_feature_set(output.frames));
  return row;
}

inline MetricRow evaluate_run(const ClipManifest& output, const ClipManifest& truth, const std::string& method,
                              const ExternalFeatures& ext = {}) {
  if (output.frame_paths.size() != truth.frame_paths.size()) {
    throw DimensionMismatch("frame counts differ: " + std::to_string(output.frame_paths.size()) + " vs " +
                            std::to_string(truth.frame_paths.size()));
  }
  if (output.width != truth.width || output.height != truth.height) {
    throw DimensionMismatch("frame sizes differ between output and ground truth manifests");
  }
  return evaluate_clips(load_clip(output), load_clip(truth), method, ext);
}

// ---------------------------------------------------------------------------
// Run records

struct StageRecord {
  std::string stage;
  bool completed = false;
  std::string error;
  double millis = 0.0;
};

struct RunRecord {
  json config;
  std::optional<ExemplarChoice> choice;
  std::vector<std::size_t> per_frame_choices;
  std::vector<StageRecord> stages;
  fs::path output_manifest;
  std::optional<MetricReport> metrics;

  bool completed() const {
    return !stages.empty() && std::all_of(stages.begin(), stages.end(), [](const auto& s) { return s.completed; });
  }
};

inline json to_json(const RunRecord& r) {
  json stages = json::array();
  json timings = json::object();
  for (const auto& s : r.stages) {
    json e = {{"stage", s.stage}, {"status", s.completed ? "completed" : "failed"}};
    if (!s.completed) e["error"] = s.error;
    stages.push_back(e);
    timings[s.stage] = s.millis;
  }
  json j = {{"config", r.config},
            {"status", r.completed() ? "completed" : "failed"},
            {"stages", stages},
            {"timings_ms", timings},
            {"exemplar_choice", r.choice ? to_json(*r.choice) : json(nullptr)},
            {"output_manifest", r.output_manifest.empty() ? json(nullptr) : json(r.output_manifest.string())},
            {"metric_report", r.metrics ? to_json(*r.metrics) : json(nullptr)}};
  if (!r.per_frame_choices.empty()) j["per_frame_choices"] = r.per_frame_choices;
  return j;
}

// Drops wall-clock fields so two records of the same run compare equal.
inline json without_timings(json record) {
  record.erase("timings_ms");
  return record;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace detail {

inline std::unique_ptr<QualityScorer> make_scorer(const ScorerSpec& s) {
  if (s.id == "external") return std::make_unique<ExternalScorer>(s.command, s.polarity);
  return std::make_unique<FaceProxyScorer>();
}

class StageRunner {
 public:
  StageRunner(RunRecord& record, fs::path record_path)
      : record_(record), record_path_(std::move(record_path)) {}

  template <typename F>
  auto run(const std::string& stage, F&& fn) -> decltype(fn()) {
    const auto start = std::chrono::steady_clock::now();
    StageRecord s{stage, false, {}, 0.0};
    auto finish = [&] {
      s.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      record_.stages.push_back(s);
    };
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        s.completed = true;
        finish();
      } else {
        auto result = fn();
        s.completed = true;
        finish();
        return result;
      }
    } catch (const std::exception& e) {
      s.error = e.what();
      finish();
      flush();
      throw StageError(stage, e.what());
    }
  }

  void flush() const {
    try {
      write_json_file(record_path_, to_json(record_));
    } catch (const std::exception& e) {
      log::warn(std::string("could not write run record: ") + e.what());
    }
  }

 private:
  RunRecord& record_;
  fs::path record_path_;
};

}  // namespace detail

struct SelectionContext {
  SelectionMode mode = SelectionMode::fiq;
  std::size_t fixed_index = 0;
  const QualityScorer* scorer = nullptr;
  const QualityModel* niqe_model = nullptr;
  const QualityModel* brisque_model = nullptr;
};

inline ExemplarChoice select_with(const CandidateSet& cands, const SelectionContext& ctx) {
  switch (ctx.mode) {
    case SelectionMode::bn: return select_exemplar_bn(cands, *ctx.niqe_model, *ctx.brisque_model);
    case SelectionMode::fixed_index: return apply_override(select_exemplar(cands, *ctx.scorer), cands, ctx.fixed_index);
    case SelectionMode::fiq: break;
  }
  return select_exemplar(cands, *ctx.scorer);
}

// Seed for the candidate set of frame t in per-frame mode.
inline std::uint64_t frame_seed(std::uint64_t seed, std::size_t t) { return t == 0 ? seed : splitmix64(seed + t); }

// Executes the configured run, writing everything under cfg.output_dir:
//   run.json, gray/ (input), truth/ (when known), candidates/, exemplar.png,
//   output/ (result clip + clip.json), report.json / report.txt.
// Stage failures are recorded in run.json and rethrown as StageError.
inline RunRecord run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  const fs::path out = cfg.output_dir;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError(out.string(), "cannot create output directory");

  RunRecord record;
  record.config = to_json(cfg);
  detail::StageRunner stages(record, out / "run.json");

  Clip gray;
  std::optional<Clip> truth;
  stages.run("load", [&] {
    const ClipManifest m = read_manifest(cfg.clip_manifest);
    gray = load_clip(m);
    truth = load_ground_truth(m);
  });
  stages.run("desaturate", [&] {
    const bool colour_input = std::any_of(gray.frames.begin(), gray.frames.end(),
                                          [](const Frame& f) { return !f.is_grayscale(); });
    if (colour_input) {
      if (!truth) truth = gray;
      for (Frame& f : gray.frames) f = desaturate(f);
    }
    save_clip(gray, out / "gray", "gray");
    if (truth) save_clip(*truth, out / "truth", "truth");
  });

  const std::string caption = cfg.caption.value_or(gray.caption.value_or(""));
  if (cfg.candidate_frame >= gray.size()) {
    stages.run("generate_candidates", [&] {
      throw InvalidArgument("candidate_frame " + std::to_string(cfg.candidate_frame) + " beyond clip length");
    });
  }

  std::unique_ptr<QualityScorer> scorer;
  std::optional<QualityModel> niqe_model, brisque_model;
  auto prepare_selection = [&] {
    SelectionContext ctx{cfg.selection, cfg.fixed_index, nullptr, nullptr, nullptr};
    scorer = detail::make_scorer(cfg.scorer);
    ctx.scorer = scorer.get();
    if (cfg.selection == SelectionMode::bn) {
      niqe_model = cfg.niqe_model ? read_quality_model(*cfg.niqe_model) : builtin_niqe_model();
      brisque_model = cfg.brisque_model ? read_quality_model(*cfg.brisque_model) : builtin_brisque_model();
      ctx.niqe_model = &*niqe_model;
      ctx.brisque_model = &*brisque_model;
    }
    return ctx;
  };
  auto generate = [&](const Frame& frame, std::uint64_t seed, const fs::path& work) {
    if (cfg.candidate_backend.external()) {
      return run_external_generator(frame, caption, cfg.candidate_count, seed, work, cfg.candidate_backend.to_command());
    }
    return palette_colorize(frame, caption, cfg.candidate_count, seed);
  };

  Clip result;
  switch (cfg.ablation) {
    case Ablation::no_exemplar: {
      stages.run("propagate", [&] {
        const Frame neutral = desaturate(gray.frames.front());
        result = cfg.propagator_backend.external()
                     ? run_external_propagator(gray, neutral, out / "work" / "propagator",
                                               cfg.propagator_backend.to_command())
                     : exemplar_propagate(gray, neutral, cfg.alpha);
      });
      break;
    }
    case Ablation::per_frame_only: {
      const SelectionContext ctx = stages.run("prepare_selection", prepare_selection);
      stages.run("colorize_frames", [&] {
        result = Clip{{}, gray.fps, gray.caption, gray.caption_source};
        for (std::size_t t = 0; t < gray.size(); ++t) {
          const auto cands = generate(gray.frames[t], frame_seed(cfg.seed, t),
                                      out / "work" / ("generator_" + std::to_string(t)));
          ExemplarChoice c = select_with(cands, ctx);
          record.per_frame_choices.push_back(c.index);
          if (t == 0) record.choice = c;
          result.frames.push_back(std::move(c.exemplar));
        }
      });
      break;
    }
    case Ablation::full: {
      const CandidateSet cands = stages.run("generate_candidates", [&] {
        auto set = generate(gray.frames[cfg.candidate_frame], cfg.seed, out / "work" / "generator");
        set.validate();
        const fs::path dir = out / "candidates";
        detail::reset_dir(dir);
        for (std::size_t k = 0; k < set.size(); ++k) write_png(dir / candidate_filename(k), set.candidates[k]);
        return set;
      });
      const SelectionContext ctx = stages.run("prepare_selection", prepare_selection);
      record.choice = stages.run("select_exemplar", [&] {
        auto c = select_with(cands, ctx);
        write_png(out / "exemplar.png", c.exemplar);
        return c;
      });
      stages.run("propagate", [&] {
        result = cfg.propagator_backend.external()
                     ? run_external_propagator(gray, record.choice->exemplar, out / "work" / "propagator",
                                               cfg.propagator_backend.to_command())
                     : exemplar_propagate(gray, record.choice->exemplar, cfg.alpha);
        if (result.size() != gray.size()) throw ProcessError("propagator changed the frame count");
      });
      break;
    }
  }

  stages.run("save", [&] {
    result.caption = gray.caption;
    result.caption_source = gray.caption_source;
    ClipManifest m = save_clip(result, out / "output", "output");
    if (truth) {
      std::vector<std::string> gt;
      for (std::size_t t = 0; t < truth->size(); ++t) gt.push_back("../truth/" + frame_filename(t));
      m.ground_truth_paths = gt;
      write_manifest(out / "output" / "clip.json", m);
    }
    record.output_manifest = out / "output" / "clip.json";
  });

  if (truth) {
    stages.run("evaluate", [&] {
      MetricReport report{read_manifest(cfg.clip_manifest).name, {evaluate_clips(result, *truth, cfg.label())}};
      write_json_file(out / "report.json", to_json(report));
      write_text_file(out / "report.txt", format_report_table(report));
      record.metrics = std::move(report);
    });
  }
  stages.flush();
  return record;
}

}  // namespace controlcol
