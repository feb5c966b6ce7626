#pragma once

// The `controlcol` command line. run_cli() is the whole program minus
// main(), so tests drive it in-process with captured streams.
//
// Exit codes: 0 success, 1 usage error (bad flags, invalid or mismatched
// inputs), 2 runtime error (I/O, decode, backend or stage failure).

#include <CLI11.hpp>

#include <algorithm>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "controlcol/backends.hpp"
#include "controlcol/color.hpp"
#include "controlcol/error.hpp"
#include "controlcol/frame_io.hpp"
#include "controlcol/metrics.hpp"
#include "controlcol/pipeline.hpp"
#include "controlcol/quality.hpp"
#include "controlcol/selection.hpp"

namespace controlcol {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

namespace cli {

inline std::pair<int, int> parse_size(const std::string& s) {
  static const std::regex re(R"((\d+)[xX](\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw InvalidArgument("size must look like WxH, got '" + s + "'");
  const int w = std::stoi(m[1]);
  const int h = std::stoi(m[2]);
  if (w < 1 || h < 1) throw InvalidArgument("size must be positive");
  return {w, h};
}

// A manifest file, or a directory of PNG frames in name order.
inline ClipManifest open_input(const fs::path& in, const std::string& fps) {
  if (!fs::exists(in)) throw IoError(in.string(), "missing file");
  if (!fs::is_directory(in)) return read_manifest(in);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(in)) {
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  }
  if (names.empty()) throw InvalidArgument("no PNG frames in " + in.string());
  std::sort(names.begin(), names.end());
  const Frame first = read_png(in / names.front());
  ClipManifest m;
  m.name = in.filename().string();
  m.fps = fps_from_json(fps);
  m.width = first.width();
  m.height = first.height();
  m.frame_paths = names;
  m.base_dir = in;
  return m;
}

inline std::vector<fs::path> candidate_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InvalidArgument("candidate directory not found: " + dir.string());
  std::vector<fs::path> named, any;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    any.push_back(e.path());
    if (e.path().filename().string().rfind("candidate_", 0) == 0) named.push_back(e.path());
  }
  auto& chosen = named.empty() ? any : named;
  std::sort(chosen.begin(), chosen.end());
  if (chosen.empty()) throw InvalidArgument("no candidate PNGs in " + dir.string());
  return chosen;
}

inline std::string rank_table(const ExemplarChoice& c, const std::vector<fs::path>& files) {
  std::vector<std::size_t> order(files.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return c.normalized_scores[a] < c.normalized_scores[b];
  });
  std::size_t nw = 9;
  for (const auto& f : files) nw = std::max(nw, f.filename().string().size());
  std::ostringstream os;
  os << std::left << std::setw(5) << "rank" << std::setw(static_cast<int>(nw) + 2) << "candidate" << std::right
     << std::setw(16) << "raw" << std::setw(12) << "normalized" << "  selected\n";
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t i = order[r];
    os << std::left << std::setw(5) << r + 1 << std::setw(static_cast<int>(nw) + 2) << files[i].filename().string()
       << std::right << std::setw(16) << std::setprecision(8) << c.raw_scores[i] << std::setw(12) << std::fixed
       << std::setprecision(6) << c.normalized_scores[i] << std::defaultfloat << (i == c.index ? "  *" : "") << '\n';
  }
  return os.str();
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline int cmd_preprocess(const fs::path& in, const fs::path& out_dir, const std::string& size, const std::string& fps,
                          Streams io) {
  const auto [w, h] = parse_size(size);
  const ClipManifest m = open_input(in, fps);
  Clip src = load_clip(m);
  std::optional<Clip> truth = load_ground_truth(m);
  const bool colour = std::any_of(src.frames.begin(), src.frames.end(), [](const Frame& f) { return !f.is_grayscale(); });
  if (colour && !truth) truth = src;

  Clip gray{{}, src.fps, src.caption, src.caption_source};
  for (const Frame& f : src.frames) gray.frames.push_back(desaturate(resize(f, w, h)));
  json result = {{"gray", nullptr}, {"color", nullptr}};
  const std::string name = m.name.empty() ? "clip" : m.name;
  if (truth) {
    Clip colour_clip{{}, truth->fps, truth->caption, truth->caption_source};
    for (const Frame& f : truth->frames) colour_clip.frames.push_back(resize(f, w, h));
    save_clip(colour_clip, out_dir / "color", name + "-color");
    result["color"] = (out_dir / "color" / "clip.json").string();
  }
  ClipManifest gm = save_clip(gray, out_dir / "gray", name + "-gray");
  if (truth) {
    std::vector<std::string> gt;
    for (std::size_t t = 0; t < gray.size(); ++t) gt.push_back("../color/" + frame_filename(t));
    gm.ground_truth_paths = gt;
    write_manifest(out_dir / "gray" / "clip.json", gm);
  }
  result["gray"] = (out_dir / "gray" / "clip.json").string();
  io.out << result.dump() << '\n';
  return kExitOk;
}

inline int cmd_colorize(const fs::path& config, const std::string& ablation, const std::optional<std::uint64_t>& seed,
                        const std::string& output_dir, Streams io) {
  PipelineConfig cfg = read_pipeline_config(config);
  if (!ablation.empty()) cfg.ablation = ablation_from_string(ablation);
  if (seed) cfg.seed = *seed;
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  cfg.validate();
  const RunRecord r = run_pipeline(cfg);
  io.out << (cfg.output_dir / "run.json").string() << '\n';
  if (r.metrics) io.err << format_report_table(*r.metrics);
  return kExitOk;
}

struct RankOptions {
  fs::path dir;
  std::string method = "fiq";
  std::vector<std::string> scorer_command;
  std::string polarity = "higher-is-better";
  std::string niqe_model;
  std::string brisque_model;
  std::string record;
  bool json_out = false;
};

inline int cmd_rank(const RankOptions& o, Streams io) {
  const auto files = candidate_files(o.dir);
  CandidateSet cands;
  cands.source = o.dir.string();
  for (const auto& f : files) cands.candidates.push_back(read_png(f));
  cands.validate();
  ExemplarChoice c;
  if (o.method == "bn") {
    const QualityModel niqe = o.niqe_model.empty() ? builtin_niqe_model() : read_quality_model(o.niqe_model);
    const QualityModel brisque = o.brisque_model.empty() ? builtin_brisque_model() : read_quality_model(o.brisque_model);
    c = select_exemplar_bn(cands, niqe, brisque);
  } else if (!o.scorer_command.empty()) {
    c = select_exemplar(cands, ExternalScorer(o.scorer_command, polarity_from_string(o.polarity)));
  } else {
    c = select_exemplar(cands, FaceProxyScorer());
  }
  json j = to_json(c);
  json names = json::array();
  for (const auto& f : files) names.push_back(f.filename().string());
  j["files"] = names;
  if (!o.record.empty()) write_json_file(o.record, j);
  if (o.json_out) {
    io.out << j.dump(2) << '\n';
  } else {
    io.out << "method: " << to_string(c.method) << '\n' << rank_table(c, files);
  }
  return kExitOk;
}

struct EvaluateOptions {
  fs::path output;
  fs::path truth;
  std::vector<std::string> features;
  std::string label = "output";
  std::string dataset;
  std::string write;
  bool json_out = false;
};

// Feature files pair up per unit in command-line order: real, then generated.
inline ExternalFeatures load_external_features(const std::vector<std::string>& paths) {
  std::map<FeatureUnit, std::vector<FeatureSet>> by_unit;
  for (const auto& p : paths) {
    FeatureSet s = read_features(p);
    by_unit[s.unit].push_back(std::move(s));
  }
  ExternalFeatures ext;
  for (auto& [unit, sets] : by_unit) {
    if (sets.size() != 2) {
      throw InvalidArgument("expected one real and one generated " + to_string(unit) + " feature file, got " +
                            std::to_string(sets.size()));
    }
    if (sets[0].extractor_id != sets[1].extractor_id) {
      throw InvalidArgument("feature extractor ids differ: '" + sets[0].extractor_id + "' vs '" +
                            sets[1].extractor_id + "'");
    }
    auto pair = std::make_pair(std::move(sets[0]), std::move(sets[1]));
    if (unit == FeatureUnit::frame) ext.frames = std::move(pair);
    else ext.clips = std::move(pair);
  }
  return ext;
}

inline int cmd_evaluate(const EvaluateOptions& o, Streams io) {
  const ExternalFeatures ext = load_external_features(o.features);
  const ClipManifest out = read_manifest(o.output);
  ClipManifest truth = read_manifest(o.truth);
  MetricReport report;
  report.dataset = o.dataset.empty() ? (truth.name.empty() ? "dataset" : truth.name) : o.dataset;
  report.rows.push_back(evaluate_run(out, truth, o.label, ext));
  if (!o.write.empty()) write_json_file(o.write, to_json(report));
  if (o.json_out) io.out << to_json(report).dump(2) << '\n';
  else io.out << format_report_table(report);
  return kExitOk;
}

inline int cmd_survey(const fs::path& votes_path, bool json_out, Streams io) {
  if (!fs::exists(votes_path)) throw IoError(votes_path.string(), "missing file");
  const auto bytes = read_file_bytes(votes_path);
  const auto votes = parse_votes_csv(std::string(bytes.begin(), bytes.end()), votes_path.string());
  const auto tallies = mos_tally(votes);
  if (json_out) {
    json j = json::array();
    for (const auto& t : tallies) j.push_back(to_json(t));
    io.out << j.dump(2) << '\n';
  } else {
    io.out << format_tally_table(tallies);
  }
  return kExitOk;
}

}  // namespace cli

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"controlcol: controllable speaker-video colorization and evaluation", "controlcol"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "controlcol 1.0.0");
  cli::Streams io{out, err};

  auto* pre = app.add_subcommand("preprocess", "Rescale a clip and write gray + color pair manifests");
  std::string pre_in, pre_out, pre_size = "128x128", pre_fps = "25";
  pre->add_option("--in", pre_in, "Input clip manifest (or directory of PNG frames)")->required();
  pre->add_option("--out", pre_out, "Output directory (gets gray/ and color/)")->required();
  pre->add_option("--size", pre_size, "Target size WxH")->capture_default_str();
  pre->add_option("--fps", pre_fps, "Frame rate when --in is a directory")->capture_default_str();

  auto* col = app.add_subcommand("colorize", "Run the colorization pipeline from a config file");
  std::string col_config, col_ablation, col_out;
  std::optional<std::uint64_t> col_seed;
  col->add_option("--config", col_config, "Pipeline config JSON")->required();
  col->add_option("--ablation", col_ablation, "Override ablation mode")
      ->check(CLI::IsMember({"full", "no_exemplar", "per_frame_only"}));
  col->add_option("--seed", col_seed, "Override candidate seed");
  col->add_option("--output-dir", col_out, "Override output directory");

  auto* rank = app.add_subcommand("rank", "Score and rank a directory of candidate exemplars");
  cli::RankOptions ro;
  rank->add_option("--candidates", ro.dir, "Directory of candidate PNGs")->required();
  rank->add_option("--method", ro.method, "Selection method")->check(CLI::IsMember({"fiq", "bn"}))->capture_default_str();
  rank->add_option("--scorer-command", ro.scorer_command, "External scorer command (fiq); repeat per argv word");
  rank->add_option("--polarity", ro.polarity, "External scorer polarity")
      ->check(CLI::IsMember({"higher-is-better", "lower-is-better"}))
      ->capture_default_str();
  rank->add_option("--niqe-model", ro.niqe_model, "NIQE model JSON (bn)");
  rank->add_option("--brisque-model", ro.brisque_model, "BRISQUE model JSON (bn)");
  rank->add_option("--record", ro.record, "Write the exemplar choice JSON here");
  rank->add_flag("--json", ro.json_out, "Print JSON instead of a table");

  auto* ev = app.add_subcommand("evaluate", "Compute PSNR, SSIM, FID and FVD against ground truth");
  cli::EvaluateOptions eo;
  ev->add_option("--output", eo.output, "Output clip manifest")->required();
  ev->add_option("--truth", eo.truth, "Ground-truth clip manifest")->required();
  ev->add_option("--features", eo.features,
                 "External feature file; give real then generated per unit (frame, clip)");
  ev->add_option("--label", eo.label, "Method label for the report row")->capture_default_str();
  ev->add_option("--dataset", eo.dataset, "Dataset label (default: truth manifest name)");
  ev->add_option("--write", eo.write, "Also write the report JSON here");
  ev->add_flag("--json", eo.json_out, "Print JSON instead of a table");

  auto* sv = app.add_subcommand("survey-tally", "Tally a preference survey votes CSV");
  std::string sv_votes;
  bool sv_json = false;
  sv->add_option("--votes", sv_votes, "CSV with header question_id,participant_id,option")->required();
  sv->add_flag("--json", sv_json, "Print JSON instead of a table");

  std::vector<const char*> argv{"controlcol"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (pre->parsed()) return cli::cmd_preprocess(pre_in, pre_out, pre_size, pre_fps, io);
    if (col->parsed()) return cli::cmd_colorize(col_config, col_ablation, col_seed, col_out, io);
    if (rank->parsed()) return cli::cmd_rank(ro, io);
    if (ev->parsed()) return cli::cmd_evaluate(eo, io);
    if (sv->parsed()) return cli::cmd_survey(sv_votes, sv_json, io);
  } catch (const InvalidArgument& e) {
    err << "controlcol: error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const StageError& e) {
    err << "controlcol: error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "controlcol: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace controlcol
