#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "controlcol/cli.hpp"
#include "controlcol/subprocess.hpp"
#include "fixtures.hpp"

using namespace controlcol;
using testing_support::speaker_clip;
using testing_support::TempDir;
using testing_support::write_speaker_fixture;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const TempDir& tmp, json extra = json::object()) {
  json j = {{"clip_manifest", write_speaker_fixture(tmp / "fixture").string()},
            {"seed", 5},
            {"candidate_count", 4},
            {"output_dir", (tmp / "run").string()}};
  j.update(extra);
  write_json_file(tmp / "config.json", j);
  return tmp / "config.json";
}

const std::string fixtures = CONTROLCOL_FIXTURES;

}  // namespace

TEST(CliPreprocess, RescalesToPairManifests) {
  TempDir tmp;
  save_clip(speaker_clip(4, 360, 288), tmp / "src", "grid");
  const auto r = invoke({"preprocess", "--in", (tmp / "src" / "clip.json").string(), "--out", (tmp / "out").string(),
                      "--size", "128x128"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  const ClipManifest gray = read_manifest(j["gray"].get<std::string>());
  const ClipManifest color = read_manifest(j["color"].get<std::string>());
  EXPECT_EQ(gray.width, 128);
  EXPECT_EQ(gray.height, 128);
  EXPECT_EQ(color.width, 128);
  const Clip g = load_clip(gray), c = load_clip(color);
  ASSERT_EQ(g.size(), 4u);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_TRUE(g.frames[t].is_grayscale());
    EXPECT_EQ(g.frames[t], desaturate(c.frames[t]));
  }
  EXPECT_EQ(g.caption, speaker_clip(1).caption);
  ASSERT_TRUE(gray.ground_truth_paths);
  EXPECT_EQ(load_ground_truth(gray)->frames[0], c.frames[0]);
}

TEST(CliPreprocess, GrayInputRoundTripsAndDirectoryInput) {
  TempDir tmp;
  Clip gray = speaker_clip(3);
  for (auto& f : gray.frames) f = desaturate(f);
  save_clip(gray, tmp / "src", "g");
  const auto r = invoke({"preprocess", "--in", (tmp / "src" / "clip.json").string(), "--out", (tmp / "out").string(),
                      "--size", "64x64"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_TRUE(j["color"].is_null());
  const Clip back = load_clip(read_manifest(j["gray"].get<std::string>()));
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(back.frames[t], gray.frames[t]);

  const auto d = invoke({"preprocess", "--in", (tmp / "src").string(), "--out", (tmp / "dir").string(), "--size", "32x32"});
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_EQ(read_manifest(tmp / "dir" / "gray" / "clip.json").frame_paths.size(), 3u);
}

TEST(CliPreprocess, MissingFileIsRuntimeError) {
  TempDir tmp;
  const std::string missing = (tmp / "absent.json").string();
  const auto r = invoke({"preprocess", "--in", missing, "--out", (tmp / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(missing), std::string::npos);
  EXPECT_EQ(invoke({"preprocess", "--in", missing, "--out", (tmp / "o").string(), "--size", "12"}).code, 1);
}

TEST(CliColorize, RunsAndHonoursOverrides) {
  TempDir tmp;
  const auto cfg = write_config(tmp);
  const auto r = invoke({"colorize", "--config", cfg.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path run_json = r.out.substr(0, r.out.find('\n'));
  const json rec = read_json_file(run_json);
  EXPECT_EQ(rec["status"], "completed");
  EXPECT_EQ(rec["config"]["ablation"], "full");

  const auto a = invoke({"colorize", "--config", cfg.string(), "--ablation", "per_frame_only", "--output-dir",
                      (tmp / "ablate").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  const json arec = read_json_file(tmp / "ablate" / "run.json");
  EXPECT_EQ(arec["config"]["ablation"], "per_frame_only");
  EXPECT_EQ(arec["per_frame_choices"].size(), 24u);
  EXPECT_EQ(invoke({"colorize", "--config", cfg.string(), "--ablation", "bogus"}).code, 1);
}

TEST(CliColorize, DeterministicOutputs) {
  TempDir tmp;
  const auto cfg = write_config(tmp);
  ASSERT_EQ(invoke({"colorize", "--config", cfg.string(), "--output-dir", (tmp / "a").string()}).code, 0);
  ASSERT_EQ(invoke({"colorize", "--config", cfg.string(), "--output-dir", (tmp / "b").string()}).code, 0);
  for (std::size_t t = 0; t < 24; ++t) {
    const auto name = frame_filename(t);
    EXPECT_EQ(read_file_bytes(tmp / "a" / "output" / name), read_file_bytes(tmp / "b" / "output" / name));
  }
  ASSERT_EQ(invoke({"colorize", "--config", cfg.string(), "--output-dir", (tmp / "c").string(), "--seed", "6"}).code, 0);
  EXPECT_NE(read_file_bytes(tmp / "a" / "candidates" / candidate_filename(1)),
            read_file_bytes(tmp / "c" / "candidates" / candidate_filename(1)));
}

TEST(CliColorize, UsageAndStageErrors) {
  TempDir tmp;
  const auto bad = write_config(tmp, {{"candidate_backend", "lcad"}});
  const auto r = invoke({"colorize", "--config", bad.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("lcad"), std::string::npos);

  const auto failing = write_config(tmp, {{"candidate_backend", {{"id", "external"}, {"command", {"/bin/false"}}}}});
  const auto f = invoke({"colorize", "--config", failing.string()});
  EXPECT_EQ(f.code, 2);
  EXPECT_NE(f.err.find("generate_candidates"), std::string::npos);
  EXPECT_EQ(invoke({"colorize", "--config", (tmp / "none.json").string()}).code, 2);
}

TEST(CliRank, SelectsOracleArgmin) {
  TempDir tmp;
  const Frame g = desaturate(speaker_clip(1).frames[0]);
  const auto set = palette_colorize(g, "a red shirt in front of a blue wall", 3, 8);
  fs::create_directories(tmp / "cands");
  std::size_t best = 0, best_size = SIZE_MAX;
  for (std::size_t k = 0; k < 3; ++k) {
    write_png(tmp / "cands" / candidate_filename(k), set.candidates[k]);
    const std::size_t sz = encode_png(set.candidates[k]).size();
    if (sz < best_size) {
      best_size = sz;
      best = k;
    }
  }
  const auto r = invoke({"rank", "--candidates", (tmp / "cands").string(), "--scorer-command",
                      fixtures + "/size_scorer.sh", "--polarity", "lower-is-better", "--json", "--record",
                      (tmp / "choice.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["index"], best);
  EXPECT_EQ(j["raw_scores"][best], static_cast<double>(best_size));
  EXPECT_EQ(read_json_file(tmp / "choice.json"), j);

  const auto table = invoke({"rank", "--candidates", (tmp / "cands").string(), "--scorer-command",
                          fixtures + "/size_scorer.sh", "--polarity", "lower-is-better"});
  ASSERT_EQ(table.code, 0);
  std::istringstream lines(table.out);
  std::string line;
  int marked = 0;
  while (std::getline(lines, line)) {
    if (line.size() > 2 && line.substr(line.size() - 1) == "*") {
      ++marked;
      EXPECT_NE(line.find(candidate_filename(best)), std::string::npos);
      EXPECT_EQ(line.rfind("1", 0), 0u);  // lowest normalized score ranks first
    }
  }
  EXPECT_EQ(marked, 1);

  const auto bn = invoke({"rank", "--candidates", (tmp / "cands").string(), "--method", "bn", "--json"});
  ASSERT_EQ(bn.code, 0) << bn.err;
  EXPECT_EQ(json::parse(bn.out)["method"], "bn");
}

TEST(CliRank, SingleAndEmpty) {
  TempDir tmp;
  fs::create_directories(tmp / "one");
  fs::create_directories(tmp / "empty");
  write_png(tmp / "one" / "x.png", speaker_clip(1).frames[0]);
  const auto r = invoke({"rank", "--candidates", (tmp / "one").string(), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["index"], 0);
  EXPECT_EQ(invoke({"rank", "--candidates", (tmp / "empty").string()}).code, 1);
  EXPECT_EQ(invoke({"rank", "--candidates", (tmp / "one").string(), "--method", "nope"}).code, 1);
}

TEST(CliEvaluate, IdenticalManifestsAndFeatureFiles) {
  TempDir tmp;
  const fs::path m = write_speaker_fixture(tmp / "clip");
  const auto r = invoke({"evaluate", "--output", m.string(), "--truth", m.string(), "--json", "--label", "self"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["rows"][0]["method"], "self");
  EXPECT_EQ(j["rows"][0]["psnr"], "inf");
  EXPECT_EQ(j["rows"][0]["ssim"], 1.0);
  EXPECT_NEAR(j["rows"][0]["fid"].get<double>(), 0.0, 1e-8);

  const auto table = invoke({"evaluate", "--output", m.string(), "--truth", m.string()});
  EXPECT_NE(table.out.find("PSNR"), std::string::npos);

  FeatureSet a{{{1.0, 2.0}, {2.0, 1.0}, {0.0, 0.0}}, "inception", FeatureUnit::frame};
  FeatureSet b = a;
  for (auto& v : b.vectors) v[0] += 3.0;
  write_features(tmp / "real.txt", a);
  write_features(tmp / "gen.txt", b);
  const auto f = invoke({"evaluate", "--output", m.string(), "--truth", m.string(), "--features",
                      (tmp / "real.txt").string(), "--features", (tmp / "gen.txt").string(), "--json"});
  ASSERT_EQ(f.code, 0) << f.err;
  EXPECT_NEAR(json::parse(f.out)["rows"][0]["fid"].get<double>(), 9.0, 1e-6);

  b.extractor_id = "clip-vit";
  write_features(tmp / "other.txt", b);
  const auto mm = invoke({"evaluate", "--output", m.string(), "--truth", m.string(), "--features",
                       (tmp / "real.txt").string(), "--features", (tmp / "other.txt").string()});
  EXPECT_EQ(mm.code, 1);
  EXPECT_NE(mm.err.find("clip-vit"), std::string::npos);

  const fs::path shorter = write_speaker_fixture(tmp / "short", 5);
  EXPECT_EQ(invoke({"evaluate", "--output", shorter.string(), "--truth", m.string()}).code, 1);
}

TEST(CliSurvey, FixtureCountsAsJson) {
  const auto r = invoke({"survey-tally", "--votes", fixtures + "/survey_votes.csv", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0]["counts"]["DeOldify"], 2);
  EXPECT_EQ(j[0]["counts"]["ControlCol"], 21);
  EXPECT_EQ(j[1]["counts"]["DeOldify"], 9);
  EXPECT_EQ(j[1]["counts"]["Ground truth"], 19);
  EXPECT_EQ(j[1]["counts"]["ControlCol"], 18);
  const auto t = invoke({"survey-tally", "--votes", fixtures + "/survey_votes.csv"});
  EXPECT_NE(t.out.find("ControlCol"), std::string::npos);
  EXPECT_EQ(invoke({"survey-tally", "--votes", "/nonexistent.csv"}).code, 2);
}

TEST(CliHelp, EverySubcommandExitsZero) {
  EXPECT_EQ(invoke({"--help"}).code, 0);
  for (const char* sub : {"preprocess", "colorize", "rank", "evaluate", "survey-tally"}) {
    const auto r = invoke({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
  }
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
}

TEST(CliBinary, ExitCodesThroughProcess) {
  ProcessOptions opts;
  opts.capture_stdout = true;
  EXPECT_EQ(run_process({CONTROLCOL_CLI, "rank", "--help"}, opts).exit_code, 0);
  EXPECT_EQ(run_process({CONTROLCOL_CLI, "colorize"}, opts).exit_code, 1);
  const auto r = run_process({CONTROLCOL_CLI, "survey-tally", "--votes", fixtures + "/survey_votes.csv", "--json"}, opts);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(json::parse(r.stdout_text).size(), 2u);
}
