#pragma once

// Exemplar selection: score every candidate, orient scores so lower is
// better, min-max normalize over the candidate set and take the argmin.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "controlcol/color.hpp"
#include "controlcol/error.hpp"
#include "controlcol/frame_io.hpp"
#include "controlcol/quality.hpp"

namespace controlcol {

struct CandidateSet {
  std::vector<Frame> candidates;
  std::string source;
  std::vector<std::uint64_t> seeds;  // per-candidate generation seed

  std::size_t size() const noexcept { return candidates.size(); }

  void validate() const {
    if (candidates.empty()) throw InvalidArgument("candidate set is empty");
    for (const Frame& f : candidates) {
      if (!f.same_shape(candidates.front())) throw DimensionMismatch("candidates differ in size");
    }
  }
};

enum class SelectionMethod { fiq, bn, human_override };

inline std::string to_string(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::fiq: return "fiq";
    case SelectionMethod::bn: return "bn";
    case SelectionMethod::human_override: return "human_override";
  }
  return "unknown";
}

inline SelectionMethod selection_method_from_string(const std::string& s) {
  if (s == "fiq") return SelectionMethod::fiq;
  if (s == "bn") return SelectionMethod::bn;
  if (s == "human_override") return SelectionMethod::human_override;
  throw InvalidArgument("unknown selection method '" + s + "'");
}

struct ExemplarChoice {
  std::size_t index = 0;
  Frame exemplar;
  std::vector<double> raw_scores;
  std::vector<double> normalized_scores;
  SelectionMethod method = SelectionMethod::fiq;
  std::optional<std::size_t> overridden_from;
  // Per-scorer raw scores behind a combined selection (bn: niqe, brisque).
  std::vector<std::pair<std::string, std::vector<double>>> components;
};

// (s - min) / (max - min); all-equal input maps to 0.5 everywhere.
inline std::vector<double> normalize_scores(std::span<const double> scores) {
  if (scores.empty()) throw InvalidArgument("cannot normalize an empty score list");
  for (double s : scores) {
    if (!std::isfinite(s)) throw InvalidArgument("scores must be finite");
  }
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double min = *lo;
  const double range = *hi - *lo;
  std::vector<double> out(scores.size(), 0.5);
  if (range > 0.0) {
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = std::clamp((scores[i] - min) / range, 0.0, 1.0);
  }
  return out;
}

// First index of the minimum.
inline std::size_t argmin_lowest(std::span<const double> v) {
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

inline std::vector<double> oriented(std::span<const double> raw, Polarity p) {
  std::vector<double> out(raw.begin(), raw.end());
  if (p == Polarity::higher_is_better) {
    for (double& v : out) v = -v;
  }
  return out;
}

namespace detail {

inline std::vector<double> score_all(const CandidateSet& cands, const QualityScorer& scorer) {
  std::vector<double> raw;
  raw.reserve(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    try {
      raw.push_back(scorer.score(cands.candidates[i]).value);
    } catch (const std::exception& e) {
      throw ProcessError("scoring candidate " + std::to_string(i) + " with '" + scorer.id() +
                         "' failed: " + e.what());
    }
  }
  return raw;
}

}  // namespace detail

// Selection from already computed raw scores; exposed so callers that obtain
// scores elsewhere (e.g. a UI or cached run) reuse the exact rule.
inline ExemplarChoice choose_from_scores(const CandidateSet& cands, std::vector<double> raw, Polarity polarity) {
  cands.validate();
  if (raw.size() != cands.size()) throw DimensionMismatch("score count differs from candidate count");
  ExemplarChoice c;
  c.normalized_scores = normalize_scores(oriented(raw, polarity));
  c.raw_scores = std::move(raw);
  c.index = argmin_lowest(c.normalized_scores);
  c.exemplar = cands.candidates[c.index];
  c.method = SelectionMethod::fiq;
  return c;
}

inline ExemplarChoice select_exemplar(const CandidateSet& cands, const QualityScorer& scorer) {
  cands.validate();
  return choose_from_scores(cands, detail::score_all(cands, scorer), scorer.polarity());
}

// Combined score normalize(niqe) + normalize(brisque); reported halved so
// normalized_scores stay in [0,1] (argmin unchanged).
inline ExemplarChoice combine_bn_scores(const CandidateSet& cands, std::vector<double> niqe,
                                        std::vector<double> brisque) {
  cands.validate();
  if (niqe.size() != cands.size() || brisque.size() != cands.size()) {
    throw DimensionMismatch("score count differs from candidate count");
  }
  const auto nn = normalize_scores(niqe);
  const auto nb = normalize_scores(brisque);
  ExemplarChoice c;
  std::vector<double> combined(cands.size());
  for (std::size_t i = 0; i < combined.size(); ++i) combined[i] = nn[i] + nb[i];
  c.index = argmin_lowest(combined);
  c.raw_scores = combined;
  c.normalized_scores.resize(combined.size());
  for (std::size_t i = 0; i < combined.size(); ++i) c.normalized_scores[i] = 0.5 * combined[i];
  c.exemplar = cands.candidates[c.index];
  c.method = SelectionMethod::bn;
  c.components = {{kNiqeId, std::move(niqe)}, {kBrisqueId, std::move(brisque)}};
  return c;
}

inline ExemplarChoice select_exemplar_bn(const CandidateSet& cands, const QualityModel& niqe_model,
                                         const QualityModel& brisque_model) {
  cands.validate();
  const NiqeScorer niqe(niqe_model);
  const BrisqueScorer brisque(brisque_model);
  return combine_bn_scores(cands, detail::score_all(cands, niqe), detail::score_all(cands, brisque));
}

// Human override. Scores are kept for audit; the candidate frame is swapped.
inline ExemplarChoice apply_override(const ExemplarChoice& choice, const CandidateSet& cands,
                                     std::size_t human_index) {
  if (human_index >= cands.size()) {
    throw InvalidArgument("override index " + std::to_string(human_index) + " out of range for " +
                          std::to_string(cands.size()) + " candidates");
  }
  ExemplarChoice c = choice;
  c.overridden_from = choice.index;
  c.index = human_index;
  c.exemplar = cands.candidates[human_index];
  c.method = SelectionMethod::human_override;
  return c;
}

// Serialized form for run records; the exemplar frame itself is stored as a
// PNG next to the record.
inline json to_json(const ExemplarChoice& c) {
  json j = {{"index", c.index},
            {"raw_scores", c.raw_scores},
            {"normalized_scores", c.normalized_scores},
            {"method", to_string(c.method)},
            {"overridden_from", c.overridden_from ? json(*c.overridden_from) : json(nullptr)}};
  if (!c.components.empty()) {
    json comp = json::object();
    for (const auto& [name, scores] : c.components) comp[name] = scores;
    j["component_scores"] = comp;
  }
  return j;
}

inline ExemplarChoice exemplar_choice_from_json(const json& j, const CandidateSet* cands = nullptr) {
  ExemplarChoice c;
  try {
    c.index = j.at("index").get<std::size_t>();
    c.raw_scores = j.at("raw_scores").get<std::vector<double>>();
    c.normalized_scores = j.at("normalized_scores").get<std::vector<double>>();
    c.method = selection_method_from_string(j.at("method").get<std::string>());
    if (j.contains("overridden_from") && !j["overridden_from"].is_null()) {
      c.overridden_from = j["overridden_from"].get<std::size_t>();
    }
    if (j.contains("component_scores")) {
      for (const auto& item : j["component_scores"].items()) {
        c.components.emplace_back(item.key(), item.value().get<std::vector<double>>());
      }
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed exemplar choice: ") + e.what());
  }
  if (cands) {
    if (c.index >= cands->size()) throw InvalidArgument("exemplar index out of range");
    c.exemplar = cands->candidates[c.index];
  }
  return c;
}

}  // namespace controlcol
