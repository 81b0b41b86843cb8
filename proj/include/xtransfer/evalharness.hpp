#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xtransfer/core.hpp"
#include "xtransfer/dataset.hpp"
#include "xtransfer/encoders.hpp"
#include "xtransfer/rng.hpp"

namespace xtransfer {

// 100*(s_clean - s_adv)/s_clean; empty when s_clean == 0 (undefined).
std::optional<double> non_targeted_asr(double s_clean, double s_adv);

// Resizes `x` to the victim's input resolution and applies `p` (rescaled to
// match) when given.
ImageBatch victim_view(const Encoder& victim, const ImageBatch& x, const Perturbation* p);

// argmax_j <img_i, text_j>; ties resolve to the lower class index.
std::vector<std::size_t> nearest_rows(const EmbeddingBatch& queries, const EmbeddingBatch& keys);

// Top-1 accuracy in [0,100].
double zero_shot_classify(const Encoder& victim, const DatasetManifest& manifest, const Perturbation* p = nullptr);
double zero_shot_classify(const Encoder& victim, const ImageBatch& images, const std::vector<std::size_t>& labels,
                          const std::vector<std::string>& prompts, const Perturbation* p = nullptr);

struct RetrievalScores {
  double tr_at_1 = 0.0;  // images -> captions
  double ir_at_1 = 0.0;  // captions -> images
};

RetrievalScores retrieval_metrics(const Encoder& victim, const DatasetManifest& manifest,
                                  const Perturbation* p = nullptr);
// caption_owner[c] = index of the image caption c belongs to.
RetrievalScores retrieval_at_1(const EmbeddingBatch& images, const EmbeddingBatch& captions,
                               const std::vector<std::size_t>& caption_owner);

// Percentage of images whose nearest class, after adding the templated
// target text as an extra class, is the target. p == nullptr evaluates clean
// images; otherwise p must be targeted.
double targeted_zs_asr(const Encoder& victim, const DatasetManifest& manifest, const Perturbation* p,
                       const std::string& target_text);
double targeted_zs_asr(const Encoder& victim, const DatasetManifest& manifest, const Perturbation& p);

struct RankStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::vector<std::size_t> ranks;
};

// Each trial perturbs one random image and reports its 1-based rank among all
// images for the templated target query (ties rank the lower index first).
RankStats targeted_ir_rank(const Encoder& victim, const DatasetManifest& manifest, const Perturbation* p,
                           const std::string& target_text, std::size_t trials, Rng& rng);
RankStats targeted_ir_rank(const Encoder& victim, const DatasetManifest& manifest, const Perturbation& p,
                           std::size_t trials, Rng& rng);
// Rank computation over precomputed embeddings; trial image indices given.
RankStats rank_trials(const EmbeddingBatch& clean, const EmbeddingBatch& perturbed, const std::vector<double>& query,
                      const std::vector<std::size_t>& trial_images);

struct EvalOptions {
  std::size_t rank_trials = 50;
  std::uint64_t seed = 0;
  std::optional<std::string> target_text;  // defaults to the perturbation's
};

// Clean vs perturbed report for one (task, victim, dataset).
EvalReport evaluate_task(EvalTask task, const Encoder& victim, const DatasetManifest& manifest, const Perturbation& p,
                         const EvalOptions& options = {});

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
// Header "task,dataset,victim,metric,s_clean,s_adv,asr"; undefined ASR is
// written as "undefined".
std::string reports_to_csv(const std::vector<EvalReport>& reports);
// Throws InvariantViolation when a report's ASR disagrees with its scores.
void check_report(const EvalReport& r);

}  // namespace xtransfer
