#include "xtransfer/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "xtransfer/errors.hpp"

namespace xtransfer {

using nlohmann::json;

std::optional<double> non_targeted_asr(double s_clean, double s_adv) {
  if (!std::isfinite(s_clean) || !std::isfinite(s_adv)) throw ValidationError("ASR of non-finite scores");
  if (s_clean < 0.0) throw ValidationError("ASR needs s_clean >= 0");
  if (s_clean == 0.0) return std::nullopt;
  return 100.0 * (s_clean - s_adv) / s_clean;
}

ImageBatch victim_view(const Encoder& victim, const ImageBatch& x, const Perturbation* p) {
  const Resolution r = victim.handle().input_resolution;
  ImageBatch v = x.resolution() == r ? x : ImageBatch(resize_bilinear(x.pixels(), r.height, r.width));
  if (!p) return v;
  return apply_perturbation(v, p->resolution == r ? *p : rescale_perturbation(*p, r));
}

namespace {

double dot(const EmbeddingBatch& a, std::size_t i, const EmbeddingBatch& b, std::size_t j) {
  const std::size_t d = a.dim();
  const double* x = a.vectors.data() + i * d;
  const double* y = b.vectors.data() + j * d;
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += x[k] * y[k];
  return s;
}

std::vector<std::string> class_prompts(const DatasetManifest& m) {
  std::vector<std::string> out;
  for (const auto& c : m.class_names) out.push_back(m.prompt(c));
  return out;
}

void require_kind(const DatasetManifest& m, DatasetKind kind) {
  if (m.kind != kind) {
    throw ValidationError("manifest '" + m.id + "' is " + to_string(m.kind) + ", task needs " + to_string(kind));
  }
}

const std::string& require_target(const Perturbation& p) {
  if (!p.targeted || !p.target_text) throw ValidationError("targeted evaluation needs a targeted perturbation");
  return *p.target_text;
}

}  // namespace

std::vector<std::size_t> nearest_rows(const EmbeddingBatch& queries, const EmbeddingBatch& keys) {
  if (queries.dim() != keys.dim()) throw ShapeError("nearest_rows: embedding dims differ");
  std::vector<std::size_t> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::size_t best = 0;
    double best_s = dot(queries, i, keys, 0);
    for (std::size_t j = 1; j < keys.size(); ++j) {
      const double s = dot(queries, i, keys, j);
      if (s > best_s) {
        best_s = s;
        best = j;
      }
    }
    out[i] = best;
  }
  return out;
}

double zero_shot_classify(const Encoder& victim, const ImageBatch& images, const std::vector<std::size_t>& labels,
                          const std::vector<std::string>& prompts, const Perturbation* p) {
  if (labels.size() != images.size()) throw ValidationError("zero_shot_classify: label count mismatch");
  if (prompts.empty()) throw ValidationError("zero_shot_classify: no class prompts");
  const EmbeddingBatch zt = encode_text(victim, prompts);
  const EmbeddingBatch zi = encode_image(victim, victim_view(victim, images, p));
  const auto pred = nearest_rows(zi, zt);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

double zero_shot_classify(const Encoder& victim, const DatasetManifest& manifest, const Perturbation* p) {
  require_kind(manifest, DatasetKind::Classification);
  std::vector<std::size_t> labels;
  for (const auto& e : manifest.entries) labels.push_back(*e.label);
  return zero_shot_classify(victim, manifest.images(), labels, class_prompts(manifest), p);
}

RetrievalScores retrieval_at_1(const EmbeddingBatch& images, const EmbeddingBatch& captions,
                               const std::vector<std::size_t>& caption_owner) {
  if (caption_owner.size() != captions.size()) throw ValidationError("retrieval: caption owner count mismatch");
  RetrievalScores s;
  const auto top_caption = nearest_rows(images, captions);
  std::size_t tr = 0;
  for (std::size_t i = 0; i < images.size(); ++i) tr += caption_owner[top_caption[i]] == i;
  const auto top_image = nearest_rows(captions, images);
  std::size_t ir = 0;
  for (std::size_t c = 0; c < captions.size(); ++c) ir += top_image[c] == caption_owner[c];
  s.tr_at_1 = 100.0 * static_cast<double>(tr) / static_cast<double>(images.size());
  s.ir_at_1 = 100.0 * static_cast<double>(ir) / static_cast<double>(captions.size());
  return s;
}

RetrievalScores retrieval_metrics(const Encoder& victim, const DatasetManifest& manifest, const Perturbation* p) {
  require_kind(manifest, DatasetKind::Captioned);
  std::vector<std::string> caps;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    for (const auto& c : manifest.entries[i].captions) {
      caps.push_back(c);
      owner.push_back(i);
    }
  }
  const EmbeddingBatch zi = encode_image(victim, victim_view(victim, manifest.images(), p));
  return retrieval_at_1(zi, encode_text(victim, caps), owner);
}

double targeted_zs_asr(const Encoder& victim, const DatasetManifest& manifest, const Perturbation* p,
                       const std::string& target_text) {
  require_kind(manifest, DatasetKind::Classification);
  if (target_text.empty()) throw ValidationError("targeted evaluation needs a target text");
  if (p) require_target(*p);
  auto prompts = class_prompts(manifest);
  prompts.push_back(manifest.prompt(target_text));
  const std::size_t target = prompts.size() - 1;
  const EmbeddingBatch zt = encode_text(victim, prompts);
  const EmbeddingBatch zi = encode_image(victim, victim_view(victim, manifest.images(), p));
  const auto pred = nearest_rows(zi, zt);
  const auto hits = std::count(pred.begin(), pred.end(), target);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

double targeted_zs_asr(const Encoder& victim, const DatasetManifest& manifest, const Perturbation& p) {
  return targeted_zs_asr(victim, manifest, &p, require_target(p));
}

RankStats rank_trials(const EmbeddingBatch& clean, const EmbeddingBatch& perturbed, const std::vector<double>& query,
                      const std::vector<std::size_t>& trial_images) {
  if (clean.vectors.shape() != perturbed.vectors.shape()) throw ShapeError("rank_trials: embedding shapes differ");
  if (query.size() != clean.dim()) throw ShapeError("rank_trials: query dim mismatch");
  if (trial_images.empty()) throw ValidationError("rank trials must be >= 1");
  const std::size_t m = clean.size(), d = clean.dim();
  auto sim = [&](const EmbeddingBatch& e, std::size_t i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += e.vectors[i * d + k] * query[k];
    return s;
  };
  std::vector<double> clean_sims(m);
  for (std::size_t i = 0; i < m; ++i) clean_sims[i] = sim(clean, i);
  RankStats r;
  for (std::size_t t : trial_images) {
    const double s = sim(perturbed, t);
    std::size_t rank = 1;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == t) continue;
      if (clean_sims[j] > s || (clean_sims[j] == s && j < t)) ++rank;
    }
    r.ranks.push_back(rank);
  }
  const double n = static_cast<double>(r.ranks.size());
  for (auto v : r.ranks) r.mean += static_cast<double>(v) / n;
  double var = 0.0;
  for (auto v : r.ranks) var += (static_cast<double>(v) - r.mean) * (static_cast<double>(v) - r.mean) / n;
  r.std = std::sqrt(var);
  return r;
}

RankStats targeted_ir_rank(const Encoder& victim, const DatasetManifest& manifest, const Perturbation* p,
                           const std::string& target_text, std::size_t trials, Rng& rng) {
  if (trials < 1) throw ValidationError("targeted_ir_rank: trials must be >= 1");
  if (target_text.empty()) throw ValidationError("targeted evaluation needs a target text");
  if (p) require_target(*p);
  const ImageBatch x = manifest.images();
  const EmbeddingBatch clean = encode_image(victim, victim_view(victim, x, nullptr));
  const EmbeddingBatch adv = p ? encode_image(victim, victim_view(victim, x, p)) : clean;
  const EmbeddingBatch q = encode_text(victim, {manifest.prompt(target_text)});
  std::vector<std::size_t> picks(trials);
  for (auto& t : picks) t = static_cast<std::size_t>(rng.below(manifest.size()));
  return rank_trials(clean, adv, q.row(0), picks);
}

RankStats targeted_ir_rank(const Encoder& victim, const DatasetManifest& manifest, const Perturbation& p,
                           std::size_t trials, Rng& rng) {
  return targeted_ir_rank(victim, manifest, &p, require_target(p), trials, rng);
}

EvalReport evaluate_task(EvalTask task, const Encoder& victim, const DatasetManifest& manifest, const Perturbation& p,
                         const EvalOptions& options) {
  EvalReport r;
  r.task = task;
  r.dataset_id = manifest.id;
  r.victim_id = victim.handle().id;
  switch (task) {
    case EvalTask::ZeroShot:
      r.metric_name = "top1_accuracy";
      r.s_clean = zero_shot_classify(victim, manifest, nullptr);
      r.s_adv = zero_shot_classify(victim, manifest, &p);
      break;
    case EvalTask::TextRetrieval:
    case EvalTask::ImageRetrieval: {
      const RetrievalScores c = retrieval_metrics(victim, manifest, nullptr);
      const RetrievalScores a = retrieval_metrics(victim, manifest, &p);
      const bool tr = task == EvalTask::TextRetrieval;
      r.metric_name = tr ? "tr@1" : "ir@1";
      r.s_clean = tr ? c.tr_at_1 : c.ir_at_1;
      r.s_adv = tr ? a.tr_at_1 : a.ir_at_1;
      break;
    }
    case EvalTask::TargetedZeroShot: {
      const std::string target = options.target_text.value_or(require_target(p));
      const double clean_hit = targeted_zs_asr(victim, manifest, nullptr, target);
      const double adv_hit = targeted_zs_asr(victim, manifest, &p, target);
      // Scored as the non-target rate so the shared ASR formula applies.
      r.metric_name = "non_target_rate";
      r.s_clean = 100.0 - clean_hit;
      r.s_adv = 100.0 - adv_hit;
      r.extras["target_hit_rate_clean"] = clean_hit;
      r.extras["target_hit_rate_adv"] = adv_hit;
      break;
    }
    case EvalTask::TargetedIrRank: {
      const std::string target = options.target_text.value_or(require_target(p));
      const ImageBatch x = manifest.images();
      const EmbeddingBatch clean = encode_image(victim, victim_view(victim, x, nullptr));
      const EmbeddingBatch adv = encode_image(victim, victim_view(victim, x, &p));
      const EmbeddingBatch q = encode_text(victim, {manifest.prompt(target)});
      Rng rng(options.seed);
      std::vector<std::size_t> picks(options.rank_trials);
      for (auto& t : picks) t = static_cast<std::size_t>(rng.below(manifest.size()));
      const RankStats c = rank_trials(clean, clean, q.row(0), picks);
      const RankStats a = rank_trials(clean, adv, q.row(0), picks);
      r.metric_name = "ir_rank";
      r.s_clean = c.mean;
      r.s_adv = a.mean;
      r.extras["rank_std_clean"] = c.std;
      r.extras["rank_std_adv"] = a.std;
      r.extras["trials"] = static_cast<double>(options.rank_trials);
      r.extras["gallery_size"] = static_cast<double>(manifest.size());
      break;
    }
  }
  r.asr = non_targeted_asr(r.s_clean, r.s_adv);
  return r;
}

json report_to_json(const EvalReport& r) {
  json j{{"task", to_string(r.task)},
         {"dataset", r.dataset_id},
         {"victim", r.victim_id},
         {"metric", r.metric_name},
         {"s_clean", r.s_clean},
         {"s_adv", r.s_adv},
         {"extras", r.extras}};
  j["asr"] = r.asr ? json(*r.asr) : json("undefined");
  return j;
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.task = parse_eval_task(j.at("task").get<std::string>());
  r.dataset_id = j.at("dataset").get<std::string>();
  r.victim_id = j.at("victim").get<std::string>();
  r.metric_name = j.at("metric").get<std::string>();
  r.s_clean = j.at("s_clean").get<double>();
  r.s_adv = j.at("s_adv").get<double>();
  if (j.at("asr").is_number()) r.asr = j.at("asr").get<double>();
  r.extras = j.value("extras", std::map<std::string, double>{});
  return r;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string reports_to_csv(const std::vector<EvalReport>& reports) {
  std::string out = "task,dataset,victim,metric,s_clean,s_adv,asr\n";
  for (const auto& r : reports) {
    out += csv_field(to_string(r.task)) + "," + csv_field(r.dataset_id) + "," + csv_field(r.victim_id) + "," +
           csv_field(r.metric_name) + "," + num(r.s_clean) + "," + num(r.s_adv) + "," +
           (r.asr ? num(*r.asr) : "undefined") + "\n";
  }
  return out;
}

void check_report(const EvalReport& r) {
  if (r.s_clean > 0.0) {
    if (!r.asr) throw InvariantViolation("report with s_clean > 0 lacks an ASR");
    const double expect = 100.0 * (r.s_clean - r.s_adv) / r.s_clean;
    if (std::abs(*r.asr - expect) > 1e-9 * std::max(1.0, std::abs(expect))) {
      throw InvariantViolation("report ASR disagrees with its scores");
    }
  } else if (r.asr) {
    throw InvariantViolation("report with s_clean = 0 carries an ASR");
  }
}

}  // namespace xtransfer
