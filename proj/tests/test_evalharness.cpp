#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "xtransfer/dataset.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/evalharness.hpp"

using namespace xtransfer;
using namespace xtransfer::testing;

namespace {

EmbeddingBatch rows(std::vector<std::vector<double>> r) {
  const std::size_t d = r.front().size();
  Tensor t({r.size(), d});
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) t[i * d + j] = r[i][j];
  }
  return EmbeddingBatch{t};
}

DatasetManifest in_memory_classification(std::size_t n, std::size_t res, std::uint64_t seed) {
  DatasetManifest m;
  m.id = "mem";
  m.class_names = {"red circle", "green square", "blue cross"};
  const Tensor px = random_tensor({n, 3, res, res}, seed, 0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    DatasetEntry e;
    e.pixels = px.rows(i, i + 1).reshaped({3, res, res});
    e.label = i % 3;
    m.entries.push_back(e);
  }
  return m;
}

}  // namespace

TEST(Asr, FormulaAndSentinel) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double c = rng.uniform(0.1, 100.0), a = rng.uniform(0.0, 100.0);
    EXPECT_NEAR(*non_targeted_asr(c, a), 100.0 * (c - a) / c, 1e-9 * std::max(1.0, std::abs(100.0 * (c - a) / c)));
  }
  EXPECT_FALSE(non_targeted_asr(0.0, 0.0).has_value());
  EXPECT_FALSE(non_targeted_asr(0.0, 5.0).has_value());
  EXPECT_DOUBLE_EQ(*non_targeted_asr(50.0, 50.0), 0.0);
  EXPECT_DOUBLE_EQ(*non_targeted_asr(40.0, 60.0), -50.0);
  EXPECT_THROW(non_targeted_asr(-1.0, 0.0), ValidationError);
  EXPECT_THROW(non_targeted_asr(10.0, std::nan("")), ValidationError);
}

TEST(NearestRows, TiesGoToLowerIndex) {
  const EmbeddingBatch q = rows({{1, 0}, {0, 1}, {0.6, 0.8}});
  const EmbeddingBatch k = rows({{0, 1}, {1, 0}, {0, 1}});
  EXPECT_EQ(nearest_rows(q, k), (std::vector<std::size_t>{1, 0, 0}));
}

TEST(Retrieval, AtOneOracle) {
  const EmbeddingBatch img = rows({{1, 0}, {0, 1}, {0.8, 0.6}});
  // captions 0,1 belong to image 0; caption 2 to image 1; caption 3 to image 2
  const EmbeddingBatch cap = rows({{0.6, 0.8}, {1, 0}, {0, 1}, {0.8, 0.6}});
  const RetrievalScores s = retrieval_at_1(img, cap, {0, 0, 1, 2});
  // image->caption: img0 -> cap1 (own), img1 -> cap2 (own), img2 -> cap3 (own)
  EXPECT_DOUBLE_EQ(s.tr_at_1, 100.0);
  // caption->image: cap0 -> img2 (wrong), cap1 -> img0, cap2 -> img1, cap3 -> img2
  EXPECT_DOUBLE_EQ(s.ir_at_1, 75.0);
}

TEST(RankTrials, CountsHigherAndTiedLowerIndex) {
  const EmbeddingBatch clean = rows({{1, 0}, {0.8, 0.6}, {0, 1}, {0.8, 0.6}});
  EmbeddingBatch adv = clean;
  const std::vector<double> query = {1, 0};
  RankStats r = rank_trials(clean, adv, query, {0, 1, 2, 3});
  EXPECT_EQ(r.ranks, (std::vector<std::size_t>{1, 2, 4, 3}));
  EXPECT_DOUBLE_EQ(r.mean, 2.5);
  EXPECT_NEAR(r.std, std::sqrt(1.25), 1e-12);
  adv = rows({{1, 0}, {1, 0}, {1, 0}, {1, 0}});
  r = rank_trials(clean, adv, query, {2, 3});
  // perturbed image 2 ties image 0 (lower index ranks first) -> rank 2
  EXPECT_EQ(r.ranks, (std::vector<std::size_t>{2, 2}));
}

TEST(ZeroShot, MatchesEmbeddingOracle) {
  auto enc = tiny_encoder(3);
  const DatasetManifest m = in_memory_classification(12, 16, 4);
  const ImageBatch x = m.images();
  std::vector<std::string> prompts;
  for (const auto& c : m.class_names) prompts.push_back(m.prompt(c));
  const EmbeddingBatch zi = encode_image(*enc, x);
  const EmbeddingBatch zt = enc->encode_text(prompts);
  const auto pred = nearest_rows(zi, zt);
  double hits = 0;
  for (std::size_t i = 0; i < 12; ++i) hits += pred[i] == *m.entries[i].label;
  EXPECT_DOUBLE_EQ(zero_shot_classify(*enc, m), 100.0 * hits / 12.0);
  const Perturbation zero = Perturbation::identity(ThreatModel::linf(0.05), {16, 16});
  EXPECT_DOUBLE_EQ(zero_shot_classify(*enc, m, &zero), zero_shot_classify(*enc, m));
}

TEST(VictimView, ResizesImagesAndPerturbation) {
  auto enc = tiny_encoder(5, 16);
  const ImageBatch x = random_images(2, 24, 6);
  Perturbation p = Perturbation::identity(ThreatModel::linf(0.05), {32, 32});
  for (auto& v : p.delta.values) v = 0.04f;
  const ImageBatch v = victim_view(*enc, x, &p);
  EXPECT_EQ(v.resolution(), (Resolution{16, 16}));
  const ImageBatch clean = victim_view(*enc, x, nullptr);
  for (std::size_t i = 0; i < v.pixels().size(); ++i) {
    EXPECT_NEAR(v.pixels()[i], std::min(1.0, clean.pixels()[i] + 0.04), 1e-6);
  }
}

TEST(EvaluateTask, ReportsAreConsistent) {
  auto enc = tiny_encoder(7);
  const DatasetManifest m = in_memory_classification(9, 16, 8);
  Perturbation p = Perturbation::identity(ThreatModel::linf(0.05), {16, 16});
  for (std::size_t i = 0; i < p.delta.values.size(); ++i) p.delta.values[i] = (i % 3 ? 0.05f : -0.05f) * 0.99f;
  const EvalReport r = evaluate_task(EvalTask::ZeroShot, *enc, m, p);
  EXPECT_EQ(r.metric_name, "top1_accuracy");
  EXPECT_EQ(r.victim_id, enc->handle().id);
  EXPECT_NO_THROW(check_report(r));
  EXPECT_THROW(evaluate_task(EvalTask::TargetedZeroShot, *enc, m, p), ValidationError);
  p.targeted = true;
  p.target_text = "blue cross";
  const EvalReport t = evaluate_task(EvalTask::TargetedIrRank, *enc, m, p, {.rank_trials = 10, .seed = 1});
  EXPECT_EQ(t.metric_name, "ir_rank");
  EXPECT_GE(t.s_clean, 1.0);
  EXPECT_LE(t.s_clean, 9.0);
  EXPECT_EQ(t.extras.at("trials"), 10.0);
  EXPECT_NO_THROW(check_report(t));
}

TEST(Reports, JsonCsvAndCheck) {
  EvalReport r;
  r.task = EvalTask::TextRetrieval;
  r.dataset_id = "coco,mini";
  r.victim_id = "toy-4";
  r.metric_name = "tr@1";
  r.s_clean = 80.0;
  r.s_adv = 20.0;
  r.asr = non_targeted_asr(80.0, 20.0);
  EvalReport u = r;
  u.s_clean = 0.0;
  u.s_adv = 0.0;
  u.asr.reset();
  const EvalReport back = report_from_json(report_to_json(u));
  EXPECT_FALSE(back.asr.has_value());
  EXPECT_EQ(report_to_json(u).at("asr"), "undefined");
  EXPECT_EQ(reports_to_csv({r, u}),
            "task,dataset,victim,metric,s_clean,s_adv,asr\n"
            "text_retrieval,\"coco,mini\",toy-4,tr@1,80,20,75\n"
            "text_retrieval,\"coco,mini\",toy-4,tr@1,0,0,undefined\n");
  EXPECT_NO_THROW(check_report(r));
  EvalReport bad = r;
  bad.asr = 10.0;
  EXPECT_THROW(check_report(bad), InvariantViolation);
  bad = u;
  bad.asr = 0.0;
  EXPECT_THROW(check_report(bad), InvariantViolation);
}
