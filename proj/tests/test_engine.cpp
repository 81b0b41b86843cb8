#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"
#include "xtransfer/autodiff.hpp"
#include "xtransfer/engine.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/objectives.hpp"

using namespace xtransfer;
using namespace xtransfer::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct JobSetup {
  std::shared_ptr<EncoderRegistry> registry = std::make_shared<EncoderRegistry>();
  AttackConfig config;
  ImageBatch images;
};

JobSetup make_setup(std::size_t n = 3, std::size_t k = 1, ThreatModel tm = ThreatModel::linf(12.0 / 255.0)) {
  JobSetup s;
  s.config.search_space = tiny_space(n, *s.registry);
  s.config.k = k;
  s.config.threat_model = tm;
  s.config.resolution = {16, 16};
  s.config.batch_size = 4;
  s.config.total_steps = 12;
  s.config.seed = 5;
  s.images = random_images(10, 16, 77);
  return s;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xtransfer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void expect_same_trace(const AttackTrace& a, const AttackTrace& b) {
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    EXPECT_EQ(a.steps[i].chosen, b.steps[i].chosen) << "step " << i;
    EXPECT_EQ(a.steps[i].losses, b.steps[i].losses) << "step " << i;
    EXPECT_EQ(a.steps[i].total_loss, b.steps[i].total_loss) << "step " << i;
  }
  EXPECT_EQ(a.final_state, b.final_state);
}

}  // namespace

TEST(AttackConfigTest, ValidationPointers) {
  JobSetup s = make_setup();
  auto pointer_of = [](const AttackConfig& c) {
    try {
      c.validate();
    } catch (const ValidationError& e) {
      return e.pointer;
    }
    return std::string("<none>");
  };
  AttackConfig c = s.config;
  c.k = 4;
  EXPECT_EQ(pointer_of(c), "/k");
  c = s.config;
  c.strategy = SelectionStrategy::fixed_all();
  EXPECT_EQ(pointer_of(c), "/k");
  c = s.config;
  c.targeted = true;
  EXPECT_EQ(pointer_of(c), "/target_text");
  c = s.config;
  c.threat_model.epsilon = -1.0;
  EXPECT_EQ(pointer_of(c), "/threat_model");
  c = s.config;
  c.strategy = SelectionStrategy::fixed_set({"nope"});
  EXPECT_EQ(pointer_of(c), "/strategy/fixed_ids");
  EXPECT_EQ(pointer_of(s.config), "<none>");
}

TEST(AttackConfigTest, JsonRoundTripAndUnknownKeys) {
  JobSetup s = make_setup(3, 2);
  s.config.strategy = SelectionStrategy::epsilon_greedy(0.2);
  const json j = s.config;
  const AttackConfig back = j.get<AttackConfig>();
  EXPECT_EQ(back.digest(), s.config.digest());
  EXPECT_EQ(json(back), j);
  json bad = j;
  bad["learning_rat"] = 0.1;
  try {
    (void)bad.get<AttackConfig>();
    FAIL() << "unknown key accepted";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.pointer, "/learning_rat");
  }
  bad = j;
  bad["k"] = "two";
  try {
    (void)bad.get<AttackConfig>();
    FAIL() << "bad type accepted";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.pointer, "/k");
  }
}

TEST(AttackConfigTest, DigestIgnoresOperationalSettings) {
  JobSetup s = make_setup();
  AttackConfig c = s.config;
  c.workers = 3;
  c.total_steps = 99;
  c.checkpoint_every = 5;
  c.checkpoint_path = "x.ckpt";
  EXPECT_EQ(c.digest(), s.config.digest());
  c.seed = 6;
  EXPECT_NE(c.digest(), s.config.digest());
}

TEST(AttackJobTest, LinfProjectionHoldsEveryStep) {
  JobSetup s = make_setup(3, 2);
  s.config.step_size = 4.0 / 255.0;
  AttackJob job(s.config, s.registry, s.images);
  const double eps = 12.0 / 255.0;
  while (!job.done()) {
    job.step();
    for (double v : job.delta().values()) ASSERT_LE(std::abs(v), eps);
    const Perturbation p = job.perturbation();
    for (float v : p.delta.values) ASSERT_LE(std::abs(static_cast<double>(v)), eps);
  }
}

TEST(AttackJobTest, BookkeepingAndBackwardPasses) {
  for (auto [strategy, k] : std::vector<std::pair<SelectionStrategy, std::size_t>>{
           {SelectionStrategy::ucb(), 2},
           {SelectionStrategy::random(), 1},
           {SelectionStrategy::epsilon_greedy(0.3), 2},
           {SelectionStrategy::fixed_all(), 3}}) {
    JobSetup s = make_setup(3, k);
    s.config.strategy = strategy;
    const AttackResult r = run_attack(s.config, s.registry, s.images);
    ASSERT_EQ(r.trace.steps.size(), 12u);
    for (const auto& rec : r.trace.steps) {
      EXPECT_EQ(rec.backward_passes, k);
      EXPECT_EQ(rec.chosen.size(), k);
      EXPECT_EQ(rec.losses.size(), k);
    }
    EXPECT_EQ(r.trace.final_state.total, 12 * k);
    std::uint64_t sum = 0;
    for (auto c : r.trace.final_state.counts) sum += c;
    EXPECT_EQ(sum, 12 * k);
  }
}

TEST(AttackJobTest, EpochsDetermineStepCount) {
  JobSetup s = make_setup();
  s.config.total_steps.reset();
  s.config.epochs = 2;
  AttackJob job(s.config, s.registry, s.images);
  EXPECT_EQ(job.steps_per_epoch(), 3u);
  EXPECT_EQ(job.total_steps(), 6u);
}

TEST(AttackJobTest, DeterministicForSeed) {
  JobSetup s = make_setup(3, 2);
  const AttackResult a = run_attack(s.config, s.registry, s.images);
  const AttackResult b = run_attack(s.config, s.registry, s.images);
  EXPECT_EQ(a.perturbation.delta, b.perturbation.delta);
  expect_same_trace(a.trace, b.trace);
  s.config.seed = 6;
  const AttackResult c = run_attack(s.config, s.registry, s.images);
  EXPECT_NE(a.perturbation.delta, c.perturbation.delta);
}

TEST(AttackJobTest, WorkersDoNotChangeResults) {
  JobSetup s = make_setup(4, 3);
  const AttackResult a = run_attack(s.config, s.registry, s.images);
  s.config.workers = 3;
  const AttackResult b = run_attack(s.config, s.registry, s.images);
  EXPECT_EQ(a.perturbation.delta, b.perturbation.delta);
  expect_same_trace(a.trace, b.trace);
}

TEST(AttackJobTest, CheckpointResumeMatchesStraightRun) {
  for (const auto& tm : {ThreatModel::linf(12.0 / 255.0), ThreatModel::l2(0.02), ThreatModel::patch(3e-5, 70.0)}) {
    JobSetup s = make_setup(3, 2, tm);
    const AttackResult straight = run_attack(s.config, s.registry, s.images);
    const fs::path dir = temp_dir("resume");
    AttackJob first(s.config, s.registry, s.images);
    for (int i = 0; i < 5; ++i) first.step();
    first.save_checkpoint(dir / "c.xtc");
    AttackJob second = AttackJob::resume(dir / "c.xtc", s.config, s.registry, s.images);
    EXPECT_EQ(second.steps_done(), 5u);
    second.run();
    EXPECT_EQ(second.perturbation(), straight.perturbation) << to_string(tm.kind);
    expect_same_trace(second.finished_trace(), straight.trace);
  }
}

TEST(AttackJobTest, ResumeRejectsDifferentConfigOrImages) {
  JobSetup s = make_setup();
  const fs::path dir = temp_dir("resume_reject");
  AttackJob job(s.config, s.registry, s.images);
  job.step();
  job.save_checkpoint(dir / "c.xtc");
  AttackConfig other = s.config;
  other.seed = 99;
  EXPECT_THROW(AttackJob::resume(dir / "c.xtc", other, s.registry, s.images), CheckpointError);
  EXPECT_THROW(AttackJob::resume(dir / "c.xtc", s.config, s.registry, random_images(10, 16, 78)), CheckpointError);
  fs::resize_file(dir / "c.xtc", fs::file_size(dir / "c.xtc") / 2);
  EXPECT_ANY_THROW(AttackJob::resume(dir / "c.xtc", s.config, s.registry, s.images));
}

TEST(AttackJobTest, PeriodicCheckpointsAreWritten) {
  JobSetup s = make_setup();
  const fs::path dir = temp_dir("periodic");
  s.config.checkpoint_every = 4;
  s.config.checkpoint_path = dir / "p.xtc";
  AttackJob job(s.config, s.registry, s.images);
  for (int i = 0; i < 4; ++i) job.step();
  EXPECT_TRUE(fs::exists(dir / "p.xtc"));
}

TEST(AttackJobTest, TargetedModeRecordsTarget) {
  JobSetup s = make_setup();
  s.config.targeted = true;
  s.config.target_text = "a photo of a blue cross";
  const AttackResult r = run_attack(s.config, s.registry, s.images);
  EXPECT_TRUE(r.perturbation.targeted);
  EXPECT_EQ(r.perturbation.target_text, s.config.target_text);
  EXPECT_NO_THROW(r.perturbation.validate());
  for (const auto& rec : r.trace.steps) {
    for (const auto& [id, l] : rec.losses) {
      EXPECT_GE(l, -1.0 - 1e-9);
      EXPECT_LE(l, 1.0 + 1e-9);
    }
  }
}

TEST(AttackJobTest, PatchAndL2ProduceValidArtifacts) {
  for (const auto& tm : {ThreatModel::l2(0.02), ThreatModel::patch(3e-5, 70.0)}) {
    JobSetup s = make_setup(2, 1, tm);
    const AttackResult r = run_attack(s.config, s.registry, s.images);
    EXPECT_NO_THROW(r.perturbation.validate());
    EXPECT_EQ(r.perturbation.threat_model, tm);
    for (const auto& rec : r.trace.steps) {
      EXPECT_NEAR(rec.total_loss, rec.ensemble_loss + [&] {
        double sum = 0.0;
        for (const auto& [n, v] : rec.reg_terms) sum += v;
        return sum;
      }(), 1e-12);
    }
  }
}

TEST(AttackJobTest, ResizesSurrogateImagesToConfigResolution) {
  JobSetup s = make_setup();
  const AttackResult r = run_attack(s.config, s.registry, random_images(6, 24, 3));
  EXPECT_EQ(r.perturbation.resolution, (Resolution{16, 16}));
}

TEST(AttackTraceTest, JsonlRoundTrip) {
  JobSetup s = make_setup(3, 2);
  const AttackResult r = run_attack(s.config, s.registry, s.images);
  const AttackTrace back = AttackTrace::from_jsonl(r.trace.to_jsonl());
  expect_same_trace(back, r.trace);
  std::size_t total = 0;
  for (const auto& [id, n] : back.selection_histogram()) total += n;
  EXPECT_EQ(total, 24u);
}

TEST(AttackGradients, LossGradientWrtDeltaMatchesFiniteDifferences) {
  auto enc = tiny_encoder(9);
  const ImageBatch x = random_images(3, 16, 10);
  const Tensor d0 = random_tensor({3, 16, 16}, 11, -0.03, 0.03);
  auto loss = [&](ad::Tape& t, ad::Var d) {
    ad::Var z_clean = encode_image(*enc, t, t.constant(x.pixels()));
    ad::Var z_adv = encode_image(*enc, t, ad::add_broadcast(t.constant(x.pixels()), d));
    return non_targeted_loss(z_adv, z_clean);
  };
  ad::Tape tape;
  ad::Var d = tape.parameter(d0);
  tape.backward(loss(tape, d));
  const Tensor g = d.grad();
  auto f = [&](const Tensor& dv) {
    ad::Tape t;
    return loss(t, t.constant(dv)).value()[0];
  };
  Rng rng(12);
  for (int i = 0; i < 20; ++i) {
    const std::size_t c = rng.below(d0.size());
    EXPECT_LT(relative_error(g[c], central_difference(f, d0, c, 1e-6), 1e-7), 1e-4) << "coordinate " << c;
  }
}
