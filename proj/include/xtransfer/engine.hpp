#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xtransfer/bandit.hpp"
#include "xtransfer/core.hpp"
#include "xtransfer/encoders.hpp"
#include "xtransfer/optim.hpp"
#include "xtransfer/rng.hpp"

namespace xtransfer {

struct AttackConfig {
  SearchSpace search_space;
  SelectionStrategy strategy;
  std::size_t k = 4;
  ThreatModel threat_model = ThreatModel::linf(12.0 / 255.0);
  bool targeted = false;
  std::optional<std::string> target_text;
  std::string surrogate_dataset;  // manifest path; informational when images are passed directly
  Resolution resolution{};        // perturbation resolution
  std::optional<std::size_t> total_steps;  // overrides epochs when set
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  double step_size = 0.5 / 255.0;  // Linf sign step
  double learning_rate = 0.05;     // Adam, L2 and Patch
  double reward_momentum = 0.1;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path;
  std::size_t workers = 1;  // concurrent per-encoder passes inside a step

  void validate() const;
  // SHA-256 over the settings that determine the optimization trajectory
  // (excludes total_steps, checkpoint and worker settings).
  std::string digest() const;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
// Missing keys keep their defaults; JSON pointers of bad values are reported.
void from_json(const nlohmann::json& j, AttackConfig& c);

struct StepRecord {
  std::size_t step = 0;
  std::vector<std::string> chosen;            // selection order
  std::map<std::string, double> losses;       // per-encoder loss
  double ensemble_loss = 0.0;                 // mean of per-encoder losses
  std::map<std::string, double> reg_terms;
  double total_loss = 0.0;
  double wall_time = 0.0;  // seconds
  std::size_t backward_passes = 0;
};

void to_json(nlohmann::json& j, const StepRecord& r);
void from_json(const nlohmann::json& j, StepRecord& r);

struct AttackTrace {
  std::vector<StepRecord> steps;
  BanditState final_state;

  std::string to_jsonl() const;
  static AttackTrace from_jsonl(const std::string& text);
  // Times each arm was chosen, keyed by encoder id.
  std::map<std::string, std::size_t> selection_histogram() const;
};

// One optimization job over a fixed surrogate image pool.
class AttackJob {
 public:
  AttackJob(AttackConfig config, std::shared_ptr<EncoderRegistry> registry, ImageBatch surrogate_images);

  // Performs one optimization step; returns its record.
  const StepRecord& step();
  // Steps until total_steps(), checkpointing as configured.
  void run();
  bool done() const { return step_ >= total_steps_; }

  std::size_t steps_done() const { return step_; }
  std::size_t total_steps() const { return total_steps_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  const AttackConfig& config() const { return config_; }
  const BanditState& bandit() const { return bandit_; }
  const AttackTrace& trace() const { return trace_; }
  AttackTrace finished_trace() const;
  // Current perturbation as a float32 artifact.
  Perturbation perturbation() const;
  // Internal double-precision parameters.
  const Tensor& delta() const { return delta_; }
  const Tensor& mask_logits() const { return mask_logits_; }
  const Tensor& pattern_logits() const { return pattern_logits_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  // Rebuilds a job from `path`; rejects mismatched config or search space.
  static AttackJob resume(const std::filesystem::path& path, AttackConfig config,
                          std::shared_ptr<EncoderRegistry> registry, ImageBatch surrogate_images);

  // Called after every step.
  std::function<void(const StepRecord&)> on_step;

 private:
  struct ArmResult {
    double loss = 0.0;
    Tensor grad_delta, grad_mask, grad_pattern;
  };

  std::vector<std::size_t> batch_indices(std::size_t step);
  ArmResult evaluate_arm(std::size_t arm, const Tensor& x) const;
  const Encoder& encoder(std::size_t arm) const;

  AttackConfig config_;
  std::shared_ptr<EncoderRegistry> registry_;
  ImageBatch images_;
  std::size_t steps_per_epoch_ = 0;
  std::size_t total_steps_ = 0;

  std::vector<std::shared_ptr<const Encoder>> encoders_;
  std::vector<std::optional<Tensor>> target_embeddings_;

  Tensor delta_, mask_logits_, pattern_logits_;
  Adam adam_;
  BanditState bandit_;
  Rng select_rng_;
  std::size_t step_ = 0;
  AttackTrace trace_;

  std::size_t perm_epoch_ = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm_;
};

struct AttackResult {
  Perturbation perturbation;
  AttackTrace trace;
};

AttackResult run_attack(const AttackConfig& config, std::shared_ptr<EncoderRegistry> registry,
                        const ImageBatch& surrogate_images);

}  // namespace xtransfer
