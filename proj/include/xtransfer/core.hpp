#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xtransfer/tensor.hpp"

namespace xtransfer {

inline constexpr const char* kGeneratorVersion = "xtransfer-cpp/0.1.0";

enum class ThreatKind { Linf, L2, Patch };

std::string to_string(ThreatKind kind);
ThreatKind parse_threat_kind(const std::string& s);

struct ThreatModel {
  ThreatKind kind = ThreatKind::Linf;
  double epsilon = 0.0;  // Linf
  double c = 0.0;        // L2 penalty weight
  double alpha = 0.0;    // Patch: mask L1 weight
  double beta = 0.0;     // Patch: total-variation weight

  static ThreatModel linf(double epsilon);
  static ThreatModel l2(double c);
  static ThreatModel patch(double alpha, double beta);

  // Throws ValidationError when parameters of an inactive kind are set or a
  // bound is out of range.
  void validate() const;

  friend bool operator==(const ThreatModel&, const ThreatModel&) = default;
};

struct Resolution {
  std::size_t height = 224;
  std::size_t width = 224;
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

// {"kind":"linf","epsilon":...} / {"kind":"l2","c":...} / {"kind":"patch","alpha":...,"beta":...}
void to_json(nlohmann::json& j, const ThreatModel& t);
void from_json(const nlohmann::json& j, ThreatModel& t);
// [height, width]
void to_json(nlohmann::json& j, const Resolution& r);
void from_json(const nlohmann::json& j, Resolution& r);

// float32 payload as stored in artifacts.
struct FloatTensor {
  Shape shape;
  std::vector<float> values;

  static FloatTensor from(const Tensor& t);
  Tensor to_tensor() const;
  bool empty() const { return values.empty(); }
  friend bool operator==(const FloatTensor&, const FloatTensor&) = default;
};

struct PerturbationMeta {
  std::string generator_version = kGeneratorVersion;
  std::string config_digest;
  std::string created_at;
  friend bool operator==(const PerturbationMeta&, const PerturbationMeta&) = default;
};

struct Perturbation {
  ThreatModel threat_model;
  Resolution resolution;
  FloatTensor delta;           // [3,H,W], Linf and L2
  FloatTensor mask_logits;     // [H,W], Patch
  FloatTensor pattern_logits;  // [3,H,W], Patch
  bool targeted = false;
  std::optional<std::string> target_text;
  PerturbationMeta meta;

  // Additive perturbation of zeros, or a patch whose mask is fully off.
  static Perturbation identity(const ThreatModel& tm, Resolution res);

  // Throws InvariantViolation on any broken invariant (shapes, Linf bound,
  // non-finite values, targeted without text).
  void validate() const;

  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

// Largest float32 value not exceeding `epsilon`.
float linf_bound_f32(double epsilon);
// Clamp every element to [-bound, bound] with bound = linf_bound_f32(epsilon).
void project_linf(FloatTensor& delta, double epsilon);

// Batch of RGB images in [0,1], shape [B,3,H,W].
class ImageBatch {
 public:
  ImageBatch() = default;
  // Throws ValidationError on a bad shape or out-of-range pixels.
  explicit ImageBatch(Tensor pixels);

  const Tensor& pixels() const { return pixels_; }
  std::size_t size() const { return pixels_.dim(0); }
  Resolution resolution() const { return {pixels_.dim(2), pixels_.dim(3)}; }

 private:
  Tensor pixels_;
};

// clamp(x + delta, 0, 1). Requires an Linf perturbation at x's resolution.
ImageBatch apply_linf(const ImageBatch& x, const Perturbation& p);
// clamp(x + delta, 0, 1). Requires an L2 perturbation at x's resolution.
ImageBatch apply_l2(const ImageBatch& x, const Perturbation& p);
// m*pattern + (1-m)*x with m, pattern the sigmoids of the stored logits.
ImageBatch apply_patch(const ImageBatch& x, const Perturbation& p);
// Dispatch on kind, rescaling the perturbation to x's resolution first.
ImageBatch apply_perturbation(const ImageBatch& x, const Perturbation& p);

Perturbation rescale_perturbation(const Perturbation& p, Resolution target);

// Bilinear corner-aligned resize of the trailing two axes.
Tensor resize_bilinear(const Tensor& t, std::size_t height, std::size_t width);

enum class EvalTask { ZeroShot, TextRetrieval, ImageRetrieval, TargetedZeroShot, TargetedIrRank };
std::string to_string(EvalTask task);
EvalTask parse_eval_task(const std::string& s);

struct EvalReport {
  EvalTask task = EvalTask::ZeroShot;
  std::string dataset_id;
  std::string victim_id;
  std::string metric_name;
  double s_clean = 0.0;
  double s_adv = 0.0;
  // Empty when s_clean == 0 (ASR undefined).
  std::optional<double> asr;
  std::map<std::string, double> extras;
};

}  // namespace xtransfer
