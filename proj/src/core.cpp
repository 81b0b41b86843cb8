#include "xtransfer/core.hpp"

#include <algorithm>
#include <cmath>

#include "xtransfer/autodiff.hpp"
#include "xtransfer/errors.hpp"

namespace xtransfer {

std::string to_string(ThreatKind kind) {
  switch (kind) {
    case ThreatKind::Linf:
      return "linf";
    case ThreatKind::L2:
      return "l2";
    case ThreatKind::Patch:
      return "patch";
  }
  return "?";
}

ThreatKind parse_threat_kind(const std::string& s) {
  if (s == "linf") return ThreatKind::Linf;
  if (s == "l2") return ThreatKind::L2;
  if (s == "patch") return ThreatKind::Patch;
  throw ValidationError("unknown threat model kind '" + s + "' (expected linf, l2 or patch)");
}

ThreatModel ThreatModel::linf(double epsilon) {
  ThreatModel t;
  t.kind = ThreatKind::Linf;
  t.epsilon = epsilon;
  return t;
}

ThreatModel ThreatModel::l2(double c) {
  ThreatModel t;
  t.kind = ThreatKind::L2;
  t.c = c;
  return t;
}

ThreatModel ThreatModel::patch(double alpha, double beta) {
  ThreatModel t;
  t.kind = ThreatKind::Patch;
  t.alpha = alpha;
  t.beta = beta;
  return t;
}

void ThreatModel::validate() const {
  switch (kind) {
    case ThreatKind::Linf:
      if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ValidationError("linf epsilon must lie in (0, 1]");
      if (c != 0.0 || alpha != 0.0 || beta != 0.0) throw ValidationError("linf threat model sets c/alpha/beta");
      break;
    case ThreatKind::L2:
      if (!(c >= 0.0) || !std::isfinite(c)) throw ValidationError("l2 weight c must be finite and >= 0");
      if (epsilon != 0.0 || alpha != 0.0 || beta != 0.0) throw ValidationError("l2 threat model sets epsilon/alpha/beta");
      break;
    case ThreatKind::Patch:
      if (!(alpha >= 0.0) || !(beta >= 0.0) || !std::isfinite(alpha) || !std::isfinite(beta)) {
        throw ValidationError("patch weights alpha, beta must be finite and >= 0");
      }
      if (epsilon != 0.0 || c != 0.0) throw ValidationError("patch threat model sets epsilon/c");
      break;
  }
}

void to_json(nlohmann::json& j, const ThreatModel& t) {
  j = nlohmann::json{{"kind", to_string(t.kind)}};
  switch (t.kind) {
    case ThreatKind::Linf: j["epsilon"] = t.epsilon; break;
    case ThreatKind::L2: j["c"] = t.c; break;
    case ThreatKind::Patch:
      j["alpha"] = t.alpha;
      j["beta"] = t.beta;
      break;
  }
}

void from_json(const nlohmann::json& j, ThreatModel& t) {
  const ThreatKind kind = parse_threat_kind(j.at("kind").get<std::string>());
  switch (kind) {
    case ThreatKind::Linf: t = ThreatModel::linf(j.at("epsilon").get<double>()); break;
    case ThreatKind::L2: t = ThreatModel::l2(j.at("c").get<double>()); break;
    case ThreatKind::Patch: t = ThreatModel::patch(j.at("alpha").get<double>(), j.at("beta").get<double>()); break;
  }
  for (const char* key : {"epsilon", "c", "alpha", "beta"}) {
    if (j.contains(key) && !nlohmann::json(t).contains(key)) {
      throw ValidationError(std::string("threat model '") + to_string(kind) + "' does not take '" + key + "'",
                            std::string("/") + key);
    }
  }
}

void to_json(nlohmann::json& j, const Resolution& r) { j = nlohmann::json::array({r.height, r.width}); }

void from_json(const nlohmann::json& j, Resolution& r) {
  if (!j.is_array() || j.size() != 2) throw ValidationError("resolution must be [height, width]");
  r.height = j[0].get<std::size_t>();
  r.width = j[1].get<std::size_t>();
  if (r.height == 0 || r.width == 0) throw ValidationError("resolution must be positive");
}

FloatTensor FloatTensor::from(const Tensor& t) {
  FloatTensor f;
  f.shape = t.shape();
  f.values.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) f.values[i] = static_cast<float>(t[i]);
  return f;
}

Tensor FloatTensor::to_tensor() const {
  std::vector<double> v(values.begin(), values.end());
  return Tensor(shape, std::move(v));
}

float linf_bound_f32(double epsilon) {
  float f = static_cast<float>(epsilon);
  if (static_cast<double>(f) > epsilon) f = std::nextafter(f, 0.0f);
  return f;
}

void project_linf(FloatTensor& delta, double epsilon) {
  const float b = linf_bound_f32(epsilon);
  for (auto& v : delta.values) v = std::clamp(v, -b, b);
}

Perturbation Perturbation::identity(const ThreatModel& tm, Resolution res) {
  tm.validate();
  Perturbation p;
  p.threat_model = tm;
  p.resolution = res;
  if (tm.kind == ThreatKind::Patch) {
    // sigmoid(-1e4) underflows to exactly 0 in double arithmetic
    p.mask_logits = FloatTensor{{res.height, res.width}, std::vector<float>(res.height * res.width, -1.0e4f)};
    p.pattern_logits = FloatTensor{{3, res.height, res.width}, std::vector<float>(3 * res.height * res.width, 0.0f)};
  } else {
    p.delta = FloatTensor{{3, res.height, res.width}, std::vector<float>(3 * res.height * res.width, 0.0f)};
  }
  return p;
}

void Perturbation::validate() const {
  try {
    threat_model.validate();
  } catch (const ValidationError& e) {
    throw InvariantViolation(std::string("threat model: ") + e.what());
  }
  if (resolution.height == 0 || resolution.width == 0) throw InvariantViolation("zero resolution");
  const Shape img{3, resolution.height, resolution.width};
  auto finite = [](const FloatTensor& t) {
    return std::all_of(t.values.begin(), t.values.end(), [](float v) { return std::isfinite(v); });
  };
  if (threat_model.kind == ThreatKind::Patch) {
    if (mask_logits.shape != Shape{resolution.height, resolution.width} ||
        mask_logits.values.size() != shape_numel(mask_logits.shape)) {
      throw InvariantViolation("patch mask shape does not match resolution");
    }
    if (pattern_logits.shape != img || pattern_logits.values.size() != shape_numel(img)) {
      throw InvariantViolation("patch pattern shape does not match resolution");
    }
    if (!delta.empty()) throw InvariantViolation("patch perturbation carries an additive delta");
    if (!finite(mask_logits) || !finite(pattern_logits)) throw InvariantViolation("non-finite patch logits");
  } else {
    if (delta.shape != img || delta.values.size() != shape_numel(img)) {
      throw InvariantViolation("delta shape " + shape_string(delta.shape) + " does not match resolution");
    }
    if (!mask_logits.empty() || !pattern_logits.empty()) {
      throw InvariantViolation("additive perturbation carries patch tensors");
    }
    if (!finite(delta)) throw InvariantViolation("non-finite delta");
    if (threat_model.kind == ThreatKind::Linf) {
      for (float v : delta.values) {
        if (std::abs(static_cast<double>(v)) > threat_model.epsilon) {
          throw InvariantViolation("delta element " + std::to_string(v) + " exceeds linf bound " +
                                   std::to_string(threat_model.epsilon));
        }
      }
    }
  }
  if (targeted && (!target_text || target_text->empty())) throw InvariantViolation("targeted without target text");
}

ImageBatch::ImageBatch(Tensor pixels) : pixels_(std::move(pixels)) {
  const Shape& s = pixels_.shape();
  if (s.size() != 4 || s[0] == 0 || s[1] != 3 || s[2] == 0 || s[3] == 0) {
    throw ValidationError("image batch must have shape [B>=1,3,H,W], got " + shape_string(s));
  }
  for (double v : pixels_.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("image batch pixel outside [0,1]");
  }
}

namespace {

void require_kind(const Perturbation& p, ThreatKind kind) {
  if (p.threat_model.kind != kind) {
    throw KindMismatch("expected a " + to_string(kind) + " perturbation, got " + to_string(p.threat_model.kind));
  }
}

void require_resolution(const ImageBatch& x, const Perturbation& p) {
  if (x.resolution() != p.resolution) {
    throw ResolutionMismatch("perturbation is " + std::to_string(p.resolution.height) + "x" +
                             std::to_string(p.resolution.width) + ", images are " +
                             std::to_string(x.resolution().height) + "x" + std::to_string(x.resolution().width));
  }
}

ImageBatch apply_additive(const ImageBatch& x, const Perturbation& p) {
  require_resolution(x, p);
  Tensor out = x.pixels();
  const std::size_t inner = p.delta.values.size();
  for (std::size_t b = 0; b < x.size(); ++b) {
    double* o = out.data() + b * inner;
    for (std::size_t i = 0; i < inner; ++i) {
      o[i] = std::clamp(o[i] + static_cast<double>(p.delta.values[i]), 0.0, 1.0);
    }
  }
  return ImageBatch(std::move(out));
}

}  // namespace

ImageBatch apply_linf(const ImageBatch& x, const Perturbation& p) {
  require_kind(p, ThreatKind::Linf);
  return apply_additive(x, p);
}

ImageBatch apply_l2(const ImageBatch& x, const Perturbation& p) {
  require_kind(p, ThreatKind::L2);
  return apply_additive(x, p);
}

ImageBatch apply_patch(const ImageBatch& x, const Perturbation& p) {
  require_kind(p, ThreatKind::Patch);
  require_resolution(x, p);
  ad::Tape t;
  auto out = ad::patch_blend(t.constant(x.pixels()), t.constant(p.mask_logits.to_tensor()),
                             t.constant(p.pattern_logits.to_tensor()));
  Tensor v = out.value();
  // Convex combination of values in [0,1]; clamp only absorbs rounding.
  for (auto& e : v.values()) e = std::clamp(e, 0.0, 1.0);
  return ImageBatch(std::move(v));
}

ImageBatch apply_perturbation(const ImageBatch& x, const Perturbation& p) {
  const Perturbation& q = p.resolution == x.resolution() ? p : rescale_perturbation(p, x.resolution());
  switch (q.threat_model.kind) {
    case ThreatKind::Linf:
      return apply_linf(x, q);
    case ThreatKind::L2:
      return apply_l2(x, q);
    case ThreatKind::Patch:
      return apply_patch(x, q);
  }
  throw KindMismatch("unknown threat model kind");
}

Tensor resize_bilinear(const Tensor& t, std::size_t height, std::size_t width) {
  ad::Tape tape;
  return ad::resize_bilinear(tape.constant(t), height, width).value();
}

namespace {

FloatTensor resize_float(const FloatTensor& f, Resolution r) {
  if (f.empty()) return f;
  return FloatTensor::from(resize_bilinear(f.to_tensor(), r.height, r.width));
}

}  // namespace

Perturbation rescale_perturbation(const Perturbation& p, Resolution target) {
  if (target.height == 0 || target.width == 0) throw ValidationError("rescale target must be at least 1x1");
  if (target == p.resolution) return p;
  Perturbation q = p;
  q.resolution = target;
  q.delta = resize_float(p.delta, target);
  q.mask_logits = resize_float(p.mask_logits, target);
  q.pattern_logits = resize_float(p.pattern_logits, target);
  if (q.threat_model.kind == ThreatKind::Linf) project_linf(q.delta, q.threat_model.epsilon);
  return q;
}

std::string to_string(EvalTask task) {
  switch (task) {
    case EvalTask::ZeroShot:
      return "zero_shot";
    case EvalTask::TextRetrieval:
      return "text_retrieval";
    case EvalTask::ImageRetrieval:
      return "image_retrieval";
    case EvalTask::TargetedZeroShot:
      return "targeted_zero_shot";
    case EvalTask::TargetedIrRank:
      return "targeted_ir_rank";
  }
  return "?";
}

EvalTask parse_eval_task(const std::string& s) {
  for (auto t : {EvalTask::ZeroShot, EvalTask::TextRetrieval, EvalTask::ImageRetrieval, EvalTask::TargetedZeroShot,
                 EvalTask::TargetedIrRank}) {
    if (to_string(t) == s) return t;
  }
  throw ValidationError("unknown evaluation task '" + s + "'");
}

}  // namespace xtransfer
