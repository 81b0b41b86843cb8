#include "xtransfer/objectives.hpp"

#include "xtransfer/errors.hpp"

namespace xtransfer {

double LossBreakdown::reg_sum() const {
  double s = 0.0;
  for (const auto& [name, v] : reg_terms) s += v;
  return s;
}

std::vector<double> cosine_similarity(const EmbeddingBatch& a, const EmbeddingBatch& b) {
  if (a.vectors.shape() != b.vectors.shape()) {
    throw ShapeError("cosine_similarity: " + shape_string(a.vectors.shape()) + " vs " +
                     shape_string(b.vectors.shape()));
  }
  const std::size_t n = a.size(), d = a.dim();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += a.vectors[i * d + k] * b.vectors[i * d + k];
    out[i] = s;
  }
  return out;
}

ad::Var non_targeted_loss(ad::Var z_adv, ad::Var z_clean) { return ad::mean(ad::row_dot(z_adv, z_clean)); }

ad::Var targeted_loss(ad::Var z_adv, ad::Var target) {
  if (target.shape().size() != 2 || target.shape()[0] != 1) {
    throw ShapeError("targeted_loss: target must be a single row [1,d]");
  }
  return ad::scale(ad::mean(ad::matmul_nt(z_adv, target)), -1.0);
}

double non_targeted_loss(const Encoder& encoder, const ImageBatch& x, const ImageBatch& x_adv) {
  if (x.size() != x_adv.size()) throw ShapeError("non_targeted_loss: batch sizes differ");
  const auto sims = cosine_similarity(encode_image(encoder, x_adv), encode_image(encoder, x));
  double s = 0.0;
  for (double v : sims) s += v;
  return s / static_cast<double>(sims.size());
}

double targeted_loss(const Encoder& encoder, const ImageBatch& x_adv, const std::string& target_text) {
  if (target_text.empty()) throw ValidationError("targeted_loss: empty target text");
  const EmbeddingBatch zi = encode_image(encoder, x_adv);
  const EmbeddingBatch zt = encode_text(encoder, {target_text});
  const std::size_t d = zi.dim();
  if (zt.dim() != d) throw ShapeError("targeted_loss: image/text embedding dims differ");
  double s = 0.0;
  for (std::size_t i = 0; i < zi.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) s += zi.vectors[i * d + k] * zt.vectors[k];
  }
  return -s / static_cast<double>(zi.size());
}

double ensemble_loss(std::span<const double> per_encoder_losses) {
  if (per_encoder_losses.empty()) throw ValidationError("ensemble_loss: no per-encoder losses");
  double s = 0.0;
  for (double v : per_encoder_losses) s += v;
  return s / static_cast<double>(per_encoder_losses.size());
}

ad::Var patch_regularizers(ad::Var mask_logits, ad::Var pattern_logits, double alpha, double beta,
                           std::map<std::string, double>* terms) {
  ad::Var m = ad::sigmoid(mask_logits);
  ad::Var pat = ad::sigmoid(pattern_logits);
  ad::Var l1 = ad::scale(ad::abs_sum(m), alpha);
  ad::Var tvm = ad::scale(ad::total_variation(m), beta);
  ad::Var tvp = ad::scale(ad::total_variation(pat), beta);
  if (terms) {
    (*terms)["l1_mask"] = l1.value()[0];
    (*terms)["tv_mask"] = tvm.value()[0];
    (*terms)["tv_pattern"] = tvp.value()[0];
  }
  return ad::add(ad::add(l1, tvm), tvp);
}

LossBreakdown patch_regularizers(const Perturbation& p, double alpha, double beta) {
  if (p.threat_model.kind != ThreatKind::Patch) {
    throw KindMismatch("patch_regularizers: perturbation kind is " + to_string(p.threat_model.kind));
  }
  ad::Tape t;
  LossBreakdown b;
  b.total = patch_regularizers(t.constant(p.mask_logits.to_tensor()), t.constant(p.pattern_logits.to_tensor()), alpha,
                               beta, &b.reg_terms)
                .value()[0];
  return b;
}

ad::Var l2_regularizer(ad::Var delta, double c) { return ad::scale(ad::l2_norm(delta), c); }

double l2_regularizer(const Perturbation& p, double c) {
  if (p.threat_model.kind != ThreatKind::L2) {
    throw KindMismatch("l2_regularizer: perturbation kind is " + to_string(p.threat_model.kind));
  }
  ad::Tape t;
  return l2_regularizer(t.constant(p.delta.to_tensor()), c).value()[0];
}

}  // namespace xtransfer
