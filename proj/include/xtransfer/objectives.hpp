#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "xtransfer/autodiff.hpp"
#include "xtransfer/core.hpp"
#include "xtransfer/encoders.hpp"

namespace xtransfer {

struct LossBreakdown {
  double total = 0.0;
  double adv_term = 0.0;
  // l1_mask, tv_mask, tv_pattern (patch) or l2_norm (l2); weighted values.
  std::map<std::string, double> reg_terms;

  double reg_sum() const;
};

// Rowwise dot products of unit vectors.
std::vector<double> cosine_similarity(const EmbeddingBatch& a, const EmbeddingBatch& b);

// mean_i sim(f(x_adv_i), f(x_i)).
double non_targeted_loss(const Encoder& encoder, const ImageBatch& x, const ImageBatch& x_adv);
// -mean_i sim(f(x_adv_i), f_T(target_text)).
double targeted_loss(const Encoder& encoder, const ImageBatch& x_adv, const std::string& target_text);

// Differentiable forms over embeddings. `target` is a single unit row [1,d].
ad::Var non_targeted_loss(ad::Var z_adv, ad::Var z_clean);
ad::Var targeted_loss(ad::Var z_adv, ad::Var target);

double ensemble_loss(std::span<const double> per_encoder_losses);

// alpha*|m|_1 + beta*(TV(m) + TV(pattern)) over sigmoid-mapped logits.
LossBreakdown patch_regularizers(const Perturbation& p, double alpha, double beta);
ad::Var patch_regularizers(ad::Var mask_logits, ad::Var pattern_logits, double alpha, double beta,
                           std::map<std::string, double>* terms = nullptr);

// c*||delta||_2.
double l2_regularizer(const Perturbation& p, double c);
ad::Var l2_regularizer(ad::Var delta, double c);

}  // namespace xtransfer
