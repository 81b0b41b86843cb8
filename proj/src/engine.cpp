#include "xtransfer/engine.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <sstream>

#include "xtransfer/container.hpp"
#include "xtransfer/digest.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/objectives.hpp"

namespace xtransfer {

using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "xtransfer-checkpoint";
constexpr int kCheckpointVersion = 1;

// Reads j[key] into out when present, reporting the JSON pointer on failure.
template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& prefix = "") {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const ValidationError& e) {
    throw ValidationError(e.what(), prefix + "/" + key + e.pointer);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad value for '") + key + "': " + e.what(), prefix + "/" + key);
  } catch (const Error& e) {
    throw ValidationError(e.what(), prefix + "/" + key);
  }
}

std::string image_pool_digest(const ImageBatch& images) {
  const Tensor& p = images.pixels();
  Sha256 h;
  for (std::size_t d : p.shape()) {
    std::string b;
    le::put_u64(b, d);
    h.update(b);
  }
  h.update(std::string_view(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(double)));
  return h.hex_digest();
}

Tensor gather_rows(const Tensor& pool, const std::vector<std::size_t>& idx) {
  Shape s = pool.shape();
  const std::size_t stride = pool.size() / s[0];
  s[0] = idx.size();
  Tensor out(s);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(pool.data() + idx[r] * stride, stride, out.data() + r * stride);
  }
  return out;
}

}  // namespace

void AttackConfig::validate() const {
  try {
    search_space.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(e.what(), "/search_space");
  }
  const std::size_t n = search_space.size();
  if (k < 1 || k > n) {
    throw ValidationError("k must lie in [1, N] with N = " + std::to_string(n) + ", got " + std::to_string(k), "/k");
  }
  strategy.validate();
  if (strategy.kind == StrategyKind::FixedAll && k != n) {
    throw ValidationError("fixed_all requires k = N = " + std::to_string(n), "/k");
  }
  if (strategy.kind == StrategyKind::FixedSet) {
    if (strategy.fixed_ids.size() != k) throw ValidationError("fixed_set requires k = |fixed_ids|", "/k");
    const auto ids = search_space.ids();
    for (const auto& id : strategy.fixed_ids) {
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
        throw ValidationError("fixed_set id '" + id + "' is not in the search space", "/strategy/fixed_ids");
      }
    }
  }
  try {
    threat_model.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(e.what(), "/threat_model");
  }
  if (targeted && (!target_text || target_text->empty())) {
    throw ValidationError("targeted attack requires target_text", "/target_text");
  }
  if (!targeted && target_text) throw ValidationError("target_text set on a non-targeted attack", "/target_text");
  if (resolution.height == 0 || resolution.width == 0) throw ValidationError("resolution must be positive", "/resolution");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1", "/batch_size");
  if (!total_steps && epochs < 1) throw ValidationError("epochs must be >= 1 when total_steps is unset", "/epochs");
  if (threat_model.kind == ThreatKind::Linf) {
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ValidationError("step_size must be > 0", "/step_size");
  } else if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning_rate must be > 0", "/learning_rate");
  }
  if (!(reward_momentum > 0.0 && reward_momentum <= 1.0)) {
    throw ValidationError("reward_momentum must lie in (0, 1]", "/reward_momentum");
  }
  if (checkpoint_every > 0 && checkpoint_path.empty()) {
    throw ValidationError("checkpoint_every set without checkpoint_path", "/checkpoint_path");
  }
  if (workers < 1) throw ValidationError("workers must be >= 1", "/workers");
}

void to_json(json& j, const AttackConfig& c) {
  j = json{{"schema_version", 1},
           {"search_space", c.search_space},
           {"strategy", {{"kind", to_string(c.strategy.kind)}}},
           {"k", c.k},
           {"threat_model", c.threat_model},
           {"targeted", c.targeted},
           {"surrogate_dataset", c.surrogate_dataset},
           {"resolution", c.resolution},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"step_size", c.step_size},
           {"learning_rate", c.learning_rate},
           {"reward_momentum", c.reward_momentum},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every},
           {"workers", c.workers}};
  if (c.strategy.kind == StrategyKind::EpsilonGreedy) j["strategy"]["epsilon"] = c.strategy.epsilon;
  if (c.strategy.kind == StrategyKind::FixedSet) j["strategy"]["fixed_ids"] = c.strategy.fixed_ids;
  if (c.target_text) j["target_text"] = *c.target_text;
  if (c.total_steps) j["total_steps"] = *c.total_steps;
  if (!c.checkpoint_path.empty()) j["checkpoint_path"] = c.checkpoint_path.string();
}

void from_json(const json& j, AttackConfig& c) {
  if (!j.is_object()) throw ValidationError("attack config must be a JSON object");
  static const std::vector<std::string> known = {
      "schema_version", "search_space",  "strategy",      "k",          "threat_model",    "targeted",
      "target_text",    "surrogate_dataset", "resolution", "total_steps", "epochs",         "batch_size",
      "step_size",      "learning_rate", "reward_momentum", "seed",     "checkpoint_every", "checkpoint_path",
      "workers"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ValidationError("unknown attack config key '" + key + "'", "/" + key);
    }
  }
  if (j.contains("schema_version") && j.at("schema_version") != 1) {
    throw ValidationError("unsupported schema_version (this tool reads version 1)", "/schema_version");
  }
  read_field(j, "search_space", c.search_space);
  if (j.contains("strategy")) {
    const json& s = j.at("strategy");
    if (s.is_string()) {
      try {
        c.strategy.kind = parse_strategy_kind(s.get<std::string>());
      } catch (const ValidationError& e) {
        throw ValidationError(e.what(), "/strategy");
      }
    } else {
      std::string kind = to_string(c.strategy.kind);
      read_field(s, "kind", kind, "/strategy");
      try {
        c.strategy.kind = parse_strategy_kind(kind);
      } catch (const ValidationError& e) {
        throw ValidationError(e.what(), "/strategy/kind");
      }
      read_field(s, "epsilon", c.strategy.epsilon, "/strategy");
      read_field(s, "fixed_ids", c.strategy.fixed_ids, "/strategy");
    }
  }
  read_field(j, "k", c.k);
  read_field(j, "threat_model", c.threat_model);
  read_field(j, "targeted", c.targeted);
  if (j.contains("target_text")) {
    std::string t;
    read_field(j, "target_text", t);
    c.target_text = t;
  }
  read_field(j, "surrogate_dataset", c.surrogate_dataset);
  read_field(j, "resolution", c.resolution);
  if (j.contains("total_steps") && !j.at("total_steps").is_null()) {
    std::size_t t = 0;
    read_field(j, "total_steps", t);
    c.total_steps = t;
  }
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "step_size", c.step_size);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "reward_momentum", c.reward_momentum);
  read_field(j, "seed", c.seed);
  read_field(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("checkpoint_path")) {
    std::string p;
    read_field(j, "checkpoint_path", p);
    c.checkpoint_path = p;
  }
  read_field(j, "workers", c.workers);
}

std::string AttackConfig::digest() const {
  json j = *this;
  for (const char* key : {"total_steps", "checkpoint_every", "checkpoint_path", "workers", "surrogate_dataset"}) {
    j.erase(key);
  }
  return sha256_hex(j.dump());
}

void to_json(json& j, const StepRecord& r) {
  j = json{{"step", r.step},
           {"chosen", r.chosen},
           {"losses", r.losses},
           {"ensemble_loss", r.ensemble_loss},
           {"reg_terms", r.reg_terms},
           {"total_loss", r.total_loss},
           {"wall_time", r.wall_time},
           {"backward_passes", r.backward_passes}};
}

void from_json(const json& j, StepRecord& r) {
  r.step = j.at("step").get<std::size_t>();
  r.chosen = j.at("chosen").get<std::vector<std::string>>();
  r.losses = j.at("losses").get<std::map<std::string, double>>();
  r.ensemble_loss = j.at("ensemble_loss").get<double>();
  r.reg_terms = j.at("reg_terms").get<std::map<std::string, double>>();
  r.total_loss = j.at("total_loss").get<double>();
  r.wall_time = j.at("wall_time").get<double>();
  r.backward_passes = j.at("backward_passes").get<std::size_t>();
}

std::string AttackTrace::to_jsonl() const {
  std::string out;
  for (const auto& s : steps) out += json(s).dump() + "\n";
  if (!final_state.rewards.empty()) out += json{{"final_state", final_state}}.dump() + "\n";
  return out;
}

AttackTrace AttackTrace::from_jsonl(const std::string& text) {
  AttackTrace t;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.contains("final_state")) {
      t.final_state = j.at("final_state").get<BanditState>();
    } else {
      t.steps.push_back(j.get<StepRecord>());
    }
  }
  return t;
}

std::map<std::string, std::size_t> AttackTrace::selection_histogram() const {
  std::map<std::string, std::size_t> h;
  for (const auto& s : steps) {
    for (const auto& id : s.chosen) ++h[id];
  }
  return h;
}

AttackJob::AttackJob(AttackConfig config, std::shared_ptr<EncoderRegistry> registry, ImageBatch surrogate_images)
    : config_(std::move(config)),
      registry_(std::move(registry)),
      images_(std::move(surrogate_images)),
      adam_(config_.learning_rate),
      select_rng_(derive_seed(config_.seed, 2)) {
  config_.validate();
  if (!registry_) throw ValidationError("attack job needs an encoder registry");
  if (images_.resolution() != config_.resolution) {
    images_ = ImageBatch(resize_bilinear(images_.pixels(), config_.resolution.height, config_.resolution.width));
  }
  const std::size_t m = images_.size();
  steps_per_epoch_ = (m + config_.batch_size - 1) / config_.batch_size;
  total_steps_ = config_.total_steps.value_or(config_.epochs * steps_per_epoch_);

  const std::size_t n = config_.search_space.size();
  encoders_.resize(n);
  target_embeddings_.resize(n);
  bandit_ = BanditState::fresh(n, config_.reward_momentum);

  Rng init(derive_seed(config_.seed, 1));
  const std::size_t h = config_.resolution.height, w = config_.resolution.width;
  switch (config_.threat_model.kind) {
    case ThreatKind::Linf: {
      const double eps = config_.threat_model.epsilon;
      const double bound = linf_bound_f32(eps);
      delta_ = Tensor({3, h, w});
      for (auto& v : delta_.values()) v = std::clamp(init.uniform(-eps, eps), -bound, bound);
      break;
    }
    case ThreatKind::L2:
      delta_ = Tensor({3, h, w});
      for (auto& v : delta_.values()) v = 1e-3 * init.normal();
      break;
    case ThreatKind::Patch:
      mask_logits_ = Tensor({h, w}, -2.0);
      pattern_logits_ = Tensor({3, h, w}, 0.0);
      break;
  }
}

const Encoder& AttackJob::encoder(std::size_t arm) const { return *encoders_.at(arm); }

std::vector<std::size_t> AttackJob::batch_indices(std::size_t step) {
  const std::size_t epoch = step / steps_per_epoch_;
  if (epoch != perm_epoch_) {
    perm_.resize(images_.size());
    std::iota(perm_.begin(), perm_.end(), 0);
    Rng r(derive_seed(config_.seed, 1000 + epoch));
    r.shuffle(perm_);
    perm_epoch_ = epoch;
  }
  const std::size_t pos = step % steps_per_epoch_;
  const std::size_t begin = pos * config_.batch_size;
  const std::size_t end = std::min(perm_.size(), begin + config_.batch_size);
  return {perm_.begin() + static_cast<std::ptrdiff_t>(begin), perm_.begin() + static_cast<std::ptrdiff_t>(end)};
}

AttackJob::ArmResult AttackJob::evaluate_arm(std::size_t arm, const Tensor& x) const {
  const Encoder& enc = encoder(arm);
  ad::Tape tape;
  ad::Var xc = tape.constant(x);
  ad::Var d, ml, pl, x_adv;
  if (config_.threat_model.kind == ThreatKind::Patch) {
    ml = tape.parameter(mask_logits_);
    pl = tape.parameter(pattern_logits_);
    x_adv = ad::patch_blend(xc, ml, pl);
  } else {
    d = tape.parameter(delta_);
    x_adv = ad::add_broadcast(xc, d);
  }
  ad::Var z_adv = encode_image(enc, tape, x_adv);
  ad::Var loss = config_.targeted ? targeted_loss(z_adv, tape.constant(*target_embeddings_[arm]))
                                  : non_targeted_loss(z_adv, encode_image(enc, tape, xc));
  ArmResult r;
  r.loss = loss.value()[0];
  if (!std::isfinite(r.loss)) return r;
  tape.backward(loss);
  if (d.valid()) {
    r.grad_delta = d.grad();
  } else {
    r.grad_mask = ml.grad();
    r.grad_pattern = pl.grad();
  }
  return r;
}

const StepRecord& AttackJob::step() {
  if (done()) throw Error("attack job already finished");
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor x = gather_rows(images_.pixels(), batch_indices(step_));
  const auto ids = config_.search_space.ids();
  const std::vector<std::size_t> chosen = select(bandit_, config_.strategy, config_.k, select_rng_, ids);

  for (std::size_t arm : chosen) {
    if (!encoders_[arm]) encoders_[arm] = registry_->get(config_.search_space.handles[arm]);
    if (config_.targeted && !target_embeddings_[arm]) {
      target_embeddings_[arm] = encode_text(*encoders_[arm], {*config_.target_text}).vectors;
    }
  }

  std::vector<std::size_t> order = chosen;
  std::sort(order.begin(), order.end());
  std::vector<ArmResult> results(order.size());
  if (config_.workers > 1 && order.size() > 1) {
    for (std::size_t begin = 0; begin < order.size(); begin += config_.workers) {
      const std::size_t end = std::min(order.size(), begin + config_.workers);
      std::vector<std::future<ArmResult>> futs;
      for (std::size_t i = begin; i < end; ++i) {
        futs.push_back(std::async(std::launch::async, [this, &x, arm = order[i]] { return evaluate_arm(arm, x); }));
      }
      for (std::size_t i = begin; i < end; ++i) results[i] = futs[i - begin].get();
    }
  } else {
    for (std::size_t i = 0; i < order.size(); ++i) results[i] = evaluate_arm(order[i], x);
  }

  StepRecord rec;
  rec.step = step_;
  for (std::size_t arm : chosen) rec.chosen.push_back(ids[arm]);
  std::vector<double> ordered_losses;
  for (std::size_t i = 0; i < order.size(); ++i) {
    rec.losses[ids[order[i]]] = results[i].loss;
    ordered_losses.push_back(results[i].loss);
    if (!std::isfinite(results[i].loss)) {
      throw NonFiniteLoss("non-finite loss from encoder '" + ids[order[i]] + "' at step " + std::to_string(step_));
    }
  }
  rec.backward_passes = order.size();
  rec.ensemble_loss = ensemble_loss(ordered_losses);

  // Mean of per-encoder gradients, summed in ascending arm order.
  const double inv_k = 1.0 / static_cast<double>(order.size());
  const bool patch = config_.threat_model.kind == ThreatKind::Patch;
  Tensor g_delta, g_mask, g_pattern;
  if (patch) {
    g_mask = Tensor(mask_logits_.shape(), 0.0);
    g_pattern = Tensor(pattern_logits_.shape(), 0.0);
  } else {
    g_delta = Tensor(delta_.shape(), 0.0);
  }
  for (const auto& r : results) {
    if (patch) {
      for (std::size_t i = 0; i < g_mask.size(); ++i) g_mask[i] += inv_k * r.grad_mask[i];
      for (std::size_t i = 0; i < g_pattern.size(); ++i) g_pattern[i] += inv_k * r.grad_pattern[i];
    } else {
      for (std::size_t i = 0; i < g_delta.size(); ++i) g_delta[i] += inv_k * r.grad_delta[i];
    }
  }

  double reg = 0.0;
  const ThreatModel& tm = config_.threat_model;
  if (tm.kind == ThreatKind::L2) {
    ad::Tape tape;
    ad::Var d = tape.parameter(delta_);
    ad::Var r = l2_regularizer(d, tm.c);
    tape.backward(r);
    reg = r.value()[0];
    rec.reg_terms["l2_norm"] = reg;
    const Tensor& gr = d.grad();
    for (std::size_t i = 0; i < g_delta.size(); ++i) g_delta[i] += gr[i];
  } else if (patch) {
    ad::Tape tape;
    ad::Var ml = tape.parameter(mask_logits_);
    ad::Var pl = tape.parameter(pattern_logits_);
    ad::Var r = patch_regularizers(ml, pl, tm.alpha, tm.beta, &rec.reg_terms);
    tape.backward(r);
    reg = r.value()[0];
    const Tensor& gm = ml.grad();
    const Tensor& gp = pl.grad();
    for (std::size_t i = 0; i < g_mask.size(); ++i) g_mask[i] += gm[i];
    for (std::size_t i = 0; i < g_pattern.size(); ++i) g_pattern[i] += gp[i];
  }
  rec.total_loss = rec.ensemble_loss + reg;
  if (!std::isfinite(rec.total_loss)) throw NonFiniteLoss("non-finite total loss at step " + std::to_string(step_));

  switch (tm.kind) {
    case ThreatKind::Linf: {
      const double bound = linf_bound_f32(tm.epsilon);
      const double eta = config_.step_size;
      for (std::size_t i = 0; i < delta_.size(); ++i) {
        const double g = g_delta[i];
        const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        delta_[i] = std::clamp(delta_[i] - eta * s, -bound, bound);
      }
      break;
    }
    case ThreatKind::L2:
      adam_.step({&delta_}, {g_delta});
      break;
    case ThreatKind::Patch:
      adam_.step({&mask_logits_, &pattern_logits_}, {g_mask, g_pattern});
      break;
  }

  // Rewards in selection order; the update is order-independent.
  std::vector<double> chosen_losses;
  for (std::size_t arm : chosen) chosen_losses.push_back(rec.losses.at(ids[arm]));
  bandit_ = update_rewards(std::move(bandit_), chosen, chosen_losses);

  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ++step_;
  trace_.steps.push_back(std::move(rec));
  if (on_step) on_step(trace_.steps.back());
  if (config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0) save_checkpoint(config_.checkpoint_path);
  return trace_.steps.back();
}

void AttackJob::run() {
  while (!done()) step();
}

AttackTrace AttackJob::finished_trace() const {
  AttackTrace t = trace_;
  t.final_state = bandit_;
  return t;
}

Perturbation AttackJob::perturbation() const {
  Perturbation p;
  p.threat_model = config_.threat_model;
  p.resolution = config_.resolution;
  if (config_.threat_model.kind == ThreatKind::Patch) {
    p.mask_logits = FloatTensor::from(mask_logits_);
    p.pattern_logits = FloatTensor::from(pattern_logits_);
  } else {
    p.delta = FloatTensor::from(delta_);
  }
  p.targeted = config_.targeted;
  p.target_text = config_.target_text;
  p.meta.config_digest = config_.digest();
  return p;
}

void AttackJob::save_checkpoint(const std::filesystem::path& path) const {
  Container c;
  json meta{{"format", kCheckpointFormat},
            {"format_version", kCheckpointVersion},
            {"generator_version", kGeneratorVersion},
            {"config_digest", config_.digest()},
            {"search_space_digest", config_.search_space.digest()},
            {"images_digest", image_pool_digest(images_)},
            {"step", step_}};
  c.put_bytes("meta", meta.dump());
  c.put_u64("step", {step_});
  if (config_.threat_model.kind == ThreatKind::Patch) {
    c.put("mask_logits", mask_logits_);
    c.put("pattern_logits", pattern_logits_);
  } else {
    c.put("delta", delta_);
  }
  c.put_u64("adam/t", {adam_.steps()});
  for (std::size_t i = 0; i < adam_.first_moments().size(); ++i) {
    c.put("adam/m/" + std::to_string(i), adam_.first_moments()[i]);
    c.put("adam/v/" + std::to_string(i), adam_.second_moments()[i]);
  }
  c.put("bandit/rewards", Tensor({bandit_.arms()}, bandit_.rewards));
  c.put_u64("bandit/counts", bandit_.counts);
  c.put_u64("bandit/total", {bandit_.total});
  c.put("bandit/momentum", Tensor({1}, bandit_.reward_momentum));
  c.put_bytes("rng", select_rng_.state());
  c.put_bytes("trace", trace_.to_jsonl());
  c.write(path);
}

AttackJob AttackJob::resume(const std::filesystem::path& path, AttackConfig config,
                            std::shared_ptr<EncoderRegistry> registry, ImageBatch surrogate_images) {
  Container c = [&] {
    try {
      return Container::read(path);
    } catch (const Error& e) {
      throw CheckpointError("cannot read checkpoint " + path.string() + ": " + e.what());
    }
  }();
  json meta;
  try {
    meta = json::parse(c.bytes("meta"));
  } catch (const std::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + " has unreadable metadata");
  }
  if (meta.value("format", "") != kCheckpointFormat) throw CheckpointError(path.string() + " is not a checkpoint");
  if (meta.value("format_version", 0) != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + meta.value("format_version", json(0)).dump() +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  if (meta.value("search_space_digest", "") != config.search_space.digest()) {
    throw CheckpointError("checkpoint was written for a different search space");
  }
  if (meta.value("config_digest", "") != config.digest()) {
    throw CheckpointError("checkpoint was written for a different attack configuration");
  }
  AttackJob job(std::move(config), std::move(registry), std::move(surrogate_images));
  if (meta.value("images_digest", "") != image_pool_digest(job.images_)) {
    throw CheckpointError("checkpoint was written for a different surrogate image pool");
  }
  try {
    job.step_ = c.u64s("step").at(0);
    if (job.config_.threat_model.kind == ThreatKind::Patch) {
      job.mask_logits_ = c.tensor("mask_logits");
      job.pattern_logits_ = c.tensor("pattern_logits");
      if (job.mask_logits_.shape() != Shape{job.config_.resolution.height, job.config_.resolution.width}) {
        throw CheckpointError("checkpoint mask shape does not match the configured resolution");
      }
    } else {
      job.delta_ = c.tensor("delta");
      if (job.delta_.shape() != Shape{3, job.config_.resolution.height, job.config_.resolution.width}) {
        throw CheckpointError("checkpoint delta shape does not match the configured resolution");
      }
    }
    std::vector<Tensor> m, v;
    for (std::size_t i = 0; c.has("adam/m/" + std::to_string(i)); ++i) {
      m.push_back(c.tensor("adam/m/" + std::to_string(i)));
      v.push_back(c.tensor("adam/v/" + std::to_string(i)));
    }
    job.adam_.restore(c.u64s("adam/t").at(0), std::move(m), std::move(v));
    const Tensor& rw = c.tensor("bandit/rewards");
    job.bandit_.rewards.assign(rw.data(), rw.data() + rw.size());
    job.bandit_.counts = c.u64s("bandit/counts");
    job.bandit_.total = c.u64s("bandit/total").at(0);
    job.bandit_.reward_momentum = c.tensor("bandit/momentum")[0];
    job.bandit_.validate();
    job.select_rng_.set_state(c.bytes("rng"));
    job.trace_ = AttackTrace::from_jsonl(c.bytes("trace"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  if (job.bandit_.arms() != job.config_.search_space.size() || job.trace_.steps.size() != job.step_) {
    throw CheckpointError("checkpoint state is inconsistent");
  }
  return job;
}

AttackResult run_attack(const AttackConfig& config, std::shared_ptr<EncoderRegistry> registry,
                        const ImageBatch& surrogate_images) {
  AttackJob job(config, std::move(registry), surrogate_images);
  job.run();
  return {job.perturbation(), job.finished_trace()};
}

}  // namespace xtransfer
