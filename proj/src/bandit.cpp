#include "xtransfer/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "xtransfer/errors.hpp"

namespace xtransfer {

BanditState BanditState::fresh(std::size_t arms, double reward_momentum) {
  BanditState s;
  s.rewards.assign(arms, 0.0);
  s.counts.assign(arms, 0);
  s.reward_momentum = reward_momentum;
  s.validate();
  return s;
}

void BanditState::validate() const {
  if (rewards.empty()) throw ValidationError("bandit needs at least one arm");
  if (counts.size() != rewards.size()) throw ValidationError("bandit: rewards/counts length mismatch");
  if (!(reward_momentum > 0.0 && reward_momentum <= 1.0)) {
    throw ValidationError("reward_momentum must lie in (0, 1]", "/reward_momentum");
  }
  for (double r : rewards) {
    if (!std::isfinite(r)) throw ValidationError("bandit: non-finite reward");
  }
  if (std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}) != total) {
    throw ValidationError("bandit: total does not equal the sum of counts");
  }
}

void to_json(nlohmann::json& j, const BanditState& s) {
  j = nlohmann::json{
      {"rewards", s.rewards}, {"counts", s.counts}, {"total", s.total}, {"reward_momentum", s.reward_momentum}};
}

void from_json(const nlohmann::json& j, BanditState& s) {
  s.rewards = j.at("rewards").get<std::vector<double>>();
  s.counts = j.at("counts").get<std::vector<std::uint64_t>>();
  s.total = j.at("total").get<std::uint64_t>();
  s.reward_momentum = j.at("reward_momentum").get<double>();
}

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Ucb: return "ucb";
    case StrategyKind::EpsilonGreedy: return "epsilon_greedy";
    case StrategyKind::Random: return "random";
    case StrategyKind::FixedAll: return "fixed_all";
    case StrategyKind::FixedSet: return "fixed_set";
  }
  return "?";
}

StrategyKind parse_strategy_kind(const std::string& s) {
  for (auto k : {StrategyKind::Ucb, StrategyKind::EpsilonGreedy, StrategyKind::Random, StrategyKind::FixedAll,
                 StrategyKind::FixedSet}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown selection strategy '" + s + "'");
}

void SelectionStrategy::validate() const {
  if (kind == StrategyKind::EpsilonGreedy && !(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ValidationError("epsilon-greedy epsilon must lie in [0, 1]", "/strategy/epsilon");
  }
  if (kind == StrategyKind::FixedSet) {
    if (fixed_ids.empty()) throw ValidationError("fixed_set strategy needs fixed_ids", "/strategy/fixed_ids");
    if (std::set<std::string>(fixed_ids.begin(), fixed_ids.end()).size() != fixed_ids.size()) {
      throw ValidationError("fixed_ids contains duplicates", "/strategy/fixed_ids");
    }
  } else if (!fixed_ids.empty()) {
    throw ValidationError("fixed_ids only applies to the fixed_set strategy", "/strategy/fixed_ids");
  }
}

std::vector<double> ucb_scores(const BanditState& state) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> out(state.arms(), inf);
  if (state.total == 0) return out;
  const double log_n = std::log(static_cast<double>(state.total));
  for (std::size_t i = 0; i < state.arms(); ++i) {
    if (state.counts[i] == 0) continue;
    out[i] = state.rewards[i] + std::sqrt(2.0 * log_n / static_cast<double>(state.counts[i]));
  }
  return out;
}

namespace {

// Indices of the k largest scores; ties go to the lower index.
std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  return idx;
}

}  // namespace

std::vector<std::size_t> select(const BanditState& state, const SelectionStrategy& strategy, std::size_t k, Rng& rng,
                                std::span<const std::string> arm_ids) {
  const std::size_t n = state.arms();
  if (k < 1 || k > n) {
    throw ValidationError("k must lie in [1, " + std::to_string(n) + "], got " + std::to_string(k), "/k");
  }
  switch (strategy.kind) {
    case StrategyKind::Ucb:
      return top_k(ucb_scores(state), k);
    case StrategyKind::EpsilonGreedy: {
      std::vector<std::size_t> greedy = top_k(state.rewards, n);
      std::vector<bool> taken(n, false);
      std::vector<std::size_t> out;
      for (std::size_t slot = 0; slot < k; ++slot) {
        std::size_t pick = n;
        if (rng.uniform() < strategy.epsilon) {
          std::uint64_t r = rng.below(n - out.size());
          for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            if (r-- == 0) {
              pick = i;
              break;
            }
          }
        } else {
          for (std::size_t i : greedy) {
            if (!taken[i]) {
              pick = i;
              break;
            }
          }
        }
        taken[pick] = true;
        out.push_back(pick);
      }
      return out;
    }
    case StrategyKind::Random: {
      std::vector<std::size_t> pool(n);
      std::iota(pool.begin(), pool.end(), 0);
      for (std::size_t i = 0; i < k; ++i) {
        std::swap(pool[i], pool[i + static_cast<std::size_t>(rng.below(n - i))]);
      }
      pool.resize(k);
      return pool;
    }
    case StrategyKind::FixedAll: {
      if (k != n) throw ValidationError("fixed_all requires k = N = " + std::to_string(n), "/k");
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), 0);
      return all;
    }
    case StrategyKind::FixedSet: {
      if (k != strategy.fixed_ids.size()) {
        throw ValidationError("fixed_set requires k = |fixed_ids| = " + std::to_string(strategy.fixed_ids.size()),
                              "/k");
      }
      std::vector<std::size_t> out;
      for (const auto& id : strategy.fixed_ids) {
        auto it = std::find(arm_ids.begin(), arm_ids.end(), id);
        if (it == arm_ids.end()) {
          throw ValidationError("fixed_set id '" + id + "' is not in the search space", "/strategy/fixed_ids");
        }
        out.push_back(static_cast<std::size_t>(it - arm_ids.begin()));
      }
      return out;
    }
  }
  throw ValidationError("unhandled selection strategy");
}

BanditState update_rewards(BanditState state, std::span<const std::size_t> chosen, std::span<const double> losses) {
  if (chosen.size() != losses.size()) throw ValidationError("update_rewards: chosen/losses length mismatch");
  std::set<std::size_t> seen;
  for (std::size_t i : chosen) {
    if (i >= state.arms()) throw ValidationError("update_rewards: arm index " + std::to_string(i) + " out of range");
    if (!seen.insert(i).second) throw ValidationError("update_rewards: duplicate arm " + std::to_string(i));
  }
  const double m = state.reward_momentum;
  for (std::size_t j = 0; j < chosen.size(); ++j) {
    const std::size_t i = chosen[j];
    state.rewards[i] = (1.0 - m) * state.rewards[i] + m * losses[j];
    state.counts[i] += 1;
  }
  state.total += chosen.size();
  return state;
}

}  // namespace xtransfer
