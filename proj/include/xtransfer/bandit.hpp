#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xtransfer/rng.hpp"

namespace xtransfer {

struct BanditState {
  std::vector<double> rewards;         // R, EMA of observed losses
  std::vector<std::uint64_t> counts;   // T
  std::uint64_t total = 0;             // n
  double reward_momentum = 0.1;

  static BanditState fresh(std::size_t arms, double reward_momentum = 0.1);
  std::size_t arms() const { return rewards.size(); }
  void validate() const;
  friend bool operator==(const BanditState&, const BanditState&) = default;
};

void to_json(nlohmann::json& j, const BanditState& s);
void from_json(const nlohmann::json& j, BanditState& s);

enum class StrategyKind { Ucb, EpsilonGreedy, Random, FixedAll, FixedSet };
std::string to_string(StrategyKind kind);
StrategyKind parse_strategy_kind(const std::string& s);

struct SelectionStrategy {
  StrategyKind kind = StrategyKind::Ucb;
  double epsilon = 0.5;                 // EpsilonGreedy
  std::vector<std::string> fixed_ids;   // FixedSet

  static SelectionStrategy ucb() { return {}; }
  static SelectionStrategy epsilon_greedy(double eps) { return {StrategyKind::EpsilonGreedy, eps, {}}; }
  static SelectionStrategy random() { return {StrategyKind::Random, 0.5, {}}; }
  static SelectionStrategy fixed_all() { return {StrategyKind::FixedAll, 0.5, {}}; }
  static SelectionStrategy fixed_set(std::vector<std::string> ids) {
    return {StrategyKind::FixedSet, 0.5, std::move(ids)};
  }
  void validate() const;
};

// R_i + sqrt(2 ln n / n_i); +inf for arms never pulled.
std::vector<double> ucb_scores(const BanditState& state);

// Chooses k distinct arms. `arm_ids` maps indices to encoder ids and is only
// consulted by FixedSet. UCB/greedy picks come out in rank order.
std::vector<std::size_t> select(const BanditState& state, const SelectionStrategy& strategy, std::size_t k,
                                Rng& rng, std::span<const std::string> arm_ids = {});

// R_i <- (1-m) R_i + m L_i and T_i += 1 for each chosen arm; n += |chosen|.
BanditState update_rewards(BanditState state, std::span<const std::size_t> chosen, std::span<const double> losses);

}  // namespace xtransfer
