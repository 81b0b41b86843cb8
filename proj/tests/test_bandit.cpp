#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "xtransfer/bandit.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/rng.hpp"

using namespace xtransfer;

namespace {

BanditState random_state(Rng& rng, std::size_t arms) {
  BanditState s = BanditState::fresh(arms);
  for (std::size_t i = 0; i < arms; ++i) {
    s.counts[i] = rng.below(4) == 0 ? 0 : rng.below(50);
    s.rewards[i] = s.counts[i] ? rng.uniform(-1.0, 1.0) : 0.0;
    s.total += s.counts[i];
  }
  return s;
}

// Sort-based oracle: pulled arms by descending R + sqrt(2 ln n / T), unpulled
// arms first, ties to the lower index.
std::vector<std::size_t> oracle_top_k(const BanditState& s, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> keyed;
  for (std::size_t i = 0; i < s.arms(); ++i) {
    const double score = s.counts[i] == 0
                             ? std::numeric_limits<double>::infinity()
                             : s.rewards[i] + std::sqrt(2.0 * std::log(static_cast<double>(s.total)) / s.counts[i]);
    keyed.emplace_back(-score, i);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(keyed[i].second);
  return out;
}

}  // namespace

TEST(Ucb, ScoresMatchFormula) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const BanditState s = random_state(rng, 1 + rng.below(10));
    const auto scores = ucb_scores(s);
    for (std::size_t i = 0; i < s.arms(); ++i) {
      if (s.counts[i] == 0) {
        EXPECT_TRUE(std::isinf(scores[i]) && scores[i] > 0);
      } else {
        const double want = s.rewards[i] + std::sqrt(2.0 * std::log(static_cast<double>(s.total)) / s.counts[i]);
        EXPECT_NEAR(scores[i], want, 1e-12 * std::max(1.0, std::abs(want)));
      }
    }
  }
}

TEST(Ucb, TopKMatchesSortOracle) {
  Rng rng(2), sel(3);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    const std::size_t k = 1 + rng.below(n);
    const BanditState s = random_state(rng, n);
    EXPECT_EQ(select(s, SelectionStrategy::ucb(), k, sel), oracle_top_k(s, k));
  }
}

TEST(Ucb, ColdStartPullsUnseenArmsInIndexOrder) {
  Rng rng(0);
  BanditState s = BanditState::fresh(5);
  EXPECT_EQ(select(s, SelectionStrategy::ucb(), 2, rng), (std::vector<std::size_t>{0, 1}));
  s = update_rewards(s, std::vector<std::size_t>{0, 1}, std::vector<double>{0.9, 0.8});
  EXPECT_EQ(select(s, SelectionStrategy::ucb(), 2, rng), (std::vector<std::size_t>{2, 3}));
}

TEST(UpdateRewards, EmaAndCounts) {
  BanditState s = BanditState::fresh(3, 0.25);
  s = update_rewards(s, std::vector<std::size_t>{2, 0}, std::vector<double>{1.0, -2.0});
  EXPECT_DOUBLE_EQ(s.rewards[2], 0.25);
  EXPECT_DOUBLE_EQ(s.rewards[0], -0.5);
  EXPECT_EQ(s.counts, (std::vector<std::uint64_t>{1, 0, 1}));
  EXPECT_EQ(s.total, 2u);
  s = update_rewards(s, std::vector<std::size_t>{2}, std::vector<double>{0.0});
  EXPECT_DOUBLE_EQ(s.rewards[2], 0.75 * 0.25);
  EXPECT_THROW(update_rewards(s, std::vector<std::size_t>{1, 1}, std::vector<double>{0, 0}), ValidationError);
  EXPECT_THROW(update_rewards(s, std::vector<std::size_t>{3}, std::vector<double>{0}), ValidationError);
  EXPECT_THROW(update_rewards(s, std::vector<std::size_t>{0}, std::vector<double>{}), ValidationError);
}

TEST(UpdateRewards, BookkeepingInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(8), k = 1 + rng.below(n), steps = rng.below(30);
    BanditState s = BanditState::fresh(n);
    Rng sel(trial);
    for (std::size_t j = 0; j < steps; ++j) {
      const auto chosen = select(s, SelectionStrategy::ucb(), k, sel);
      std::vector<double> losses(k);
      for (auto& l : losses) l = rng.uniform();
      s = update_rewards(s, chosen, losses);
    }
    EXPECT_EQ(s.total, steps * k);
    EXPECT_EQ(std::accumulate(s.counts.begin(), s.counts.end(), std::uint64_t{0}), steps * k);
  }
}

TEST(Strategies, DistinctArmsAlways) {
  Rng rng(5);
  const std::vector<SelectionStrategy> strategies = {SelectionStrategy::ucb(), SelectionStrategy::random(),
                                                     SelectionStrategy::epsilon_greedy(0.3)};
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(9), k = 1 + rng.below(n);
    const BanditState s = random_state(rng, n);
    for (const auto& st : strategies) {
      const auto c = select(s, st, k, rng);
      ASSERT_EQ(c.size(), k);
      EXPECT_EQ(std::set<std::size_t>(c.begin(), c.end()).size(), k);
      for (auto i : c) EXPECT_LT(i, n);
    }
  }
}

TEST(Strategies, RandomIsRoughlyUniform) {
  Rng rng(6);
  const BanditState s = BanditState::fresh(4);
  std::vector<int> hits(4, 0);
  for (int i = 0; i < 40000; ++i) ++hits[select(s, SelectionStrategy::random(), 1, rng)[0]];
  for (int h : hits) EXPECT_NEAR(h / 40000.0, 0.25, 0.015);
}

TEST(Strategies, GreedyWithZeroEpsilonTakesBestRewards) {
  Rng rng(7);
  BanditState s = BanditState::fresh(4);
  s.rewards = {0.1, 0.7, 0.3, 0.7};
  s.counts = {1, 1, 1, 1};
  s.total = 4;
  EXPECT_EQ(select(s, SelectionStrategy::epsilon_greedy(0.0), 2, rng), (std::vector<std::size_t>{1, 3}));
}

TEST(Strategies, FixedAllAndFixedSet) {
  Rng rng(8);
  const BanditState s = BanditState::fresh(3);
  EXPECT_EQ(select(s, SelectionStrategy::fixed_all(), 3, rng), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(select(s, SelectionStrategy::fixed_all(), 2, rng), ValidationError);
  const std::vector<std::string> ids = {"a", "b", "c"};
  EXPECT_EQ(select(s, SelectionStrategy::fixed_set({"c", "a"}), 2, rng, ids), (std::vector<std::size_t>{2, 0}));
  EXPECT_THROW(select(s, SelectionStrategy::fixed_set({"z"}), 1, rng, ids), ValidationError);
}

TEST(Strategies, InvalidKThrows) {
  Rng rng(9);
  const BanditState s = BanditState::fresh(3);
  EXPECT_THROW(select(s, SelectionStrategy::ucb(), 0, rng), ValidationError);
  EXPECT_THROW(select(s, SelectionStrategy::ucb(), 4, rng), ValidationError);
}

TEST(BanditStateJson, RoundTrip) {
  Rng rng(10);
  const BanditState s = random_state(rng, 6);
  const nlohmann::json j = s;
  EXPECT_EQ(j.get<BanditState>(), s);
  EXPECT_EQ(parse_strategy_kind(to_string(StrategyKind::EpsilonGreedy)), StrategyKind::EpsilonGreedy);
  EXPECT_THROW(parse_strategy_kind("thompson"), ValidationError);
}
