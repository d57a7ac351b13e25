#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace diffpoi::evalcli {

inline constexpr std::array<std::size_t, 3> kCutoffs = {2, 5, 10};

// 1-based rank of `target` under descending scores. Ties go to the lower
// POI index.
inline std::size_t rank_of(std::span<const double> scores, std::size_t target) {
    if (target >= scores.size()) throw std::out_of_range("rank_of: target not in catalog");
    const double s = scores[target];
    std::size_t better = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] > s || (scores[i] == s && i < target)) ++better;
    }
    return better + 1;
}

// Full catalog order under the same tie rule.
inline std::vector<std::size_t> ranked_list(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

inline std::size_t position_in(const std::vector<std::size_t>& ranked, std::size_t target) {
    auto it = std::find(ranked.begin(), ranked.end(), target);
    if (it == ranked.end()) throw std::out_of_range("ranked list does not contain the target");
    return static_cast<std::size_t>(it - ranked.begin()) + 1;
}

inline double recall_at_rank(std::size_t rank, std::size_t k) { return rank <= k ? 1.0 : 0.0; }

inline double ndcg_at_rank(std::size_t rank, std::size_t k) {
    return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

inline double recall_at_k(const std::vector<std::size_t>& ranked, std::size_t target, std::size_t k) {
    return recall_at_rank(position_in(ranked, target), k);
}

inline double ndcg_at_k(const std::vector<std::size_t>& ranked, std::size_t target, std::size_t k) {
    return ndcg_at_rank(position_in(ranked, target), k);
}

struct MetricSums {
    std::array<double, kCutoffs.size()> recall{};
    std::array<double, kCutoffs.size()> ndcg{};
    std::size_t count = 0;

    void add(std::size_t rank) {
        for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
            recall[i] += recall_at_rank(rank, kCutoffs[i]);
            ndcg[i] += ndcg_at_rank(rank, kCutoffs[i]);
        }
        ++count;
    }

    double mean_recall(std::size_t i) const { return count ? recall[i] / static_cast<double>(count) : 0.0; }
    double mean_ndcg(std::size_t i) const { return count ? ndcg[i] / static_cast<double>(count) : 0.0; }

    double recall_at(std::size_t k) const {
        for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
            if (kCutoffs[i] == k) return mean_recall(i);
        }
        throw std::out_of_range("no such cutoff");
    }
};

}  // namespace diffpoi::evalcli
