#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "flat5/distribution.hpp"

namespace flat5 {

/// Outcome of the Jakubczyk-Respondek test. Violations are reported, never
/// thrown: ddiff searches must continue past failures.
struct LinearizabilityReport {
    bool linearizable = false;
    std::vector<int> ranks;
    std::optional<int> first_noninvolutive;
    std::optional<std::array<int, 2>> brunovsky_indices;
    std::vector<int> flagged_steps;  // constant-rank violations
    std::shared_ptr<const Filtration> filtration;
};

namespace detail {

/// Controllability indices as the dual partition of the rank increments.
inline std::array<int, 2> indices_from_ranks(const std::vector<int>& ranks) {
    std::vector<int> inc;
    inc.push_back(ranks.front());
    for (std::size_t j = 1; j < ranks.size(); ++j) inc.push_back(ranks[j] - ranks[j - 1]);
    int rho1 = 0, rho2 = 0;
    for (int m : inc) {
        if (m >= 1) ++rho2;
        if (m >= 2) ++rho1;
    }
    if (rho1 > rho2) std::swap(rho1, rho2);
    return {rho1, rho2};
}

} // namespace detail

inline LinearizabilityReport static_feedback_linearizable(const ControlAffineSystem& sys,
                                                          const SamplePlan& plan) {
    auto filt = std::make_shared<Filtration>(build_filtration(sys, plan));
    LinearizabilityReport rep;
    rep.filtration = filt;
    rep.ranks = filt->ranks();
    for (std::size_t j = 0; j < filt->steps.size(); ++j) {
        const auto& s = filt->steps[j];
        if (!s.constant_rank) rep.flagged_steps.push_back(int(j));
        if (!s.involutive && !rep.first_noninvolutive) rep.first_noninvolutive = int(j);
    }
    const bool full_rank = rep.ranks.back() == filt->state_dimension;
    rep.linearizable = full_rank && rep.flagged_steps.empty() && !rep.first_noninvolutive;
    if (rep.linearizable) rep.brunovsky_indices = detail::indices_from_ranks(rep.ranks);
    return rep;
}

inline std::array<int, 2> brunovsky_indices(const ControlAffineSystem& sys,
                                            const SamplePlan& plan) {
    auto rep = static_feedback_linearizable(sys, plan);
    if (!rep.linearizable)
        throw Error("brunovsky_indices: system is not static feedback linearizable");
    return *rep.brunovsky_indices;
}

/// Smallest j whose D^j fails involutivity at some sampled point; absent when
/// every step is involutive.
inline std::optional<int> first_noninvolutive_index(const ControlAffineSystem& sys,
                                                    const SamplePlan& plan) {
    return static_feedback_linearizable(sys, plan).first_noninvolutive;
}

} // namespace flat5
