#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "flat5/vector_field.hpp"

namespace flat5 {

/// Pointwise sampling policy around a base point. All ranks are decided by
/// plurality over the sampled points; rank disagreements are surfaced as
/// constant-rank violations rather than hidden.
struct SamplePlan {
    Assignment base;          // state values
    double box_radius = 0.1;
    int count = 25;
    std::uint64_t seed = 42;
    double rank_tolerance = 1e-8;
};

struct Distribution {
    std::vector<std::string> state;
    std::vector<VectorField> generators;

    Distribution() = default;
    Distribution(std::vector<std::string> st, std::vector<VectorField> gens)
        : state(std::move(st)), generators(std::move(gens)) {
        if (generators.empty()) throw ValidationError("distribution needs at least one generator");
        for (const auto& g : generators)
            if (g.state != state) throw ValidationError("distribution generators must share state");
    }
};

namespace detail {

// mt19937_64 output is standardized; map to [0,1) by hand so that sampled
// points are identical across platforms and library versions.
inline double uniform01(std::mt19937_64& rng) {
    return double(rng() >> 11) * 0x1.0p-53;
}

inline std::vector<double> assignment_values(const Assignment& a,
                                             const std::vector<std::string>& names) {
    std::vector<double> out;
    out.reserve(names.size());
    for (const auto& n : names) {
        auto it = a.find(n);
        if (it == a.end()) throw ValidationError("assignment missing variable '" + n + "'");
        out.push_back(it->second);
    }
    return out;
}

/// Base point first, then uniform draws in the box. Points rejected by the
/// validity predicate (pole hits) are replaced, with total draws capped at
/// ten times the requested count.
inline std::vector<std::vector<double>> sample_points(
    const SamplePlan& plan, const std::vector<std::string>& state,
    const std::function<bool(const std::vector<double>&)>& valid) {
    if (plan.count < 1 || plan.box_radius <= 0.0 || plan.rank_tolerance <= 0.0)
        throw ValidationError("invalid sample plan");
    std::vector<double> base = assignment_values(plan.base, state);
    if (valid && !valid(base))
        throw EvalDomainError("base point hits an evaluation pole");
    std::vector<std::vector<double>> pts;
    pts.push_back(base);
    std::mt19937_64 rng(plan.seed);
    int attempts = 0;
    const int max_attempts = 10 * plan.count;
    while (int(pts.size()) < plan.count && attempts < max_attempts) {
        ++attempts;
        std::vector<double> x(base.size());
        for (std::size_t i = 0; i < base.size(); ++i)
            x[i] = base[i] + plan.box_radius * (2.0 * uniform01(rng) - 1.0);
        if (!valid || valid(x)) pts.push_back(std::move(x));
    }
    if (int(pts.size()) < plan.count)
        throw EvalDomainError("sampling failed: too many pole hits near the base point");
    return pts;
}

inline int rank_of_columns(Eigen::MatrixXd m, double tol, bool normalize_columns) {
    if (m.size() == 0) return 0;
    if (normalize_columns) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double n = m.col(j).norm();
            if (n > 1e-300) m.col(j) /= n;
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0) return 0;
    double top = sv(0);
    if (top == 0.0) return 0;
    int r = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > tol * top) ++r;
    return r;
}

/// Compiled generator values and Jacobians for repeated pointwise work.
struct DistributionEvaluator {
    int n = 0, g = 0;
    Program values;  // g blocks of n components
    Program jacs;    // g blocks of n*n row-major Jacobians
    mutable std::vector<double> scratch_v, scratch_j, out_v, out_j;

    DistributionEvaluator(const Distribution& d, const std::map<std::string, double>& params) {
        n = int(d.state.size());
        g = int(d.generators.size());
        std::vector<Expr> vals, jents;
        for (const auto& gen : d.generators) {
            vals.insert(vals.end(), gen.components.begin(), gen.components.end());
            auto je = jacobian_entries(gen);
            jents.insert(jents.end(), je.begin(), je.end());
        }
        values = Program::compile(vals, d.state, params);
        jacs = Program::compile(jents, d.state, params);
        out_v.resize(vals.size());
        out_j.resize(jents.size());
    }

    bool eval_values(const std::vector<double>& x, Eigen::MatrixXd& v) const {
        if (!values.eval(x, out_v, scratch_v)) return false;
        v.resize(n, g);
        for (int k = 0; k < g; ++k)
            for (int i = 0; i < n; ++i) v(i, k) = out_v[std::size_t(k) * n + i];
        return true;
    }

    // Columns: generators followed by all pairwise brackets
    // [Xi,Xj](x) = Jj(x) Xi(x) - Ji(x) Xj(x).
    bool eval_with_brackets(const std::vector<double>& x, Eigen::MatrixXd& v,
                            Eigen::MatrixXd& vb) const {
        if (!eval_values(x, v)) return false;
        if (!jacs.eval(x, out_j, scratch_j)) return false;
        std::vector<Eigen::MatrixXd> jac(g);
        for (int k = 0; k < g; ++k) {
            jac[k].resize(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    jac[k](i, j) = out_j[(std::size_t(k) * n + i) * n + j];
        }
        const int pairs = g * (g - 1) / 2;
        vb.resize(n, g + pairs);
        vb.leftCols(g) = v;
        int col = g;
        for (int i = 0; i < g; ++i)
            for (int j = i + 1; j < g; ++j)
                vb.col(col++) = jac[j] * v.col(i) - jac[i] * v.col(j);
        return true;
    }
};

inline int plurality(const std::vector<int>& xs) {
    std::map<int, int> counts;
    for (int x : xs) ++counts[x];
    int best = xs.front(), best_count = 0;
    for (const auto& [v, c] : counts)
        if (c > best_count) {
            best = v;
            best_count = c;
        }
    return best;
}

} // namespace detail

/// Rank of the generator matrix at a point: singular values above
/// tol * (largest singular value).
inline int numeric_rank(const Distribution& d, const Assignment& at, double tol) {
    detail::DistributionEvaluator ev(d, {});
    std::vector<double> x = detail::assignment_values(at, d.state);
    Eigen::MatrixXd v;
    if (!ev.eval_values(x, v))
        throw EvalDomainError("distribution generator hit a pole at the evaluation point");
    return detail::rank_of_columns(v, tol, false);
}

/// rank(generators plus all pairwise brackets) - rank(generators) at a point.
/// Columns are normalized before the rank test so bracket magnitudes cannot
/// mask span growth.
inline int involutivity_defect(const Distribution& d, const Assignment& at, double tol) {
    detail::DistributionEvaluator ev(d, {});
    std::vector<double> x = detail::assignment_values(at, d.state);
    Eigen::MatrixXd v, vb;
    if (!ev.eval_with_brackets(x, v, vb))
        throw EvalDomainError("distribution bracket hit a pole at the evaluation point");
    int r = detail::rank_of_columns(v, tol, true);
    int rb = detail::rank_of_columns(vb, tol, true);
    return std::max(0, rb - r);
}

struct FiltrationStep {
    Distribution distribution;
    int rank = 0;
    bool involutive = false;
    bool constant_rank = true;
    int max_defect = 0;
    std::vector<int> sample_ranks;
};

/// The sequence D^0 = span{g1,g2}, D^{j+1} = D^j + [f, D^j].
/// Generators grow by the two iterated brackets ad_f^{j+1} g_i per step;
/// generator at index 2j+i is [f, generator at 2(j-1)+i].
struct Filtration {
    int state_dimension = 0;
    VectorField drift;
    std::vector<FiltrationStep> steps;
    std::vector<std::string> warnings;

    std::vector<int> ranks() const {
        std::vector<int> r;
        r.reserve(steps.size());
        for (const auto& s : steps) r.push_back(s.rank);
        return r;
    }
};

inline Filtration build_filtration(const ControlAffineSystem& sys, const SamplePlan& plan) {
    sys.validate();
    const int n = sys.dimension();
    if (n > 8) throw ValidationError("filtration supported up to dimension 8");

    Filtration out;
    out.state_dimension = n;
    out.drift = sys.f;

    // Validate sample points against the base fields; brackets share their
    // singular loci in all catalogue and example systems.
    std::vector<Expr> probe;
    for (const VectorField* vf : {&sys.f, &sys.g1, &sys.g2})
        probe.insert(probe.end(), vf->components.begin(), vf->components.end());
    Program probe_prog = Program::compile(probe, sys.state, sys.parameters);
    std::vector<double> pout(probe.size()), pscratch;
    auto valid = [&](const std::vector<double>& x) {
        return probe_prog.eval(x, pout, pscratch);
    };
    SamplePlan local = plan;
    if (local.base.empty()) local.base = sys.base_point;
    auto points = detail::sample_points(local, sys.state, valid);

    std::vector<VectorField> gens = {sys.g1, sys.g2};
    std::vector<VectorField> newest = gens;
    std::vector<bool> alive(points.size(), true);

    for (int j = 0; j < n; ++j) {
        Distribution dist(sys.state, gens);
        detail::DistributionEvaluator ev(dist, sys.parameters);
        std::vector<int> ranks;
        bool involutive = true;
        int max_defect = 0;
        Eigen::MatrixXd v, vb;
        for (std::size_t k = 0; k < points.size(); ++k) {
            if (!alive[k]) continue;
            if (!ev.eval_with_brackets(points[k], v, vb)) {
                alive[k] = false;
                out.warnings.push_back("sample " + std::to_string(k) +
                                       " dropped at step " + std::to_string(j) + " (pole)");
                continue;
            }
            int r = detail::rank_of_columns(v, local.rank_tolerance, true);
            int rb = detail::rank_of_columns(vb, local.rank_tolerance, true);
            int defect = std::max(0, rb - r);
            ranks.push_back(r);
            if (defect > 0) involutive = false;
            max_defect = std::max(max_defect, defect);
        }
        if (ranks.empty()) throw EvalDomainError("all sample points lost to poles");

        FiltrationStep step;
        step.distribution = std::move(dist);
        step.rank = detail::plurality(ranks);
        step.constant_rank =
            std::all_of(ranks.begin(), ranks.end(), [&](int r) { return r == ranks.front(); });
        step.involutive = involutive;
        step.max_defect = max_defect;
        step.sample_ranks = std::move(ranks);
        out.steps.push_back(std::move(step));

        const int rank_now = out.steps.back().rank;
        if (rank_now >= n) break;
        if (j > 0 && rank_now == out.steps[j - 1].rank) break;  // stabilized below full rank

        std::vector<VectorField> next;
        next.reserve(newest.size());
        for (const auto& xi : newest) next.push_back(lie_bracket(sys.f, xi));
        for (auto& nf : next) gens.push_back(nf);
        newest = std::move(next);
    }
    return out;
}

/// Rank seen at every sampled point; constant iff all agree.
inline std::pair<int, bool> constant_rank_profile(
    const Distribution& d, const SamplePlan& plan,
    const std::map<std::string, double>& parameters = {}) {
    detail::DistributionEvaluator ev(d, parameters);
    Eigen::MatrixXd v;
    auto valid = [&](const std::vector<double>& x) { return ev.eval_values(x, v); };
    auto points = detail::sample_points(plan, d.state, valid);
    std::vector<int> ranks;
    ranks.reserve(points.size());
    for (const auto& x : points) {
        ev.eval_values(x, v);
        ranks.push_back(detail::rank_of_columns(v, plan.rank_tolerance, true));
    }
    bool constant =
        std::all_of(ranks.begin(), ranks.end(), [&](int r) { return r == ranks.front(); });
    return {detail::plurality(ranks), constant};
}

} // namespace flat5
