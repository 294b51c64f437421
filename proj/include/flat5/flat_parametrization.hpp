#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "flat5/normal_forms.hpp"

namespace flat5 {

/// A trajectory node where the parametrization's regularity margin fell
/// below the singularity threshold.
class SingularNodeError : public Error {
public:
    SingularNodeError(int node, double time, double margin)
        : Error("flat parametrization singular at node " + std::to_string(node) + " (t=" +
                std::to_string(time) + ", margin=" + std::to_string(margin) + ")"),
          node(node), time(time), margin(margin) {}
    int node;
    double time;
    double margin;
};

class SolveError : public Error {
public:
    SolveError(int node, const std::string& what)
        : Error("flat parametrization solve failed at node " + std::to_string(node) + ": " + what),
          node(node) {}
    int node;
};

/// Flat-output curve: two polynomials in t with ascending coefficients.
/// Derivatives of any order are exact coefficient shifts.
struct FlatOutputCurve {
    std::vector<double> phi1, phi2;
};

inline double polynomial_derivative(const std::vector<double>& coeffs, double t, int order) {
    if (order < 0) throw ValidationError("derivative order must be nonnegative");
    double acc = 0.0;
    for (std::size_t k = coeffs.size(); k-- > std::size_t(order);) {
        double fac = 1.0;
        for (std::size_t j = k; j > k - std::size_t(order); --j) fac *= double(j);
        acc = acc * t + coeffs[k] * fac;
    }
    return acc;
}

/// Derivatives 0..order of both components at time t.
inline std::array<std::vector<double>, 2> curve_derivatives(const FlatOutputCurve& c, double t,
                                                            int order) {
    std::array<std::vector<double>, 2> out;
    for (int i = 0; i <= order; ++i) {
        out[0].push_back(polynomial_derivative(c.phi1, t, i));
        out[1].push_back(polynomial_derivative(c.phi2, t, i));
    }
    return out;
}

inline void validate_curve(const FlatOutputCurve& c) {
    if (c.phi1.size() > 13 || c.phi2.size() > 13)
        throw ValidationError("flat output curve degree must be at most 12");
}

struct TimeGrid {
    double t0 = 0.0, t1 = 1.0, dt = 1e-3;

    int node_count() const {
        if (dt <= 0.0 || t1 <= t0) throw ValidationError("invalid time grid");
        long long steps = std::llround((t1 - t0) / dt);
        if (steps < 4) throw ValidationError("time grid needs at least 5 nodes");
        return int(steps) + 1;
    }
    double time(int i) const { return t0 + dt * double(i); }
};

/// O(h^4) first derivative on a uniform grid, 5-point stencils with
/// one-sided ends.
inline std::vector<double> grid_derivative(const std::vector<double>& f, double dt) {
    const std::size_t n = f.size();
    if (n < 5) throw ValidationError("grid derivative needs at least 5 nodes");
    std::vector<double> d(n);
    const double h12 = 12.0 * dt;
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / h12;
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / h12;
    for (std::size_t i = 2; i + 2 < n; ++i)
        d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / h12;
    d[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) / h12;
    d[n - 1] =
        (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5]) / h12;
    return d;
}

/// Reconstructed trajectory with the derivative-order bookkeeping (s1, s2)
/// and the per-node regularity margin.
struct FlatTrajectory {
    std::vector<double> time;
    std::vector<std::array<double, 5>> z;
    std::vector<std::array<double, 2>> v;
    std::array<int, 2> used_orders{0, 0};
    std::vector<double> margin;
    int max_newton_iterations = 0;
};

namespace detail {

constexpr double kSingularMargin = 1e-8;

struct DerivOrders {
    int o1 = -1, o2 = -1;  // -1: no dependence on that output component
};

inline DerivOrders max_orders(DerivOrders a, DerivOrders b) {
    return {std::max(a.o1, b.o1), std::max(a.o2, b.o2)};
}
inline DerivOrders bump(DerivOrders a) {
    return {a.o1 >= 0 ? a.o1 + 1 : -1, a.o2 >= 0 ? a.o2 + 1 : -1};
}

/// One display row  zdot_row = f_row + g1_row * v1  solved pointwise for its
/// trailing unknown by safeguarded Newton (bisection fallback on a width-2
/// bracket around the warm start).
struct RowSolver {
    Program row, drow;           // over z1..z5, v1; parameters baked
    int unknown = 0;             // 0-based index into z
    bool uses_v1 = false;
    std::set<int> z_deps;        // 0-based indices of other z variables used
    mutable std::vector<double> scratch_;

    RowSolver(const ControlAffineSystem& sys, int row_index, int unknown_index) {
        unknown = unknown_index;
        Expr e = sys.f.components[row_index] +
                 sys.g1.components[row_index] * Expr::variable("v1");
        std::vector<std::string> layout = sys.state;
        layout.push_back("v1");
        row = Program::compile(std::span<const Expr>(&e, 1), layout, sys.parameters);
        Expr de = differentiate(e, sys.state[unknown_index]);
        drow = Program::compile(std::span<const Expr>(&de, 1), layout, sys.parameters);
        for (const auto& name : free_variables(e)) {
            if (name == "v1") {
                uses_v1 = true;
                continue;
            }
            for (int i = 0; i < 5; ++i)
                if (name == sys.state[std::size_t(i)] && i != unknown_index) z_deps.insert(i);
        }
    }

    double eval_row(std::array<double, 6>& in) const {
        double out;
        if (!row.eval(in, std::span<double>(&out, 1), scratch_))
            throw EvalDomainError("row evaluation hit a pole");
        return out;
    }
    double eval_drow(std::array<double, 6>& in) const {
        double out;
        if (!drow.eval(in, std::span<double>(&out, 1), scratch_))
            throw EvalDomainError("row derivative hit a pole");
        return out;
    }

    /// Solves row(z, v1) = target for z[unknown]; z[unknown] holds the warm
    /// start on entry and the solution on exit. Returns |d row/d unknown| at
    /// the solution (the node margin) and accumulates iteration count.
    double solve(std::array<double, 5>& z, double v1, double target, int node,
                 int& iterations) const {
        std::array<double, 6> in{z[0], z[1], z[2], z[3], z[4], v1};
        const double warm = z[std::size_t(unknown)];
        double lo = warm - 1.0, hi = warm + 1.0;
        double x = warm;
        const double scale = 1.0 + std::abs(target);

        auto residual = [&](double cand) {
            in[std::size_t(unknown)] = cand;
            return eval_row(in) - target;
        };

        double rlo = 0.0, rhi = 0.0;
        bool bracket = false;
        try {
            rlo = residual(lo);
            rhi = residual(hi);
            bracket = std::isfinite(rlo) && std::isfinite(rhi) && (rlo < 0.0) != (rhi < 0.0);
        } catch (const EvalDomainError&) {
            bracket = false;
        }

        double r = residual(x);
        int it = 0;
        for (; it < 60 && std::abs(r) > 1e-12 * scale; ++it) {
            in[std::size_t(unknown)] = x;
            double d = eval_drow(in);
            double xn = (std::abs(d) > 1e-300) ? x - r / d
                                               : std::numeric_limits<double>::quiet_NaN();
            if (!std::isfinite(xn) || (bracket && (xn < lo || xn > hi)))
                xn = bracket ? 0.5 * (lo + hi) : x - std::copysign(0.25, r * d);
            double rn;
            try {
                rn = residual(xn);
            } catch (const EvalDomainError&) {
                if (!bracket) throw SolveError(node, "pole during Newton step");
                xn = 0.5 * (lo + hi);
                rn = residual(xn);
            }
            // Damping: fall back to halving toward x when the step regresses.
            int backtrack = 0;
            while (std::isfinite(rn) && std::abs(rn) > std::abs(r) && backtrack++ < 10) {
                xn = 0.5 * (x + xn);
                rn = residual(xn);
            }
            if (bracket) {
                if ((rn < 0.0) == (rlo < 0.0)) {
                    lo = xn;
                    rlo = rn;
                } else {
                    hi = xn;
                    rhi = rn;
                }
            }
            x = xn;
            r = rn;
        }
        if (std::abs(r) > 1e-9 * scale) throw SolveError(node, "Newton did not converge");
        iterations = std::max(iterations, it);
        z[std::size_t(unknown)] = x;
        in[std::size_t(unknown)] = x;
        return std::abs(eval_drow(in));
    }

    DerivOrders deps_orders(const std::array<DerivOrders, 5>& zo, DerivOrders v1o,
                            DerivOrders target) const {
        DerivOrders o = target;
        if (uses_v1) o = max_orders(o, v1o);
        for (int i : z_deps) o = max_orders(o, zo[std::size_t(i)]);
        return o;
    }
};

} // namespace detail

/// Determinant of the NF13 parametrization's 2x2 Jacobian d(phi2dot,
/// phi2ddot)/d(z3, z4); vanishing values are the flatness singularities in
/// the control space.
inline double nf13_jacobian_determinant(const NormalFormSpec& spec, const Assignment& z,
                                        double v1, double v1dot) {
    return nf13_regularity_value(spec, z, v1, v1dot);
}

inline FlatTrajectory parametrize_trajectory(const NormalFormSpec& spec,
                                             const FlatOutputCurve& curve, const TimeGrid& grid) {
    validate_normal_form_spec(spec);
    validate_curve(curve);
    if (spec.variant == Variant::NFpp)
        throw ValidationError(
            "flat parametrization of the generic NF'' family is not defined; use a "
            "specialized variant NF''8..NF''12");
    const Family fam = family_of(spec.variant);
    ControlAffineSystem sys = build_normal_form(spec);

    const int n = grid.node_count();
    FlatTrajectory out;
    out.time.resize(n);
    out.z.assign(n, {});
    out.v.assign(n, {});
    out.margin.assign(n, std::numeric_limits<double>::infinity());
    for (int i = 0; i < n; ++i) out.time[i] = grid.time(i);

    auto d1 = [&](double t, int k) { return polynomial_derivative(curve.phi1, t, k); };
    auto d2 = [&](double t, int k) { return polynomial_derivative(curve.phi2, t, k); };

    std::array<detail::DerivOrders, 5> zo{};
    detail::DerivOrders v1o, v2o;
    std::vector<double> v1_col(n);

    auto note_margin = [&](int i, double m) {
        out.margin[i] = std::min(out.margin[i], m);
        if (m <= detail::kSingularMargin) throw SingularNodeError(i, out.time[i], m);
    };
    auto column = [&](int zi) {
        std::vector<double> col(n);
        for (int i = 0; i < n; ++i) col[std::size_t(i)] = out.z[std::size_t(i)][std::size_t(zi)];
        return col;
    };
    auto run_row = [&](const detail::RowSolver& solver, const std::vector<double>& target,
                       detail::DerivOrders target_orders) {
        for (int i = 0; i < n; ++i) {
            auto& z = out.z[std::size_t(i)];
            if (i > 0) z[std::size_t(solver.unknown)] = out.z[std::size_t(i - 1)][std::size_t(solver.unknown)];
            else z[std::size_t(solver.unknown)] = spec.z0[std::size_t(solver.unknown)];
            double m = solver.solve(z, v1_col[std::size_t(i)], target[std::size_t(i)], i,
                                    out.max_newton_iterations);
            note_margin(i, m);
        }
        zo[std::size_t(solver.unknown)] = solver.deps_orders(zo, v1o, target_orders);
    };

    switch (fam) {
    case Family::NF:
    case Family::NFpp: {
        for (int i = 0; i < n; ++i) {
            double t = out.time[i];
            out.z[std::size_t(i)][0] = d1(t, 0);
            out.z[std::size_t(i)][1] = d2(t, 0);
            v1_col[std::size_t(i)] = d1(t, 1);
            out.v[std::size_t(i)][0] = v1_col[std::size_t(i)];
        }
        zo[0] = {0, -1};
        zo[1] = {-1, 0};
        v1o = {1, -1};
        if (fam == Family::NF) {
            for (int i = 0; i < n; ++i) out.z[std::size_t(i)][2] = d2(out.time[i], 1);
            zo[2] = {-1, 1};
            detail::RowSolver b_row(sys, 2, 3);
            std::vector<double> t4(n);
            for (int i = 0; i < n; ++i) t4[std::size_t(i)] = d2(out.time[i], 2);
            run_row(b_row, t4, {-1, 2});
        } else {
            detail::RowSolver c_row(sys, 1, 2);
            std::vector<double> t3(n);
            for (int i = 0; i < n; ++i) t3[std::size_t(i)] = d2(out.time[i], 1);
            run_row(c_row, t3, {-1, 1});
            detail::RowSolver b_row(sys, 2, 3);
            run_row(b_row, grid_derivative(column(2), grid.dt), detail::bump(zo[2]));
        }
        detail::RowSolver a_row(sys, 3, 4);
        run_row(a_row, grid_derivative(column(3), grid.dt), detail::bump(zo[3]));
        break;
    }
    case Family::NFp: {
        for (int i = 0; i < n; ++i) {
            double t = out.time[i];
            out.z[std::size_t(i)][0] = d1(t, 0);
            out.z[std::size_t(i)][1] = d1(t, 1);
            out.z[std::size_t(i)][2] = d2(t, 0);
            v1_col[std::size_t(i)] = d1(t, 2);
            out.v[std::size_t(i)][0] = v1_col[std::size_t(i)];
        }
        zo[0] = {0, -1};
        zo[1] = {1, -1};
        zo[2] = {-1, 0};
        v1o = {2, -1};
        detail::RowSolver b_row(sys, 2, 3);
        std::vector<double> t4(n);
        for (int i = 0; i < n; ++i) t4[std::size_t(i)] = d2(out.time[i], 1);
        run_row(b_row, t4, {-1, 1});
        detail::RowSolver a_row(sys, 3, 4);
        run_row(a_row, grid_derivative(column(3), grid.dt), detail::bump(zo[3]));
        break;
    }
    case Family::NF7: {
        for (int i = 0; i < n; ++i) {
            double t = out.time[i];
            out.z[std::size_t(i)][0] = d1(t, 0);
            out.z[std::size_t(i)][1] = d1(t, 1);
            out.z[std::size_t(i)][2] = d1(t, 2);
            out.z[std::size_t(i)][3] = d2(t, 0);
            v1_col[std::size_t(i)] = d1(t, 3);
            out.v[std::size_t(i)][0] = v1_col[std::size_t(i)];
        }
        zo[0] = {0, -1};
        zo[1] = {1, -1};
        zo[2] = {2, -1};
        zo[3] = {-1, 0};
        v1o = {3, -1};
        detail::RowSolver a_row(sys, 3, 4);
        std::vector<double> t5(n);
        for (int i = 0; i < n; ++i) t5[std::size_t(i)] = d2(out.time[i], 1);
        run_row(a_row, t5, {-1, 1});
        break;
    }
    case Family::NF13: {
        // v1 = phi1', v1dot = phi1''; (z3, z4) from the 2x2 system
        //   phi2'  = z3 + z4 v1
        //   phi2'' = a + b v1 + c v1^2 + z4 v1dot
        // by damped Newton; then z5 = z4dot - c v1 and v2 = z5dot.
        std::vector<std::string> layout = sys.state;
        layout.push_back("v1");
        layout.push_back("v1dot");
        Expr w = Expr::variable("v1"), wd = Expr::variable("v1dot");
        Expr f2 = spec.nl("a") + spec.nl("b") * w + spec.nl("c") * pow_int(w, 2) +
                  detail::zvar(4) * wd;
        std::array<Expr, 3> f2set = {f2, differentiate(f2, "z3"), differentiate(f2, "z4")};
        Program pf2 = Program::compile(f2set, layout, spec.parameters);
        Program pc = Program::compile(std::span<const Expr>(&spec.nl("c"), 1), layout,
                                      spec.parameters);

        std::vector<double> scratch;
        std::array<double, 3> f2v{};
        for (int i = 0; i < n; ++i) {
            const double t = out.time[i];
            const double v1 = d1(t, 1), v1dot = d1(t, 2);
            const double tgt1 = d2(t, 1), tgt2 = d2(t, 2);
            auto& z = out.z[std::size_t(i)];
            z[0] = d1(t, 0);
            z[1] = d2(t, 0);
            if (i > 0) {
                z[2] = out.z[std::size_t(i - 1)][2];
                z[3] = out.z[std::size_t(i - 1)][3];
            } else {
                z[2] = spec.z0[2];
                z[3] = spec.z0[3];
            }
            std::array<double, 7> in{z[0], z[1], z[2], z[3], z[4], v1, v1dot};

            auto eval_f2 = [&](double z3, double z4) {
                in[2] = z3;
                in[3] = z4;
                if (!pf2.eval(in, f2v, scratch))
                    throw SolveError(i, "pole in NF13 solve");
            };
            double det = 0.0;
            int it = 0;
            for (; it < 60; ++it) {
                eval_f2(z[2], z[3]);
                const double r1 = z[2] + z[3] * v1 - tgt1;
                const double r2 = f2v[0] - tgt2;
                const double rn = std::max(std::abs(r1), std::abs(r2));
                det = f2v[2] - v1 * f2v[1];  // d(F1,F2)/d(z3,z4) determinant
                if (rn <= 1e-12 * (1.0 + std::abs(tgt1) + std::abs(tgt2))) break;
                if (std::abs(det) <= detail::kSingularMargin)
                    throw SingularNodeError(i, t, std::abs(det));
                // J = [[1, v1], [f2v[1], f2v[2]]]
                double s3 = (f2v[2] * r1 - v1 * r2) / det;
                double s4 = (-f2v[1] * r1 + r2) / det;
                double lambda = 1.0;
                for (int bt = 0; bt < 10; ++bt) {
                    double c3 = z[2] - lambda * s3, c4 = z[3] - lambda * s4;
                    eval_f2(c3, c4);
                    double q1 = c3 + c4 * v1 - tgt1, q2 = f2v[0] - tgt2;
                    if (std::max(std::abs(q1), std::abs(q2)) <= rn || lambda < 1.0 / 512.0) {
                        z[2] = c3;
                        z[3] = c4;
                        break;
                    }
                    lambda *= 0.5;
                }
            }
            eval_f2(z[2], z[3]);
            const double r1 = z[2] + z[3] * v1 - tgt1;
            const double r2 = f2v[0] - tgt2;
            if (std::max(std::abs(r1), std::abs(r2)) >
                1e-9 * (1.0 + std::abs(tgt1) + std::abs(tgt2)))
                throw SolveError(i, "NF13 Newton did not converge");
            out.max_newton_iterations = std::max(out.max_newton_iterations, it);
            det = f2v[2] - v1 * f2v[1];
            note_margin(i, std::abs(det));
            v1_col[std::size_t(i)] = v1;
            out.v[std::size_t(i)][0] = v1;
        }
        zo[0] = {0, -1};
        zo[1] = {-1, 0};
        v1o = {1, -1};
        detail::DerivOrders both{2, 2};
        std::set<std::string> acz;
        for (const char* s : {"a", "b", "c"})
            for (const auto& nm : free_variables(spec.nl(s))) acz.insert(nm);
        detail::DerivOrders nl_deps{-1, -1};
        if (acz.count("z1")) nl_deps = detail::max_orders(nl_deps, {0, -1});
        if (acz.count("z2")) nl_deps = detail::max_orders(nl_deps, {-1, 0});
        zo[2] = detail::max_orders(both, nl_deps);
        zo[3] = zo[2];

        // z5 = z4dot - c(z1..z4) v1.
        auto z4dot = grid_derivative(column(3), grid.dt);
        std::array<double, 7> in{};
        double cval;
        for (int i = 0; i < n; ++i) {
            auto& z = out.z[std::size_t(i)];
            const double t = out.time[i];
            in = {z[0], z[1], z[2], z[3], 0.0, d1(t, 1), d1(t, 2)};
            if (!pc.eval(in, std::span<double>(&cval, 1), scratch))
                throw SolveError(i, "pole in NF13 c evaluation");
            z[4] = z4dot[std::size_t(i)] - cval * v1_col[std::size_t(i)];
        }
        zo[4] = detail::bump(zo[3]);
        if (!structurally_equal(spec.nl("c"), Expr::constant(0.0)))
            zo[4] = detail::max_orders(zo[4], detail::max_orders(nl_deps, v1o));
        break;
    }
    }

    // v2 = z5dot for every family.
    auto z5dot = grid_derivative(column(4), grid.dt);
    for (int i = 0; i < n; ++i) out.v[std::size_t(i)][1] = z5dot[std::size_t(i)];
    v2o = detail::bump(zo[4]);

    detail::DerivOrders smax = v2o;
    for (const auto& o : zo) smax = detail::max_orders(smax, o);
    smax = detail::max_orders(smax, v1o);
    out.used_orders = {std::max(smax.o1, 0), std::max(smax.o2, 0)};
    return out;
}

/// 2 + s1 + s2 where s_i is the highest derivative order of phi_i consumed
/// to produce both z and v; equals the variant's differential weight for a
/// generic curve.
inline int measured_differential_weight(const NormalFormSpec& spec, const FlatOutputCurve& curve) {
    TimeGrid probe{0.0, 8e-3, 1e-3};
    FlatTrajectory traj;
    try {
        traj = parametrize_trajectory(spec, curve, probe);
    } catch (const Error& e) {
        throw Error(std::string("measured_differential_weight: degenerate curve (") + e.what() +
                    ")");
    }
    return 2 + traj.used_orders[0] + traj.used_orders[1];
}

inline void write_trajectory_csv(const FlatTrajectory& traj, std::ostream& os) {
    os << "t,z1,z2,z3,z4,z5,v1,v2,margin\n";
    char buf[40];
    auto emit = [&](double v, char sep) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf << sep;
    };
    for (std::size_t i = 0; i < traj.time.size(); ++i) {
        emit(traj.time[i], ',');
        for (int j = 0; j < 5; ++j) emit(traj.z[i][std::size_t(j)], ',');
        emit(traj.v[i][0], ',');
        emit(traj.v[i][1], ',');
        emit(traj.margin[i], '\n');
    }
}

/// Deterministic curve whose parametrization keeps the instance's margins
/// comfortably away from the singular locus; rejection-sampled on a coarse
/// probe grid.
inline FlatOutputCurve random_flat_curve(const NormalFormSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed * 0x2545f4914f6cdd1dull + 77);
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * detail::uniform01(rng); };
    for (int attempt = 0; attempt < 60; ++attempt) {
        FlatOutputCurve c;
        const bool nf13 = spec.variant == Variant::NF13;
        c.phi1 = {u(-0.2, 0.2), 1.0};
        c.phi1.push_back(nf13 ? u(0.2, 0.35) : u(-0.02, 0.02));
        for (int k = 3; k <= 6; ++k) c.phi1.push_back(nf13 ? u(-0.002, 0.002) : u(-0.01, 0.01));
        c.phi2 = {u(-0.3, 0.3), u(-0.3, 0.3)};
        for (int k = 2; k <= 6; ++k) c.phi2.push_back(nf13 ? u(-0.01, 0.01) : u(-0.02, 0.02));

        try {
            TimeGrid probe{0.0, 1.0, 0.025};
            auto traj = parametrize_trajectory(spec, c, probe);
            double mn = std::numeric_limits<double>::infinity();
            for (double m : traj.margin) mn = std::min(mn, m);
            if (mn > 0.15) return c;
        } catch (const Error&) {
            // redraw
        }
    }
    throw Error("random_flat_curve: no margin-safe curve found for " +
                variant_name(spec.variant));
}

} // namespace flat5
