#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "flat5/flat_parametrization.hpp"

namespace flat5 {

struct Trajectory {
    double t0 = 0.0, dt = 0.0;
    std::vector<std::vector<double>> states;
    std::vector<std::array<double, 2>> inputs;

    double time(std::size_t i) const { return t0 + dt * double(i); }
};

using InputSignal = std::function<std::array<double, 2>(double)>;

/// Classical fixed-step RK4 with the input signal sampled at stage times.
inline Trajectory integrate_rk4(const ControlAffineSystem& sys, const std::vector<double>& z0,
                                const InputSignal& input, double t0, double t1, double dt) {
    sys.validate();
    if (dt <= 0.0 || t1 <= t0) throw ValidationError("invalid integration window");
    const std::size_t n = sys.state.size();
    if (z0.size() != n) throw ValidationError("initial state dimension mismatch");

    std::vector<std::string> layout = sys.state;
    layout.push_back("u1");
    layout.push_back("u2");
    Program rhs = Program::compile(detail::controlled_rhs(sys), layout, sys.parameters);

    const long long steps = std::llround((t1 - t0) / dt);
    Trajectory out;
    out.t0 = t0;
    out.dt = dt;
    out.states.reserve(std::size_t(steps) + 1);
    out.inputs.reserve(std::size_t(steps) + 1);

    std::vector<double> x = z0, scratch;
    std::vector<double> in(n + 2), k1(n), k2(n), k3(n), k4(n), tmp(n);
    auto deriv = [&](const std::vector<double>& state, double t, std::vector<double>& k,
                     long long step) {
        auto u = input(t);
        for (std::size_t i = 0; i < n; ++i) in[i] = state[i];
        in[n] = u[0];
        in[n + 1] = u[1];
        if (!rhs.eval(in, k, scratch))
            throw EvalDomainError("state blow-up at integration step " + std::to_string(step));
    };

    out.states.push_back(x);
    out.inputs.push_back(input(t0));
    for (long long s = 0; s < steps; ++s) {
        const double t = t0 + dt * double(s);
        deriv(x, t, k1, s);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
        deriv(tmp, t + 0.5 * dt, k2, s);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
        deriv(tmp, t + 0.5 * dt, k3, s);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + dt * k3[i];
        deriv(tmp, t + dt, k4, s);
        for (std::size_t i = 0; i < n; ++i)
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        for (double xi : x)
            if (!std::isfinite(xi))
                throw EvalDomainError("state blow-up at integration step " + std::to_string(s));
        out.states.push_back(x);
        out.inputs.push_back(input(t0 + dt * double(s + 1)));
    }
    return out;
}

/// Integrates the built normal form with the inputs recovered by the flat
/// parametrization and reports max over the grid of ||z_integrated -
/// z_parametrized||_inf. The parametrization runs on a half-step grid so RK4
/// stage times land on exact nodes.
inline double roundtrip_error(const NormalFormSpec& spec, const FlatOutputCurve& curve, double t0,
                              double t1, double dt) {
    TimeGrid half{t0, t1, 0.5 * dt};
    FlatTrajectory par = parametrize_trajectory(spec, curve, half);
    ControlAffineSystem sys = build_normal_form(spec);

    const double hdt = 0.5 * dt;
    auto input = [&](double t) {
        long long i = std::llround((t - t0) / hdt);
        i = std::max(0ll, std::min(i, (long long)par.time.size() - 1));
        return par.v[std::size_t(i)];
    };
    std::vector<double> z0(par.z.front().begin(), par.z.front().end());
    Trajectory integ = integrate_rk4(sys, z0, input, t0, t1, dt);

    double err = 0.0;
    for (std::size_t s = 0; s < integ.states.size(); ++s) {
        const auto& zp = par.z[2 * s];
        for (int i = 0; i < 5; ++i)
            err = std::max(err, std::abs(integ.states[s][std::size_t(i)] - zp[std::size_t(i)]));
    }
    return err;
}

namespace detail {

/// Jacobian column by central differences with one Richardson step,
/// (4 D_{h/2} - D_h) / 3.
inline void fd_jacobian(const Program& field, std::vector<double> x, int n, double h,
                        std::vector<std::vector<double>>& jac) {
    std::vector<double> scratch, plus(n), minus(n), coarse(n);
    jac.assign(std::size_t(n), std::vector<double>(std::size_t(n)));
    for (int j = 0; j < n; ++j) {
        const double xj = x[std::size_t(j)];
        auto col = [&](double step, std::vector<double>& out) {
            x[std::size_t(j)] = xj + step;
            if (!field.eval(x, plus, scratch)) throw EvalDomainError("fd oracle pole");
            x[std::size_t(j)] = xj - step;
            if (!field.eval(x, minus, scratch)) throw EvalDomainError("fd oracle pole");
            for (int i = 0; i < n; ++i) out[std::size_t(i)] = (plus[std::size_t(i)] - minus[std::size_t(i)]) / (2.0 * step);
        };
        col(h, coarse);
        std::vector<double> fine(std::size_t(n));
        col(0.5 * h, fine);
        for (int i = 0; i < n; ++i)
            jac[std::size_t(i)][std::size_t(j)] =
                (4.0 * fine[std::size_t(i)] - coarse[std::size_t(i)]) / 3.0;
        x[std::size_t(j)] = xj;
    }
}

} // namespace detail

/// Relative deviation between a precomputed symbolic bracket and the
/// central-difference Jacobian bracket at a point (h = 1e-5, one Richardson
/// extrapolation step).
inline double fd_bracket_deviation(const VectorField& x, const VectorField& y,
                                   const VectorField& bracket, const Assignment& at,
                                   const std::map<std::string, double>& parameters = {}) {
    require_same_state(x, y);
    const int n = x.dimension();
    Program px = Program::compile(x.components, x.state, parameters);
    Program py = Program::compile(y.components, y.state, parameters);
    Program pb = Program::compile(bracket.components, x.state, parameters);

    std::vector<double> pt = detail::assignment_values(at, x.state);
    std::vector<double> xv = px.eval_or_throw(pt), yv = py.eval_or_throw(pt);
    std::vector<double> sym = pb.eval_or_throw(pt);

    std::vector<std::vector<double>> jx, jy;
    detail::fd_jacobian(px, pt, n, 1e-5, jx);
    detail::fd_jacobian(py, pt, n, 1e-5, jy);

    double dev = 0.0, scale = 1.0;
    for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(sym[std::size_t(i)]));
    for (int i = 0; i < n; ++i) {
        double fd = 0.0;
        for (int j = 0; j < n; ++j)
            fd += jy[std::size_t(i)][std::size_t(j)] * xv[std::size_t(j)] -
                  jx[std::size_t(i)][std::size_t(j)] * yv[std::size_t(j)];
        dev = std::max(dev, std::abs(fd - sym[std::size_t(i)]) / scale);
    }
    return dev;
}

inline double fd_bracket_oracle(const VectorField& x, const VectorField& y, const Assignment& at,
                                const std::map<std::string, double>& parameters = {}) {
    return fd_bracket_deviation(x, y, lie_bracket(x, y), at, parameters);
}

/// Walks a filtration's iterated-bracket generators and fd-checks each one
/// against its defining bracket [f, parent] at the given point. Returns the
/// worst relative deviation.
inline double fd_check_filtration(const Filtration& filt, const Assignment& at,
                                  const std::map<std::string, double>& parameters = {}) {
    double worst = 0.0;
    if (filt.steps.empty()) return worst;
    const auto& gens = filt.steps.back().distribution.generators;
    for (std::size_t idx = 2; idx < gens.size(); ++idx) {
        const VectorField& parent = gens[idx - 2];
        worst = std::max(worst, fd_bracket_deviation(filt.drift, parent, gens[idx], at, parameters));
    }
    return worst;
}

} // namespace flat5
