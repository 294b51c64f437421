#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "flat5/expr.hpp"
#include "flat5/program.hpp"

namespace flat5 {

/// Smooth vector field: one component expression per state variable.
/// Components may reference the state variables and declared parameters.
struct VectorField {
    std::vector<std::string> state;
    std::vector<Expr> components;

    VectorField() = default;
    VectorField(std::vector<std::string> st, std::vector<Expr> comps)
        : state(std::move(st)), components(std::move(comps)) {
        if (state.size() != components.size())
            throw ValidationError("vector field component count must equal state dimension");
    }

    int dimension() const { return int(state.size()); }

    static VectorField zero(std::vector<std::string> st) {
        std::vector<Expr> c(st.size(), Expr::constant(0.0));
        return VectorField(std::move(st), std::move(c));
    }

    /// Constant unit field along the named coordinate.
    static VectorField basis(std::vector<std::string> st, const std::string& coord) {
        VectorField v = zero(std::move(st));
        for (std::size_t i = 0; i < v.state.size(); ++i)
            if (v.state[i] == coord) {
                v.components[i] = Expr::constant(1.0);
                return v;
            }
        throw ValidationError("basis coordinate '" + coord + "' not in state");
    }
};

inline void require_same_state(const VectorField& x, const VectorField& y) {
    if (x.state != y.state)
        throw ValidationError("vector fields must share the same state");
}

/// L_X h = sum_i (dh/dx_i) X_i
inline Expr lie_derivative(const Expr& h, const VectorField& x) {
    Expr acc = Expr::constant(0.0);
    for (std::size_t i = 0; i < x.state.size(); ++i)
        acc = acc + differentiate(h, x.state[i]) * x.components[i];
    return acc;
}

/// [X, Y] = (dY/dx) X - (dX/dx) Y, exact symbolic.
inline VectorField lie_bracket(const VectorField& x, const VectorField& y) {
    require_same_state(x, y);
    const std::size_t n = x.state.size();
    std::vector<Expr> comps(n);
    for (std::size_t i = 0; i < n; ++i) {
        Expr acc = Expr::constant(0.0);
        for (std::size_t j = 0; j < n; ++j) {
            acc = acc + differentiate(y.components[i], x.state[j]) * x.components[j];
            acc = acc - differentiate(x.components[i], x.state[j]) * y.components[j];
        }
        comps[i] = acc;
    }
    return VectorField(x.state, std::move(comps));
}

/// Row-major Jacobian entries d(components[i])/d(state[j]).
inline std::vector<Expr> jacobian_entries(const VectorField& x) {
    std::vector<Expr> out;
    out.reserve(x.state.size() * x.state.size());
    for (const Expr& c : x.components)
        for (const std::string& v : x.state) out.push_back(differentiate(c, v));
    return out;
}

/// Two-input control-affine system  xdot = f(x) + u1 g1(x) + u2 g2(x)
/// with a distinguished base point and nominal input values.
struct ControlAffineSystem {
    std::vector<std::string> state;
    VectorField f, g1, g2;
    std::map<std::string, double> parameters;
    Assignment base_point;                       // one value per state variable
    std::array<double, 2> v0{0.0, 0.0};          // nominal control at the base point
    std::optional<std::array<double, 2>> vdot0;  // nominal control derivative, when relevant

    int dimension() const { return int(state.size()); }

    Assignment base_assignment() const {
        Assignment a = base_point;
        for (const auto& [k, v] : parameters) a.emplace(k, v);
        return a;
    }

    std::vector<double> base_values() const {
        std::vector<double> out;
        out.reserve(state.size());
        for (const auto& s : state) {
            auto it = base_point.find(s);
            if (it == base_point.end())
                throw ValidationError("base point missing state variable '" + s + "'");
            out.push_back(it->second);
        }
        return out;
    }

    void validate() const {
        const std::size_t n = state.size();
        if (n == 0) throw ValidationError("empty state");
        if (f.state != state || g1.state != state || g2.state != state)
            throw ValidationError("system fields must share the system state");
        if (f.components.size() != n || g1.components.size() != n || g2.components.size() != n)
            throw ValidationError("field dimension mismatch");
        std::set<std::string> scope(state.begin(), state.end());
        for (const auto& [k, v] : parameters) scope.insert(k);
        for (const VectorField* vf : {&f, &g1, &g2})
            for (const Expr& c : vf->components)
                for (const auto& name : free_variables(c))
                    if (!scope.count(name))
                        throw ValidationError("field references unknown variable '" + name + "'");
        base_values();
    }
};

namespace detail {

/// f + u1 g1 + u2 g2 with the controls as extra trailing variables —
/// the right-hand side used by integrators.
inline std::vector<Expr> controlled_rhs(const ControlAffineSystem& s,
                                        const std::string& u1 = "u1",
                                        const std::string& u2 = "u2") {
    std::vector<Expr> rhs;
    rhs.reserve(s.state.size());
    Expr e1 = Expr::variable(u1), e2 = Expr::variable(u2);
    for (std::size_t i = 0; i < s.state.size(); ++i)
        rhs.push_back(s.f.components[i] + e1 * s.g1.components[i] + e2 * s.g2.components[i]);
    return rhs;
}

} // namespace detail

} // namespace flat5
