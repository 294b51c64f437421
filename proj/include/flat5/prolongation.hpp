#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "flat5/linearizability.hpp"

namespace flat5 {

/// Invertible static feedback u = alpha(x) + beta(x) v.
struct FeedbackTransformation {
    std::array<Expr, 2> alpha;
    std::array<std::array<Expr, 2>, 2> beta;  // beta[i][j] multiplies v_j in u_i
};

inline FeedbackTransformation identity_feedback() {
    FeedbackTransformation t;
    t.alpha = {Expr::constant(0.0), Expr::constant(0.0)};
    t.beta = {{{Expr::constant(1.0), Expr::constant(0.0)},
               {Expr::constant(0.0), Expr::constant(1.0)}}};
    return t;
}

namespace detail {

inline std::array<std::array<double, 2>, 2> beta_at(const FeedbackTransformation& t,
                                                    const Assignment& at) {
    std::array<std::array<double, 2>, 2> b{};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) b[i][j] = evaluate(t.beta[i][j], at);
    return b;
}

} // namespace detail

/// f~ = f + g alpha, g~ = g beta; the state is unchanged. The nominal input
/// is mapped through v0 = beta(x0)^{-1} (u0 - alpha(x0)), and the nominal
/// input derivative through udot0 = L_F(alpha + beta v0) + beta vdot0.
inline ControlAffineSystem apply_static_feedback(const ControlAffineSystem& sys,
                                                 const FeedbackTransformation& t) {
    sys.validate();
    Assignment base = sys.base_assignment();
    auto b = detail::beta_at(t, base);
    const double det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    if (std::abs(det) <= 1e-9)
        throw ValidationError("feedback transformation is singular at the base point");

    ControlAffineSystem out = sys;
    for (std::size_t i = 0; i < sys.state.size(); ++i) {
        out.f.components[i] = sys.f.components[i] + t.alpha[0] * sys.g1.components[i] +
                              t.alpha[1] * sys.g2.components[i];
        out.g1.components[i] =
            t.beta[0][0] * sys.g1.components[i] + t.beta[1][0] * sys.g2.components[i];
        out.g2.components[i] =
            t.beta[0][1] * sys.g1.components[i] + t.beta[1][1] * sys.g2.components[i];
    }

    const double a1 = evaluate(t.alpha[0], base), a2 = evaluate(t.alpha[1], base);
    const double r1 = sys.v0[0] - a1, r2 = sys.v0[1] - a2;
    out.v0 = {(b[1][1] * r1 - b[0][1] * r2) / det, (-b[1][0] * r1 + b[0][0] * r2) / det};

    if (sys.vdot0) {
        // F = f + g u at the nominal input; udot0 = L_F(alpha + beta v0) + beta vdot0.
        std::array<double, 2> lf{};
        for (int i = 0; i < 2; ++i) {
            Expr affine = t.alpha[i] + t.beta[i][0] * Expr::constant(out.v0[0]) +
                          t.beta[i][1] * Expr::constant(out.v0[1]);
            Expr lie = Expr::constant(0.0);
            for (std::size_t j = 0; j < sys.state.size(); ++j) {
                Expr fj = sys.f.components[j] + Expr::constant(sys.v0[0]) * sys.g1.components[j] +
                          Expr::constant(sys.v0[1]) * sys.g2.components[j];
                lie = lie + differentiate(affine, sys.state[j]) * fj;
            }
            lf[i] = evaluate(lie, base);
        }
        const double s1 = (*sys.vdot0)[0] - lf[0], s2 = (*sys.vdot0)[1] - lf[1];
        out.vdot0 = {{(b[1][1] * s1 - b[0][1] * s2) / det, (-b[1][0] * s1 + b[0][0] * s2) / det}};
    }
    return out;
}

/// The system with the first control prolonged p times:
///   xdot = f + y1 g1 + v2 g2,  ydot_i = y_{i+1},  ydot_p = v1.
struct ProlongedSystem {
    ControlAffineSystem base;
    int p = 0;
    ControlAffineSystem augmented;
    std::vector<std::string> chain;  // names of y1..yp
};

inline ProlongedSystem prolong_first_control(const ControlAffineSystem& sys, int p) {
    if (p < 0 || p > 3) throw ValidationError("prolongation order must be 0..3");
    ProlongedSystem out;
    out.base = sys;
    out.p = p;
    if (p == 0) {
        out.augmented = sys;
        return out;
    }

    std::string prefix = "y";
    auto taken = [&](const std::string& n) {
        for (const auto& s : sys.state)
            if (s == n) return true;
        return sys.parameters.count(n) > 0;
    };
    for (;;) {
        bool clash = false;
        for (int i = 1; i <= p; ++i)
            if (taken(prefix + std::to_string(i))) clash = true;
        if (!clash) break;
        prefix += "y";
    }
    for (int i = 1; i <= p; ++i) out.chain.push_back(prefix + std::to_string(i));

    ControlAffineSystem a;
    a.state = sys.state;
    a.state.insert(a.state.end(), out.chain.begin(), out.chain.end());
    a.parameters = sys.parameters;

    Expr y1 = Expr::variable(out.chain.front());
    std::vector<Expr> fc, g1c, g2c;
    for (std::size_t i = 0; i < sys.state.size(); ++i) {
        fc.push_back(sys.f.components[i] + y1 * sys.g1.components[i]);
        g1c.push_back(Expr::constant(0.0));
        g2c.push_back(sys.g2.components[i]);
    }
    for (int i = 0; i < p; ++i) {
        fc.push_back(i + 1 < p ? Expr::variable(out.chain[i + 1]) : Expr::constant(0.0));
        g1c.push_back(Expr::constant(i + 1 == p ? 1.0 : 0.0));
        g2c.push_back(Expr::constant(0.0));
    }
    a.f = VectorField(a.state, std::move(fc));
    a.g1 = VectorField(a.state, std::move(g1c));
    a.g2 = VectorField(a.state, std::move(g2c));

    a.base_point = sys.base_point;
    a.base_point[out.chain[0]] = sys.v0[0];
    for (int i = 1; i < p; ++i)
        a.base_point[out.chain[i]] = (i == 1 && sys.vdot0) ? (*sys.vdot0)[0] : 0.0;
    a.v0 = {0.0, sys.v0[1]};
    out.augmented = std::move(a);
    return out;
}

/// Certificate that the feedback-transformed system becomes static feedback
/// linearizable after exactly p prolongations of its first control, with the
/// failing reports for every smaller order kept as evidence. Minimality is
/// relative to the supplied feedback.
struct DdiffCertificate {
    int p = 0;
    FeedbackTransformation feedback;
    LinearizabilityReport prolonged_report;
    std::vector<LinearizabilityReport> failed_reports;  // orders 0..p-1
};

inline std::optional<DdiffCertificate> ddiff_certificate(const ControlAffineSystem& sys,
                                                         const FeedbackTransformation& t,
                                                         const SamplePlan& plan, int max_p = 3) {
    if (max_p < 0 || max_p > 3) throw ValidationError("max_p must be 0..3");
    ControlAffineSystem transformed = apply_static_feedback(sys, t);
    std::vector<LinearizabilityReport> failures;
    for (int p = 0; p <= max_p; ++p) {
        ProlongedSystem pro = prolong_first_control(transformed, p);
        SamplePlan local = plan;
        local.base = pro.augmented.base_point;
        auto rep = static_feedback_linearizable(pro.augmented, local);
        if (rep.linearizable) {
            DdiffCertificate cert;
            cert.p = p;
            cert.feedback = t;
            cert.prolonged_report = std::move(rep);
            cert.failed_reports = std::move(failures);
            return cert;
        }
        failures.push_back(std::move(rep));
    }
    return std::nullopt;
}

} // namespace flat5
