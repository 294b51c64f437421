#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "flat5/expr.hpp"

namespace flat5 {

/// Straight-line evaluation program compiled from expression DAGs.
/// Shared subtrees are emitted once, so evaluating iterated-bracket fields
/// stays proportional to the DAG size rather than the tree size.
class Program {
public:
    Program() = default;

    /// `bound` fixes named symbols (system parameters) to constants.
    static Program compile(std::span<const Expr> roots,
                           std::span<const std::string> variables,
                           const std::map<std::string, double>& bound = {}) {
        Program p;
        p.nvars_ = variables.size();
        std::unordered_map<std::string, int> var_slot;
        for (std::size_t i = 0; i < variables.size(); ++i)
            var_slot.emplace(variables[i], int(i));
        std::unordered_map<const ExprNode*, std::int32_t> memo;
        std::map<std::uint64_t, std::int32_t> const_slot;

        auto emit = [&p](Op op, std::int32_t a, std::int32_t b) {
            p.code_.push_back({op, a, b});
            return std::int32_t(p.code_.size() - 1);
        };
        auto emit_const = [&](double v) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, sizeof(v));
            auto it = const_slot.find(bits);
            if (it != const_slot.end()) return it->second;
            p.consts_.push_back(v);
            std::int32_t s = emit(Op::Const, std::int32_t(p.consts_.size() - 1), 0);
            const_slot.emplace(bits, s);
            return s;
        };

        auto rec = [&](auto&& self, const ExprNode* n) -> std::int32_t {
            auto it = memo.find(n);
            if (it != memo.end()) return it->second;
            std::int32_t s = -1;
            switch (n->kind) {
            case ExprNode::Kind::Constant: s = emit_const(n->value); break;
            case ExprNode::Kind::Variable: {
                auto v = var_slot.find(n->name);
                if (v != var_slot.end()) {
                    s = emit(Op::Load, v->second, 0);
                } else {
                    auto b = bound.find(n->name);
                    if (b == bound.end())
                        throw ValidationError("unbound symbol '" + n->name + "' in compiled expression");
                    s = emit_const(b->second);
                }
                break;
            }
            case ExprNode::Kind::Unary: {
                std::int32_t a = self(self, n->a.get());
                Op op;
                switch (n->uop) {
                case UnaryOp::Neg: op = Op::Neg; break;
                case UnaryOp::Sin: op = Op::Sin; break;
                case UnaryOp::Cos: op = Op::Cos; break;
                case UnaryOp::Tan: op = Op::Tan; break;
                case UnaryOp::Exp: op = Op::Exp; break;
                default: op = Op::Ln; break;
                }
                s = emit(op, a, 0);
                break;
            }
            case ExprNode::Kind::Binary: {
                std::int32_t a = self(self, n->a.get());
                std::int32_t b = self(self, n->b.get());
                Op op;
                switch (n->bop) {
                case BinaryOp::Add: op = Op::Add; break;
                case BinaryOp::Sub: op = Op::Sub; break;
                case BinaryOp::Mul: op = Op::Mul; break;
                default: op = Op::Div; break;
                }
                s = emit(op, a, b);
                break;
            }
            case ExprNode::Kind::IntPow: {
                std::int32_t a = self(self, n->a.get());
                s = emit(Op::IPow, a, n->exponent);
                break;
            }
            }
            memo.emplace(n, s);
            return s;
        };

        p.roots_.reserve(roots.size());
        for (const Expr& e : roots) p.roots_.push_back(rec(rec, &e.node()));
        return p;
    }

    std::size_t output_count() const { return roots_.size(); }
    std::size_t variable_count() const { return nvars_; }
    std::size_t scratch_size() const { return code_.size(); }

    /// Returns false if any computed value is nonfinite (pole hit).
    bool eval(std::span<const double> inputs, std::span<double> out,
              std::vector<double>& scratch) const {
        scratch.resize(code_.size());
        double* s = scratch.data();
        bool ok = true;
        for (std::size_t i = 0; i < code_.size(); ++i) {
            const Instr& in = code_[i];
            double r;
            switch (in.op) {
            case Op::Const: r = consts_[in.a]; break;
            case Op::Load: r = inputs[in.a]; break;
            case Op::Neg: r = -s[in.a]; break;
            case Op::Sin: r = std::sin(s[in.a]); break;
            case Op::Cos: r = std::cos(s[in.a]); break;
            case Op::Tan: r = std::tan(s[in.a]); break;
            case Op::Exp: r = std::exp(s[in.a]); break;
            case Op::Ln: r = std::log(s[in.a]); break;
            case Op::Add: r = s[in.a] + s[in.b]; break;
            case Op::Sub: r = s[in.a] - s[in.b]; break;
            case Op::Mul: r = s[in.a] * s[in.b]; break;
            case Op::Div: r = s[in.a] / s[in.b]; break;
            default: r = detail::ipow_value(s[in.a], in.b); break;
            }
            ok &= std::isfinite(r) != 0;
            s[i] = r;
        }
        for (std::size_t i = 0; i < roots_.size(); ++i) out[i] = s[roots_[i]];
        return ok;
    }

    std::vector<double> eval_or_throw(std::span<const double> inputs) const {
        std::vector<double> out(roots_.size()), scratch;
        if (!eval(inputs, out, scratch))
            throw EvalDomainError("nonfinite value in compiled evaluation");
        return out;
    }

private:
    enum class Op : std::uint8_t { Const, Load, Neg, Sin, Cos, Tan, Exp, Ln, Add, Sub, Mul, Div, IPow };
    struct Instr {
        Op op;
        std::int32_t a = 0, b = 0;
    };
    std::vector<Instr> code_;
    std::vector<double> consts_;
    std::vector<std::int32_t> roots_;
    std::size_t nvars_ = 0;
};

} // namespace flat5
