#pragma once

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace flat5 {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Syntax error with a byte offset into the source text.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t offset)
        : Error(msg + " (offset " + std::to_string(offset) + ")"), offset(offset) {}
    std::size_t offset;
};

/// Evaluation produced a nonfinite value; message names the offending subtree.
class EvalDomainError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

enum class UnaryOp : std::uint8_t { Neg, Sin, Cos, Tan, Exp, Ln };
enum class BinaryOp : std::uint8_t { Add, Sub, Mul, Div };

struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

/// Immutable expression tree node. Subtrees are shared, so repeated
/// differentiation produces DAGs rather than exploding copies.
struct ExprNode {
    enum class Kind : std::uint8_t { Constant, Variable, Unary, Binary, IntPow };
    Kind kind;
    UnaryOp uop{};
    BinaryOp bop{};
    double value = 0.0;
    int exponent = 0;
    std::string name;
    ExprPtr a, b;
};

class Expr {
public:
    Expr() : node_(zero_node()) {}
    explicit Expr(ExprPtr n) : node_(std::move(n)) {}

    static Expr constant(double v) {
        if (v == 0.0) return Expr(zero_node());
        if (v == 1.0) return Expr(one_node());
        auto n = std::make_shared<ExprNode>();
        n->kind = ExprNode::Kind::Constant;
        n->value = v;
        return Expr(std::move(n));
    }

    static Expr variable(std::string name) {
        if (name.empty()) throw ValidationError("variable name must be nonempty");
        auto n = std::make_shared<ExprNode>();
        n->kind = ExprNode::Kind::Variable;
        n->name = std::move(name);
        return Expr(std::move(n));
    }

    const ExprNode& node() const { return *node_; }
    const ExprPtr& ptr() const { return node_; }

    bool is_constant() const { return node_->kind == ExprNode::Kind::Constant; }
    bool is_constant(double v) const { return is_constant() && node_->value == v; }
    bool is_zero() const { return is_constant(0.0); }
    bool is_one() const { return is_constant(1.0); }
    double constant_value() const { return node_->value; }

private:
    static const ExprPtr& zero_node() {
        static const ExprPtr z = [] {
            auto n = std::make_shared<ExprNode>();
            n->kind = ExprNode::Kind::Constant;
            n->value = 0.0;
            return n;
        }();
        return z;
    }
    static const ExprPtr& one_node() {
        static const ExprPtr o = [] {
            auto n = std::make_shared<ExprNode>();
            n->kind = ExprNode::Kind::Constant;
            n->value = 1.0;
            return n;
        }();
        return o;
    }

    ExprPtr node_;
};

namespace detail {

inline Expr make_unary(UnaryOp op, Expr a) {
    if (op == UnaryOp::Neg) {
        if (a.is_constant()) return Expr::constant(-a.constant_value());
        if (a.node().kind == ExprNode::Kind::Unary && a.node().uop == UnaryOp::Neg)
            return Expr(a.node().a);
    }
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprNode::Kind::Unary;
    n->uop = op;
    n->a = a.ptr();
    return Expr(std::move(n));
}

inline Expr make_binary(BinaryOp op, Expr a, Expr b) {
    // Constant folding of literals only; no algebraic simplification.
    const bool ca = a.is_constant(), cb = b.is_constant();
    switch (op) {
    case BinaryOp::Add:
        if (ca && cb) return Expr::constant(a.constant_value() + b.constant_value());
        if (a.is_zero()) return b;
        if (b.is_zero()) return a;
        break;
    case BinaryOp::Sub:
        if (ca && cb) return Expr::constant(a.constant_value() - b.constant_value());
        if (b.is_zero()) return a;
        if (a.is_zero()) return make_unary(UnaryOp::Neg, b);
        break;
    case BinaryOp::Mul:
        if (ca && cb) return Expr::constant(a.constant_value() * b.constant_value());
        if (a.is_zero() || b.is_zero()) return Expr::constant(0.0);
        if (a.is_one()) return b;
        if (b.is_one()) return a;
        break;
    case BinaryOp::Div:
        if (ca && cb && b.constant_value() != 0.0)
            return Expr::constant(a.constant_value() / b.constant_value());
        if (a.is_zero()) return Expr::constant(0.0);
        if (b.is_one()) return a;
        break;
    }
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprNode::Kind::Binary;
    n->bop = op;
    n->a = a.ptr();
    n->b = b.ptr();
    return Expr(std::move(n));
}

inline double ipow_value(double base, int e) {
    bool inv = e < 0;
    unsigned long long k = inv ? -(long long)e : (long long)e;
    double r = 1.0, p = base;
    while (k) {
        if (k & 1) r *= p;
        p *= p;
        k >>= 1;
    }
    return inv ? 1.0 / r : r;
}

inline Expr make_ipow(Expr a, int e) {
    if (e == 0) return Expr::constant(1.0);
    if (e == 1) return a;
    if (a.is_constant()) return Expr::constant(ipow_value(a.constant_value(), e));
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprNode::Kind::IntPow;
    n->exponent = e;
    n->a = a.ptr();
    return Expr(std::move(n));
}

} // namespace detail

inline Expr operator+(Expr a, Expr b) { return detail::make_binary(BinaryOp::Add, std::move(a), std::move(b)); }
inline Expr operator-(Expr a, Expr b) { return detail::make_binary(BinaryOp::Sub, std::move(a), std::move(b)); }
inline Expr operator*(Expr a, Expr b) { return detail::make_binary(BinaryOp::Mul, std::move(a), std::move(b)); }
inline Expr operator/(Expr a, Expr b) { return detail::make_binary(BinaryOp::Div, std::move(a), std::move(b)); }
inline Expr operator-(Expr a) { return detail::make_unary(UnaryOp::Neg, std::move(a)); }
inline Expr sin(Expr a) { return detail::make_unary(UnaryOp::Sin, std::move(a)); }
inline Expr cos(Expr a) { return detail::make_unary(UnaryOp::Cos, std::move(a)); }
inline Expr tan(Expr a) { return detail::make_unary(UnaryOp::Tan, std::move(a)); }
inline Expr exp(Expr a) { return detail::make_unary(UnaryOp::Exp, std::move(a)); }
inline Expr ln(Expr a) { return detail::make_unary(UnaryOp::Ln, std::move(a)); }
inline Expr pow_int(Expr a, int e) { return detail::make_ipow(std::move(a), e); }

/// Variable assignment used for pointwise evaluation; must cover every free
/// variable of the expression at hand.
using Assignment = std::map<std::string, double>;

inline bool structurally_equal(const Expr& a, const Expr& b) {
    struct Cmp {
        bool eq(const ExprNode* x, const ExprNode* y) {
            if (x == y) return true;
            if (x->kind != y->kind) return false;
            switch (x->kind) {
            case ExprNode::Kind::Constant: return x->value == y->value;
            case ExprNode::Kind::Variable: return x->name == y->name;
            case ExprNode::Kind::Unary: return x->uop == y->uop && eq(x->a.get(), y->a.get());
            case ExprNode::Kind::Binary:
                return x->bop == y->bop && eq(x->a.get(), y->a.get()) && eq(x->b.get(), y->b.get());
            case ExprNode::Kind::IntPow:
                return x->exponent == y->exponent && eq(x->a.get(), y->a.get());
            }
            return false;
        }
    };
    return Cmp{}.eq(&a.node(), &b.node());
}

inline void collect_free_variables(const ExprNode* n, std::set<std::string>& out,
                                   std::set<const ExprNode*>& seen) {
    if (!seen.insert(n).second) return;
    switch (n->kind) {
    case ExprNode::Kind::Variable: out.insert(n->name); break;
    case ExprNode::Kind::Unary:
    case ExprNode::Kind::IntPow: collect_free_variables(n->a.get(), out, seen); break;
    case ExprNode::Kind::Binary:
        collect_free_variables(n->a.get(), out, seen);
        collect_free_variables(n->b.get(), out, seen);
        break;
    default: break;
    }
}

inline std::set<std::string> free_variables(const Expr& e) {
    std::set<std::string> out;
    std::set<const ExprNode*> seen;
    collect_free_variables(&e.node(), out, seen);
    return out;
}

namespace detail {

inline int precedence(const ExprNode& n) {
    switch (n.kind) {
    case ExprNode::Kind::Constant: return std::signbit(n.value) ? 3 : 5;
    case ExprNode::Kind::Variable: return 5;
    case ExprNode::Kind::Unary: return n.uop == UnaryOp::Neg ? 3 : 5;
    case ExprNode::Kind::Binary:
        return (n.bop == BinaryOp::Add || n.bop == BinaryOp::Sub) ? 1 : 2;
    case ExprNode::Kind::IntPow: return 4;
    }
    return 5;
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void print_node(const ExprNode& n, std::string& out) {
    auto child = [&out](const ExprNode& c, bool parens) {
        if (parens) out += '(';
        print_node(c, out);
        if (parens) out += ')';
    };
    switch (n.kind) {
    case ExprNode::Kind::Constant: out += format_double(n.value); return;
    case ExprNode::Kind::Variable: out += n.name; return;
    case ExprNode::Kind::Unary:
        if (n.uop == UnaryOp::Neg) {
            out += '-';
            child(*n.a, precedence(*n.a) < 3);
        } else {
            switch (n.uop) {
            case UnaryOp::Sin: out += "sin"; break;
            case UnaryOp::Cos: out += "cos"; break;
            case UnaryOp::Tan: out += "tan"; break;
            case UnaryOp::Exp: out += "exp"; break;
            case UnaryOp::Ln: out += "ln"; break;
            default: break;
            }
            out += '(';
            print_node(*n.a, out);
            out += ')';
        }
        return;
    case ExprNode::Kind::Binary: {
        const int p = precedence(n);
        child(*n.a, precedence(*n.a) < p);
        switch (n.bop) {
        case BinaryOp::Add: out += " + "; break;
        case BinaryOp::Sub: out += " - "; break;
        case BinaryOp::Mul: out += "*"; break;
        case BinaryOp::Div: out += "/"; break;
        }
        child(*n.b, precedence(*n.b) <= p);
        return;
    }
    case ExprNode::Kind::IntPow:
        child(*n.a, precedence(*n.a) < 4);
        out += '^';
        out += std::to_string(n.exponent);
        return;
    }
}

} // namespace detail

/// Text form that re-parses to a structurally equal tree.
inline std::string to_string(const Expr& e) {
    std::string out;
    detail::print_node(e.node(), out);
    return out;
}

inline double evaluate(const Expr& e, const Assignment& at) {
    std::unordered_map<const ExprNode*, double> memo;
    auto rec = [&](auto&& self, const ExprNode* n) -> double {
        auto it = memo.find(n);
        if (it != memo.end()) return it->second;
        double r = 0.0;
        switch (n->kind) {
        case ExprNode::Kind::Constant: r = n->value; break;
        case ExprNode::Kind::Variable: {
            auto v = at.find(n->name);
            if (v == at.end()) throw EvalDomainError("unbound variable '" + n->name + "'");
            r = v->second;
            break;
        }
        case ExprNode::Kind::Unary: {
            double x = self(self, n->a.get());
            switch (n->uop) {
            case UnaryOp::Neg: r = -x; break;
            case UnaryOp::Sin: r = std::sin(x); break;
            case UnaryOp::Cos: r = std::cos(x); break;
            case UnaryOp::Tan: r = std::tan(x); break;
            case UnaryOp::Exp: r = std::exp(x); break;
            case UnaryOp::Ln: r = std::log(x); break;
            }
            break;
        }
        case ExprNode::Kind::Binary: {
            double x = self(self, n->a.get());
            double y = self(self, n->b.get());
            switch (n->bop) {
            case BinaryOp::Add: r = x + y; break;
            case BinaryOp::Sub: r = x - y; break;
            case BinaryOp::Mul: r = x * y; break;
            case BinaryOp::Div: r = x / y; break;
            }
            break;
        }
        case ExprNode::Kind::IntPow:
            r = detail::ipow_value(self(self, n->a.get()), n->exponent);
            break;
        }
        if (!std::isfinite(r)) {
            std::string where;
            detail::print_node(*n, where);
            if (where.size() > 96) where = where.substr(0, 93) + "...";
            throw EvalDomainError("nonfinite value in subtree: " + where);
        }
        memo.emplace(n, r);
        return r;
    };
    return rec(rec, &e.node());
}

/// Exact symbolic partial derivative. Only literal zero/one folding is
/// applied to the result.
inline Expr differentiate(const Expr& e, const std::string& var) {
    std::unordered_map<const ExprNode*, Expr> memo;
    auto rec = [&](auto&& self, const ExprPtr& np) -> Expr {
        const ExprNode* n = np.get();
        auto it = memo.find(n);
        if (it != memo.end()) return it->second;
        Expr r;
        switch (n->kind) {
        case ExprNode::Kind::Constant: r = Expr::constant(0.0); break;
        case ExprNode::Kind::Variable:
            r = Expr::constant(n->name == var ? 1.0 : 0.0);
            break;
        case ExprNode::Kind::Unary: {
            Expr u(n->a);
            Expr du = self(self, n->a);
            switch (n->uop) {
            case UnaryOp::Neg: r = -du; break;
            case UnaryOp::Sin: r = cos(u) * du; break;
            case UnaryOp::Cos: r = (-sin(u)) * du; break;
            case UnaryOp::Tan: r = du / pow_int(cos(u), 2); break;
            case UnaryOp::Exp: r = exp(u) * du; break;
            case UnaryOp::Ln: r = du / u; break;
            }
            break;
        }
        case ExprNode::Kind::Binary: {
            Expr u(n->a), v(n->b);
            Expr du = self(self, n->a), dv = self(self, n->b);
            switch (n->bop) {
            case BinaryOp::Add: r = du + dv; break;
            case BinaryOp::Sub: r = du - dv; break;
            case BinaryOp::Mul: r = du * v + u * dv; break;
            case BinaryOp::Div: r = (du * v - u * dv) / pow_int(v, 2); break;
            }
            break;
        }
        case ExprNode::Kind::IntPow: {
            Expr u(n->a);
            Expr du = self(self, n->a);
            r = Expr::constant(double(n->exponent)) * pow_int(u, n->exponent - 1) * du;
            break;
        }
        }
        memo.emplace(n, r);
        return r;
    };
    return rec(rec, e.ptr());
}

inline Expr substitute(const Expr& e, const std::map<std::string, Expr>& repl) {
    std::unordered_map<const ExprNode*, Expr> memo;
    auto rec = [&](auto&& self, const ExprPtr& np) -> Expr {
        const ExprNode* n = np.get();
        auto it = memo.find(n);
        if (it != memo.end()) return it->second;
        Expr r;
        switch (n->kind) {
        case ExprNode::Kind::Constant: r = Expr(np); break;
        case ExprNode::Kind::Variable: {
            auto f = repl.find(n->name);
            r = f == repl.end() ? Expr(np) : f->second;
            break;
        }
        case ExprNode::Kind::Unary:
            r = detail::make_unary(n->uop, self(self, n->a));
            break;
        case ExprNode::Kind::Binary:
            r = detail::make_binary(n->bop, self(self, n->a), self(self, n->b));
            break;
        case ExprNode::Kind::IntPow:
            r = detail::make_ipow(self(self, n->a), n->exponent);
            break;
        }
        memo.emplace(n, r);
        return r;
    };
    return rec(rec, e.ptr());
}

namespace detail {

// Recursive-descent parser. Precedence: ^  >  unary minus  >  * /  >  + -,
// binary operators left-associative, '^' takes a literal integer exponent.
class Parser {
public:
    Parser(std::string_view src, const std::set<std::string>* allowed)
        : src_(src), allowed_(allowed) {}

    Expr parse() {
        Expr e = parse_sum();
        skip_ws();
        if (pos_ != src_.size())
            throw ParseError("unexpected character '" + std::string(1, src_[pos_]) + "'", pos_);
        return e;
    }

private:
    std::string_view src_;
    std::size_t pos_ = 0;
    const std::set<std::string>* allowed_;

    void skip_ws() {
        while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t' ||
                                      src_[pos_] == '\n' || src_[pos_] == '\r'))
            ++pos_;
    }
    bool peek(char c) {
        skip_ws();
        return pos_ < src_.size() && src_[pos_] == c;
    }
    bool accept(char c) {
        if (peek(c)) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!accept(c)) throw ParseError(std::string("expected '") + c + "'", pos_);
    }

    Expr parse_sum() {
        Expr e = parse_term();
        for (;;) {
            if (accept('+')) e = e + parse_term();
            else if (accept('-')) e = e - parse_term();
            else return e;
        }
    }

    Expr parse_term() {
        Expr e = parse_unary();
        for (;;) {
            if (accept('*')) e = e * parse_unary();
            else if (accept('/')) e = e / parse_unary();
            else return e;
        }
    }

    Expr parse_unary() {
        if (accept('-')) return -parse_unary();
        return parse_power();
    }

    Expr parse_power() {
        Expr e = parse_atom();
        while (accept('^')) e = pow_int(e, parse_int_exponent());
        return e;
    }

    int parse_int_exponent() {
        skip_ws();
        std::size_t start = pos_;
        bool neg = false;
        if (pos_ < src_.size() && src_[pos_] == '-') {
            neg = true;
            ++pos_;
        }
        if (pos_ >= src_.size() || !std::isdigit((unsigned char)src_[pos_]))
            throw ParseError("expected integer exponent", pos_);
        long v = 0;
        while (pos_ < src_.size() && std::isdigit((unsigned char)src_[pos_])) {
            v = v * 10 + (src_[pos_] - '0');
            if (v > 64) throw ParseError("exponent too large", start);
            ++pos_;
        }
        if (pos_ < src_.size() && (src_[pos_] == '.' || src_[pos_] == 'e' || src_[pos_] == 'E'))
            throw ParseError("exponent must be a literal integer", pos_);
        return int(neg ? -v : v);
    }

    Expr parse_atom() {
        skip_ws();
        if (pos_ >= src_.size()) throw ParseError("expected expression", pos_);
        char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = parse_sum();
            expect(')');
            return e;
        }
        if (std::isdigit((unsigned char)c) ||
            (c == '.' && pos_ + 1 < src_.size() && std::isdigit((unsigned char)src_[pos_ + 1])))
            return parse_number();
        if (std::isalpha((unsigned char)c) || c == '_') return parse_ident();
        throw ParseError("expected expression", pos_);
    }

    Expr parse_number() {
        std::size_t start = pos_;
        // strtod accepts the decimal grammar we want; gcc 11 from_chars for
        // doubles is present but strtod keeps this simpler.
        std::string tok;
        while (pos_ < src_.size() &&
               (std::isdigit((unsigned char)src_[pos_]) || src_[pos_] == '.' ||
                src_[pos_] == 'e' || src_[pos_] == 'E' ||
                ((src_[pos_] == '+' || src_[pos_] == '-') && pos_ > start &&
                 (src_[pos_ - 1] == 'e' || src_[pos_ - 1] == 'E')))) {
            tok += src_[pos_];
            ++pos_;
        }
        char* end = nullptr;
        errno = 0;
        double v = std::strtod(tok.c_str(), &end);
        if (end != tok.c_str() + tok.size() || errno == ERANGE || !std::isfinite(v))
            throw ParseError("malformed number '" + tok + "'", start);
        return Expr::constant(v);
    }

    Expr parse_ident() {
        std::size_t start = pos_;
        std::string name;
        while (pos_ < src_.size() &&
               (std::isalnum((unsigned char)src_[pos_]) || src_[pos_] == '_')) {
            name += src_[pos_];
            ++pos_;
        }
        if (peek('(')) {
            ++pos_;
            Expr arg = parse_sum();
            expect(')');
            if (name == "sin") return sin(arg);
            if (name == "cos") return cos(arg);
            if (name == "tan") return tan(arg);
            if (name == "exp") return exp(arg);
            if (name == "ln") return ln(arg);
            throw ParseError("unknown function '" + name + "'", start);
        }
        if (allowed_ && !allowed_->count(name))
            throw ParseError("unknown variable '" + name + "'", start);
        return Expr::variable(name);
    }
};

} // namespace detail

inline Expr parse_expr(std::string_view source) {
    return detail::Parser(source, nullptr).parse();
}

inline Expr parse_expr(std::string_view source, const std::set<std::string>& allowed_vars) {
    return detail::Parser(source, &allowed_vars).parse();
}

} // namespace flat5
