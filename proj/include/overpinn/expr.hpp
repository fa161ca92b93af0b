#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace overpinn {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& msg, int line, int col)
        : Error(msg + " at line " + std::to_string(line) + ", column " + std::to_string(col)),
          line(line), col(col) {}
    int line;
    int col;
};

/// Exponent vector over the system's independent variables. Entry i is the
/// derivative order with respect to variable i; the zero index is the field
/// itself. Mixed partials commute by construction.
using MultiIndex = std::vector<int>;

inline int total_order(const MultiIndex& mi) {
    int s = 0;
    for (int e : mi) s += e;
    return s;
}

inline MultiIndex mi_add(const MultiIndex& a, const MultiIndex& b) {
    MultiIndex r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

/// Componentwise a >= b.
inline bool mi_contains(const MultiIndex& a, const MultiIndex& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] < b[i]) return false;
    return true;
}

inline MultiIndex mi_sub(const MultiIndex& a, const MultiIndex& b) {
    MultiIndex r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

/// Declarations an expression is parsed and canonicalized against:
/// independent variables (ordered), fields with their dependency masks,
/// and named scalar parameters.
struct SystemContext {
    std::vector<std::string> variables;
    // field name -> dependency mask over `variables`
    std::map<std::string, std::vector<bool>> fields;
    std::set<std::string> parameters;

    int var_index(const std::string& v) const {
        for (std::size_t i = 0; i < variables.size(); ++i)
            if (variables[i] == v) return static_cast<int>(i);
        return -1;
    }
    bool field_depends_on(const std::string& field, int var) const {
        auto it = fields.find(field);
        return it != fields.end() && it->second[static_cast<std::size_t>(var)];
    }
};

using ContextPtr = std::shared_ptr<const SystemContext>;

inline ContextPtr make_context(std::vector<std::string> vars,
                               const std::vector<std::pair<std::string, std::vector<std::string>>>& fields,
                               std::vector<std::string> params = {}) {
    auto ctx = std::make_shared<SystemContext>();
    ctx->variables = std::move(vars);
    for (const auto& [name, deps] : fields) {
        std::vector<bool> mask(ctx->variables.size(), deps.empty());
        for (const auto& d : deps) {
            int i = ctx->var_index(d);
            if (i < 0) throw Error("field '" + name + "' depends on undeclared variable '" + d + "'");
            mask[static_cast<std::size_t>(i)] = true;
        }
        ctx->fields[name] = mask;
    }
    for (auto& p : params) ctx->parameters.insert(std::move(p));
    return ctx;
}

// Total derivative order any expression may reach. All shipped systems
// stay at or below 3; the extra slot leaves room for one more derivative
// in tests without unbounding jet sizes.
inline constexpr int kMaxDerivOrder = 4;

enum class AtomKind { Parameter = 0, Derivative = 1 };

/// A multiplicative atom: a named parameter or a field derivative.
struct Atom {
    AtomKind kind;
    std::string name;  // parameter name or field name
    MultiIndex mi;     // empty for parameters

    friend bool operator==(const Atom& a, const Atom& b) {
        return a.kind == b.kind && a.name == b.name && a.mi == b.mi;
    }
    friend bool operator<(const Atom& a, const Atom& b) {
        if (a.kind != b.kind) return a.kind < b.kind;
        if (a.name != b.name) return a.name < b.name;
        return a.mi < b.mi;
    }
};

struct Factor {
    Atom atom;
    int pow = 1;

    friend bool operator==(const Factor& a, const Factor& b) {
        return a.pow == b.pow && a.atom == b.atom;
    }
};

/// coef * product of factors; factors sorted by atom, unique atoms.
struct Term {
    double coef = 0.0;
    std::vector<Factor> factors;
};

inline bool term_body_less(const Term& a, const Term& b) {
    std::size_t n = std::min(a.factors.size(), b.factors.size());
    for (std::size_t i = 0; i < n; ++i) {
        const Factor& fa = a.factors[i];
        const Factor& fb = b.factors[i];
        if (!(fa.atom == fb.atom)) return fa.atom < fb.atom;
        if (fa.pow != fb.pow) return fa.pow < fb.pow;
    }
    return a.factors.size() < b.factors.size();
}

inline bool term_body_equal(const Term& a, const Term& b) {
    return a.factors == b.factors;
}

/// Canonical expression: an expanded sum of terms over parameter and
/// derivative atoms. Canonical form is unique — sums flattened, like terms
/// merged, zero terms dropped, factors and terms sorted — so structural
/// equality is term-list equality.
class Expression {
public:
    Expression() = default;
    explicit Expression(ContextPtr ctx) : ctx_(std::move(ctx)) {}

    static Expression constant(ContextPtr ctx, double v) {
        Expression e(std::move(ctx));
        if (v != 0.0) e.terms_.push_back(Term{v, {}});
        return e;
    }
    static Expression parameter(ContextPtr ctx, const std::string& name) {
        if (!ctx->parameters.count(name)) throw Error("undeclared parameter '" + name + "'");
        Expression e(ctx);
        e.terms_.push_back(Term{1.0, {Factor{Atom{AtomKind::Parameter, name, {}}, 1}}});
        return e;
    }
    static Expression derivative_term(ContextPtr ctx, const std::string& field, MultiIndex mi) {
        if (!ctx->fields.count(field)) throw Error("undeclared field '" + field + "'");
        if (mi.size() != ctx->variables.size()) throw Error("multi-index size mismatch");
        if (total_order(mi) > kMaxDerivOrder) throw Error("derivative order above cap");
        Expression e(ctx);
        e.terms_.push_back(Term{1.0, {Factor{Atom{AtomKind::Derivative, field, std::move(mi)}, 1}}});
        return e;
    }
    static Expression field(ContextPtr ctx, const std::string& name) {
        MultiIndex mi(ctx->variables.size(), 0);
        return derivative_term(std::move(ctx), name, std::move(mi));
    }

    const ContextPtr& context() const { return ctx_; }
    const std::vector<Term>& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }

    bool is_constant(double* value = nullptr) const {
        if (terms_.empty()) {
            if (value) *value = 0.0;
            return true;
        }
        if (terms_.size() == 1 && terms_[0].factors.empty()) {
            if (value) *value = terms_[0].coef;
            return true;
        }
        return false;
    }

    friend bool operator==(const Expression& a, const Expression& b) {
        if (a.terms_.size() != b.terms_.size()) return false;
        for (std::size_t i = 0; i < a.terms_.size(); ++i) {
            if (a.terms_[i].coef != b.terms_[i].coef) return false;
            if (!term_body_equal(a.terms_[i], b.terms_[i])) return false;
        }
        return true;
    }
    friend bool operator!=(const Expression& a, const Expression& b) { return !(a == b); }

    friend Expression operator+(const Expression& a, const Expression& b) {
        Expression r(a.ctx_ ? a.ctx_ : b.ctx_);
        std::vector<Term> all = a.terms_;
        all.insert(all.end(), b.terms_.begin(), b.terms_.end());
        r.terms_ = merge_terms(std::move(all));
        return r;
    }
    friend Expression operator-(const Expression& a, const Expression& b) { return a + (b * -1.0); }
    friend Expression operator*(const Expression& a, double s) {
        Expression r(a.ctx_);
        if (s == 0.0) return r;
        r.terms_ = a.terms_;
        for (auto& t : r.terms_) t.coef *= s;
        return r;
    }
    friend Expression operator*(double s, const Expression& a) { return a * s; }
    friend Expression operator*(const Expression& a, const Expression& b) {
        Expression r(a.ctx_ ? a.ctx_ : b.ctx_);
        std::vector<Term> prod;
        prod.reserve(a.terms_.size() * b.terms_.size());
        for (const auto& ta : a.terms_)
            for (const auto& tb : b.terms_) prod.push_back(mul_terms(ta, tb));
        r.terms_ = merge_terms(std::move(prod));
        return r;
    }

    Expression pow(int n) const {
        if (n < 1) throw Error("integer power exponent must be >= 1");
        Expression r = *this;
        for (int i = 1; i < n; ++i) r = r * *this;
        return r;
    }

    /// Build a term directly (used by rewrite passes); canonicalizes.
    static Expression from_terms(ContextPtr ctx, std::vector<Term> ts) {
        Expression e(std::move(ctx));
        for (auto& t : ts) {
            std::sort(t.factors.begin(), t.factors.end(),
                      [](const Factor& x, const Factor& y) { return x.atom < y.atom; });
        }
        e.terms_ = merge_terms(std::move(ts));
        return e;
    }

private:
    static Term mul_terms(const Term& a, const Term& b) {
        Term r;
        r.coef = a.coef * b.coef;
        r.factors.reserve(a.factors.size() + b.factors.size());
        std::size_t i = 0, j = 0;
        while (i < a.factors.size() && j < b.factors.size()) {
            if (a.factors[i].atom == b.factors[j].atom) {
                r.factors.push_back(Factor{a.factors[i].atom, a.factors[i].pow + b.factors[j].pow});
                ++i;
                ++j;
            } else if (a.factors[i].atom < b.factors[j].atom) {
                r.factors.push_back(a.factors[i++]);
            } else {
                r.factors.push_back(b.factors[j++]);
            }
        }
        while (i < a.factors.size()) r.factors.push_back(a.factors[i++]);
        while (j < b.factors.size()) r.factors.push_back(b.factors[j++]);
        return r;
    }

    static std::vector<Term> merge_terms(std::vector<Term> ts) {
        std::sort(ts.begin(), ts.end(), term_body_less);
        std::vector<Term> out;
        for (auto& t : ts) {
            if (t.coef == 0.0) continue;
            if (!out.empty() && term_body_equal(out.back(), t)) {
                out.back().coef += t.coef;
                if (out.back().coef == 0.0) out.pop_back();
            } else {
                out.push_back(std::move(t));
            }
        }
        return out;
    }

    ContextPtr ctx_;
    std::vector<Term> terms_;
};

/// Total derivative with respect to one independent variable. Product and
/// power rules expand in canonical form; derivatives of fields raise the
/// multi-index. A field that does not depend on the variable contributes 0.
inline Expression differentiate(const Expression& e, int var) {
    const ContextPtr& ctx = e.context();
    if (!ctx || var < 0 || var >= static_cast<int>(ctx->variables.size()))
        throw Error("differentiate: undeclared variable");
    Expression result(ctx);
    for (const Term& t : e.terms()) {
        for (std::size_t i = 0; i < t.factors.size(); ++i) {
            const Factor& f = t.factors[i];
            if (f.atom.kind == AtomKind::Parameter) continue;
            if (!ctx->field_depends_on(f.atom.name, var)) continue;
            MultiIndex dmi = f.atom.mi;
            dmi[static_cast<std::size_t>(var)] += 1;
            if (total_order(dmi) > kMaxDerivOrder)
                throw Error("differentiate: derivative order above cap for field '" + f.atom.name + "'");
            Term nt;
            nt.coef = t.coef * f.pow;
            for (std::size_t j = 0; j < t.factors.size(); ++j) {
                if (j == i) {
                    if (f.pow > 1) nt.factors.push_back(Factor{f.atom, f.pow - 1});
                } else {
                    nt.factors.push_back(t.factors[j]);
                }
            }
            nt.factors.push_back(Factor{Atom{AtomKind::Derivative, f.atom.name, std::move(dmi)}, 1});
            result = result + Expression::from_terms(ctx, {std::move(nt)});
        }
    }
    return result;
}

inline Expression differentiate(const Expression& e, const std::string& var) {
    const ContextPtr& ctx = e.context();
    int v = ctx ? ctx->var_index(var) : -1;
    if (v < 0) throw Error("differentiate: undeclared variable '" + var + "'");
    return differentiate(e, v);
}

/// Derivative along a multi-index (repeated single-variable derivatives).
inline Expression differentiate(const Expression& e, const MultiIndex& mi) {
    Expression r = e;
    for (std::size_t v = 0; v < mi.size(); ++v)
        for (int k = 0; k < mi[v]; ++k) r = differentiate(r, static_cast<int>(v));
    return r;
}

/// For each field, the set of derivative multi-indices the expression
/// touches. Drives jet-order selection downstream.
inline std::map<std::string, std::set<MultiIndex>> required_orders(const Expression& e) {
    std::map<std::string, std::set<MultiIndex>> out;
    for (const Term& t : e.terms())
        for (const Factor& f : t.factors)
            if (f.atom.kind == AtomKind::Derivative) out[f.atom.name].insert(f.atom.mi);
    return out;
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::string atom_to_string(const SystemContext& ctx, const Atom& a) {
    if (a.kind == AtomKind::Parameter) return a.name;
    if (total_order(a.mi) == 0) return a.name;
    std::string s = "d";
    for (std::size_t v = 0; v < a.mi.size(); ++v)
        for (int k = 0; k < a.mi[v]; ++k) s += ctx.variables[v];
    s += "(" + a.name + ")";
    return s;
}

/// Canonical DSL text; parse(print(e)) == e.
inline std::string to_string(const Expression& e) {
    if (e.is_zero()) return "0";
    const SystemContext& ctx = *e.context();
    std::string out;
    bool first = true;
    for (const Term& t : e.terms()) {
        double c = t.coef;
        if (first) {
            if (c < 0) out += "-";
        } else {
            out += (c < 0) ? " - " : " + ";
        }
        first = false;
        double ac = std::fabs(c);
        std::string body;
        for (const Factor& f : t.factors) {
            if (!body.empty()) body += "*";
            body += atom_to_string(ctx, f.atom);
            if (f.pow > 1) body += "^" + std::to_string(f.pow);
        }
        if (body.empty()) {
            out += format_double(ac);
        } else {
            if (ac != 1.0) out += format_double(ac) + "*";
            out += body;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------
//
// expr   := ['+'|'-'] term (('+'|'-') term)*
// term   := factor ('*' factor)*
// factor := primary ('^' int)*
// primary:= number | '(' expr ')' | ident
// ident  := parameter | field | 'd' varname+ '(' (field | deriv) ')'

namespace detail {

class Parser {
public:
    Parser(std::string text, ContextPtr ctx, int line = 1)
        : text_(std::move(text)), ctx_(std::move(ctx)), line_(line) {}

    Expression parse() {
        Expression e = parse_expr();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected trailing input");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(msg, line_, static_cast<int>(pos_) + 1);
    }
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    bool eat(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    char peek() {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }

    Expression parse_expr() {
        bool neg = false;
        skip_ws();
        if (eat('-')) neg = true;
        else eat('+');
        Expression e = parse_term();
        if (neg) e = e * -1.0;
        while (true) {
            skip_ws();
            if (eat('+')) e = e + parse_term();
            else if (eat('-')) e = e - parse_term();
            else break;
        }
        return e;
    }

    Expression parse_term() {
        Expression e = parse_factor();
        while (eat('*')) e = e * parse_factor();
        return e;
    }

    Expression parse_factor() {
        Expression e = parse_primary();
        while (eat('^')) {
            skip_ws();
            std::size_t start = pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            if (pos_ == start) fail("expected integer exponent");
            int n = std::atoi(text_.substr(start, pos_ - start).c_str());
            if (n < 1) fail("integer power exponent must be >= 1");
            if (n > 9) fail("integer power exponent above cap");
            e = e.pow(n);
        }
        return e;
    }

    Expression parse_primary() {
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end of input");
        char c = text_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (c == '(') {
            ++pos_;
            Expression e = parse_expr();
            if (!eat(')')) fail("expected ')'");
            return e;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
        fail(std::string("unexpected character '") + c + "'");
    }

    Expression parse_number() {
        const char* begin = text_.c_str() + pos_;
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin) fail("invalid number");
        pos_ += static_cast<std::size_t>(end - begin);
        return Expression::constant(ctx_, v);
    }

    std::string read_name() {
        std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
            ++pos_;
        return text_.substr(start, pos_ - start);
    }

    // Split the tail of a derivative head ("txx" in "dtxx") into declared
    // variable names, greedy longest match at each position.
    std::optional<MultiIndex> split_vars(const std::string& s) const {
        MultiIndex mi(ctx_->variables.size(), 0);
        std::size_t p = 0;
        while (p < s.size()) {
            int best = -1;
            std::size_t best_len = 0;
            for (std::size_t v = 0; v < ctx_->variables.size(); ++v) {
                const std::string& name = ctx_->variables[v];
                if (name.size() > best_len && s.compare(p, name.size(), name) == 0) {
                    best = static_cast<int>(v);
                    best_len = name.size();
                }
            }
            if (best < 0) return std::nullopt;
            mi[static_cast<std::size_t>(best)] += 1;
            p += best_len;
        }
        return mi;
    }

    Expression parse_ident() {
        std::size_t at = pos_;
        std::string name = read_name();
        skip_ws();
        bool call = pos_ < text_.size() && text_[pos_] == '(';
        if (call) {
            if (name.size() < 2 || name[0] != 'd') {
                pos_ = at;
                fail("only derivative heads may be applied with '(...)'");
            }
            auto mi = split_vars(name.substr(1));
            if (!mi) {
                pos_ = at;
                fail("cannot split '" + name + "' into declared variables");
            }
            ++pos_;  // '('
            auto [field, inner_mi] = parse_deriv_inner();
            MultiIndex total = mi_add(*mi, inner_mi);
            if (!eat(')')) fail("expected ')'");
            if (total_order(total) > kMaxDerivOrder) fail("derivative order above cap");
            for (std::size_t v = 0; v < total.size(); ++v) {
                if (total[v] > 0 && !ctx_->field_depends_on(field, static_cast<int>(v)))
                    fail("field '" + field + "' does not depend on '" + ctx_->variables[v] + "'");
            }
            return Expression::derivative_term(ctx_, field, std::move(total));
        }
        if (ctx_->fields.count(name)) return Expression::field(ctx_, name);
        if (ctx_->parameters.count(name)) return Expression::parameter(ctx_, name);
        pos_ = at;
        fail("reference to undeclared field or variable '" + name + "'");
    }

    // Inside d...( ... ): a field name or a nested derivative.
    std::pair<std::string, MultiIndex> parse_deriv_inner() {
        skip_ws();
        std::size_t at = pos_;
        std::string name = read_name();
        if (name.empty()) fail("expected field name");
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == '(') {
            if (name[0] != 'd' || name.size() < 2) {
                pos_ = at;
                fail("expected field or nested derivative");
            }
            auto mi = split_vars(name.substr(1));
            if (!mi) {
                pos_ = at;
                fail("cannot split '" + name + "' into declared variables");
            }
            ++pos_;
            auto [field, inner] = parse_deriv_inner();
            if (!eat(')')) fail("expected ')'");
            return {field, mi_add(*mi, inner)};
        }
        if (!ctx_->fields.count(name)) {
            pos_ = at;
            fail("reference to undeclared field '" + name + "'");
        }
        return {name, MultiIndex(ctx_->variables.size(), 0)};
    }

    std::string text_;
    ContextPtr ctx_;
    int line_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline Expression parse(const std::string& text, ContextPtr ctx, int line = 1) {
    return detail::Parser(text, std::move(ctx), line).parse();
}

// ---------------------------------------------------------------------------
// PDE systems
// ---------------------------------------------------------------------------

/// Residual expressions (each asserted == 0) plus declarations and bound
/// parameter values. Side constraints are residuals that hold identically
/// (e.g. continuity) and are available to rewrite passes.
struct PDESystem {
    ContextPtr ctx;
    std::vector<Expression> residuals;
    std::vector<Expression> constraints;
    std::map<std::string, double> parameter_values;

    void validate() const {
        for (const auto& e : residuals) check_expr(e);
        for (const auto& e : constraints) check_expr(e);
    }

private:
    void check_expr(const Expression& e) const {
        for (const Term& t : e.terms())
            for (const Factor& f : t.factors) {
                if (f.atom.kind == AtomKind::Derivative && !ctx->fields.count(f.atom.name))
                    throw Error("residual references undeclared field '" + f.atom.name + "'");
                if (f.atom.kind == AtomKind::Parameter && !parameter_values.count(f.atom.name))
                    throw Error("parameter '" + f.atom.name + "' has no bound value");
            }
    }
};

/// Append the requested residual derivatives; the original system is left
/// unmodified.
inline PDESystem derive_auxiliary(const PDESystem& system,
                                  const std::vector<std::pair<int, std::string>>& plan) {
    PDESystem out = system;
    for (const auto& [idx, dir] : plan) {
        if (idx < 0 || idx >= static_cast<int>(system.residuals.size()))
            throw Error("derive_auxiliary: residual index out of range");
        out.residuals.push_back(differentiate(system.residuals[static_cast<std::size_t>(idx)], dir));
    }
    return out;
}

}  // namespace overpinn
