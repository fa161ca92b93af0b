#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "overpinn/expr.hpp"
#include "overpinn/rational.hpp"

namespace overpinn {

namespace detail {

struct PatternAtom {
    double coef;
    std::string field;
    MultiIndex mi;
};

// A linear pattern: sum of derivative terms with numeric coefficients.
inline std::vector<PatternAtom> linear_pattern_atoms(const Expression& pattern) {
    std::vector<PatternAtom> atoms;
    for (const Term& t : pattern.terms()) {
        if (t.factors.size() != 1 || t.factors[0].pow != 1 ||
            t.factors[0].atom.kind != AtomKind::Derivative)
            throw Error("substitute: nonlinear pattern (must be a sum of derivative terms)");
        atoms.push_back(PatternAtom{t.coef, t.factors[0].atom.name, t.factors[0].atom.mi});
    }
    if (atoms.empty()) throw Error("substitute: empty pattern");
    return atoms;
}

inline bool remove_one_atom_power(Term& t, const Atom& a) {
    for (std::size_t i = 0; i < t.factors.size(); ++i) {
        if (t.factors[i].atom == a) {
            if (t.factors[i].pow > 1) --t.factors[i].pow;
            else t.factors.erase(t.factors.begin() + static_cast<std::ptrdiff_t>(i));
            return true;
        }
    }
    return false;
}

inline bool term_has_atom(const Term& t, const Atom& a) {
    for (const Factor& f : t.factors)
        if (f.atom == a) return true;
    return false;
}

}  // namespace detail

/// Replace every occurrence of a linear pattern (a sum of derivative terms)
/// by a replacement expression. Occurrences are matched up to derivative
/// lifts: for any multi-index b, the pattern differentiated by b maps to the
/// replacement differentiated by b. Matching groups expanded terms by their
/// common cofactor, which realizes the collect step the grouped paper-style
/// cancellations need. Unmatched terms pass through unchanged.
inline Expression substitute(const Expression& e, const Expression& pattern,
                             const Expression& replacement) {
    const ContextPtr& ctx = e.context();
    auto pat = detail::linear_pattern_atoms(pattern);
    const std::size_t nvars = ctx->variables.size();

    // Candidate lifts: differences between derivative atoms in e and pattern atoms.
    std::set<MultiIndex> lifts;
    for (const Term& t : e.terms())
        for (const Factor& f : t.factors) {
            if (f.atom.kind != AtomKind::Derivative) continue;
            for (const auto& p : pat) {
                if (p.field != f.atom.name) continue;
                if (!mi_contains(f.atom.mi, p.mi)) continue;
                lifts.insert(mi_sub(f.atom.mi, p.mi));
            }
        }

    // Drop lifts that degenerate the pattern (a field independent of a lifted
    // variable would lose its term) or push any atom over the order cap.
    std::vector<MultiIndex> usable;
    for (const MultiIndex& b : lifts) {
        bool ok = true;
        for (const auto& p : pat) {
            if (total_order(mi_add(p.mi, b)) > kMaxDerivOrder) { ok = false; break; }
            for (std::size_t v = 0; v < nvars; ++v)
                if (b[v] > 0 && !ctx->field_depends_on(p.field, static_cast<int>(v))) { ok = false; break; }
            if (!ok) break;
        }
        if (ok) usable.push_back(b);
    }

    Expression current = e;
    for (int pass = 0; pass < 16; ++pass) {
        const std::vector<Term>& terms = current.terms();
        std::vector<bool> consumed(terms.size(), false);
        Expression emitted(ctx);
        bool changed = false;

        for (std::size_t ti = 0; ti < terms.size(); ++ti) {
            if (consumed[ti]) continue;
            bool matched = false;
            for (const MultiIndex& b : usable) {
                if (matched) break;
                for (std::size_t anchor = 0; anchor < pat.size() && !matched; ++anchor) {
                    Atom lifted{AtomKind::Derivative, pat[anchor].field, mi_add(pat[anchor].mi, b)};
                    if (!detail::term_has_atom(terms[ti], lifted)) continue;
                    Term cof = terms[ti];
                    detail::remove_one_atom_power(cof, lifted);
                    double ratio = cof.coef / pat[anchor].coef;
                    // Locate a partner term for every other pattern atom
                    // sharing exactly this cofactor.
                    std::vector<std::size_t> fellows;
                    bool all = true;
                    for (std::size_t j = 0; j < pat.size(); ++j) {
                        if (j == anchor) continue;
                        Term want = cof;
                        want.coef = ratio * pat[j].coef;
                        Atom ja{AtomKind::Derivative, pat[j].field, mi_add(pat[j].mi, b)};
                        Term wantt = want;
                        wantt.factors.push_back(Factor{ja, 1});
                        Expression norm = Expression::from_terms(ctx, {wantt});
                        if (norm.terms().size() != 1) { all = false; break; }
                        const Term& target = norm.terms()[0];
                        bool found = false;
                        for (std::size_t tj = 0; tj < terms.size(); ++tj) {
                            if (consumed[tj] || tj == ti) continue;
                            bool taken = false;
                            for (std::size_t u : fellows) taken = taken || (u == tj);
                            if (taken) continue;
                            if (terms[tj].coef == target.coef && term_body_equal(terms[tj], target)) {
                                fellows.push_back(tj);
                                found = true;
                                break;
                            }
                        }
                        if (!found) { all = false; break; }
                    }
                    if (!all) continue;
                    consumed[ti] = true;
                    for (std::size_t u : fellows) consumed[u] = true;
                    Term cof_unit = cof;
                    cof_unit.coef = ratio;
                    emitted = emitted + Expression::from_terms(ctx, {cof_unit}) * differentiate(replacement, b);
                    matched = true;
                    changed = true;
                }
            }
        }

        if (!changed) break;
        std::vector<Term> rest;
        for (std::size_t ti = 0; ti < terms.size(); ++ti)
            if (!consumed[ti]) rest.push_back(terms[ti]);
        current = Expression::from_terms(ctx, std::move(rest)) + emitted;
    }
    return current;
}

// ---------------------------------------------------------------------------
// Variable elimination (rank-deficiency route)
// ---------------------------------------------------------------------------

struct EliminationResult {
    std::vector<Rational> alpha;            // primitive integers, sign-normalized
    std::vector<std::string> directions;    // one per residual
    Expression derived;                      // sum of alpha_i * D_{d_i}(residual_i)
};

namespace detail {

// parameter monomial: sorted (name, exponent) pairs
using Monomial = std::vector<std::pair<std::string, int>>;

struct MatrixEntry {
    Rational value{0};
    Monomial monomial;
    bool set = false;
};

}  // namespace detail

/// Differentiate each residual along its assigned direction, build the exact
/// coefficient matrix of every derivative atom of a target field, and return
/// a nontrivial null vector of its transpose together with the combined
/// residual, or nullopt when the matrix has full row rank. Target atoms must
/// occur linearly with constant or parameter coefficients.
inline std::optional<EliminationResult> eliminate(const PDESystem& system,
                                                  const std::set<std::string>& targets,
                                                  const std::vector<std::string>& directions) {
    if (directions.size() != system.residuals.size())
        throw Error("eliminate: one direction required per residual");
    for (const auto& f : targets)
        if (!system.ctx->fields.count(f)) throw Error("eliminate: undeclared target field '" + f + "'");

    const std::size_t m = system.residuals.size();
    std::vector<Expression> diffed;
    diffed.reserve(m);
    for (std::size_t i = 0; i < m; ++i)
        diffed.push_back(differentiate(system.residuals[i], directions[i]));

    // Column index per distinct target derivative atom.
    std::vector<Atom> columns;
    auto column_of = [&](const Atom& a) -> std::size_t {
        for (std::size_t c = 0; c < columns.size(); ++c)
            if (columns[c] == a) return c;
        columns.push_back(a);
        return columns.size() - 1;
    };

    std::vector<std::vector<detail::MatrixEntry>> entries(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (const Term& t : diffed[i].terms()) {
            const Factor* target_factor = nullptr;
            detail::Monomial mono;
            bool nonconstant_cofactor = false;
            for (const Factor& f : t.factors) {
                if (f.atom.kind == AtomKind::Derivative && targets.count(f.atom.name)) {
                    if (target_factor || f.pow > 1)
                        throw Error("eliminate: nonlinear target occurrence in residual " + std::to_string(i));
                    target_factor = &f;
                } else if (f.atom.kind == AtomKind::Parameter) {
                    mono.emplace_back(f.atom.name, f.pow);
                } else {
                    nonconstant_cofactor = true;
                }
            }
            if (!target_factor) continue;
            if (nonconstant_cofactor)
                throw Error("eliminate: target derivative multiplied by a non-constant coefficient in residual " +
                            std::to_string(i));
            std::size_t c = column_of(target_factor->atom);
            if (entries[i].size() < columns.size()) entries[i].resize(columns.size());
            detail::MatrixEntry& cell = entries[i][c];
            Rational v = Rational::from_double(t.coef);
            if (!cell.set) {
                cell.value = v;
                cell.monomial = mono;
                cell.set = true;
            } else {
                if (cell.monomial != mono)
                    throw Error("eliminate: target coefficients mix parameter monomials");
                cell.value = cell.value + v;
            }
        }
    }
    for (auto& row : entries) row.resize(columns.size());

    const std::size_t ncols = columns.size();
    // Factor the common parameter monomial out of each column; the remaining
    // matrix is purely rational, so the rank decision is exact.
    for (std::size_t c = 0; c < ncols; ++c) {
        const detail::Monomial* common = nullptr;
        for (std::size_t i = 0; i < m; ++i) {
            if (!entries[i][c].set || entries[i][c].value.is_zero()) continue;
            if (!common) common = &entries[i][c].monomial;
            else if (*common != entries[i][c].monomial)
                throw Error("eliminate: target coefficients mix parameter monomials");
        }
    }

    // Null vector of the transpose: rows of the solved system are columns of J.
    std::vector<std::vector<Rational>> jt(ncols, std::vector<Rational>(m, Rational(0)));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < ncols; ++c)
            if (entries[i][c].set) jt[c][i] = entries[i][c].value;

    std::vector<Rational> alpha = null_space_vector(std::move(jt), ncols, m);
    if (alpha.empty()) return std::nullopt;
    alpha = to_primitive_integers(std::move(alpha));

    Expression derived(system.ctx);
    for (std::size_t i = 0; i < m; ++i)
        if (!alpha[i].is_zero()) derived = derived + diffed[i] * alpha[i].to_double();

    // Soundness: the combined residual must be free of target derivatives.
    for (const Term& t : derived.terms())
        for (const Factor& f : t.factors)
            if (f.atom.kind == AtomKind::Derivative && targets.count(f.atom.name))
                throw Error("eliminate: internal error, target derivative survived combination");

    // Sign convention: leading canonical term positive.
    if (!derived.terms().empty() && derived.terms()[0].coef < 0) {
        derived = derived * -1.0;
        for (auto& a : alpha) a = -a;
    }

    std::optional<EliminationResult> out;
    out.emplace();
    out->alpha = std::move(alpha);
    out->directions = directions;
    out->derived = std::move(derived);
    return out;
}

}  // namespace overpinn
