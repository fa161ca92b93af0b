#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>
#include <cmath>

namespace overpinn {

/// Exact rational over 64-bit integers. Throws on overflow instead of
/// silently wrapping; the elimination matrices this backs hold small
/// entries, so an overflow means the input is outside the supported class.
class Rational {
public:
    Rational() = default;
    Rational(std::int64_t n) : num_(n), den_(1) {}
    Rational(std::int64_t n, std::int64_t d) : num_(n), den_(d) {
        if (den_ == 0) throw std::domain_error("rational: zero denominator");
        normalize();
    }

    /// Exact conversion; doubles are dyadic rationals. Fails if the
    /// denominator power of two exceeds the 64-bit range.
    static Rational from_double(double x) {
        if (!std::isfinite(x)) throw std::domain_error("rational: non-finite value");
        if (x == 0.0) return Rational(0);
        int e = 0;
        double m = std::frexp(x, &e);  // x = m * 2^e, |m| in [0.5, 1)
        // Scale mantissa to an integer (53 bits suffice).
        std::int64_t mi = static_cast<std::int64_t>(std::ldexp(m, 53));
        e -= 53;
        while (mi != 0 && (mi % 2) == 0) { mi /= 2; ++e; }
        if (e >= 0) {
            if (e > 62) throw std::domain_error("rational: double exponent too large");
            return Rational(checked_mul(mi, std::int64_t(1) << e), 1);
        }
        if (-e > 62) throw std::domain_error("rational: double not exactly representable in 64 bits");
        return Rational(mi, std::int64_t(1) << (-e));
    }

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }
    bool is_zero() const { return num_ == 0; }
    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

    Rational operator-() const { return Rational(-num_, den_); }

    friend Rational operator+(const Rational& a, const Rational& b) {
        __int128 n = (__int128)a.num_ * b.den_ + (__int128)b.num_ * a.den_;
        __int128 d = (__int128)a.den_ * b.den_;
        return make_checked(n, d);
    }
    friend Rational operator-(const Rational& a, const Rational& b) { return a + (-b); }
    friend Rational operator*(const Rational& a, const Rational& b) {
        return make_checked((__int128)a.num_ * b.num_, (__int128)a.den_ * b.den_);
    }
    friend Rational operator/(const Rational& a, const Rational& b) {
        if (b.num_ == 0) throw std::domain_error("rational: division by zero");
        return make_checked((__int128)a.num_ * b.den_, (__int128)a.den_ * b.num_);
    }
    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num_ == b.num_ && a.den_ == b.den_;
    }
    friend bool operator!=(const Rational& a, const Rational& b) { return !(a == b); }

    std::string str() const {
        if (den_ == 1) return std::to_string(num_);
        return std::to_string(num_) + "/" + std::to_string(den_);
    }

private:
    static std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
        __int128 r = (__int128)a * b;
        return narrow(r);
    }
    static std::int64_t narrow(__int128 v) {
        if (v > INT64_MAX || v < INT64_MIN) throw std::overflow_error("rational: 64-bit overflow");
        return static_cast<std::int64_t>(v);
    }
    static Rational make_checked(__int128 n, __int128 d) {
        if (d == 0) throw std::domain_error("rational: zero denominator");
        if (d < 0) { n = -n; d = -d; }
        __int128 g = gcd128(n < 0 ? -n : n, d);
        if (g > 1) { n /= g; d /= g; }
        Rational r;
        r.num_ = narrow(n);
        r.den_ = narrow(d);
        return r;
    }
    static __int128 gcd128(__int128 a, __int128 b) {
        while (b != 0) { __int128 t = a % b; a = b; b = t; }
        return a == 0 ? 1 : a;
    }
    void normalize() {
        if (den_ < 0) { num_ = -num_; den_ = -den_; }
        std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
        if (g > 1) { num_ /= g; den_ /= g; }
    }

    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

/// One basis vector of the null space of a rational matrix, or empty if the
/// matrix has full column rank. Deterministic: Gaussian elimination with
/// first-nonzero pivoting, first free column set to 1.
inline std::vector<Rational> null_space_vector(std::vector<std::vector<Rational>> m,
                                               std::size_t rows, std::size_t cols) {
    std::vector<std::size_t> pivot_col_of_row;
    std::size_t r = 0;
    std::vector<bool> is_pivot(cols, false);
    for (std::size_t c = 0; c < cols && r < rows; ++c) {
        std::size_t pr = r;
        while (pr < rows && m[pr][c].is_zero()) ++pr;
        if (pr == rows) continue;
        std::swap(m[pr], m[r]);
        Rational inv = Rational(1) / m[r][c];
        for (std::size_t j = c; j < cols; ++j) m[r][j] = m[r][j] * inv;
        for (std::size_t i = 0; i < rows; ++i) {
            if (i == r || m[i][c].is_zero()) continue;
            Rational f = m[i][c];
            for (std::size_t j = c; j < cols; ++j) m[i][j] = m[i][j] - f * m[r][j];
        }
        pivot_col_of_row.push_back(c);
        is_pivot[c] = true;
        ++r;
    }
    std::size_t free_col = cols;
    for (std::size_t c = 0; c < cols; ++c) {
        if (!is_pivot[c]) { free_col = c; break; }
    }
    if (free_col == cols) return {};
    std::vector<Rational> x(cols, Rational(0));
    x[free_col] = Rational(1);
    for (std::size_t i = 0; i < pivot_col_of_row.size(); ++i) {
        std::size_t pc = pivot_col_of_row[i];
        Rational s(0);
        for (std::size_t j = pc + 1; j < cols; ++j)
            if (!x[j].is_zero()) s = s + m[i][j] * x[j];
        x[pc] = -s;
    }
    return x;
}

/// Scale a rational vector to a primitive integer vector (gcd of numerators 1).
inline std::vector<Rational> to_primitive_integers(std::vector<Rational> v) {
    std::int64_t den_lcm = 1;
    for (const auto& q : v) {
        std::int64_t g = std::gcd(den_lcm, q.den());
        den_lcm = den_lcm / g * q.den();
    }
    std::int64_t num_gcd = 0;
    for (auto& q : v) {
        q = q * Rational(den_lcm);
        num_gcd = std::gcd(num_gcd, q.num());
    }
    if (num_gcd > 1)
        for (auto& q : v) q = q / Rational(num_gcd);
    return v;
}

}  // namespace overpinn
