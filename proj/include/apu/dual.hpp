// Forward-mode automatic differentiation scalar.
//
// Dual<N> carries a value and its derivative w.r.t. N independent inputs.
// Numeric code templated on the scalar type runs unchanged with double
// (values only) or Dual<N> (values + exact gradients).

#pragma once

#include <Eigen/Core>

#include <cmath>

namespace apu {

template <int N>
struct Dual {
    using Grad = Eigen::Matrix<double, N, 1>;

    double v = 0.0;
    Grad d = Grad::Zero();

    Dual() = default;
    Dual(double value) : v(value) {}
    Dual(double value, const Grad& deriv) : v(value), d(deriv) {}

    // Independent variable: derivative 1 in slot i.
    static Dual seed(double value, int i) {
        Dual x(value);
        x.d[i] = 1.0;
        return x;
    }

    Dual operator-() const { return Dual(-v, -d); }

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(const Dual& o) { d = d * o.v + o.d * v; v *= o.v; return *this; }
    Dual& operator+=(double s) { v += s; return *this; }
    Dual& operator-=(double s) { v -= s; return *this; }
    Dual& operator*=(double s) { v *= s; d *= s; return *this; }
    Dual& operator/=(double s) { v /= s; d /= s; return *this; }
};

template <int N> inline Dual<N> operator+(const Dual<N>& a, const Dual<N>& b) { return {a.v + b.v, a.d + b.d}; }
template <int N> inline Dual<N> operator-(const Dual<N>& a, const Dual<N>& b) { return {a.v - b.v, a.d - b.d}; }
template <int N> inline Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) { return {a.v * b.v, a.d * b.v + b.d * a.v}; }
template <int N> inline Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
    const double inv = 1.0 / b.v;
    return {a.v * inv, (a.d - b.d * (a.v * inv)) * inv};
}

template <int N> inline Dual<N> operator+(const Dual<N>& a, double s) { return {a.v + s, a.d}; }
template <int N> inline Dual<N> operator+(double s, const Dual<N>& a) { return {a.v + s, a.d}; }
template <int N> inline Dual<N> operator-(const Dual<N>& a, double s) { return {a.v - s, a.d}; }
template <int N> inline Dual<N> operator-(double s, const Dual<N>& a) { return {s - a.v, -a.d}; }
template <int N> inline Dual<N> operator*(const Dual<N>& a, double s) { return {a.v * s, a.d * s}; }
template <int N> inline Dual<N> operator*(double s, const Dual<N>& a) { return {a.v * s, a.d * s}; }
template <int N> inline Dual<N> operator/(const Dual<N>& a, double s) { return {a.v / s, a.d / s}; }
template <int N> inline Dual<N> operator/(double s, const Dual<N>& a) {
    const double inv = 1.0 / a.v;
    return {s * inv, a.d * (-s * inv * inv)};
}

template <int N> inline bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N> inline bool operator>(const Dual<N>& a, const Dual<N>& b) { return a.v > b.v; }
template <int N> inline bool operator<(const Dual<N>& a, double b) { return a.v < b; }
template <int N> inline bool operator>(const Dual<N>& a, double b) { return a.v > b; }
template <int N> inline bool operator<(double a, const Dual<N>& b) { return a < b.v; }
template <int N> inline bool operator>(double a, const Dual<N>& b) { return a > b.v; }
template <int N> inline bool operator<=(const Dual<N>& a, const Dual<N>& b) { return a.v <= b.v; }
template <int N> inline bool operator>=(const Dual<N>& a, const Dual<N>& b) { return a.v >= b.v; }
template <int N> inline bool operator<=(const Dual<N>& a, double b) { return a.v <= b; }
template <int N> inline bool operator>=(const Dual<N>& a, double b) { return a.v >= b; }
template <int N> inline bool operator<=(double a, const Dual<N>& b) { return a <= b.v; }
template <int N> inline bool operator>=(double a, const Dual<N>& b) { return a >= b.v; }
template <int N> inline bool operator==(const Dual<N>& a, const Dual<N>& b) { return a.v == b.v; }
template <int N> inline bool operator==(const Dual<N>& a, double b) { return a.v == b; }
template <int N> inline bool operator!=(const Dual<N>& a, const Dual<N>& b) { return a.v != b.v; }

template <int N> inline Dual<N> sqrt(const Dual<N>& a) {
    const double s = std::sqrt(a.v);
    return {s, a.d * (0.5 / s)};
}
template <int N> inline Dual<N> exp(const Dual<N>& a) {
    const double e = std::exp(a.v);
    return {e, a.d * e};
}
template <int N> inline Dual<N> log(const Dual<N>& a) { return {std::log(a.v), a.d / a.v}; }
template <int N> inline Dual<N> sin(const Dual<N>& a) { return {std::sin(a.v), a.d * std::cos(a.v)}; }
template <int N> inline Dual<N> cos(const Dual<N>& a) { return {std::cos(a.v), a.d * (-std::sin(a.v))}; }
template <int N> inline Dual<N> abs(const Dual<N>& a) { return a.v < 0.0 ? -a : a; }

template <int N> inline Dual<N> min(const Dual<N>& a, const Dual<N>& b) { return a.v <= b.v ? a : b; }
template <int N> inline Dual<N> max(const Dual<N>& a, const Dual<N>& b) { return a.v >= b.v ? a : b; }

// value_of lets branch decisions and diagnostics work in generic code.
inline double value_of(double x) { return x; }
template <int N> inline double value_of(const Dual<N>& x) { return x.v; }

// Clamp to [0, 1]; generic over plain doubles and duals (clamped ends have
// zero derivative, matching the one-sided limit from inside the interval).
template <typename T> inline T clamp01(const T& x) {
    if (value_of(x) < 0.0) return T(0.0);
    if (value_of(x) > 1.0) return T(1.0);
    return x;
}

using std::abs;
using std::cos;
using std::exp;
using std::log;
using std::max;
using std::min;
using std::sin;
using std::sqrt;

}  // namespace apu
