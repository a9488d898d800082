// Axis-angle rotations. The rotation vector encodes axis * angle; the
// exponential map below stays finite and smooth through the origin via a
// series fallback, which matters when differentiating near theta = 0.

#pragma once

#include "apu/vec3.hpp"

#include <cmath>
#include <numbers>

namespace apu {

// Rodrigues' formula: R = I + A [w]x + B [w]x^2 with A = sin t / t,
// B = (1 - cos t) / t^2, t = |w|.
template <typename T>
Mat3<T> rodrigues(const Vec3<T>& w) {
    using std::sqrt; using apu::sqrt;
    using std::sin; using apu::sin;
    using std::cos; using apu::cos;

    const T t2 = w.squared_norm();
    T a, b;
    if (value_of(t2) < 1e-12) {
        // Series in t^2; keeps derivatives exact at the origin.
        a = 1.0 - t2 * (1.0 / 6.0);
        b = 0.5 - t2 * (1.0 / 24.0);
    } else {
        const T t = sqrt(t2);
        a = sin(t) / t;
        b = (1.0 - cos(t)) / t2;
    }

    Mat3<T> r = Mat3<T>::identity();
    const T &x = w.x, &y = w.y, &z = w.z;

    r.m[0][0] = r.m[0][0] + b * (-(y * y) - z * z);
    r.m[0][1] = -(a * z) + b * (x * y);
    r.m[0][2] = a * y + b * (x * z);
    r.m[1][0] = a * z + b * (x * y);
    r.m[1][1] = r.m[1][1] + b * (-(x * x) - z * z);
    r.m[1][2] = -(a * x) + b * (y * z);
    r.m[2][0] = -(a * y) + b * (x * z);
    r.m[2][1] = a * x + b * (y * z);
    r.m[2][2] = r.m[2][2] + b * (-(x * x) - y * y);
    return r;
}

// Wrap to the equivalent rotation with angle in [0, pi]; always < 2*pi.
inline Vec3d canonicalize_axis_angle(const Vec3d& w) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double t = std::sqrt(w.squared_norm());
    if (t < 1e-12) return w;
    double wrapped = std::fmod(t, two_pi);
    if (wrapped > std::numbers::pi) wrapped -= two_pi;  // negative angle flips axis
    return w * (wrapped / t);
}

}  // namespace apu
