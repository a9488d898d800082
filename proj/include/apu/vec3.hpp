// Minimal fixed-size vector/matrix types templated on the scalar, so the
// kinematics and loss code can run on plain doubles or on Dual<N>.

#pragma once

#include "apu/dual.hpp"

#include <cmath>

namespace apu {

template <typename T>
struct Vec3 {
    T x{}, y{}, z{};

    Vec3() = default;
    Vec3(T xx, T yy, T zz) : x(xx), y(yy), z(zz) {}

    // Lift a double-valued vector into the scalar type T.
    template <typename U>
    static Vec3 from(const Vec3<U>& o) { return {T(o.x), T(o.y), T(o.z)}; }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }

    template <typename S>
    Vec3 operator*(const S& s) const { return {x * s, y * s, z * s}; }

    T dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    T squared_norm() const { return dot(*this); }
    T norm() const { using std::sqrt; using apu::sqrt; return sqrt(squared_norm()); }
};

using Vec3d = Vec3<double>;

template <typename T, typename S>
inline Vec3<T> operator*(const S& s, const Vec3<T>& v) { return v * s; }

// Row-major 3x3 matrix.
template <typename T>
struct Mat3 {
    T m[3][3] = {};

    static Mat3 identity() {
        Mat3 r;
        r.m[0][0] = T(1.0); r.m[1][1] = T(1.0); r.m[2][2] = T(1.0);
        return r;
    }

    Vec3<T> operator*(const Vec3<T>& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                r.m[i][j] = m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j] + m[i][2] * o.m[2][j];
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
        return r;
    }
};

using Mat3d = Mat3<double>;

}  // namespace apu
