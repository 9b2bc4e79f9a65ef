#pragma once

// First-order dual number for forward-mode directional derivatives through
// the denoiser network. Only the operations the network actually uses are
// provided.

#include <cmath>

namespace dfm {

struct Dual {
    double v = 0.0;  // value
    double d = 0.0;  // tangent

    Dual() = default;
    Dual(double value) : v(value) {}
    Dual(double value, double tangent) : v(value), d(tangent) {}

    Dual& operator+=(const Dual& o) {
        v += o.v;
        d += o.d;
        return *this;
    }
    Dual& operator-=(const Dual& o) {
        v -= o.v;
        d -= o.d;
        return *this;
    }
    Dual& operator*=(const Dual& o) {
        d = d * o.v + v * o.d;
        v *= o.v;
        return *this;
    }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.d}; }

inline Dual operator/(const Dual& a, const Dual& b) {
    const double inv = 1.0 / b.v;
    return {a.v * inv, (a.d - a.v * b.d * inv) * inv};
}

inline Dual tanh(const Dual& a) {
    const double t = std::tanh(a.v);
    return {t, a.d * (1.0 - t * t)};
}

inline Dual exp(const Dual& a) {
    const double e = std::exp(a.v);
    return {e, a.d * e};
}

inline Dual log(const Dual& a) { return {std::log(a.v), a.d / a.v}; }

}  // namespace dfm
