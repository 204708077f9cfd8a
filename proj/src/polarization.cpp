#include "edl/polarization.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "edl/errors.hpp"

namespace edl {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
const complex kI{0.0, 1.0};
} // namespace

char to_char(Basis b) noexcept { return static_cast<char>(b); }

Basis basis_from_char(char c) {
    switch (c) {
    case 'H': return Basis::H;
    case 'V': return Basis::V;
    case 'D': return Basis::D;
    case 'A': return Basis::A;
    case 'R': return Basis::R;
    case 'L': return Basis::L;
    default: break;
    }
    throw ValidationError(std::string("unknown polarization label '") + c + "'");
}

Basis basis_from_string(std::string_view s) {
    if (s.size() != 1) {
        throw ValidationError("unknown polarization label '" + std::string(s) + "'");
    }
    return basis_from_char(s.front());
}

std::size_t basis_index(Basis b) noexcept {
    switch (b) {
    case Basis::H: return 0;
    case Basis::V: return 1;
    case Basis::D: return 2;
    case Basis::A: return 3;
    case Basis::R: return 4;
    case Basis::L: return 5;
    }
    return 0;
}

Basis antipode(Basis b) noexcept {
    switch (b) {
    case Basis::H: return Basis::V;
    case Basis::V: return Basis::H;
    case Basis::D: return Basis::A;
    case Basis::A: return Basis::D;
    case Basis::R: return Basis::L;
    case Basis::L: return Basis::R;
    }
    return b;
}

bool is_positive(Basis b) noexcept { return b == Basis::H || b == Basis::D || b == Basis::R; }

BasisPair BasisPair::containing(Basis b) noexcept {
    return is_positive(b) ? BasisPair{b, antipode(b)} : BasisPair{antipode(b), b};
}

double BlochVector::norm() const noexcept { return std::sqrt(x * x + y * y + z * z); }

BlochVector bloch_axis(Basis b) noexcept {
    switch (b) {
    case Basis::H: return {1, 0, 0};
    case Basis::V: return {-1, 0, 0};
    case Basis::D: return {0, 1, 0};
    case Basis::A: return {0, -1, 0};
    case Basis::R: return {0, 0, 1};
    case Basis::L: return {0, 0, -1};
    }
    return {};
}

JonesVector::JonesVector(complex h, complex v) : h_(h), v_(v) {
    const double n2 = std::norm(h) + std::norm(v);
    if (!(std::abs(n2 - 1.0) <= kAlgebraTolerance)) {
        throw ValidationError("Jones vector is not normalized (|h|^2+|v|^2 = " +
                              std::to_string(n2) + ")");
    }
}

JonesVector JonesVector::normalized(complex h, complex v) {
    const double n = std::sqrt(std::norm(h) + std::norm(v));
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw ValidationError("cannot normalize a zero or non-finite Jones vector");
    }
    return JonesVector(h / n, v / n);
}

complex JonesVector::inner(const JonesVector& other) const noexcept {
    return std::conj(h_) * other.h_ + std::conj(v_) * other.v_;
}

bool same_ray(const JonesVector& a, const JonesVector& b, double tol) noexcept {
    return std::abs(std::abs(a.inner(b)) - 1.0) <= tol;
}

JonesVector basis_state(Basis b) noexcept {
    // sqrt2|R> = |H> - i|V>, sqrt2|L> = |H> + i|V>, sqrt2|D> = |H> - |V>, sqrt2|A> = |H> + |V>
    switch (b) {
    case Basis::H: return {1.0, 0.0};
    case Basis::V: return {0.0, 1.0};
    case Basis::D: return {kInvSqrt2, -kInvSqrt2};
    case Basis::A: return {kInvSqrt2, kInvSqrt2};
    case Basis::R: return {kInvSqrt2, -kI * kInvSqrt2};
    case Basis::L: return {kInvSqrt2, kI * kInvSqrt2};
    }
    return {1.0, 0.0};
}

BlochVector to_bloch(const JonesVector& state) noexcept {
    const complex c = std::conj(state.h()) * state.v();
    return {std::norm(state.h()) - std::norm(state.v()), -2.0 * c.real(), -2.0 * c.imag()};
}

JonesVector from_bloch(const BlochVector& s) {
    const double n = s.norm();
    if (std::abs(n - 1.0) > 1e-9) {
        throw ValidationError("from_bloch needs a unit Bloch vector");
    }
    const BlochVector u = s * (1.0 / n);
    const double a = std::sqrt(std::max(0.0, (1.0 + u.x) / 2.0));
    if (a < 1e-300) {
        return {0.0, 1.0};
    }
    // conj(a) b = -(y + i z)/2
    const complex b = complex(-u.y, -u.z) / (2.0 * a);
    return JonesVector::normalized(a, b);
}

double projection_probability(const JonesVector& state, Basis analyzer) noexcept {
    return std::norm(basis_state(analyzer).inner(state));
}

double projection_probability(const BlochVector& stokes, Basis analyzer) noexcept {
    return 0.5 * (1.0 + stokes.dot(bloch_axis(analyzer)));
}

double dop(double count_co, double count_cross) {
    const double total = count_co + count_cross;
    if (count_co < 0.0 || count_cross < 0.0) {
        throw ValidationError("negative count");
    }
    if (!(total > 0.0)) {
        throw ValidationError("empty bin");
    }
    return (count_co - count_cross) / total;
}

JonesMatrix retarder_matrix(double retardance, double fast_axis_angle) {
    const double c = std::cos(fast_axis_angle);
    const double s = std::sin(fast_axis_angle);
    JonesMatrix rot;
    rot << c, -s, s, c;
    JonesMatrix phase = JonesMatrix::Zero();
    phase(0, 0) = std::exp(-kI * (retardance / 2.0));
    phase(1, 1) = std::exp(kI * (retardance / 2.0));
    return rot * phase * rot.transpose();
}

JonesVector apply(const JonesMatrix& m, const JonesVector& state) {
    const complex h = m(0, 0) * state.h() + m(0, 1) * state.v();
    const complex v = m(1, 0) * state.h() + m(1, 1) * state.v();
    // Unitary maps keep the norm; renormalize away rounding only.
    return JonesVector::normalized(h, v);
}

JonesVector retarder(const JonesVector& state, double retardance, double fast_axis_angle) {
    return edl::apply(retarder_matrix(retardance, fast_axis_angle), state);
}

} // namespace edl
