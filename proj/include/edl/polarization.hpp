#pragma once

// Polarization and two-level state algebra.
//
// Jones vectors are expressed in the H/V amplitude basis, with H/V taken
// along the fine-structure eigenframe of the dot. The six canonical states
// map onto the Bloch sphere as H/V -> +-X, D/A -> +-Y, R/L -> +-Z, so the
// same BlochVector type describes photon Stokes vectors and spin states.

#include <array>
#include <complex>
#include <string_view>

#include <Eigen/Core>

namespace edl {

using complex = std::complex<double>;

inline constexpr double kAlgebraTolerance = 1e-12;

enum class Basis : char { H = 'H', V = 'V', D = 'D', A = 'A', R = 'R', L = 'L' };

inline constexpr std::array<Basis, 6> kAllBases{Basis::H, Basis::V, Basis::D,
                                                Basis::A, Basis::R, Basis::L};

char to_char(Basis b) noexcept;
Basis basis_from_char(char c);
Basis basis_from_string(std::string_view s);

// Index of the label in kAllBases order (H, V, D, A, R, L).
std::size_t basis_index(Basis b) noexcept;

Basis antipode(Basis b) noexcept;

// True for H, D and R: the member of each pair counted as "co" in a DOP.
bool is_positive(Basis b) noexcept;

// An antipodal detection pair. `co` is always the positive member, so
// dop(count(co), count(cross)) reproduces DOP_X, DOP_Y or DOP_Z directly.
struct BasisPair {
    Basis co;
    Basis cross;

    static BasisPair containing(Basis b) noexcept;
    bool contains(Basis b) const noexcept { return b == co || b == cross; }
};

struct BlochVector {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double dot(const BlochVector& o) const noexcept { return x * o.x + y * o.y + z * o.z; }
    double norm() const noexcept;
    BlochVector operator*(double s) const noexcept { return {x * s, y * s, z * s}; }
    BlochVector operator+(const BlochVector& o) const noexcept { return {x + o.x, y + o.y, z + o.z}; }
    BlochVector operator-(const BlochVector& o) const noexcept { return {x - o.x, y - o.y, z - o.z}; }
};

// Unit Bloch axis of a basis label, e.g. R -> (0, 0, 1).
BlochVector bloch_axis(Basis b) noexcept;

class JonesVector {
public:
    // Throws ValidationError unless |h|^2 + |v|^2 = 1 within kAlgebraTolerance.
    JonesVector(complex h, complex v);

    // Rescales an arbitrary nonzero pair onto the unit sphere.
    static JonesVector normalized(complex h, complex v);

    complex h() const noexcept { return h_; }
    complex v() const noexcept { return v_; }

    // <this|other>
    complex inner(const JonesVector& other) const noexcept;

private:
    complex h_;
    complex v_;
};

// Equality up to global phase: |<a|b>| = 1 within tol.
bool same_ray(const JonesVector& a, const JonesVector& b, double tol = 1e-10) noexcept;

JonesVector basis_state(Basis b) noexcept;

BlochVector to_bloch(const JonesVector& state) noexcept;

// Inverse of to_bloch for unit vectors; the returned representative has a
// real, non-negative H amplitude.
JonesVector from_bloch(const BlochVector& s);

// |<analyzer|state>|^2
double projection_probability(const JonesVector& state, Basis analyzer) noexcept;

// (1 + S.a)/2 for a mixed or pure Stokes vector S.
double projection_probability(const BlochVector& stokes, Basis analyzer) noexcept;

// (co - cross)/(co + cross); throws ValidationError("empty bin") on zero total.
double dop(double count_co, double count_cross);

using JonesMatrix = Eigen::Matrix2cd;

// Linear retarder with the given retardance and fast-axis angle (from H),
// in the symmetric form R(theta) diag(e^{-i d/2}, e^{+i d/2}) R(-theta).
JonesMatrix retarder_matrix(double retardance, double fast_axis_angle);

JonesVector apply(const JonesMatrix& m, const JonesVector& state);

JonesVector retarder(const JonesVector& state, double retardance, double fast_axis_angle);

} // namespace edl
