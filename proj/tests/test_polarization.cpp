#include <doctest.h>

#include <cmath>
#include <random>

#include "edl/errors.hpp"
#include "edl/polarization.hpp"

using namespace edl;

namespace {

const double kS = 1.0 / std::sqrt(2.0);
const complex kI{0.0, 1.0};

JonesVector random_state(std::mt19937_64& gen) {
    std::normal_distribution<double> n;
    return JonesVector::normalized({n(gen), n(gen)}, {n(gen), n(gen)});
}

// Pauli expectations computed directly from the amplitudes, written out
// independently of to_bloch: <s_x> = |h|^2-|v|^2 and the D/A, R/L contrasts.
BlochVector expectation_oracle(const JonesVector& s) {
    auto p = [&](complex ah, complex av) { return std::norm(std::conj(ah) * s.h() + std::conj(av) * s.v()); };
    const double ph = p(1.0, 0.0), pv = p(0.0, 1.0);
    const double pd = p(kS, -kS), pa = p(kS, kS);
    const double pr = p(kS, -kI * kS), pl = p(kS, kI * kS);
    return {ph - pv, pd - pa, pr - pl};
}

} // namespace

TEST_CASE("basis states match their H/V definitions") {
    const JonesVector h = basis_state(Basis::H);
    CHECK(h.h() == complex(1.0, 0.0));
    CHECK(h.v() == complex(0.0, 0.0));

    const JonesVector r = basis_state(Basis::R);
    CHECK(std::abs(r.h() - complex(kS, 0.0)) < 1e-15);
    CHECK(std::abs(r.v() - complex(0.0, -kS)) < 1e-15);

    const JonesVector a = basis_state(Basis::A);
    CHECK(std::abs(a.h() - complex(kS, 0.0)) < 1e-15);
    CHECK(std::abs(a.v() - complex(kS, 0.0)) < 1e-15);
}

TEST_CASE("labels form three antipodal pairs") {
    for (Basis b : kAllBases) {
        const Basis c = antipode(b);
        CHECK(c != b);
        CHECK(antipode(c) == b);
        CHECK(std::abs(basis_state(b).inner(basis_state(c))) < kAlgebraTolerance);
        CHECK(bloch_axis(b).dot(bloch_axis(c)) == doctest::Approx(-1.0));
        CHECK(is_positive(b) != is_positive(c));
        CHECK(basis_from_char(to_char(b)) == b);
    }
    CHECK(bloch_axis(Basis::H).x == 1.0);
    CHECK(bloch_axis(Basis::D).y == 1.0);
    CHECK(bloch_axis(Basis::R).z == 1.0);
    CHECK_THROWS_AS(basis_from_char('Q'), ValidationError);
    CHECK_THROWS_AS(basis_from_string("HV"), ValidationError);
}

TEST_CASE("circular and diagonal forms agree up to global phase") {
    // sqrt2 |H> = |R> + |L>, -sqrt2 i |V> = |R> - |L>,
    // sqrt2 |D> = e^{-i pi/4}(|R> + i|L>), sqrt2 |A> = e^{i pi/4}(|R> - i|L>).
    const JonesVector r = basis_state(Basis::R);
    const JonesVector l = basis_state(Basis::L);
    auto combine = [&](complex cr, complex cl) {
        return JonesVector::normalized(cr * r.h() + cl * l.h(), cr * r.v() + cl * l.v());
    };
    const complex p = std::exp(-kI * (M_PI / 4));
    const JonesVector d = combine(p, p * kI);
    const JonesVector a = combine(std::conj(p), -std::conj(p) * kI);
    CHECK(same_ray(combine(1.0, 1.0), basis_state(Basis::H)));
    CHECK(same_ray(combine(kI, -kI), basis_state(Basis::V)));
    CHECK(same_ray(d, basis_state(Basis::D)));
    CHECK(same_ray(a, basis_state(Basis::A)));
}

TEST_CASE("to_bloch maps eigenstates to poles") {
    const BlochVector h = to_bloch(basis_state(Basis::H));
    CHECK(h.x == doctest::Approx(1.0));
    CHECK(std::abs(h.y) < 1e-15);
    const BlochVector r = to_bloch(basis_state(Basis::R));
    CHECK(r.z == doctest::Approx(1.0));
    CHECK(std::abs(r.x) < 1e-15);
    CHECK(std::abs(r.y) < 1e-15);
    for (Basis b : kAllBases) {
        const BlochVector s = to_bloch(basis_state(b));
        const BlochVector a = bloch_axis(b);
        CHECK((s - a).norm() < kAlgebraTolerance);
    }
}

TEST_CASE("random unit states map to unit Bloch vectors matching the oracle") {
    std::mt19937_64 gen(7);
    for (int i = 0; i < 2000; ++i) {
        const JonesVector s = random_state(gen);
        const BlochVector b = to_bloch(s);
        CHECK(std::abs(b.norm() - 1.0) < kAlgebraTolerance);
        CHECK((b - expectation_oracle(s)).norm() < kAlgebraTolerance);
    }
}

TEST_CASE("state to Bloch to state preserves every projection") {
    std::mt19937_64 gen(11);
    for (int i = 0; i < 1000; ++i) {
        const JonesVector s = random_state(gen);
        const JonesVector back = from_bloch(to_bloch(s));
        CHECK(same_ray(s, back, 1e-12));
        CHECK(back.h().imag() == 0.0);
        CHECK(back.h().real() >= 0.0);
        for (Basis b : kAllBases) {
            CHECK(std::abs(projection_probability(s, b) - projection_probability(back, b)) < 1e-12);
        }
    }
}

TEST_CASE("unnormalized input is rejected") {
    CHECK_THROWS_AS(JonesVector(complex(1.0, 0.0), complex(1.0, 0.0)), ValidationError);
    CHECK_THROWS_AS(JonesVector::normalized(0.0, 0.0), ValidationError);
    CHECK_THROWS_AS(from_bloch(BlochVector{0.5, 0.0, 0.0}), ValidationError);
    CHECK_NOTHROW(JonesVector(complex(kS, 0.0), complex(0.0, kS)));
}

TEST_CASE("projection probabilities") {
    CHECK(projection_probability(basis_state(Basis::R), Basis::H) == doctest::Approx(0.5));
    CHECK(projection_probability(basis_state(Basis::H), Basis::V) == doctest::Approx(0.0));
    // |-Y> is the A state.
    CHECK(projection_probability(from_bloch({0.0, -1.0, 0.0}), Basis::A) == doctest::Approx(1.0));

    std::mt19937_64 gen(3);
    for (int i = 0; i < 500; ++i) {
        const JonesVector s = random_state(gen);
        const BlochVector st = to_bloch(s);
        for (Basis b : kAllBases) {
            const double p = projection_probability(s, b);
            CHECK(std::abs(p + projection_probability(s, antipode(b)) - 1.0) < 1e-12);
            CHECK(std::abs(p - 0.5 * (1.0 + st.dot(bloch_axis(b)))) < 1e-12);
            CHECK(std::abs(p - projection_probability(st, b)) < 1e-12);
        }
    }
}

TEST_CASE("dop") {
    CHECK(edl::dop(100, 0) == 1.0);
    CHECK(edl::dop(50, 50) == 0.0);
    CHECK(edl::dop(83, 17) == doctest::Approx(0.66));
    CHECK(edl::dop(0, 12) == -1.0);
    CHECK_THROWS_WITH_AS(edl::dop(0, 0), "empty bin", ValidationError);
}

TEST_CASE("retarders") {
    const JonesVector h = basis_state(Basis::H);
    for (double angle : {0.0, 0.3, 1.7}) {
        CHECK(same_ray(retarder(h, 0.0, angle), h));
    }
    // Quarter-wave plate at 45 degrees, multiplied out by hand:
    // (1/sqrt2) [[1, -i], [-i, 1]] (H) = (1, -i)/sqrt2 = R.
    const JonesMatrix q = retarder_matrix(M_PI / 2, M_PI / 4);
    CHECK(std::abs(q(0, 0) - complex(kS, 0.0)) < 1e-15);
    CHECK(std::abs(q(0, 1) - complex(0.0, -kS)) < 1e-15);
    CHECK(std::abs(q(1, 0) - complex(0.0, -kS)) < 1e-15);
    CHECK(std::abs(q(1, 1) - complex(kS, 0.0)) < 1e-15);
    CHECK(same_ray(retarder(h, M_PI / 2, M_PI / 4), basis_state(Basis::R)));

    // Half-wave plate at 0: diag(-i, i) flips the R/L handedness.
    CHECK(same_ray(retarder(basis_state(Basis::R), M_PI, 0.0), basis_state(Basis::L)));
    CHECK(same_ray(retarder(h, M_PI, M_PI / 4), basis_state(Basis::V)));

    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(-M_PI, M_PI);
    for (int i = 0; i < 200; ++i) {
        const double d = u(gen), th = u(gen);
        const JonesMatrix m = retarder_matrix(d, th);
        CHECK((m.adjoint() * m - JonesMatrix::Identity()).norm() < 1e-12);
        const JonesMatrix q1 = retarder_matrix(M_PI / 2, th);
        CHECK((q1 * q1 - retarder_matrix(M_PI, th)).norm() < 1e-12);
        const JonesVector s = random_state(gen);
        const JonesVector out = retarder(s, d, th);
        CHECK(std::abs(std::norm(out.h()) + std::norm(out.v()) - 1.0) < 1e-12);
    }
}
