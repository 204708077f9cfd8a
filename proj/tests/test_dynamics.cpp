#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Core>

#include "edl/dynamics.hpp"
#include "edl/errors.hpp"

using namespace edl;

namespace {

const complex kI{0.0, 1.0};

// exp(-i H t / hbar) for H = diag(E/2, -E/2), computed by scaling and
// squaring a Taylor series of the full 2x2 matrix rather than using the
// diagonal shortcut.
Eigen::Matrix2cd propagator_oracle(double e_uev, double t_ps) {
    const double phase = 0.5 * e_uev * t_ps / 658.2119569;
    int squarings = 0;
    while (std::ldexp(std::abs(phase), -squarings) > 0.1) {
        ++squarings;
    }
    const double scaled = std::ldexp(phase, -squarings);
    Eigen::Matrix2cd a;
    a << complex(0.0, -scaled), 0.0, 0.0, complex(0.0, scaled);
    Eigen::Matrix2cd term = Eigen::Matrix2cd::Identity();
    Eigen::Matrix2cd sum = term;
    for (int k = 1; k < 30; ++k) {
        term = term * a / static_cast<double>(k);
        sum += term;
    }
    for (int k = 0; k < squarings; ++k) {
        sum = sum * sum;
    }
    return sum;
}

JonesVector oracle_evolve(const JonesVector& s, double e_uev, double t_ps) {
    const Eigen::Vector2cd out = propagator_oracle(e_uev, t_ps) * Eigen::Vector2cd(s.h(), s.v());
    return JonesVector::normalized(out(0), out(1));
}

JonesVector minus_y() { return basis_state(Basis::A); }

double dop_from_probs(const std::array<double, 6>& p, Basis co) {
    const Basis cross = antipode(co);
    return (p[basis_index(co)] - p[basis_index(cross)]) / (p[basis_index(co)] + p[basis_index(cross)]);
}

// Photon analyzer probabilities after tracing out the electron, summed over
// the electron basis by hand.
double traced_probability(const JointState& s, Basis b) {
    const JonesVector r = basis_state(Basis::R), l = basis_state(Basis::L), p = basis_state(b);
    auto amp = [&](complex ar, complex al) {
        const complex h = ar * r.h() + al * l.h();
        const complex v = ar * r.v() + al * l.v();
        return std::norm(std::conj(p.h()) * h + std::conj(p.v()) * v);
    };
    return amp(s.up_r, s.up_l) + amp(s.down_r, s.down_l);
}

TrionParams trion_at(double b_t) {
    TrionParams p;
    p.b_field_t = b_t;
    return p;
}

} // namespace

TEST_CASE("constants") {
    CHECK(constants::h_uev_ps == doctest::Approx(2.0 * constants::pi * constants::hbar_uev_ps).epsilon(1e-9));
}

TEST_CASE("exciton evolution") {
    std::mt19937_64 gen(1);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> ut(0.0, 3000.0), ue(0.0, 60.0);
    for (int i = 0; i < 300; ++i) {
        const JonesVector s = JonesVector::normalized({n(gen), n(gen)}, {n(gen), n(gen)});
        CHECK(same_ray(evolve_exciton(s, {0.0}, ut(gen)), s));
        const double e = ue(gen), t = ut(gen);
        const JonesVector out = evolve_exciton(s, {e}, t);
        CHECK(same_ray(out, oracle_evolve(s, e, t), 1e-10));
        // Rotation about the eigenaxis keeps the x projection.
        CHECK(to_bloch(out).x == doctest::Approx(to_bloch(s).x).epsilon(1e-12));
        // Right-handed rotation about +x by E t / hbar.
        const BlochVector expect = rotate(to_bloch(s), {1, 0, 0}, e * t / constants::hbar_uev_ps);
        CHECK((to_bloch(out) - expect).norm() < 1e-10);
    }

    const ExcitonParams x0{36.17};
    const double period = splitting_to_period(36.17);
    CHECK(same_ray(evolve_exciton(minus_y(), x0, period), minus_y(), 1e-12));
    const BlochVector quarter = to_bloch(evolve_exciton(minus_y(), x0, period / 4));
    CHECK(std::abs(std::abs(quarter.z) - 1.0) < 1e-12);
    CHECK(same_ray(oracle_evolve(minus_y(), 36.17, period / 4), evolve_exciton(minus_y(), x0, period / 4), 1e-10));
}

TEST_CASE("exciton projection probabilities") {
    const auto p0 = exciton_projection_probs(minus_y());
    const std::array<double, 6> want0{0.5, 0.5, 0.0, 1.0, 0.5, 0.5};
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(p0[i] == doctest::Approx(want0[i]).epsilon(1e-12));
    }
    const auto pz = exciton_projection_probs(basis_state(Basis::R));
    const std::array<double, 6> wantz{0.5, 0.5, 0.5, 0.5, 1.0, 0.0};
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(std::abs(pz[i] - wantz[i]) < 1e-12);
    }
    // 2 w t = pi / 2: (1 - sin)/2 on R.
    const ExcitonParams x0{36.17};
    const double t = splitting_to_period(36.17) / 4;
    const auto pq = exciton_projection_probs(evolve_exciton(minus_y(), x0, t));
    CHECK(std::abs(pq[basis_index(Basis::R)]) < 1e-12);
    CHECK(pq[basis_index(Basis::L)] == doctest::Approx(1.0));

    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> ut(0.0, 2000.0);
    for (int i = 0; i < 200; ++i) {
        const double time = ut(gen);
        const double wt2 = 36.17 * time / constants::hbar_uev_ps;
        const auto p = exciton_projection_probs(evolve_exciton(minus_y(), x0, time));
        CHECK(p[basis_index(Basis::H)] == doctest::Approx(0.5));
        CHECK(p[basis_index(Basis::D)] == doctest::Approx((1.0 - std::cos(wt2)) / 2));
        CHECK(p[basis_index(Basis::A)] == doctest::Approx((1.0 + std::cos(wt2)) / 2));
        CHECK(p[basis_index(Basis::R)] == doctest::Approx((1.0 - std::sin(wt2)) / 2));
    }
}

TEST_CASE("analytic exciton DOP equals the DOP of evolved projections") {
    const DopTriple d0 = exciton_dop_analytic({36.17}, 0.0);
    CHECK(d0.dop_x == 0.0);
    CHECK(d0.dop_y == doctest::Approx(-1.0));
    CHECK(d0.dop_z == doctest::Approx(0.0));
    const DopTriple half = exciton_dop_analytic({36.17}, splitting_to_period(36.17) / 2);
    CHECK(half.dop_y == doctest::Approx(1.0));
    CHECK(std::abs(half.dop_z) < 1e-12);
    const DopTriple frozen = exciton_dop_analytic({0.0, 1015.0, 1.0}, 777.0);
    CHECK(frozen.dop_y == -1.0);
    CHECK(frozen.dop_z == 0.0);

    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> ut(0.0, 5000.0), ue(0.0, 80.0);
    for (int i = 0; i < 1000; ++i) {
        const ExcitonParams p{ue(gen)};
        const double t = ut(gen);
        const auto probs = exciton_projection_probs(evolve_exciton(minus_y(), p, t));
        const DopTriple a = exciton_dop_analytic(p, t);
        CHECK(std::abs(a.dop_x - dop_from_probs(probs, Basis::H)) < 1e-10);
        CHECK(std::abs(a.dop_y - dop_from_probs(probs, Basis::D)) < 1e-10);
        CHECK(std::abs(a.dop_z - dop_from_probs(probs, Basis::R)) < 1e-10);
    }

    const ExcitonParams damped{36.17, 1015.0, 2.0};
    const double t = 1234.0;
    const DopTriple und = exciton_dop_analytic({36.17}, t);
    const DopTriple dd = exciton_dop_analytic(damped, t);
    CHECK(dd.dop_y == doctest::Approx(und.dop_y * std::exp(-t / 2000.0)));
}

TEST_CASE("trion joint state") {
    const TrionParams p = trion_at(0.2);
    const JointState s0 = trion_joint_state(p, 0.0);
    CHECK(std::abs(s0.up_r - complex(0.5, 0.5)) < 1e-15);
    CHECK(std::abs(s0.down_l - complex(0.5, -0.5)) < 1e-15);
    CHECK(std::abs(s0.up_l) == 0.0);
    CHECK(std::abs(s0.down_r) == 0.0);

    // w t = pi/4 with w = delta / 2 hbar.
    const double t = constants::pi / 4 * 2.0 * constants::hbar_uev_ps / p.hole_splitting_uev();
    const JointState sq = trion_joint_state(p, t);
    CHECK(std::abs(sq.up_r) < 1e-12);
    CHECK(std::abs(sq.down_l) == doctest::Approx(1.0));

    for (double time = 0.0; time < 5000.0; time += 37.0) {
        const JointState s = trion_joint_state(p, time);
        CHECK(s.norm_squared() == doctest::Approx(1.0).epsilon(1e-14));
        const double z = -std::sin(p.hole_splitting_uev() * time / constants::hbar_uev_ps);
        const BlochVector st = photon_stokes(s);
        CHECK(std::abs(st.x) < 1e-10);
        CHECK(std::abs(st.y) < 1e-10);
        CHECK(std::abs(st.z - z) < 1e-10);
        for (Basis b : kAllBases) {
            CHECK(std::abs(projection_probability(st, b) - traced_probability(s, b)) < 1e-10);
        }
        const DopTriple d = dop_from_joint_state(s);
        const DopTriple a = trion_dop_analytic(p, time);
        CHECK(a.dop_x == 0.0);
        CHECK(a.dop_y == 0.0);
        CHECK(std::abs(a.dop_z - d.dop_z) < 1e-10);
    }

    const TrionParams q = trion_at(0.2);
    const double tq = constants::pi / 2 * constants::hbar_uev_ps / q.hole_splitting_uev();
    CHECK(trion_dop_analytic(q, tq).dop_z == doctest::Approx(-1.0));
    CHECK(trion_dop_analytic(trion_at(0.0), 500.0).dop_z == 0.0);

    TrionParams damped = trion_at(0.2);
    damped.t2_star_hole_ns = 8.6;
    CHECK(trion_dop_analytic(damped, 3000.0).dop_z ==
          doctest::Approx(trion_dop_analytic(q, 3000.0).dop_z * std::exp(-3000.0 / 8600.0)));
}

TEST_CASE("zeeman splitting and frequencies") {
    const double de = zeeman_splitting(2.876, 0.04);
    CHECK(de == doctest::Approx(6.66).epsilon(0.001));
    CHECK(splitting_to_frequency_ghz(de) == doctest::Approx(1.61).epsilon(0.002));
    CHECK(zeeman_splitting(1.3, 0.0) == 0.0);
    const double dh = zeeman_splitting(0.593, 0.2);
    CHECK(dh == doctest::Approx(6.87).epsilon(0.001));
    CHECK(splitting_to_period(dh) == doctest::Approx(602.0).epsilon(0.002));
    CHECK_THROWS_AS(zeeman_splitting(1.0, -0.1), ValidationError);

    // Linear in B with slope g mu_B / h.
    for (double b : {0.01, 0.05, 0.2}) {
        CHECK(splitting_to_frequency_ghz(zeeman_splitting(0.593, b)) ==
              doctest::Approx(0.593 * 57.88381806 / 4135.667696 * 1e3 * b).epsilon(1e-12));
    }
    CHECK(frequency_ghz_to_splitting(splitting_to_frequency_ghz(12.3)) == doctest::Approx(12.3).epsilon(1e-14));
}

TEST_CASE("period and splitting") {
    CHECK(std::abs(splitting_to_period(36.17) - 114.3) < 0.1);
    CHECK(splitting_to_period(36.8) == doctest::Approx(112.4).epsilon(0.0005));
    CHECK(splitting_to_period(72.34) == doctest::Approx(splitting_to_period(36.17) / 2).epsilon(1e-14));
    for (double e : {0.01, 1.0, 36.17, 500.0}) {
        CHECK(std::abs(period_to_splitting(splitting_to_period(e)) / e - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(splitting_to_period(0.0), ValidationError);
    CHECK_THROWS_AS(splitting_to_period(-1.0), ValidationError);
    CHECK_THROWS_AS(period_to_splitting(0.0), ValidationError);
}

TEST_CASE("dephasing") {
    const BlochVector x{1, 0, 0};
    const BlochVector s{0.3, -0.4, 0.5};
    const BlochVector same = dephase(s, x, 8.6, 0.0);
    CHECK((same - s).norm() == 0.0);
    const BlochVector z = dephase({0, 0, 1}, x, 8.6, 8600.0);
    CHECK(z.x == 0.0);
    CHECK(z.y == 0.0);
    CHECK(z.z == doctest::Approx(std::exp(-1.0)));
    CHECK((dephase(x, x, 1.0, 12345.0) - x).norm() == 0.0);
    CHECK((dephase(s, x, kInfinity, 1e6) - s).norm() == 0.0);

    // Precession about x composes: two half steps equal one step.
    const BlochVector a = precess_about_x(precess_about_x(s, 6.87, 8.6, 150.0), 6.87, 8.6, 150.0);
    const BlochVector b = precess_about_x(s, 6.87, 8.6, 300.0);
    CHECK((a - b).norm() < 1e-12);
    const BlochVector r = rotate(s, x, 6.87 * 300.0 / constants::hbar_uev_ps);
    CHECK((dephase(r, x, 8.6, 300.0) - b).norm() < 1e-12);
    CHECK((precess_about_x(s, 0.0, 1.0, 1e5) - s).norm() == 0.0);
}

TEST_CASE("parameter validation") {
    CHECK_THROWS_AS((ExcitonParams{-1.0}).validate(), ValidationError);
    CHECK_THROWS_AS((ExcitonParams{1.0, 0.0}).validate(), ValidationError);
    CHECK_THROWS_AS((ExcitonParams{1.0, 1.0, 0.0}).validate(), ValidationError);
    CHECK_NOTHROW((ExcitonParams{1.0, 1.0, kInfinity}).validate());
    TrionParams t;
    t.b_field_t = -0.1;
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t.b_field_t = 0.1;
    t.t2_star_electron_ns = -1.0;
    CHECK_THROWS_AS(t.validate(), ValidationError);
}
