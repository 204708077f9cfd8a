#include "edl/dynamics.hpp"

#include <cmath>

#include "edl/errors.hpp"

namespace edl {

namespace {

const complex kI{0.0, 1.0};

bool positive_or_inf(double x) { return x > 0.0; }

double envelope(double splitting_uev, double t2_star_ns, double t_ps) {
    if (splitting_uev == 0.0 || std::isinf(t2_star_ns)) {
        return 1.0;
    }
    return std::exp(-std::abs(t_ps) / (t2_star_ns * 1e3));
}

// Reduced photon density matrix in the H/V basis.
Eigen::Matrix2cd reduced_photon_state(const JointState& s) {
    Eigen::Matrix2cd psi; // rows: electron up/down, cols: photon R/L
    psi << s.up_r, s.up_l, s.down_r, s.down_l;
    const Eigen::Matrix2cd rho_rl = psi.transpose() * psi.conjugate();
    Eigen::Matrix2cd u; // columns are |R>, |L> in H/V amplitudes
    const JonesVector r = basis_state(Basis::R);
    const JonesVector l = basis_state(Basis::L);
    u << r.h(), l.h(), r.v(), l.v();
    return u * rho_rl * u.adjoint();
}

} // namespace

void ExcitonParams::validate() const {
    if (!(e_fss_uev >= 0.0) || !std::isfinite(e_fss_uev)) {
        throw ValidationError("exciton e_fss must be finite and >= 0");
    }
    if (!(lifetime_ps > 0.0) || !std::isfinite(lifetime_ps)) {
        throw ValidationError("exciton lifetime must be finite and > 0");
    }
    if (!positive_or_inf(t2_star_ns)) {
        throw ValidationError("exciton t2_star must be > 0 (inf allowed)");
    }
}

void TrionParams::validate() const {
    if (!(g_hole >= 0.0) || !(g_electron >= 0.0) || !std::isfinite(g_hole) ||
        !std::isfinite(g_electron)) {
        throw ValidationError("trion g-factors must be finite absolute values");
    }
    if (!(b_field_t >= 0.0) || !std::isfinite(b_field_t)) {
        throw ValidationError("trion b_field must be finite and >= 0");
    }
    if (!(lifetime_ps > 0.0) || !std::isfinite(lifetime_ps)) {
        throw ValidationError("trion lifetime must be finite and > 0");
    }
    if (!positive_or_inf(t2_star_hole_ns) || !positive_or_inf(t2_star_electron_ns)) {
        throw ValidationError("trion t2_star values must be > 0 (inf allowed)");
    }
}

double TrionParams::hole_splitting_uev() const { return zeeman_splitting(g_hole, b_field_t); }

double TrionParams::electron_splitting_uev() const {
    return zeeman_splitting(g_electron, b_field_t);
}

double JointState::norm_squared() const noexcept {
    return std::norm(up_r) + std::norm(up_l) + std::norm(down_r) + std::norm(down_l);
}

JonesVector evolve_exciton(const JonesVector& initial, const ExcitonParams& params, double t_ps) {
    const double half_angle = params.e_fss_uev * t_ps / (2.0 * constants::hbar_uev_ps);
    const complex h = initial.h() * std::exp(-kI * half_angle);
    const complex v = initial.v() * std::exp(kI * half_angle);
    return JonesVector::normalized(h, v);
}

std::array<double, 6> exciton_projection_probs(const JonesVector& state) noexcept {
    std::array<double, 6> p{};
    for (Basis b : kAllBases) {
        p[basis_index(b)] = projection_probability(state, b);
    }
    return p;
}

DopTriple exciton_dop_analytic(const ExcitonParams& params, double t_ps) {
    const double angle = params.e_fss_uev * t_ps / constants::hbar_uev_ps;
    const double env = envelope(params.e_fss_uev, params.t2_star_ns, t_ps);
    return {0.0, -std::cos(angle) * env, -std::sin(angle) * env};
}

JointState trion_joint_state(const TrionParams& params, double t_ps) {
    const double wt = params.hole_splitting_uev() * t_ps / (2.0 * constants::hbar_uev_ps);
    const complex minus = std::exp(-kI * wt);
    const complex plus = std::exp(kI * wt);
    JointState s{};
    s.up_r = 0.5 * (minus + kI * plus);
    s.down_l = 0.5 * (minus - kI * plus);
    return s;
}

BlochVector photon_stokes(const JointState& state) {
    const Eigen::Matrix2cd rho = reduced_photon_state(state);
    const double trace = rho.trace().real();
    if (!(trace > 0.0)) {
        throw ValidationError("joint state has zero norm");
    }
    auto prob = [&](Basis b) {
        const JonesVector p = basis_state(b);
        const Eigen::Vector2cd ket(p.h(), p.v());
        return (ket.adjoint() * rho * ket)(0, 0).real() / trace;
    };
    return {prob(Basis::H) - prob(Basis::V), prob(Basis::D) - prob(Basis::A),
            prob(Basis::R) - prob(Basis::L)};
}

DopTriple dop_from_joint_state(const JointState& state) {
    const BlochVector s = photon_stokes(state);
    return {s.x, s.y, s.z};
}

DopTriple trion_dop_analytic(const TrionParams& params, double t_ps) {
    const double splitting = params.hole_splitting_uev();
    const double angle = splitting * t_ps / constants::hbar_uev_ps;
    const double env = envelope(splitting, params.t2_star_hole_ns, t_ps);
    return {0.0, 0.0, -std::sin(angle) * env};
}

double zeeman_splitting(double g, double b_field_t) {
    if (!(b_field_t >= 0.0)) {
        throw ValidationError("magnetic field must be >= 0");
    }
    return g * constants::mu_bohr_uev_per_t * b_field_t;
}

double splitting_to_frequency_ghz(double splitting_uev) noexcept {
    return splitting_uev / constants::h_uev_ps * 1e3;
}

double frequency_ghz_to_splitting(double frequency_ghz) noexcept {
    return frequency_ghz * 1e-3 * constants::h_uev_ps;
}

double splitting_to_period(double delta_e_uev) {
    if (!(delta_e_uev > 0.0)) {
        throw ValidationError("splitting must be > 0");
    }
    return 2.0 * constants::pi * constants::hbar_uev_ps / delta_e_uev;
}

double period_to_splitting(double period_ps) {
    if (!(period_ps > 0.0)) {
        throw ValidationError("period must be > 0");
    }
    return 2.0 * constants::pi * constants::hbar_uev_ps / period_ps;
}

BlochVector rotate(const BlochVector& s, const BlochVector& axis, double angle) noexcept {
    // Rodrigues
    const double c = std::cos(angle);
    const double sn = std::sin(angle);
    const double d = axis.dot(s);
    const BlochVector cross{axis.y * s.z - axis.z * s.y, axis.z * s.x - axis.x * s.z,
                            axis.x * s.y - axis.y * s.x};
    return s * c + cross * sn + axis * (d * (1.0 - c));
}

BlochVector dephase(const BlochVector& s, const BlochVector& axis, double t2_star_ns, double dt_ps) {
    if (std::isinf(t2_star_ns) || dt_ps == 0.0) {
        return s;
    }
    const double f = std::exp(-dt_ps / (t2_star_ns * 1e3));
    const BlochVector along = axis * axis.dot(s);
    return along + (s - along) * f;
}

BlochVector precess_about_x(const BlochVector& s, double splitting_uev, double t2_star_ns,
                            double dt_ps) noexcept {
    if (splitting_uev == 0.0) {
        return s;
    }
    const double angle = splitting_uev * dt_ps / constants::hbar_uev_ps;
    const double c = std::cos(angle);
    const double sn = std::sin(angle);
    const double f = std::isinf(t2_star_ns) ? 1.0 : std::exp(-dt_ps / (t2_star_ns * 1e3));
    return {s.x, f * (s.y * c - s.z * sn), f * (s.y * sn + s.z * c)};
}

} // namespace edl
