#pragma once

// Closed-form spin and polarization dynamics of the neutral exciton (precession
// about the fine-structure axis) and the negative trion (hole Larmor precession
// in an in-plane field, with the photon entangled to the leftover electron).
//
// Units: energies in ueV, times in ps unless a name says otherwise
// (t2_star_* fields are in ns, matching how coherence times are quoted).

#include <array>
#include <limits>

#include "edl/polarization.hpp"

namespace edl {

namespace constants {
// CODATA 2018
inline constexpr double hbar_uev_ps = 658.2119569;
inline constexpr double h_uev_ps = 4135.667696;
inline constexpr double mu_bohr_uev_per_t = 57.88381806;
inline constexpr double pi = 3.14159265358979323846;
inline constexpr double fwhm_per_sigma = 2.3548200450309493; // 2 sqrt(2 ln 2)
} // namespace constants

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct ExcitonParams {
    double e_fss_uev = 0.0;
    double lifetime_ps = 1015.0;
    double t2_star_ns = kInfinity;

    void validate() const;
};

struct TrionParams {
    double g_hole = 0.593;
    double g_electron = 2.876;
    double b_field_t = 0.0;
    double lifetime_ps = 1135.0;
    double t2_star_hole_ns = kInfinity;
    double t2_star_electron_ns = kInfinity;

    void validate() const;
    double hole_splitting_uev() const;
    double electron_splitting_uev() const;
};

struct DopTriple {
    double dop_x = 0.0;
    double dop_y = 0.0;
    double dop_z = 0.0;
};

// Photon(x)spin amplitudes after trion recombination, in the R/L photon
// basis: |up>|R>, |up>|L>, |down>|R>, |down>|L>.
struct JointState {
    complex up_r;
    complex up_l;
    complex down_r;
    complex down_l;

    double norm_squared() const noexcept;
};

// alpha e^{-i E t/2hbar}|+X> + beta e^{+i E t/2hbar}|-X>, with |+-X> = |H>,|V>.
JonesVector evolve_exciton(const JonesVector& initial, const ExcitonParams& params, double t_ps);

// Projection probabilities in kAllBases order (H, V, D, A, R, L).
std::array<double, 6> exciton_projection_probs(const JonesVector& state) noexcept;

// DOPs for the exciton written into |-Y> (the |A> photon state); exponential
// envelope exp(-t/T2*) when T2* is finite and E_FSS > 0.
DopTriple exciton_dop_analytic(const ExcitonParams& params, double t_ps);

// Joint state for the trion prepared in (|T+> + |T->)/sqrt2.
JointState trion_joint_state(const TrionParams& params, double t_ps);

// Stokes vector of the photon after tracing the joint state over the electron.
BlochVector photon_stokes(const JointState& state);

// DOPs obtained by projecting the reduced photon state on H, V, D, A, R, L.
DopTriple dop_from_joint_state(const JointState& state);

DopTriple trion_dop_analytic(const TrionParams& params, double t_ps);

// g mu_B B in ueV. Throws ValidationError for negative fields.
double zeeman_splitting(double g, double b_field_t);

// splitting / h, in GHz.
double splitting_to_frequency_ghz(double splitting_uev) noexcept;
double frequency_ghz_to_splitting(double frequency_ghz) noexcept;

// T = 2 pi hbar / dE; both directions reject non-positive input.
double splitting_to_period(double delta_e_uev);
double period_to_splitting(double period_ps);

// Rotation of s about a unit axis by angle (right-handed).
BlochVector rotate(const BlochVector& s, const BlochVector& axis, double angle) noexcept;

// Components of s perpendicular to axis shrink by exp(-dt/T2*).
BlochVector dephase(const BlochVector& s, const BlochVector& axis, double t2_star_ns, double dt_ps);

// Free evolution of a spin precessing about +x at splitting/hbar with
// transverse dephasing. A zero splitting leaves the spin frozen: with no
// field there is no precession axis for T2* to act on.
BlochVector precess_about_x(const BlochVector& s, double splitting_uev, double t2_star_ns,
                            double dt_ps) noexcept;

} // namespace edl
