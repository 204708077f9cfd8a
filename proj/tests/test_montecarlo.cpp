#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "edl/analysis.hpp"
#include "edl/errors.hpp"
#include "edl/montecarlo.hpp"

using namespace edl;

namespace {

const ExcitonParams kX0{36.17, 1015.0, kInfinity};

// Bin-averaged DOP of the state-vector prediction: the spin written by the
// pump evolves under evolve_exciton and the DOP is read from the projection
// probabilities, weighted by the emission density across the bin.
double predicted_exciton_dop(Basis pump, BasisPair pair, double lo, double hi) {
    const JonesVector s0 = from_bloch(bloch_axis(pump));
    double num = 0.0, den = 0.0;
    constexpr int kSub = 16;
    for (int k = 0; k < kSub; ++k) {
        const double t = lo + (hi - lo) * (k + 0.5) / kSub;
        const double w = std::exp(-t / kX0.lifetime_ps);
        const JonesVector s = evolve_exciton(s0, kX0, t);
        num += w * (projection_probability(s, pair.co) - projection_probability(s, pair.cross));
        den += w;
    }
    return num / den;
}

double predicted_trion_dop_z(const TrionParams& p, double lo, double hi) {
    double num = 0.0, den = 0.0;
    constexpr int kSub = 16;
    for (int k = 0; k < kSub; ++k) {
        const double t = lo + (hi - lo) * (k + 0.5) / kSub;
        const double w = std::exp(-t / p.lifetime_ps);
        num += w * trion_dop_analytic(p, t).dop_z;
        den += w;
    }
    return num / den;
}

struct Agreement {
    std::size_t bins = 0;
    std::size_t inside = 0;
    double fraction() const { return bins ? static_cast<double>(inside) / static_cast<double>(bins) : 0.0; }
};

template <class Predict>
Agreement compare(const std::vector<PhotonRecord>& records, BasisPair pair, double width, double end,
                  Predict&& predict) {
    const Histogram co = build_histogram(records, width, 0.0, end, pair.co);
    const Histogram cross = build_histogram(records, width, 0.0, end, pair.cross);
    Agreement a;
    for (std::size_t i = 0; i < co.size(); ++i) {
        const double n = co.counts[i] + cross.counts[i];
        if (n < 20) {
            continue;
        }
        const double lo = co.start_ps + width * static_cast<double>(i);
        const double d = predict(lo, lo + width);
        const double sigma = std::max(std::sqrt(std::max(1.0 - d * d, 0.0) / n), 1.0 / n);
        const double measured = (co.counts[i] - cross.counts[i]) / n;
        ++a.bins;
        if (std::abs(measured - d) <= 3.0 * sigma) {
            ++a.inside;
        }
    }
    return a;
}

const std::array<BasisPair, 3> kPairs{{{Basis::H, Basis::V}, {Basis::D, Basis::A}, {Basis::R, Basis::L}}};

} // namespace

TEST_CASE("written spin and emitted polarization") {
    for (Basis b : kAllBases) {
        const BlochVector s = written_spin(EmitterConfig::neutral_exciton(kX0, b));
        CHECK((s - bloch_axis(b)).norm() == 0.0);
    }
    EmitterConfig leaky = EmitterConfig::neutral_exciton(kX0, Basis::H);
    leaky.init_leakage_rad = 0.1;
    const BlochVector s = written_spin(leaky);
    CHECK(s.x == doctest::Approx(std::cos(0.1)));
    CHECK(s.y == doctest::Approx(std::sin(0.1)));

    std::mt19937_64 gen(4);
    std::normal_distribution<double> n;
    for (int i = 0; i < 300; ++i) {
        BlochVector v{n(gen), n(gen), n(gen)};
        v = v * (1.0 / v.norm());
        const BlochVector x0 = emitted_stokes(EmitterKind::neutral_exciton, v);
        const BlochVector xm = emitted_stokes(EmitterKind::negative_trion, v);
        CHECK((x0 - v).norm() == 0.0);
        CHECK(xm.x == 0.0);
        CHECK(xm.y == 0.0);
        CHECK(xm.z == v.z);
        for (const BasisPair& p : kPairs) {
            CHECK(projection_probability(x0, p.co) + projection_probability(x0, p.cross) == doctest::Approx(1.0).epsilon(1e-15));
            CHECK(projection_probability(xm, p.co) + projection_probability(xm, p.cross) == doctest::Approx(1.0).epsilon(1e-15));
        }
    }
}

TEST_CASE("exciton MC matches the state-vector prediction for all 36 traces") {
    std::uint64_t seed = 100;
    for (Basis pump : kAllBases) {
        const EmitterConfig cfg = EmitterConfig::neutral_exciton(kX0, pump);
        for (const BasisPair& pair : kPairs) {
            const auto records = simulate_pulsed(cfg, {}, pair, 200'000, ++seed);
            const Agreement a = compare(records, pair, 8.0, 4000.0, [&](double lo, double hi) {
                return predicted_exciton_dop(pump, pair, lo, hi);
            });
            INFO("pump ", std::string(1, to_char(pump)), " detect ", std::string{to_char(pair.co), to_char(pair.cross)});
            CHECK(a.bins > 300);
            CHECK(a.fraction() >= 0.95);
        }
    }
}

TEST_CASE("eigenstate pumping gives a constant DOP") {
    const auto records = simulate_pulsed(EmitterConfig::neutral_exciton(kX0, Basis::H), {},
                                         {Basis::H, Basis::V}, 50'000, 9);
    CHECK(!records.empty());
    CHECK(std::all_of(records.begin(), records.end(), [](const PhotonRecord& r) { return r.channel == Basis::H; }));
}

TEST_CASE("trion MC keeps only the circular component") {
    TrionParams p;
    p.b_field_t = 0.2;
    p.t2_star_hole_ns = 8.6;
    std::uint64_t seed = 200;
    for (Basis pump : {Basis::R, Basis::A}) {
        const EmitterConfig cfg = EmitterConfig::negative_trion(p, pump);
        for (const BasisPair& pair : kPairs) {
            const auto records = simulate_pulsed(cfg, {}, pair, 300'000, ++seed);
            const bool circular = pair.co == Basis::R;
            const Agreement a = compare(records, pair, 16.0, 5000.0, [&](double lo, double hi) {
                if (!circular) {
                    return 0.0;
                }
                if (pump == Basis::A) {
                    return predicted_trion_dop_z(p, lo, hi);
                }
                // The joint-state result assumes the hole starts at -Y; an R
                // pump starts it at +Z, where the rotation about x gives
                // cos(delta t / hbar).
                const double w0 = p.hole_splitting_uev() / constants::hbar_uev_ps;
                double num = 0.0, den = 0.0;
                for (int k = 0; k < 16; ++k) {
                    const double t = lo + (hi - lo) * (k + 0.5) / 16;
                    const double w = std::exp(-t / p.lifetime_ps);
                    num += w * std::cos(w0 * t) * std::exp(-t / 8600.0);
                    den += w;
                }
                return num / den;
            });
            INFO("pump ", std::string(1, to_char(pump)), " detect ", std::string{to_char(pair.co), to_char(pair.cross)});
            CHECK(a.bins > 250);
            CHECK(a.fraction() >= 0.95);
        }
    }

    TrionParams zero;
    const auto memory = simulate_pulsed(EmitterConfig::negative_trion(zero, Basis::R), {},
                                        {Basis::R, Basis::L}, 20'000, 3);
    CHECK(std::all_of(memory.begin(), memory.end(), [](const PhotonRecord& r) { return r.channel == Basis::R; }));
}

TEST_CASE("fitted exciton period") {
    const auto records = simulate_pulsed(EmitterConfig::neutral_exciton(kX0, Basis::D), {},
                                         {Basis::D, Basis::A}, 1'000'000, 21);
    const Histogram co = build_histogram(records, 4.0, 0.0, 3000.0, Basis::D);
    const Histogram cross = build_histogram(records, 4.0, 0.0, 3000.0, Basis::A);
    CosineGuess guess;
    guess.frequency_ghz = 8.7;
    CosineOptions opt;
    opt.fit_phase = true;
    const FitResult fit = fit_damped_cosine(dop_trace(co, cross), CosineForm::pulsed, guess, opt);
    CHECK(fit.converged);
    CHECK(std::abs(fit.value("period_ps") - 114.0) < 2.0);
    CHECK(std::abs(fit.value("period_ps") - splitting_to_period(36.17)) < 3.0 * fit.error("period_ps") + 0.05);
}

TEST_CASE("determinism and thread invariance") {
    const EmitterConfig cfg = EmitterConfig::neutral_exciton(kX0, Basis::R);
    const DetectorConfig det{28.0, 0.0};
    const auto a = simulate_pulsed(cfg, det, {Basis::R, Basis::L}, 150'000, 77, 1);
    const auto b = simulate_pulsed(cfg, det, {Basis::R, Basis::L}, 150'000, 77, 3);
    const auto c = simulate_pulsed(cfg, det, {Basis::R, Basis::L}, 150'000, 78, 1);
    CHECK(a == b);
    CHECK(a != c);

    TrionParams p;
    p.b_field_t = 0.05;
    EmitterConfig cw = EmitterConfig::negative_trion(p, Basis::R);
    cw.pump_rate_per_ns = 1.0;
    CwOptions one{1e4, 1}, many{1e4, 4};
    const TimeTagStream s1 = simulate_cw_g2(cw, det, Basis::R, 1e5, 5, one);
    const TimeTagStream s2 = simulate_cw_g2(cw, det, Basis::R, 1e5, 5, many);
    CHECK(s1.detect_time_ps == s2.detect_time_ps);
    CHECK(s1.emitted == s2.emitted);
    CHECK(std::is_sorted(s1.detect_time_ps.begin(), s1.detect_time_ps.end()));
}

TEST_CASE("detection efficiency thins without biasing the DOP") {
    const EmitterConfig full = EmitterConfig::neutral_exciton(kX0, Basis::D);
    EmitterConfig thin = full;
    thin.detection_efficiency = 0.1;
    const BasisPair pair{Basis::D, Basis::A};
    const std::int64_t n = 400'000;
    const auto all = simulate_pulsed(full, {}, pair, n, 31);
    const auto some = simulate_pulsed(thin, {}, pair, n, 31);
    CHECK(all.size() == static_cast<std::size_t>(n));
    const double expect = 0.1 * static_cast<double>(n);
    CHECK(std::abs(static_cast<double>(some.size()) - expect) < 4.0 * std::sqrt(expect * 0.9));
    // Same seed: the thinned run is a subset with identical outcomes.
    std::size_t matched = 0;
    for (const auto& r : some) {
        matched += all[static_cast<std::size_t>(r.pulse_index)] == r;
    }
    CHECK(matched == some.size());
    const Agreement a = compare(some, pair, 16.0, 3000.0, [&](double lo, double hi) {
        return predicted_exciton_dop(Basis::D, pair, lo, hi);
    });
    CHECK(a.fraction() >= 0.95);

    TrionParams p;
    p.b_field_t = 0.06;
    EmitterConfig cw = EmitterConfig::negative_trion(p, Basis::R);
    cw.pump_rate_per_ns = 1.0;
    EmitterConfig cw_thin = cw;
    cw_thin.detection_efficiency = 0.1;
    const auto t_full = simulate_cw_g2(cw, {}, Basis::R, 2e5, 8);
    const auto t_thin = simulate_cw_g2(cw_thin, {}, Basis::R, 2e5, 8);
    CHECK(t_full.emitted == t_thin.emitted);
    const double ratio = static_cast<double>(t_thin.detect_time_ps.size()) /
                         static_cast<double>(t_full.detect_time_ps.size());
    CHECK(ratio == doctest::Approx(0.1).epsilon(0.05));
}

TEST_CASE("CW detection rate at zero field follows the renewal time") {
    // With no field the electron stays where the last R photon left it, so
    // every cycle waits 1/pump then tau.
    TrionParams p;
    EmitterConfig cw = EmitterConfig::negative_trion(p, Basis::R);
    cw.pump_rate_per_ns = 1.0;
    const auto s = simulate_cw_g2(cw, {}, Basis::R, 1e6, 12, {1e6, 1});
    const auto& t = s.detect_time_ps;
    REQUIRE(t.size() > 1000);
    const double mean_gap = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
    const double expect = 1000.0 + p.lifetime_ps;
    // Each gap is a sum of two exponentials; its variance is 1000^2 + tau^2.
    const double se = std::sqrt(1000.0 * 1000.0 + p.lifetime_ps * p.lifetime_ps) / std::sqrt(static_cast<double>(t.size()));
    CHECK(std::abs(mean_gap - expect) < 4.0 * se);
    CHECK(s.emitted == t.size());
}

TEST_CASE("CW edge cases") {
    TrionParams p;
    p.b_field_t = 0.04;
    EmitterConfig cw = EmitterConfig::negative_trion(p, Basis::R);
    cw.pump_rate_per_ns = 1e-7;
    const auto s = simulate_cw_g2(cw, {}, Basis::R, 1e4, 1);
    CHECK(s.detect_time_ps.size() < 2);
    CHECK(!s.warnings.empty());
    CHECK_THROWS_AS(correlate(s.detect_time_ps, 20.0, 1.0), ValidationError);

    cw.pump_rate_per_ns = 2.0;
    const DetectorConfig dead{0.0, 1500.0};
    const auto d = simulate_cw_g2(cw, dead, Basis::R, 1e5, 2);
    for (std::size_t i = 1; i < d.detect_time_ps.size(); ++i) {
        CHECK(d.detect_time_ps[i] - d.detect_time_ps[i - 1] >= 1500.0);
    }

    cw.pump_rate_per_ns = 0.0;
    CHECK_THROWS_AS(simulate_cw_g2(cw, {}, Basis::R, 1e4, 1), ValidationError);
    cw.pump_rate_per_ns = 1.0;
    CHECK_THROWS_AS(simulate_cw_g2(cw, {}, Basis::D, 1e4, 1), ValidationError);
    CHECK_THROWS_AS(simulate_cw_g2(EmitterConfig::neutral_exciton(kX0, Basis::R), {}, Basis::R, 1e4, 1),
                    ValidationError);
}

TEST_CASE("pulsed input validation") {
    const EmitterConfig cfg = EmitterConfig::neutral_exciton(kX0, Basis::R);
    CHECK_THROWS_AS(simulate_pulsed(cfg, {}, {Basis::R, Basis::D}, 10, 1), ValidationError);
    CHECK_THROWS_AS(simulate_pulsed(cfg, {}, {Basis::R, Basis::L}, 0, 1), ValidationError);
    CHECK_THROWS_AS(simulate_pulsed(cfg, {-1.0, 0.0}, {Basis::R, Basis::L}, 10, 1), ValidationError);
    EmitterConfig bad = cfg;
    bad.detection_efficiency = 1.5;
    CHECK_THROWS_AS(simulate_pulsed(bad, {}, {Basis::R, Basis::L}, 10, 1), ValidationError);
    bad = cfg;
    bad.trion = TrionParams{};
    CHECK_THROWS_AS(simulate_pulsed(bad, {}, {Basis::R, Basis::L}, 10, 1), ValidationError);
    // An exciton pump label in a trion config maps the same way.
    const auto r = simulate_pulsed(EmitterConfig::negative_trion(TrionParams{}, Basis::H), {},
                                   {Basis::R, Basis::L}, 10, 1);
    CHECK(r.size() == 10);
}

TEST_CASE("jitter") {
    const auto records = simulate_pulsed(EmitterConfig::neutral_exciton(kX0, Basis::R), {},
                                         {Basis::R, Basis::L}, 100'000, 4);
    CHECK(apply_jitter(records, {0.0, 0.0}, 1) == records);
    const DetectorConfig det{28.0, 0.0};
    const auto j = apply_jitter(records, det, 1);
    std::vector<double> d(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        d[i] = j[i].detect_time_ps - records[i].detect_time_ps;
        CHECK(j[i].emit_time_ps == records[i].emit_time_ps);
    }
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    double var = 0.0;
    for (double x : d) {
        var += (x - mean) * (x - mean);
    }
    const double sd = std::sqrt(var / static_cast<double>(d.size() - 1));
    CHECK(std::abs(mean) < 4.0 * det.sigma_ps() / std::sqrt(static_cast<double>(d.size())));
    CHECK(sd == doctest::Approx(28.0 / 2.3548200450309493).epsilon(0.01));

    const std::vector<double> tags{1.0, 2.0, 3.0};
    CHECK(apply_jitter(tags, {}, 3) == tags);
    const auto jt = apply_jitter(tags, {1000.0, 0.0}, 3);
    CHECK(std::is_sorted(jt.begin(), jt.end()));
}

TEST_CASE("visibility factor matches a numerical convolution") {
    CHECK(visibility_factor(0.0, 50.0) == 1.0);
    CHECK(std::abs(visibility_factor(28.0, 114.0) - 0.806) < 0.002);
    CHECK(std::abs(visibility_factor(28.0, 602.0) - 0.9923) < 0.0005);
    CHECK(visibility_factor(500.0, 114.0) < 1e-6);
    CHECK_THROWS_AS(visibility_factor(28.0, 0.0), ValidationError);

    // cos(w t) convolved with a unit Gaussian, evaluated at t = 0 by
    // Simpson integration over +-10 sigma.
    for (double fwhm : {5.0, 28.0, 60.0}) {
        for (double period : {60.0, 114.0, 602.0}) {
            const double sigma = fwhm / 2.3548200450309493;
            const int n = 4000;
            const double a = -10.0 * sigma, h = 20.0 * sigma / n;
            double sum = 0.0;
            for (int i = 0; i <= n; ++i) {
                const double u = a + h * i;
                const double f = std::cos(2.0 * M_PI * u / period) * std::exp(-0.5 * u * u / (sigma * sigma)) /
                                 (sigma * std::sqrt(2.0 * M_PI));
                sum += f * (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0));
            }
            sum *= h / 3.0;
            CHECK(std::abs(visibility_factor(fwhm, period) - sum) < 1e-9);
        }
    }
}

TEST_CASE("histograms") {
    std::vector<PhotonRecord> three(3);
    for (auto& r : three) {
        r.detect_time_ps = r.emit_time_ps = 12.5;
        r.channel = Basis::L;
    }
    const Histogram h = build_histogram(three, 10.0, 0.0, 100.0);
    CHECK(h.counts[1] == 3.0);
    CHECK(h.in_range_total() == 3.0);
    const Histogram none = build_histogram(three, 10.0, 0.0, 100.0, Basis::R);
    CHECK(none.total() == 0.0);
    CHECK_THROWS_AS(build_histogram(three, 10.0, 5.0, 5.0), ValidationError);
    CHECK_THROWS_AS(build_histogram(three, 0.0, 0.0, 5.0), ValidationError);

    const auto records = simulate_pulsed(EmitterConfig::neutral_exciton(kX0, Basis::H), {28.0, 0.0},
                                         {Basis::H, Basis::V}, 1'000'000, 17);
    const Histogram all = build_histogram(records, 8.0, 0.0, 8000.0);
    CHECK(all.total() == static_cast<double>(records.size()));
    CHECK(all.underflow > 0.0);
    const Histogram emit = build_histogram(records, 8.0, 0.0, 12000.0, std::nullopt, TimeField::emit);
    CHECK(emit.underflow == 0.0);
    const FitResult fit = fit_exponential_lifetime(emit, {0.0, 12000.0});
    CHECK(std::abs(fit.value("tau_ps") - 1015.0) < 3.0);

    Histogram m = Histogram::with_range(8.0, 0.0, 100.0);
    CHECK(m.size() == 13);
    m.add(5.0);
    Histogram other = m;
    other.add(50.0, 2.0);
    m.merge(other);
    CHECK(m.counts[0] == 2.0);
    CHECK(m.counts[6] == 2.0);
    CHECK_THROWS_AS(m.merge(Histogram::with_range(4.0, 0.0, 100.0)), ValidationError);
}

TEST_CASE("correlation") {
    const std::vector<double> two{0.0, 100.0};
    const CorrelationTrace c = correlate(two, 10.0, 1.0);
    CHECK(c.size() == 201);
    CHECK(c.delay_ps[100] == 0.0);
    CHECK(std::accumulate(c.value.begin(), c.value.end(), 0.0) == 2.0);
    CHECK(c.value[110] == 1.0);
    CHECK(c.value[90] == 1.0);
    const std::vector<double> unsorted{5.0, 1.0};
    CHECK_THROWS_AS(correlate(unsorted, 10.0, 1.0), ValidationError);

    // Poisson stream: flat at rate^2 * bin * duration.
    std::mt19937_64 gen(6);
    const double rate = 1e-3, duration = 5e8, width = 20.0;
    std::exponential_distribution<double> gap(rate);
    std::vector<double> tags;
    for (double t = gap(gen); t < duration; t += gap(gen)) {
        tags.push_back(t);
    }
    const CorrelationTrace p = correlate(tags, width, 2.0);
    const double plateau = rate * rate * width * duration;
    const double mean = std::accumulate(p.value.begin(), p.value.end(), 0.0) / static_cast<double>(p.size());
    CHECK(std::abs(mean - plateau) < 4.0 * std::sqrt(plateau / static_cast<double>(p.size())) + 0.005 * plateau);
    std::size_t inside = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        inside += std::abs(p.value[k] - plateau) < 3.0 * std::sqrt(plateau);
    }
    CHECK(static_cast<double>(inside) / static_cast<double>(p.size()) > 0.97);
    for (std::size_t k = 0; k < p.size(); ++k) {
        CHECK(p.value[k] == p.value[p.size() - 1 - k]);
    }

    // A single emitter antibunches.
    TrionParams tp;
    tp.b_field_t = 0.04;
    EmitterConfig cw = EmitterConfig::negative_trion(tp, Basis::R);
    cw.pump_rate_per_ns = 1.0;
    const auto s = simulate_cw_g2(cw, {28.0, 0.0}, Basis::R, 2e6, 3);
    const CorrelationTrace g = correlate(s.detect_time_ps, 20.0, 16.0);
    const std::size_t mid = g.size() / 2;
    double far = 0.0;
    for (std::size_t k = 0; k < 50; ++k) {
        far += g.value[k];
    }
    far /= 50.0;
    CHECK(g.value[mid] < 0.2 * far);
}
