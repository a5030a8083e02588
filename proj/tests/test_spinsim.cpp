#include <algorithm>
#include <cmath>
#include <complex>

#include "doctest.h"
#include "spinres/errors.hpp"
#include "spinres/rng.hpp"
#include "spinres/spinsim.hpp"
#include "test_paths.hpp"

using namespace spinres;
using namespace spinres::constants;

namespace {

SpinContext make_ctx() {
    SpinContext ctx;
    ctx.dev = load_device(data_path("devices/4um.json"));
    ctx.geom = load_geometry(data_path("geometry/cpw_4um.json"));
    ctx.spins = load_spin_config(data_path("spin/si28_donors.json"));
    ctx.ens.gh_points = 12;
    ctx.ens.ny = 6;
    ctx.ens.nz = 6;
    return ctx;
}

PulseElement bir4_pi() {
    return PulseElement::bir4(10e-6, 1.2e7, pi, 2e6);
}

double norm3(const std::array<double, 3>& m) {
    return std::sqrt(m[0] * m[0] + m[1] * m[1] + m[2] * m[2]);
}

}  // namespace

TEST_CASE("rect waveform is constant amplitude and phase") {
    auto p = PulseElement::rect(200e-9, 7.85e6, 0.3);
    auto wf = waveform(p, 200e-9 / 64);
    for (const auto& s : wf) {
        CHECK(s.omega1 == 7.85e6);
        CHECK(s.phase == 0.3);
        CHECK(s.freq_offset == 0.0);
    }
}

TEST_CASE("waveform rejects coarse sampling") {
    auto p = PulseElement::rect(200e-9, 7.85e6, 0.0);
    CHECK_THROWS(waveform(p, 200e-9 / 10));
}

TEST_CASE("BIR4 envelope peaks at segment midpoints and dies at the quarter marks") {
    auto p = bir4_pi();
    const std::size_t n = 8000;
    auto wf = waveform(p, p.duration / n);
    CHECK(wf[n / 4].omega1 < 0.01 * p.amplitude);
    CHECK(wf[3 * n / 4].omega1 < 0.01 * p.amplitude);
    CHECK(wf[n / 8].omega1 == doctest::Approx(p.amplitude).epsilon(1e-3));
    CHECK(wf[5 * n / 8].omega1 == doctest::Approx(p.amplitude).epsilon(1e-3));
}

TEST_CASE("BIR4 phase jumps are +-(pi + flip/2)") {
    auto p = bir4_pi();
    const std::size_t n = 8000;
    auto wf = waveform(p, p.duration / n);
    double expected = pi + 0.5 * p.flip_angle;
    double j1 = wf[n / 4 + 2].phase - wf[n / 4 - 2].phase;
    double j2 = wf[3 * n / 4 + 2].phase - wf[3 * n / 4 - 2].phase;
    CHECK(j1 == doctest::Approx(expected).epsilon(1e-12));
    CHECK(j2 == doctest::Approx(-expected).epsilon(1e-12));
}

TEST_CASE("BIR4 on-resonance rotation equals the flip angle") {
    // Propagation oracle for the composite-pulse construction.
    for (double flip : {pi, pi / 2, pi / 3}) {
        auto p = PulseElement::bir4(10e-6, 1.2e7, flip, 2e6);
        long n = 40000;
        SpinPacket s;
        auto wf = waveform(p, p.duration / n);
        auto r = propagate(s, wf, p.duration / n, nullptr, 0.0, {});
        CHECK(r.m[2] == doctest::Approx(std::cos(flip)).epsilon(0.01));
        CHECK(norm3(r.m) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("on-resonance rect pi inverts exactly") {
    auto p = PulseElement::rect(400e-9, pi / 400e-9, 0.0);
    long n = 400;
    SpinPacket s;
    auto r = propagate(s, waveform(p, p.duration / n), p.duration / n, nullptr,
                       0.0, {});
    CHECK(std::fabs(r.m[2] + 1.0) < 1e-6);
}

TEST_CASE("far-detuned rect pi barely moves m_z (Rabi oracle)") {
    double omega1 = pi / 400e-9;
    double delta = 50.0 * omega1;
    auto p = PulseElement::rect(400e-9, omega1, 0.0);
    long n = 1ll << 16;
    SpinPacket s;
    s.detuning0 = delta;
    auto r = propagate(s, waveform(p, p.duration / n), p.duration / n, nullptr,
                       0.0, {});
    CHECK(std::fabs(r.m[2] - 1.0) < 0.01);
    double bound = 2.0 * omega1 * omega1 / (omega1 * omega1 + delta * delta);
    CHECK(std::fabs(r.m[2] - 1.0) <= bound * 1.01);
}

TEST_CASE("step halving changes the result by less than 1e-5") {
    auto p = bir4_pi();
    long n = 60000;
    SpinPacket s;
    s.detuning0 = two_pi * 0.3e6;
    s.b1_scale = 0.9;
    auto a = propagate(s, waveform(p, p.duration / n), p.duration / n, nullptr,
                       0.0, {});
    auto b = propagate(s, waveform(p, p.duration / (2 * n)),
                       p.duration / (2 * n), nullptr, 0.0, {});
    for (int k = 0; k < 3; ++k) CHECK(std::fabs(a.m[k] - b.m[k]) < 1e-5);
}

TEST_CASE("norm is conserved over 1e4 steps without relaxation") {
    Rng rng(5, "spinsim-norm");
    std::vector<WaveformSample> wf(10000);
    for (auto& s : wf)
        s = {rng.uniform(0.0, 1e7), rng.uniform(0.0, two_pi),
             rng.uniform(-1e7, 1e7)};
    SpinPacket p;
    p.detuning0 = 2e6;
    auto r = propagate(p, wf, 5e-9, nullptr, 0.0, {});
    CHECK(std::fabs(norm3(r.m) - 1.0) < 1e-6);
}

TEST_CASE("oversized steps throw StepTooLarge") {
    auto p = PulseElement::rect(400e-9, pi / 400e-9, 0.0);
    SpinPacket s;
    s.detuning0 = 1e9;
    CHECK_THROWS_AS(
        propagate(s, waveform(p, p.duration / 50), p.duration / 50, nullptr, 0.0, {}),
        StepTooLarge);
}

TEST_CASE("ideal Hahn echo refocuses to unit amplitude") {
    auto ctx = make_ctx();
    ctx.spins.p31.t2 = std::numeric_limits<double>::infinity();
    std::vector<SpinPacket> one{SpinPacket{}};
    auto seq = hahn_sequence(ctx, PulseStyle::rect, 60e-6, false);
    auto res = run_sequence(one, seq, {}, ctx.spins, nullptr, ctx.seq);
    CHECK(res.echo_amp == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("static dephasing is fully refocused at 2 tau") {
    auto ctx = make_ctx();
    ctx.spins.p31.t2 = std::numeric_limits<double>::infinity();
    SpeciesConfig sp = ctx.spins.p31;
    sp.t2 = std::numeric_limits<double>::infinity();
    sp.line_fwhm = 2.3548 * 1e6 / sp.gamma_eff;  // ~1 MHz sigma >> 1/tau
    EnsembleOptions ens;
    ens.gh_points = 48;
    ens.spatial = false;
    auto packets = build_ensemble(sp, Species::P31, 0.0, 0.0, nullptr, 0.0, ens);
    double tau = 60e-6;
    auto seq = hahn_sequence(ctx, PulseStyle::rect, tau, false);
    auto res = run_sequence(packets, seq, {}, ctx.spins, nullptr, ctx.seq);
    CHECK(res.echo_amp == doctest::Approx(1.0).epsilon(1e-2));
    double t_expect = hahn_echo_time(ctx, PulseStyle::rect, tau);
    CHECK(std::fabs(res.echo_time - t_expect) <= ctx.seq.acquire_sample_dt * 1.001);
    // With the spread >> 1/window the free-induction signal is gone away
    // from the echo: the window edge sits many dephasing times out.
    CHECK(std::abs(res.signal.front()) < 0.2);
}

TEST_CASE("echo decay follows exp(-2tau/T2) within 1%") {
    auto ctx = make_ctx();
    ctx.ens.gh_points = 8;
    ctx.ens.spatial = false;
    double t2 = 448e-6;
    ctx.spins.p31.t2 = t2;
    std::vector<double> taus{40e-6, 80e-6, 120e-6, 180e-6, 240e-6, 320e-6};
    auto curve = t2_decay(ctx, PulseStyle::rect, taus, 0.0, std::nullopt);
    double ref = curve.rows[0][1] / std::exp(-curve.rows[0][0] / t2);
    for (const auto& r : curve.rows) {
        double expect = ref * std::exp(-r[0] / t2);
        CHECK(r[1] == doctest::Approx(expect).epsilon(0.01));
    }
}

TEST_CASE("fit_t2 round-trips 448 us with 1% noise") {
    Rng rng(11, "t2-noise");
    ExperimentResult decay;
    decay.x_label = "x_value";
    decay.y_labels = {"echo_amp"};
    for (int k = 0; k < 12; ++k) {
        double x = 80e-6 + 60e-6 * k;
        double y = std::exp(-x / 448e-6) * (1.0 + 0.01 * rng.normal());
        decay.rows.push_back({x, y});
    }
    auto fit = fit_t2(decay);
    CHECK(fit.t2 == doctest::Approx(448e-6).epsilon(10.0 / 448.0));
    CHECK(fit.stderr_t2 > 0.0);
}

TEST_CASE("fit_t2 flags a constant signal") {
    ExperimentResult decay;
    decay.x_label = "x_value";
    decay.y_labels = {"echo_amp"};
    for (int k = 0; k < 10; ++k)
        decay.rows.push_back({100e-6 + 50e-6 * k, 0.8});
    CHECK_THROWS_AS(fit_t2(decay), FitDiverged);
}

TEST_CASE("phase covariance: common pulse phase rotates the echo rigidly") {
    auto ctx = make_ctx();
    SpeciesConfig sp = ctx.spins.p31;
    sp.t2 = std::numeric_limits<double>::infinity();
    ctx.spins.p31 = sp;
    EnsembleOptions ens;
    ens.gh_points = 16;
    ens.spatial = false;
    auto packets = build_ensemble(sp, Species::P31, 0.0, 0.0, nullptr, 0.0, ens);
    auto seq = hahn_sequence(ctx, PulseStyle::rect, 20e-6, false);
    auto base = run_sequence(packets, seq, {}, ctx.spins, nullptr, ctx.seq);
    double phi0 = 0.7;
    for (auto& e : seq)
        if (e.kind == PulseKind::rect) e.phase += phi0;
    auto shifted = run_sequence(packets, seq, {}, ctx.spins, nullptr, ctx.seq);
    CHECK(std::fabs(shifted.echo_amp - base.echo_amp) < 1e-8);
    double dphi = std::remainder(shifted.echo_phase - base.echo_phase, two_pi);
    CHECK(std::fabs(std::fabs(dphi) - phi0) < 1e-6);
}

TEST_CASE("echo amplitude is linear in the total ensemble weight") {
    auto ctx = make_ctx();
    EnsembleOptions ens;
    ens.gh_points = 8;
    ens.spatial = false;
    auto packets =
        build_ensemble(ctx.spins.p31, Species::P31, 0.0, 0.0, nullptr, 0.0, ens);
    auto seq = hahn_sequence(ctx, PulseStyle::rect, 20e-6, false);
    auto base = run_sequence(packets, seq, {}, ctx.spins, nullptr, ctx.seq);
    for (auto& p : packets) p.weight *= 2.0;
    auto doubled = run_sequence(packets, seq, {}, ctx.spins, nullptr, ctx.seq);
    CHECK(doubled.echo_amp == doctest::Approx(2.0 * base.echo_amp).epsilon(1e-9));
}

TEST_CASE("adiabatic inversion is B1-robust where the rectangular pi is not") {
    auto bir4 = bir4_pi();
    auto rect = PulseElement::rect(400e-9, pi / 400e-9, 0.0);
    for (double b1 = 0.7; b1 <= 1.3001; b1 += 0.1)
        CHECK(inversion_efficiency(bir4, b1, 0.0) >= 0.98);
    CHECK(inversion_efficiency(rect, 0.7, 0.0) <= 0.9);
    // Off-resonance floor of this composite (see the repo notes): well
    // above the rectangular pulse but below the on-resonance figure.
    double worst_bir4 = 1.0, worst_rect = 1.0;
    for (double b1 : {0.7, 1.0, 1.3})
        for (double det : {-0.5e6, 0.5e6}) {
            worst_bir4 = std::min(worst_bir4, inversion_efficiency(bir4, b1, det));
            worst_rect = std::min(worst_rect, inversion_efficiency(rect, b1, det));
        }
    CHECK(worst_bir4 >= 0.7);
    CHECK(worst_bir4 > worst_rect);
}

TEST_CASE("zero-bias field sweep peaks at the line center for both styles") {
    auto ctx = make_ctx();
    std::vector<double> grid;
    double c = ctx.spins.p31.line_center_field;
    for (double b = c - 0.05e-3; b <= c + 0.05e-3 + 1e-12; b += 0.005e-3)
        grid.push_back(b);
    auto rect = field_sweep(ctx, 0.0, PulseStyle::rect, grid);
    auto adiab = field_sweep(ctx, 0.0, PulseStyle::adiabatic, grid);
    CHECK(peak_location(rect) == doctest::Approx(0.27478).epsilon(2e-5));
    CHECK(peak_location(adiab) == doctest::Approx(0.27478).epsilon(2e-5));
    double amp_r = 0.0, amp_a = 0.0;
    for (const auto& r : rect.rows) amp_r = std::max(amp_r, r[1]);
    for (const auto& r : adiab.rows) amp_a = std::max(amp_a, r[1]);
    CHECK(std::fabs(amp_r - amp_a) / std::max(amp_r, amp_a) < 0.10);
}

TEST_CASE("biased sweep shifts the peak and power-caps the rectangular drive") {
    auto ctx = make_ctx();
    double bias = 4e-3;
    double expect = 0.27478 + delta_f(bias, ctx.dev) / ctx.spins.p31.gamma_eff;
    std::vector<double> grid;
    for (double b = expect - 0.04e-3; b <= expect + 0.04e-3 + 1e-12; b += 0.004e-3)
        grid.push_back(b);
    Warnings warn_rect;
    auto rect = field_sweep(ctx, bias, PulseStyle::rect, grid, &warn_rect);
    auto adiab = field_sweep(ctx, bias, PulseStyle::adiabatic, grid);
    CHECK(peak_location(rect) == doctest::Approx(273.72e-3).epsilon(7.3e-5));
    CHECK(peak_location(adiab) == doctest::Approx(273.72e-3).epsilon(7.3e-5));

    std::vector<double> grid0;
    for (double b = 0.27478 - 0.04e-3; b <= 0.27478 + 0.04e-3 + 1e-12; b += 0.004e-3)
        grid0.push_back(b);
    auto adiab0 = field_sweep(ctx, 0.0, PulseStyle::adiabatic, grid0);
    auto rect0 = field_sweep(ctx, 0.0, PulseStyle::rect, grid0);
    auto peak_amp = [](const ExperimentResult& r) {
        double a = 0.0;
        for (const auto& row : r.rows) a = std::max(a, row[1]);
        return a;
    };
    CHECK(peak_amp(adiab) >= 0.9 * peak_amp(adiab0));
    CHECK(peak_amp(rect) < 0.9 * peak_amp(rect0));
}

TEST_CASE("deterministic grid and Monte-Carlo ensembles agree") {
    auto ctx = make_ctx();
    SpeciesConfig sp = ctx.spins.p31;
    EnsembleOptions grid_opt;
    grid_opt.gh_points = 32;
    grid_opt.spatial = false;
    EnsembleOptions mc_opt = grid_opt;
    mc_opt.monte_carlo = true;
    mc_opt.mc_samples = 4000;
    mc_opt.seed = 3;
    auto seq = hahn_sequence(ctx, PulseStyle::rect, 30e-6, false);
    auto a = run_sequence(
        build_ensemble(sp, Species::P31, 0.0, 0.0, nullptr, 0.0, grid_opt), seq,
        {}, ctx.spins, nullptr, ctx.seq);
    auto b = run_sequence(
        build_ensemble(sp, Species::P31, 0.0, 0.0, nullptr, 0.0, mc_opt), seq,
        {}, ctx.spins, nullptr, ctx.seq);
    CHECK(a.echo_amp == doctest::Approx(b.echo_amp).epsilon(0.05));
}

TEST_CASE("drive above the device power cap warns through the tuning module") {
    auto ctx = make_ctx();
    std::vector<SpinPacket> one{SpinPacket{}};
    auto seq = hahn_sequence(ctx, PulseStyle::adiabatic, 40e-6, false);
    auto sched = BiasSchedule::step(4e-3, 0.0, 100e-6, 0.0);
    auto res = run_sequence(one, seq, sched, ctx.spins, &ctx.dev, ctx.seq);
    CHECK(!res.warnings.empty());
}
