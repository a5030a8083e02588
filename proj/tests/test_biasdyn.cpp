#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "spinres/biasdyn.hpp"
#include "spinres/errors.hpp"
#include "spinres/netmodel.hpp"
#include "test_paths.hpp"

using namespace spinres;
using namespace spinres::constants;

namespace {

DeviceTuningParams dev4um() { return load_device(data_path("devices/4um.json")); }

}  // namespace

TEST_CASE("current is zero before the first element") {
    auto s = BiasSchedule::step(3.9e-3, 1e-6, 5e-6, 50e-9);
    CHECK(current_at(s, 0.0) == 0.0);
    CHECK(current_at(s, 0.9e-6) == 0.0);
}

TEST_CASE("single step follows the first-order lag response") {
    double tau = 80e-9, amp = 3.9e-3;
    auto s = BiasSchedule::step(amp, 0.0, 10e-6, tau);
    CHECK(current_at(s, tau) ==
          doctest::Approx(amp * (1.0 - std::exp(-1.0))).epsilon(1e-12));
    CHECK(current_at(s, tau) == doctest::Approx(2.466e-3).epsilon(1e-3));
    CHECK(current_at(s, 20.0 * tau) == doctest::Approx(amp).epsilon(1e-8));
}

TEST_CASE("bipolar pair integrates to zero within 1% of one lobe") {
    double tau = 60e-9, amp = 2e-3, dur = 3e-6;
    BiasSchedule s;
    s.lag_time_constant = tau;
    s.elements.push_back({0.0, dur, amp});
    s.elements.push_back({dur, 2.0 * dur, -amp});
    double total = current_integral(s, 0.0, 2.0 * dur + 20.0 * tau);

    // Numeric quadrature oracle over the same window.
    double quad = 0.0;
    int n = 400000;
    double t_end = 2.0 * dur + 20.0 * tau;
    BiasCurrentSampler fast(s);
    for (int k = 0; k < n; ++k)
        quad += fast.at((k + 0.5) * t_end / n) * (t_end / n);
    double lobe = amp * dur;
    CHECK(std::fabs(total) < 0.01 * lobe);
    CHECK(total == doctest::Approx(quad).epsilon(1e-4));
}

TEST_CASE("lag-filtered integral matches quadrature on a random schedule") {
    BiasSchedule s;
    s.lag_time_constant = 120e-9;
    s.elements.push_back({0.5e-6, 1.7e-6, 1.2e-3});
    s.elements.push_back({2.0e-6, 3.1e-6, -0.7e-3});
    s.elements.push_back({3.1e-6, 4.0e-6, 2.9e-3});
    BiasCurrentSampler fast(s);
    double a = 0.3e-6, b = 5.5e-6;
    int n = 600000;
    double quad = 0.0;
    for (int k = 0; k < n; ++k) quad += fast.at(a + (k + 0.5) * (b - a) / n) * ((b - a) / n);
    CHECK(current_integral(s, a, b) == doctest::Approx(quad).epsilon(1e-5));
}

TEST_CASE("empty schedule keeps the cavity at full static transmission") {
    auto dev = dev4um();
    BiasSchedule s;
    s.lag_time_constant = dev.tuning_lag;
    auto trace = cavity_trace(dev.f0, s, dev, 1e-6);
    for (double a : trace.transmitted_amplitude)
        CHECK(a == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("transmitted amplitude never exceeds the static resonant level") {
    auto dev = dev4um();
    auto sched = BiasSchedule::step(invert_delta_f(-31.2e6, dev), 0.0, 3e-6,
                                    dev.tuning_lag);
    auto trace = cavity_trace(dev.f0 - 31.2e6, sched, dev, 3e-6);
    for (double a : trace.transmitted_amplitude) CHECK(a <= 1.0 + 1e-9);
}

TEST_CASE("the calibrated step reaches -31.2 MHz in about 270 ns") {
    auto dev = dev4um();
    auto sched = BiasSchedule::step(invert_delta_f(-31.2e6, dev), 0.0, 40e-6,
                                    dev.tuning_lag);
    double t = tuning_time(sched, dev, -31.2e6);
    CHECK(t == doctest::Approx(270e-9).epsilon(0.02));
}

TEST_CASE("probing beyond the step's reach shows no transmission recovery") {
    auto dev = dev4um();
    auto sched = BiasSchedule::step(3.9e-3, 0.0, 3e-6, dev.tuning_lag);
    auto trace = cavity_trace(dev.f0 - 60e6, sched, dev, 3e-6);
    double peak = *std::max_element(trace.transmitted_amplitude.begin(),
                                    trace.transmitted_amplitude.end());
    // Steady-state detuning oracle: Lorentzian response at the terminal
    // detuning bounds the transient peak.
    double kappa_half = pi * dev.f0 / dev.q_loaded;
    double det = two_pi * std::fabs(delta_f(3.9e-3, dev) + 60e6);
    double oracle = kappa_half / std::hypot(det, kappa_half);
    CHECK(peak < 0.1);
    CHECK(peak <= oracle * 1.05 + 1e-3);
}

TEST_CASE("tuning_time is flat across targets when the step current tracks") {
    auto dev = dev4um();
    std::vector<double> targets{-10e6, -20e6, -31.2e6, -45e6};
    std::vector<double> times;
    for (double target : targets) {
        auto sched = BiasSchedule::step(invert_delta_f(target, dev), 0.0, 40e-6,
                                        dev.tuning_lag);
        times.push_back(tuning_time(sched, dev, target));
    }
    double tmin = *std::min_element(times.begin(), times.end());
    double tmax = *std::max_element(times.begin(), times.end());
    double mean = 0.0;
    for (double t : times) mean += t;
    mean /= times.size();
    CHECK((tmax - mean) / mean < 0.2);
    CHECK((mean - tmin) / mean < 0.2);
}

TEST_CASE("tuning_time with lag -> 0 approaches the cavity ring time scale") {
    auto dev = dev4um();
    auto sched = BiasSchedule::step(invert_delta_f(-31.2e6, dev), 0.0, 40e-6,
                                    1e-10);
    double t = tuning_time(sched, dev, -31.2e6);
    double ring = dev.q_loaded / (pi * dev.f0);  // ~125 ns amplitude decay
    CHECK(t <= 4.0 * ring);
}

TEST_CASE("unreachable target throws") {
    auto dev = dev4um();
    auto sched = BiasSchedule::step(3.9e-3, 0.0, 3e-6, dev.tuning_lag);
    CHECK_THROWS_AS(tuning_time(sched, dev, -45e6), TargetUnreachable);
}

TEST_CASE("steady cavity response matches the network |S21| shape within 2%") {
    auto dev = dev4um();
    auto net = load_network(data_path("networks/pbg_4um.json"));
    auto sum = find_resonance(net, 7.55e9, 7.72e9, net.internal_q, 6000.0);

    BiasSchedule s;  // static, lag irrelevant
    for (double df : {0.4e6, 0.8e6, 1.2e6}) {
        auto trace = cavity_trace(dev.f0 + df, s, dev, 2e-6);
        double cavity_rel = trace.transmitted_amplitude.back();
        double net_rel = std::abs(s21(net, sum.f_res + df)) / sum.peak_s21_mag;
        CHECK(cavity_rel == doctest::Approx(net_rel).epsilon(0.02));
    }
}

TEST_CASE("zero-width chirp returns the constant inversion current") {
    auto dev = dev4um();
    ChirpSpec chirp{dev.f0 - 33e6, dev.f0 - 33e6, 10e-6};
    auto cs = chirp_tracking_schedule(chirp, dev);
    REQUIRE(cs.schedule.elements.size() == 1);
    CHECK(cs.schedule.elements[0].amplitude ==
          doctest::Approx(invert_delta_f(-33e6, dev)).epsilon(1e-9));
}

TEST_CASE("chirp tracking stays within half a linewidth") {
    auto dev = dev4um();
    // +-2 MHz over 10 us centered at -33 MHz.
    ChirpSpec chirp{dev.f0 - 35e6, dev.f0 - 31e6, 10e-6};
    auto cs = chirp_tracking_schedule(chirp, dev);
    BiasCurrentSampler fast(cs.schedule);
    double kappa_half_hz = dev.f0 / (2.0 * dev.q_loaded);
    double worst = 0.0;
    int n = 2000;
    for (int k = 0; k < n; ++k) {
        double t = cs.chirp_begin + (cs.chirp_end - cs.chirp_begin) * (k + 0.5) / n;
        double x = (t - cs.chirp_begin) / (cs.chirp_end - cs.chirp_begin);
        double want = (chirp.f_start - dev.f0) +
                      (chirp.f_end - chirp.f_start) * x;
        double got = delta_f(fast.at(t), dev);
        worst = std::max(worst, std::fabs(got - want));
    }
    CHECK(worst < kappa_half_hz);
}

TEST_CASE("excessive chirp slew is rejected") {
    auto dev = dev4um();
    ChirpSpec chirp{dev.f0 - 1e6, dev.f0 - 101e6, 50e-9};
    CHECK_THROWS_AS(chirp_tracking_schedule(chirp, dev), SlewTooFast);
}

TEST_CASE("chirp endpoints outside the tuning range are rejected") {
    auto dev = dev4um();
    ChirpSpec above{dev.f0 + 1e6, dev.f0 - 10e6, 100e-6};
    CHECK_THROWS_AS(chirp_tracking_schedule(above, dev), TargetUnreachable);
    ChirpSpec deep{dev.f0 - 10e6, dev.f0 - 80e6, 100e-3};
    CHECK_THROWS_AS(chirp_tracking_schedule(deep, dev), TargetUnreachable);
}

TEST_CASE("schedules validate ordering and the critical current") {
    BiasSchedule bad;
    bad.elements.push_back({1e-6, 0.5e-6, 1e-3});
    CHECK_THROWS(bad.validate());
    BiasSchedule overlap;
    overlap.elements.push_back({0.0, 2e-6, 1e-3});
    overlap.elements.push_back({1e-6, 3e-6, 1e-3});
    CHECK_THROWS(overlap.validate());
    auto dev = dev4um();
    auto hot = BiasSchedule::step(5.2e-3, 0.0, 1e-6, 0.0);
    CHECK_THROWS_AS(hot.validate_against(dev), CriticalCurrentExceeded);
}
