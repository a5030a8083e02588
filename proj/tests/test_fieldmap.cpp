#include <cmath>

#include "doctest.h"
#include "spinres/errors.hpp"
#include "spinres/fieldmap.hpp"
#include "spinres/spinsim.hpp"
#include "spinres/rng.hpp"
#include "test_paths.hpp"

using namespace spinres;
using namespace spinres::constants;

namespace {

CpwGeometry geom4um() {
    CpwGeometry g;
    g.center_width = 4e-6;
    return g;
}

}  // namespace

TEST_CASE("wide strip close up approaches the infinite-sheet field") {
    double w = 1.0;  // 1 m wide strip, evaluated 1 um above its center
    auto b = strip_sheet_field(-w / 2, w / 2, 0.0, 1e-6);
    CHECK(std::fabs(b[0]) == doctest::Approx(mu0 / (2.0 * w)).epsilon(1e-4));
    CHECK(std::fabs(b[1]) < 1e-12);  // vertical component vanishes by symmetry
}

TEST_CASE("cpw field is the superposition of three isolated strips") {
    auto g = geom4um();
    double y = 1.3e-6, z = 0.9e-6;
    auto total = strip_field(g, y, z);
    double hw = 0.5 * g.center_width;
    double g0 = hw + g.gap, g1 = g0 + g.ground_width;
    auto pin = strip_sheet_field(-hw, hw, y, z);
    auto gl = strip_sheet_field(-g1, -g0, y, z);
    auto gr = strip_sheet_field(g0, g1, y, z);
    CHECK(total[0] == doctest::Approx(pin[0] - 0.5 * (gl[0] + gr[0])).epsilon(1e-12));
    CHECK(total[1] == doctest::Approx(pin[1] - 0.5 * (gl[1] + gr[1])).epsilon(1e-12));
}

TEST_CASE("net zero current decays faster than 1/r in the far field") {
    auto g = geom4um();
    double width = g.center_width + 2.0 * (g.gap + g.ground_width);
    double r1 = 100.0 * width, r2 = 200.0 * width;
    auto b1v = strip_field(g, 0.0, r1);
    auto b2v = strip_field(g, 0.0, r2);
    double m1 = std::hypot(b1v[0], b1v[1]);
    double m2 = std::hypot(b2v[0], b2v[1]);
    // A 1/r field would halve; a dipole-like net-zero return quarters.
    CHECK(m2 < 0.35 * m1);
}

TEST_CASE("field is antisymmetric under reflection with current reversal") {
    auto g = geom4um();
    for (double y : {0.4e-6, 1.1e-6, 3.0e-6}) {
        auto plus = strip_field(g, y, 0.8e-6);
        auto minus = strip_field(g, -y, 0.8e-6);
        CHECK(plus[0] == doctest::Approx(minus[0]).epsilon(1e-12));
        CHECK(plus[1] == doctest::Approx(-minus[1]).epsilon(1e-12));
    }
}

TEST_CASE("bias field is exactly linear in the current") {
    auto g = geom4um();
    auto b = strip_field(g, 0.7e-6, 1.2e-6);
    // b is per ampere by construction; 4 mA is four times 1 mA exactly.
    CHECK(4e-3 * b[0] == 4.0 * (1e-3 * b[0]));
    CHECK(4e-3 * b[1] == 4.0 * (1e-3 * b[1]));
}

TEST_CASE("b1 map anchors and dB scaling") {
    auto g = geom4um();
    auto ref = b1_reference_point(g);
    double b_anchor = b1_at(g, ref[0], ref[1], -15.0, -15.0, 0.2e-6);
    CHECK(b_anchor == doctest::Approx(0.2e-6).epsilon(1e-12));
    // -6.02 dB halves the amplitude everywhere.
    for (double y : {0.0, 1.5e-6, 3.5e-6}) {
        double hi = b1_at(g, y, 1.1e-6, -15.0, -15.0, 0.2e-6);
        double lo = b1_at(g, y, 1.1e-6, -21.02, -15.0, 0.2e-6);
        CHECK(lo == doctest::Approx(0.5 * hi).epsilon(2e-4));
    }
    // -21 dBm is close to half amplitude (the -6 dB point).
    double half = b1_at(g, ref[0], ref[1], -21.0, -15.0, 0.2e-6);
    CHECK(half == doctest::Approx(0.1e-6).epsilon(3e-3));
    // 2.5 um device anchor: -23 dBm -> 0.09 uT at its own reference.
    CpwGeometry g25 = g;
    g25.center_width = 2.5e-6;
    auto r25 = b1_reference_point(g25);
    CHECK(b1_at(g25, r25[0], r25[1], -23.0, -23.0, 0.09e-6) ==
          doctest::Approx(0.09e-6).epsilon(1e-12));
}

TEST_CASE("power cap warning on b1_map") {
    auto g = geom4um();
    Warnings w;
    b1_map(g, -10.0, -15.0, 0.2e-6, 8, 4, &w, -15.0);
    CHECK(w.messages.size() == 1);
}

TEST_CASE("parallel component: zero at alignment, odd in theta") {
    auto g = geom4um();
    double theta = 4.7 * pi / 180.0;
    CHECK(std::fabs(mean_parallel_component(g, 4e-3, 0.0,
                                            SampleRegion::above_pin)) < 1e-15);
    double plus = mean_parallel_component(g, 4e-3, theta, SampleRegion::above_pin);
    double minus = mean_parallel_component(g, 4e-3, -theta, SampleRegion::above_pin);
    CHECK(plus == doctest::Approx(-minus).epsilon(1e-12));
    CHECK(std::fabs(plus) > 0.0);
    CHECK(broadening_vs_misalignment(g, 4e-3, 0.0, SampleRegion::above_pin) < 1e-15);
}

TEST_CASE("gap region is insensitive to misalignment relative to the pin") {
    auto g = geom4um();
    double theta = 0.05;
    double pin = broadening_vs_misalignment(g, 4e-3, theta, SampleRegion::above_pin);
    double gap = broadening_vs_misalignment(g, 4e-3, theta, SampleRegion::above_gap);
    CHECK(gap < 0.10 * pin);
    // First-order theta sensitivity of the mean parallel component.
    double h = 0.01;
    double dpin = (mean_parallel_component(g, 4e-3, h, SampleRegion::above_pin) -
                   mean_parallel_component(g, 4e-3, -h, SampleRegion::above_pin)) /
                  (2.0 * h);
    double dgap = (mean_parallel_component(g, 4e-3, h, SampleRegion::above_gap) -
                   mean_parallel_component(g, 4e-3, -h, SampleRegion::above_gap)) /
                  (2.0 * h);
    CHECK(std::fabs(dgap) < 0.10 * std::fabs(dpin));
}

TEST_CASE("quadrature shift is even in the current and tiny") {
    auto g = geom4um();
    double b0 = 0.275;
    double up = quadrature_shift(g, 4e-3, b0, 0.0, 1.0e-6);
    double dn = quadrature_shift(g, -4e-3, b0, 0.0, 1.0e-6);
    CHECK(up == doctest::Approx(dn).epsilon(1e-12));
    CHECK(up > 0.0);
    CHECK(up < 2e-6);  // well below the linewidth scale
}

TEST_CASE("misalignment broadening at 4.7 deg lands near the linewidth") {
    auto g = geom4um();
    double theta = 4.7 * pi / 180.0;
    double fwhm = broadening_vs_misalignment(g, 4e-3, theta, SampleRegion::above_pin);
    double linewidth = SpeciesConfig{}.line_fwhm;
    CHECK(fwhm > 0.5 * linewidth);
    CHECK(fwhm < 2.0 * linewidth);
}

TEST_CASE("symmetric-pair compensation zeroes the first-order echo phase") {
    DeerTiming timing;
    timing.t_pi = 34.1e-6;
    timing.t_echo = 68.1e-6;
    timing.t_pump = 20e-6;
    auto sched = compensation_schedule(CompensationKind::symmetric_pair, timing,
                                       4.03e-3, 90e-9);
    REQUIRE(sched.elements.size() == 2);
    double phi = echo_phase_integral(sched, timing.t_pi, timing.t_echo);
    double lobe = std::fabs(current_integral(sched, 0.0, timing.t_pi));
    CHECK(std::fabs(phi) < 1e-9 * lobe);
    // Mirror placement about the pi pulse.
    double c1 = 0.5 * (sched.elements[0].t_start + sched.elements[0].t_end);
    double c2 = 0.5 * (sched.elements[1].t_start + sched.elements[1].t_end);
    CHECK(0.5 * (c1 + c2) == doctest::Approx(timing.t_pi).epsilon(1e-9));
}

TEST_CASE("bipolar compensation zeroes the phase without the pi flip") {
    DeerTiming timing;
    timing.t_pi = 34.1e-6;
    timing.t_echo = 68.1e-6;
    timing.t_pump = 15e-6;
    auto sched =
        compensation_schedule(CompensationKind::bipolar, timing, 4.03e-3, 90e-9);
    REQUIRE(sched.elements.size() == 2);
    CHECK(sched.elements[1].amplitude < 0.0);
    CHECK(sched.elements[1].t_end < timing.t_pi);
    double phi = echo_phase_integral(sched, timing.t_pi, timing.t_echo);
    double lobe = std::fabs(sched.elements[0].amplitude) *
                  (sched.elements[0].t_end - sched.elements[0].t_start);
    CHECK(std::fabs(phi) < 1e-9 * lobe);
}

TEST_CASE("compensation that cannot fit raises DoesNotFit") {
    DeerTiming timing;
    timing.t_pi = 10e-6;
    timing.t_echo = 20e-6;
    timing.t_pump = 9.5e-6;  // pump leans into the pi window
    CHECK_THROWS_AS(compensation_schedule(CompensationKind::symmetric_pair,
                                          timing, 4e-3, 90e-9),
                    DoesNotFit);
}
