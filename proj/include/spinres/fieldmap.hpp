#pragma once

#include <array>
#include <string>
#include <vector>

#include "spinres/biasdyn.hpp"
#include "spinres/common.hpp"

namespace spinres {

// Cross-section geometry of the coplanar waveguide and the sample above it.
// Coordinates: current along x, y across the line, z height above the film.
// The default gap is the wide-slot scale of the narrow high-impedance
// cavity sections.
struct CpwGeometry {
    double center_width = 4.0e-6;    // m
    double gap = 20.0e-6;            // m
    double ground_width = 40.0e-6;   // m (default 10x center width)
    double film_thickness = 20.0e-9; // m
    double sample_standoff = 0.5e-6; // m, film surface to epi-layer bottom
    double epi_thickness = 2.0e-6;   // m
    double implant_depth = 200.0e-9; // m, As implant below the epi surface

    void validate() const;
};

CpwGeometry load_geometry(const std::string& path);

struct FieldSample {
    std::array<double, 2> position{};        // (y, z) m
    std::array<double, 2> b_bias_per_amp{};  // (By, Bz) T/A
    double b1_per_sqrt_watt = 0.0;           // T/sqrt(W)
};

// In-plane field of a single thin strip at z=0 spanning y in [y_lo, y_hi],
// carrying 1 A of uniform sheet current along +x.  Returns (By, Bz) in T/A.
std::array<double, 2> strip_sheet_field(double y_lo, double y_hi, double y,
                                        double z);

// Bias field of the CPW cross-section: center pin carries +1 A, each ground
// plane returns -1/2 A.  T/A at (y, z); the point must be above the film.
std::array<double, 2> strip_field(const CpwGeometry& geom, double y, double z);

// Microwave field magnitude at (y, z) for the given input power, anchored so
// the reference point (above the pin center, mid-epi) sees anchor_tesla at
// anchor_dbm.  The spatial pattern follows the strip currents.
double b1_at(const CpwGeometry& geom, double y, double z, double power_dbm,
             double anchor_dbm, double anchor_tesla,
             Warnings* warnings = nullptr, double cap_dbm = 1e9);

std::array<double, 2> b1_reference_point(const CpwGeometry& geom);

// Regular grid of samples over the epi-layer cross-section.
std::vector<FieldSample> b1_map(const CpwGeometry& geom, double power_dbm,
                                double anchor_dbm, double anchor_tesla,
                                int ny = 64, int nz = 16,
                                Warnings* warnings = nullptr,
                                double cap_dbm = 1e9);

// Regions are the central 40% band directly above the pin or the gaps,
// sampled over the epi-layer height; the edge neighborhoods between them
// are crossover zones that belong to neither.
enum class SampleRegion { above_pin, above_gap };

// Mean of the bias-field component along B0 over the region (odd in theta),
// weighted by B1^2 detection sensitivity.  Tesla at bias current i.
double mean_parallel_component(const CpwGeometry& geom, double i, double theta,
                               SampleRegion region);

// Width (FWHM, Gaussian-equivalent 2.355 sigma) of the parallel-component
// distribution over the region, B1^2-weighted.  Tesla at bias current i.
double broadening_vs_misalignment(const CpwGeometry& geom, double i,
                                  double theta, SampleRegion region);

// Static line shift from the quadrature addition |B0 + Bi| - B0 at zero
// misalignment; even in i.
double quadrature_shift(const CpwGeometry& geom, double i, double b0, double y,
                        double z);

enum class CompensationKind { symmetric_pair, bipolar };

// Timing of a DEER-style retune pulse inside a Hahn sequence, in the
// sequence's absolute clock.
struct DeerTiming {
    double t_pi = 34e-6;           // s, observer pi pulse center
    double t_echo = 68e-6;         // s, echo center (2 tau after the pi/2)
    double t_pump = 20e-6;         // s, pump pulse center
    double pump_duration = 400e-9; // s
    double settle_time = 1e-6;     // s, resonator settle before the pump
    double guard = 1e-6;           // s, keep-out around pi pulse and echo
};

// Bias schedule whose primary lobe retunes the resonator around the pump
// window, plus a compensating lobe solved so the first-order accumulated
// phase (sign-flipped at the pi pulse) is zero.
BiasSchedule compensation_schedule(CompensationKind kind,
                                   const DeerTiming& timing, double i,
                                   double lag_time_constant);

// First-order spin phase per unit bias_shift for a schedule inside a Hahn
// sequence: integral of current with the sign flipped at t_flip.
double echo_phase_integral(const BiasSchedule& sched, double t_flip,
                           double t_echo);

}  // namespace spinres
