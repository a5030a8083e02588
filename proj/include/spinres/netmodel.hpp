#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "spinres/common.hpp"

namespace spinres {

struct LineSegment {
    double length = 0.0;            // m
    double z0 = 0.0;                // ohm
    double v_phase = 0.0;           // m/s
    double kinetic_fraction = 0.0;  // share of total inductance, [0,1)

    void validate() const;
};

struct NetworkSpec {
    std::vector<LineSegment> segments;
    double port_impedance = 50.0;  // ohm
    // Internal quality factor folded into the middle (cavity) segment as a
    // distributed series loss alpha = beta / (2 * internal_q).  0 disables.
    double internal_q = 0.0;

    void validate() const;
    std::size_t cavity_index() const { return segments.size() / 2; }
    bool is_mirror_symmetric(double rel_tol = 1e-9) const;
};

struct ResonanceSummary {
    double f_res = 0.0;        // Hz
    double q_loaded = 0.0;     // f_res / FWHM of |S21|^2
    double coupling = 0.0;     // |S21|peak / (1 - |S21|peak)
    double peak_s21_mag = 0.0;
};

// ABCD matrix, row-major [A, B, C, D].
using AbcdMatrix = std::array<Complex, 4>;

// Lossless transmission-line two-port.  det == 1 (reciprocity).
AbcdMatrix abcd_segment(const LineSegment& seg, double f);

// Same segment with distributed series loss alpha = beta/(2*q_internal).
AbcdMatrix abcd_segment_lossy(const LineSegment& seg, double f, double q_internal);

AbcdMatrix abcd_multiply(const AbcdMatrix& a, const AbcdMatrix& b);

// Full-network transmission with port_impedance terminations.
Complex s21(const NetworkSpec& net, double f);
// Reverse-direction transmission (segments traversed output to input).
Complex s12(const NetworkSpec& net, double f);

// Resonance extraction on an arbitrary |S21| magnitude function.  q_hint
// sets the coarse grid pitch f/(20*q_hint); refinement is by bisection.
ResonanceSummary find_resonance_of(const std::function<double(double)>& s21_mag,
                                   double f_lo, double f_hi,
                                   double loss_q_internal,
                                   double q_hint = 10000.0,
                                   Warnings* warnings = nullptr);

ResonanceSummary find_resonance(const NetworkSpec& net, double f_lo, double f_hi,
                                double loss_q_internal, double q_hint = 10000.0,
                                Warnings* warnings = nullptr);

NetworkSpec load_network(const std::string& path);
void save_network(const NetworkSpec& net, const std::string& path);

// Stepped-impedance photonic-bandgap resonator: n_periods of (low, high)
// quarter-wave sections at f_bragg on each side of a half-wave-ish cavity.
NetworkSpec build_pbg_network(int n_periods, double z_low, double z_high,
                              double z_cavity, double f_bragg,
                              double cavity_length, double internal_q,
                              double v_low, double v_high, double v_cavity,
                              double kinetic_fraction_cavity = 0.3);

struct PbgCalibration {
    NetworkSpec network;
    double cavity_length = 0.0;
    double f_bragg = 0.0;
    double internal_q = 0.0;
    ResonanceSummary summary;
};

// Solves (cavity_length, f_bragg, internal_q) so the network resonates at
// f_target with loaded Q q_target and coupling beta_target.
PbgCalibration calibrate_pbg(double f_target, double q_target, double beta_target);

}  // namespace spinres
