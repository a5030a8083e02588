#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "spinres/biasdyn.hpp"
#include "spinres/common.hpp"
#include "spinres/csvio.hpp"
#include "spinres/fieldmap.hpp"
#include "spinres/kinet.hpp"

namespace spinres {

enum class Species { P31, As75 };
enum class PulseKind { rect, bir4_wurst20, delay, acquire };
enum class PulseStyle { rect, adiabatic };

struct SpeciesConfig {
    double gamma_eff = 31.132e9;         // Hz/T field-to-frequency slope
    double line_center_field = 0.27478;  // T
    double line_fwhm = 0.02e-3;          // T
    double t2 = std::numeric_limits<double>::infinity();  // s
    double t1 = std::numeric_limits<double>::infinity();  // s
};

struct SpinSystemConfig {
    SpeciesConfig p31;
    SpeciesConfig as75;
    double stretch_exponent = 1.0;  // echo-decay fit model only

    const SpeciesConfig& of(Species s) const {
        return s == Species::P31 ? p31 : as75;
    }
};

SpinSystemConfig load_spin_config(const std::string& path);

struct PulseElement {
    PulseKind kind = PulseKind::delay;
    double duration = 0.0;         // s
    double amplitude = 0.0;        // rad/s nominal Rabi frequency
    double phase = 0.0;            // rad
    double flip_angle = 0.0;       // rad, adiabatic only
    double chirp_halfwidth = 0.0;  // Hz, adiabatic only
    double carrier_offset = 0.0;   // Hz relative to the sequence reference

    static PulseElement rect(double duration, double amplitude, double phase,
                             double carrier_offset = 0.0);
    static PulseElement bir4(double duration, double amplitude, double flip,
                             double chirp_halfwidth, double phase = 0.0,
                             double carrier_offset = 0.0);
    static PulseElement delay(double duration);
    static PulseElement acquire(double duration);
};

std::vector<PulseElement> load_sequence(const std::string& path);

struct WaveformSample {
    double omega1 = 0.0;       // rad/s
    double phase = 0.0;        // rad
    double freq_offset = 0.0;  // rad/s
};

// Sampled drive for one pulse element; values are interval midpoints.
// Requires dt <= duration/50.
std::vector<WaveformSample> waveform(const PulseElement& p, double dt);

struct SpinPacket {
    std::array<double, 3> m{0.0, 0.0, 1.0};
    double detuning0 = 0.0;   // rad/s, static offset from the drive frame
    double b1_scale = 1.0;    // local B1 / nominal
    double bias_shift = 0.0;  // rad/s per ampere
    double weight = 1.0;
    Species species = Species::P31;
};

struct Relaxation {
    double t2 = std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
};

// Bloch propagation through sampled drive: exact rotation about the
// instantaneous effective field each step, then relaxation factors.
// Throws StepTooLarge when dt * |Omega| exceeds 0.1 rad at any sample.
SpinPacket propagate(SpinPacket packet, const std::vector<WaveformSample>& wf,
                     double dt,
                     const std::function<double(double)>& bias_current_of_t,
                     double t0 = 0.0, const Relaxation& relax = {});

// Same propagation with the bias current pre-sampled at step midpoints
// (nullptr for no bias); this is the hot path used by run_sequence.
SpinPacket propagate_sampled(SpinPacket packet,
                             const std::vector<WaveformSample>& wf, double dt,
                             const std::vector<double>* bias_samples,
                             const Relaxation& relax);

// One Bloch step: exact rotation about (wx, wy, wz) over dt with the
// dm/dt = m x Omega sign convention.
void bloch_step(std::array<double, 3>& m, double wx, double wy, double wz,
                double dt);

// Free evolution: exact z-rotation by detuning0*duration + extra_phase.
void evolve_free(SpinPacket& packet, double duration, double extra_phase,
                 const Relaxation& relax);

struct SequenceOptions {
    double acquire_sample_dt = 2e-6 / 64.0;
    double step_phase_budget = 0.05;  // target dt*|Omega| per step
    int min_steps_per_pulse = 50;
};

struct SequenceResult {
    std::vector<double> times;    // acquire sample times (absolute)
    std::vector<Complex> signal;  // sum of weights * (mx + i my)
    double echo_amp = 0.0;        // max |signal| over the window
    double echo_phase = 0.0;      // arg at the maximum
    double echo_area = 0.0;       // |integral of signal| over the window
    double echo_time = 0.0;       // time of the maximum
    Warnings warnings;
};

// Runs the pulse sequence over the ensemble under the bias schedule.
// Exactly one acquire element is required.  Packet evolution is
// parallelized over fixed blocks with an order-independent reduction.
SequenceResult run_sequence(const std::vector<SpinPacket>& ensemble,
                            const std::vector<PulseElement>& seq,
                            const BiasSchedule& bias,
                            const SpinSystemConfig& cfg,
                            const DeviceTuningParams* dev = nullptr,
                            const SequenceOptions& opt = {});

struct EnsembleOptions {
    int gh_points = 64;     // Gauss-Hermite nodes over the line
    int ny = 32, nz = 32;   // spatial samples over the epi cross-section
    bool spatial = true;
    double min_node_weight = 1e-12;
    bool monte_carlo = false;  // seeded sampling instead of the tensor grid
    int mc_samples = 4096;
    std::uint64_t seed = 1;
};

// Deterministic tensor-grid ensemble: Gauss-Hermite nodes over the spin
// line at field offset field_offset_t from line center, crossed with
// spatial samples (B1 scale, bias shift at misalignment theta).
// drive_offset_hz is the drive frequency minus the zero-bias resonator f0.
std::vector<SpinPacket> build_ensemble(const SpeciesConfig& sp, Species species,
                                       double field_offset_t,
                                       double drive_offset_hz,
                                       const CpwGeometry* geom, double theta,
                                       const EnsembleOptions& opt);

// Gauss-Hermite nodes/weights for exp(-x^2) on n points.
void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights);

// Shared experiment context for the pulsed-ESR runs.
struct SpinContext {
    DeviceTuningParams dev;
    CpwGeometry geom;
    SpinSystemConfig spins;
    EnsembleOptions ens;
    SequenceOptions seq;
    double tau = 60e-6;              // Hahn interpulse delay
    double rect_pi2_duration = 200e-9;
    double rect_omega1 = constants::pi / 2.0 / 200e-9;
    double adiabatic_duration = 10e-6;
    double adiabatic_omega1 = 1.2e7;  // rad/s
    double chirp_halfwidth = 2e6;     // Hz
    double acquire_window = 2e-6;
    double theta = 0.0;               // misalignment, rad
};

// Hahn echo sequence (pi/2 +x, pi +y) with centers tau apart and a 2 us
// acquire window centered on the echo.  Under bias, rectangular drive is
// clamped to the biased power cap; adiabatic pulses are not.
std::vector<PulseElement> hahn_sequence(const SpinContext& ctx, PulseStyle style,
                                        double tau, bool biased);

// Time from sequence start (t=0 at the first pulse's leading edge) to the
// nominal echo center.
double hahn_echo_time(const SpinContext& ctx, PulseStyle style, double tau);

// Echo-detected field sweep at the given bias current.
ExperimentResult field_sweep(const SpinContext& ctx, double bias_current,
                             PulseStyle style,
                             const std::vector<double>& field_grid,
                             Warnings* warnings = nullptr);

// Hahn decay vs 2*tau, optionally with pulsed bias plus compensation.
ExperimentResult t2_decay(const SpinContext& ctx, PulseStyle style,
                          const std::vector<double>& tau_values,
                          double bias_current,
                          std::optional<CompensationKind> compensation,
                          Warnings* warnings = nullptr);

struct T2Fit {
    double t2 = 0.0;      // s
    double stderr_t2 = 0.0;
    double amplitude = 0.0;
};

// Single-exponential fit amp * exp(-(x/t2)^stretch) of a decay curve
// (x = total evolution time 2*tau).
T2Fit fit_t2(const ExperimentResult& decay, double stretch_exponent = 1.0);

// Quadratic interpolation of the curve maximum; x of the peak.
double peak_location(const ExperimentResult& result, std::size_t y_column = 0);

// m_z -> -m_z efficiency of a pi pulse at given b1 scale and detuning.
double inversion_efficiency(const PulseElement& pulse, double b1_scale,
                            double detuning_hz, double step_phase_budget = 0.05);

}  // namespace spinres
