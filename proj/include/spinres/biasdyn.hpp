#pragma once

#include <string>
#include <vector>

#include "spinres/common.hpp"
#include "spinres/kinet.hpp"

namespace spinres {

struct BiasElement {
    double t_start = 0.0;  // s
    double t_end = 0.0;    // s
    double amplitude = 0.0;  // A (ideal commanded level; lag is applied on top)
};

struct BiasSchedule {
    std::vector<BiasElement> elements;  // non-overlapping, time-ordered
    double lag_time_constant = 0.0;     // s, first-order bias-circuit lag

    void validate() const;
    // Checks amplitudes against the device critical current.
    void validate_against(const DeviceTuningParams& dev) const;
    double end_time() const;

    static BiasSchedule step(double amplitude, double t_on, double t_off,
                             double lag);
};

BiasSchedule load_schedule(const std::string& path);

// Precomputed breakpoint states of the lag-filtered schedule for repeated
// evaluation: at() and integral() are exact (piecewise exponentials).
class BiasCurrentSampler {
public:
    explicit BiasCurrentSampler(const BiasSchedule& s);
    double at(double time) const;
    double integral(double a, double b) const;

private:
    double evolve(double i0, double goal, double dt) const;
    std::vector<double> t_;
    std::vector<double> i_at_;
    std::vector<double> target_;
    double tau_ = 0.0;
};

// Lag-filtered current at time t (analytic piecewise-exponential response).
double current_at(const BiasSchedule& sched, double t);

// First-order accumulated phase per unit bias_shift: integral of the
// lag-filtered current over [t0, t1], with an optional sign flip at t_flip
// (refocusing pulse).  Used by the compensation solver and its tests.
double current_integral(const BiasSchedule& sched, double t0, double t1);

struct CavityTrace {
    std::vector<double> times;                  // s, uniform grid
    std::vector<double> transmitted_amplitude;  // normalized to static resonant
    std::vector<double> f_res_of_t;             // Hz
};

// Driven single-mode cavity with instantaneous resonance f0 + delta_f(i(t))
// and linewidth kappa = 2*pi*f0/Q, probed at probe_f.  Piecewise-exact
// complex-amplitude integration.
CavityTrace cavity_trace(double probe_f, const BiasSchedule& sched,
                         const DeviceTuningParams& dev, double duration);

// Time at which transmission through the retuning cavity peaks, probing at
// f0 + target_delta_f.  Plateaus report their first point within 0.1% of
// the maximum.
double tuning_time(const BiasSchedule& sched, const DeviceTuningParams& dev,
                   double target_delta_f);

// Lag constant such that a step to invert_delta_f(target) arrives in
// `arrival` seconds (the Fig.-3-style calibration point).
double calibrate_lag(const DeviceTuningParams& dev, double target_delta_f,
                     double arrival);

struct ChirpSpec {
    double f_start = 0.0;  // Hz, absolute (below f0)
    double f_end = 0.0;    // Hz, absolute
    double duration = 0.0; // s
};

struct ChirpSchedule {
    BiasSchedule schedule;
    double chirp_begin = 0.0;  // s, start of the tracked window
    double chirp_end = 0.0;
};

// Piecewise-constant command schedule whose lag-filtered tuning response
// follows the chirped frequency; includes a settle lead-in and first-order
// feed-forward of the lag.
ChirpSchedule chirp_tracking_schedule(const ChirpSpec& chirp,
                                      const DeviceTuningParams& dev);

}  // namespace spinres
