#pragma once

#include <string>
#include <vector>

#include "spinres/common.hpp"
#include "spinres/fitting.hpp"

namespace spinres {

// Per-device constants for the bias-current tuning law
//   delta_f(i) = -f0 * [ (i/i2_star)^2 + (i/i4_star)^4 ].
struct DeviceTuningParams {
    std::string name;
    double f0 = 0.0;            // Hz, zero-current resonance
    double i2_star = 0.0;       // A
    double i4_star = 0.0;       // A
    double i_critical = 0.0;    // A
    double q_loaded = 0.0;
    double coupling = 0.0;      // Q_internal / Q_external
    double max_power_no_bias_dbm = 0.0;
    double max_power_biased_dbm = 0.0;
    double center_pin_width = 0.0;  // m

    // Drive calibration: omega1 (rad/s) produced at power_ref_dbm.
    double omega1_ref = 0.0;
    double power_ref_dbm = 0.0;

    // Bias-circuit lag, calibrated so the 3.9 mA step reaches its target
    // in 270 ns (see biasdyn).
    double tuning_lag = 0.0;  // s

    void validate() const;

    double power_dbm_for_omega1(double omega1) const;
    double omega1_for_power_dbm(double dbm) const;
    // Cap that applies at the given bias state.
    double power_cap_dbm(bool biased) const {
        return biased ? max_power_biased_dbm : max_power_no_bias_dbm;
    }
};

DeviceTuningParams load_device(const std::string& path);

struct TuningDataset {
    // (current A, delta_f Hz); currents distinct and non-negative,
    // delta_f <= 0.
    std::vector<std::pair<double, double>> points;
    void validate() const;
};

struct TuningFit {
    double i2_star = 0.0;
    double i4_star = 0.0;  // +inf when the quartic term is absent
    double i2_star_stderr = 0.0;
    double i4_star_stderr = 0.0;
    std::vector<std::vector<double>> covariance;  // over (1/I2^2, 1/I4^4)
    double residual_rms = 0.0;
};

// Frequency shift of Eq.-form tuning law; always <= 0, even in i.
// Optionally warns when drive_power_dbm exceeds the biased/unbiased cap.
double delta_f(double current, const DeviceTuningParams& p,
               Warnings* warnings = nullptr, double drive_power_dbm = -1e9);

// Monotone inversion of delta_f on [0, i_critical).  target <= 0.
double invert_delta_f(double target, const DeviceTuningParams& p);

// Largest reachable |delta_f| just below the critical current.
double max_delta_f_magnitude(const DeviceTuningParams& p);

// Least-squares extraction of (i2_star, i4_star) with f0 held fixed.
// The model is linear in (1/I2^2, 1/I4^4), solved by damped Gauss-Newton
// (one exact step for clean data).
TuningFit fit_tuning_params(const TuningDataset& data, double f0);

// Q needed for a fixed resonator to span two tones `span` apart.
double q_requirement(double f_center, double span);

}  // namespace spinres
