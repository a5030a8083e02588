#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

namespace spinres {

inline constexpr const char* kVersion = "0.1.0";

using Complex = std::complex<double>;

namespace constants {
inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;
inline constexpr double mu0 = 4e-7 * pi;              // T*m/A
inline constexpr double hbar = 1.054571817e-34;        // J*s
inline constexpr double speed_of_light = 2.99792458e8; // m/s
// Free-electron gyromagnetic ratio, Hz/T.  Used for dipolar couplings;
// the field-sweep slope is a separate per-species calibration.
inline constexpr double gamma_electron_hz_per_t = 28.0e9;
}  // namespace constants

// Non-fatal conditions (e.g. drive power above a device cap) are collected
// here instead of being thrown.  Callers that don't care pass nullptr.
struct Warnings {
    std::vector<std::string> messages;
    void add(std::string msg) { messages.push_back(std::move(msg)); }
    bool empty() const { return messages.empty(); }
};

inline void warn(Warnings* w, const std::string& msg) {
    if (w != nullptr) w->add(msg);
}

// Global worker cap for packet-parallel loops (CLI --threads).
void set_max_threads(int n);
int max_threads();

// Runs fn(i) for i in [0, n).  Work is split into fixed-size blocks so
// any reduction done per block is independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace spinres
