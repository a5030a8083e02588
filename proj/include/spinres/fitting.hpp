#pragma once

#include <functional>
#include <vector>

namespace spinres {

struct FitResult {
    std::vector<double> params;
    std::vector<double> stderrs;          // sqrt of covariance diagonal
    std::vector<std::vector<double>> covariance;
    double residual_rms = 0.0;
    int iterations = 0;
};

// Ordinary linear least squares y ~ X*beta for a small number of columns.
// Covariance is (X^T X)^-1 * s^2 with s^2 the residual variance.
// Throws IllConditioned when the normal equations are singular.
FitResult linear_least_squares(const std::vector<std::vector<double>>& design,
                               const std::vector<double>& y);

// Damped Gauss-Newton (Levenberg-Marquardt) on a residual vector
// r(p) with numerically differenced Jacobian.  Minimizes |r|^2.
// Throws FitDiverged when no damping value reduces the residual.
FitResult levenberg_marquardt(
    const std::function<std::vector<double>(const std::vector<double>&)>& residual,
    std::vector<double> initial,
    int max_iterations = 100,
    double tolerance = 1e-12);

}  // namespace spinres
