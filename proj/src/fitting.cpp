#include "spinres/fitting.hpp"

#include <algorithm>
#include <cmath>

#include "spinres/errors.hpp"

namespace spinres {

namespace {

// Gaussian elimination with partial pivoting; a is n x n, b is n.
// Returns false when the matrix is numerically singular.
bool solve_dense(std::vector<std::vector<double>> a, std::vector<double> b,
                 std::vector<double>& x) {
    const std::size_t n = a.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        if (std::fabs(a[pivot][col]) < 1e-300) return false;
        std::swap(a[pivot], a[col]);
        std::swap(b[pivot], b[col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    x.assign(n, 0.0);
    for (std::size_t ri = n; ri-- > 0;) {
        double s = b[ri];
        for (std::size_t c = ri + 1; c < n; ++c) s -= a[ri][c] * x[c];
        x[ri] = s / a[ri][ri];
    }
    return true;
}

bool invert_dense(const std::vector<std::vector<double>>& a,
                  std::vector<std::vector<double>>& inv) {
    const std::size_t n = a.size();
    inv.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> e(n, 0.0);
        e[k] = 1.0;
        std::vector<double> col;
        if (!solve_dense(a, e, col)) return false;
        for (std::size_t r = 0; r < n; ++r) inv[r][k] = col[r];
    }
    return true;
}

double rms(const std::vector<double>& r) {
    double s = 0.0;
    for (double v : r) s += v * v;
    return r.empty() ? 0.0 : std::sqrt(s / static_cast<double>(r.size()));
}

}  // namespace

FitResult linear_least_squares(const std::vector<std::vector<double>>& design,
                               const std::vector<double>& y) {
    const std::size_t m = design.size();
    if (m == 0 || m != y.size()) throw IllConditioned("empty or mismatched design");
    const std::size_t n = design[0].size();

    std::vector<std::vector<double>> ata(n, std::vector<double>(n, 0.0));
    std::vector<double> aty(n, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
            aty[i] += design[r][i] * y[r];
            for (std::size_t j = 0; j < n; ++j) ata[i][j] += design[r][i] * design[r][j];
        }
    }

    FitResult out;
    if (!solve_dense(ata, aty, out.params))
        throw IllConditioned("normal equations are singular");

    std::vector<double> resid(m);
    for (std::size_t r = 0; r < m; ++r) {
        double pred = 0.0;
        for (std::size_t i = 0; i < n; ++i) pred += design[r][i] * out.params[i];
        resid[r] = y[r] - pred;
    }
    out.residual_rms = rms(resid);

    double dof = static_cast<double>(m > n ? m - n : 1);
    double s2 = 0.0;
    for (double v : resid) s2 += v * v;
    s2 /= dof;

    std::vector<std::vector<double>> inv;
    if (!invert_dense(ata, inv)) throw IllConditioned("covariance is singular");
    out.covariance.assign(n, std::vector<double>(n, 0.0));
    out.stderrs.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) out.covariance[i][j] = inv[i][j] * s2;
        out.stderrs[i] = std::sqrt(std::max(0.0, out.covariance[i][i]));
    }
    return out;
}

FitResult levenberg_marquardt(
    const std::function<std::vector<double>(const std::vector<double>&)>& residual,
    std::vector<double> initial,
    int max_iterations,
    double tolerance) {
    const std::size_t n = initial.size();
    std::vector<double> p = std::move(initial);
    std::vector<double> r = residual(p);
    const std::size_t m = r.size();
    if (m < n) throw FitDiverged("fewer residuals than parameters");

    double cost = 0.0;
    for (double v : r) cost += v * v;
    const double initial_cost = cost;

    double lambda = 1e-3;
    int iter = 0;
    bool any_improvement = false;

    std::vector<std::vector<double>> jac(m, std::vector<double>(n));
    for (; iter < max_iterations; ++iter) {
        // Forward-difference Jacobian.
        for (std::size_t j = 0; j < n; ++j) {
            double h = 1e-7 * std::max(1.0, std::fabs(p[j]));
            std::vector<double> pj = p;
            pj[j] += h;
            std::vector<double> rj = residual(pj);
            for (std::size_t i = 0; i < m; ++i) jac[i][j] = (rj[i] - r[i]) / h;
        }
        std::vector<std::vector<double>> jtj(n, std::vector<double>(n, 0.0));
        std::vector<double> jtr(n, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t a = 0; a < n; ++a) {
                jtr[a] += jac[i][a] * r[i];
                for (std::size_t b = 0; b < n; ++b) jtj[a][b] += jac[i][a] * jac[i][b];
            }
        }

        bool stepped = false;
        for (int attempt = 0; attempt < 16; ++attempt) {
            auto damped = jtj;
            for (std::size_t a = 0; a < n; ++a) damped[a][a] *= (1.0 + lambda);
            std::vector<double> delta;
            if (!solve_dense(damped, jtr, delta)) {
                lambda *= 10.0;
                continue;
            }
            std::vector<double> pn(n);
            for (std::size_t a = 0; a < n; ++a) pn[a] = p[a] - delta[a];
            std::vector<double> rn = residual(pn);
            double cn = 0.0;
            for (double v : rn) cn += v * v;
            if (cn < cost) {
                double drop = cost - cn;
                p = std::move(pn);
                r = std::move(rn);
                cost = cn;
                lambda = std::max(lambda * 0.3, 1e-12);
                stepped = true;
                any_improvement = true;
                if (drop <= tolerance * std::max(cost, 1e-300)) iter = max_iterations;
                break;
            }
            lambda *= 10.0;
        }
        if (!stepped) break;
    }

    if (!any_improvement && cost > tolerance && cost >= initial_cost)
        throw FitDiverged("optimizer failed to reduce the residual");

    FitResult out;
    out.params = p;
    out.iterations = iter;
    out.residual_rms = std::sqrt(cost / static_cast<double>(m));

    // Covariance from the final Jacobian.
    for (std::size_t j = 0; j < n; ++j) {
        double h = 1e-7 * std::max(1.0, std::fabs(p[j]));
        std::vector<double> pj = p;
        pj[j] += h;
        std::vector<double> rj = residual(pj);
        for (std::size_t i = 0; i < m; ++i) jac[i][j] = (rj[i] - r[i]) / h;
    }
    std::vector<std::vector<double>> jtj(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) jtj[a][b] += jac[i][a] * jac[i][b];

    double dof = static_cast<double>(m > n ? m - n : 1);
    double s2 = cost / dof;
    std::vector<std::vector<double>> inv;
    if (!invert_dense(jtj, inv)) throw IllConditioned("covariance is singular");
    out.covariance.assign(n, std::vector<double>(n, 0.0));
    out.stderrs.assign(n, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) out.covariance[a][b] = inv[a][b] * s2;
        out.stderrs[a] = std::sqrt(std::max(0.0, out.covariance[a][a]));
    }
    return out;
}

}  // namespace spinres
