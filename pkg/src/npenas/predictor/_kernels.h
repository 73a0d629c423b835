/* Elementwise pieces of the fused GIN step.  Plain C so that restrict
 * pointers and contiguous inner loops let the compiler vectorize. */
#ifndef NPENAS_KERNELS_H
#define NPENAS_KERNELS_H

#include <math.h>
#include <string.h>

#define NPK_BN_EPS 1e-5
#define NPK_MOMENTUM 0.1

/* Z = X + S X per graph; S is (G, N, N), X and Z are (G*N, F). */
static void npk_aggregate(const double *restrict S, const double *restrict X, double *restrict Z,
                          int G, int N, int F)
{
    memcpy(Z, X, (size_t)G * N * F * sizeof(double));
    for (int g = 0; g < G; g++) {
        const double *Sg = S + (size_t)g * N * N;
        const double *Xg = X + (size_t)g * N * F;
        double *Zg = Z + (size_t)g * N * F;
        for (int v = 0; v < N; v++) {
            double *restrict zr = Zg + (size_t)v * F;
            for (int u = 0; u < N; u++) {
                double s = Sg[v * N + u];
                if (s != 0.0) {
                    const double *restrict xr = Xg + (size_t)u * F;
                    for (int j = 0; j < F; j++)
                        zr[j] += s * xr[j];
                }
            }
        }
    }
}

/* dX = dZ + S^T dZ per graph. */
static void npk_aggregate_t(const double *restrict S, const double *restrict dZ, double *restrict dX,
                            int G, int N, int F)
{
    memcpy(dX, dZ, (size_t)G * N * F * sizeof(double));
    for (int g = 0; g < G; g++) {
        const double *Sg = S + (size_t)g * N * N;
        const double *dZg = dZ + (size_t)g * N * F;
        double *dXg = dX + (size_t)g * N * F;
        for (int v = 0; v < N; v++) {
            const double *restrict zr = dZg + (size_t)v * F;
            for (int u = 0; u < N; u++) {
                double s = Sg[v * N + u];
                if (s != 0.0) {
                    double *restrict xr = dXg + (size_t)u * F;
                    for (int j = 0; j < F; j++)
                        xr[j] += s * zr[j];
                }
            }
        }
    }
}

static void npk_col_sum(const double *restrict x, double *restrict out, int rows, int cols)
{
    for (int j = 0; j < cols; j++)
        out[j] = 0.0;
    for (int i = 0; i < rows; i++) {
        const double *restrict xr = x + (size_t)i * cols;
        for (int j = 0; j < cols; j++)
            out[j] += xr[j];
    }
}

static void npk_mul(double *restrict x, const double *restrict y, int n)
{
    for (int i = 0; i < n; i++)
        x[i] *= y[i];
}

/* exp(x) for x <= 0, branch-free so the loop in npk_act vectorizes.
 * Range reduction by ln 2 and a degree-13 Taylor polynomial: ~1 ulp. */
static inline double npk_exp_nonpos(double x)
{
    x = x < -700.0 ? -700.0 : x;
    double k = floor(x * 1.4426950408889634 + 0.5);
    double r = (x - k * 6.93147180369123816490e-01) - k * 1.90821492927058770002e-10;
    double p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    long long bits = ((long long)k + 1023) << 52;
    double scale;
    memcpy(&scale, &bits, sizeof scale);
    return p * scale;
}

/* a = act(p + bias) row-wise; p is overwritten with the activation derivative. */
static void npk_act(double *restrict p, const double *restrict bias, double *restrict a, int rows, int cols, int celu)
{
    for (int i = 0; i < rows; i++) {
        double *restrict pr = p + (size_t)i * cols;
        double *restrict ar = a + (size_t)i * cols;
        if (celu) {
            for (int j = 0; j < cols; j++) {
                double x = pr[j] + bias[j];
                double e = npk_exp_nonpos(x > 0 ? 0.0 : x);
                ar[j] = x > 0 ? x : e - 1.0;
                pr[j] = x > 0 ? 1.0 : e;
            }
        } else {
            for (int j = 0; j < cols; j++) {
                double x = pr[j] + bias[j];
                ar[j] = x > 0 ? x : 0.0;
                pr[j] = x > 0 ? 1.0 : 0.0;
            }
        }
    }
}

/* Training-mode batch norm over rows.  out may not alias a. */
static void npk_bn_forward(const double *restrict a, double *restrict xhat, double *restrict out,
                           double *restrict inv, double *restrict mean, int rows, int cols,
                           const double *restrict gamma, const double *restrict beta,
                           double *restrict rmean, double *restrict rvar)
{
    npk_col_sum(a, mean, rows, cols);
    for (int j = 0; j < cols; j++) {
        mean[j] /= rows;
        inv[j] = 0.0;
    }
    for (int i = 0; i < rows; i++) {
        const double *restrict ar = a + (size_t)i * cols;
        for (int j = 0; j < cols; j++) {
            double d = ar[j] - mean[j];
            inv[j] += d * d;
        }
    }
    for (int j = 0; j < cols; j++) {
        double var = inv[j] / rows;
        rmean[j] = (1 - NPK_MOMENTUM) * rmean[j] + NPK_MOMENTUM * mean[j];
        rvar[j] = (1 - NPK_MOMENTUM) * rvar[j] + NPK_MOMENTUM * var * rows / (rows - 1.0);
        inv[j] = 1.0 / sqrt(var + NPK_BN_EPS);
    }
    for (int i = 0; i < rows; i++) {
        const double *restrict ar = a + (size_t)i * cols;
        double *restrict xr = xhat + (size_t)i * cols;
        double *restrict orow = out + (size_t)i * cols;
        for (int j = 0; j < cols; j++) {
            double d = (ar[j] - mean[j]) * inv[j];
            xr[j] = d;
            orow[j] = gamma[j] * d + beta[j];
        }
    }
}

/* Also multiplies the input gradient by the activation derivative ``dact``. */
static void npk_bn_backward(const double *restrict dout, const double *restrict xhat,
                            const double *restrict inv, const double *restrict gamma, int rows, int cols,
                            double *restrict dgamma, double *restrict dbeta, double *restrict din,
                            const double *restrict dact)
{
    for (int j = 0; j < cols; j++) {
        dgamma[j] = 0.0;
        dbeta[j] = 0.0;
    }
    for (int i = 0; i < rows; i++) {
        const double *restrict dr = dout + (size_t)i * cols;
        const double *restrict xr = xhat + (size_t)i * cols;
        for (int j = 0; j < cols; j++) {
            dgamma[j] += dr[j] * xr[j];
            dbeta[j] += dr[j];
        }
    }
    for (int i = 0; i < rows; i++) {
        const double *restrict dr = dout + (size_t)i * cols;
        const double *restrict xr = xhat + (size_t)i * cols;
        const double *restrict pr = dact + (size_t)i * cols;
        double *restrict out = din + (size_t)i * cols;
        for (int j = 0; j < cols; j++)
            out[j] = pr[j] * ((inv[j] / rows) * (rows * dr[j] * gamma[j] - dbeta[j] * gamma[j] - xr[j] * (dgamma[j] * gamma[j])));
    }
}

/* Mean over consecutive groups of n rows. */
static void npk_pool(const double *restrict h, double *restrict e, int G, int N, int F)
{
    for (int g = 0; g < G; g++) {
        double *restrict er = e + (size_t)g * F;
        for (int j = 0; j < F; j++)
            er[j] = 0.0;
        for (int v = 0; v < N; v++) {
            const double *restrict hr = h + ((size_t)g * N + v) * F;
            for (int j = 0; j < F; j++)
                er[j] += hr[j];
        }
        for (int j = 0; j < F; j++)
            er[j] /= N;
    }
}

static void npk_unpool(const double *restrict de, double *restrict dh, int G, int N, int F)
{
    double w = 1.0 / N;
    for (int g = 0; g < G; g++)
        for (int v = 0; v < N; v++) {
            double *restrict hr = dh + ((size_t)g * N + v) * F;
            const double *restrict er = de + (size_t)g * F;
            for (int j = 0; j < F; j++)
                hr[j] = er[j] * w;
        }
}

/* Adam with L2 decay folded into the gradient; c1, c2 are the bias corrections. */
static void npk_adam(double *restrict p, const double *restrict g, double *restrict m, double *restrict v,
                     long n, double lr, double b1, double b2, double eps, double wd, double c1, double c2)
{
    double ic1 = 1.0 / c1, ic2 = 1.0 / c2;
    for (long i = 0; i < n; i++) {
        double gi = g[i] + wd * p[i];
        m[i] = m[i] * b1 + (1.0 - b1) * gi;
        v[i] = v[i] * b2 + (1.0 - b2) * gi * gi;
        p[i] -= lr * (m[i] * ic1) / (sqrt(v[i] * ic2) + eps);
    }
}

#endif
