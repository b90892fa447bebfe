# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled RK4 kernels for the cartpole and race-car models.

Each kernel steps a batch of states with zero-order-hold inputs. The scaling
arrays (mx, mu, mt) fold an optional nondimensionalization into the stage
evaluations: k = mt * f(mx*x, mu*u) / mx, so the same kernel serves the
physical and the dimensionless model.
"""

import numpy as np

from libc.math cimport sin, cos, tanh, fmod


cdef inline void _cartpole_rhs(double* x, double* u, double* p, double* out) noexcept nogil:
    cdef double m_c = p[0], m_p = p[1], l = p[2], mu_f = p[3], g = p[4]
    cdef double phi = x[1], xi_dot = x[2], phi_dot = x[3], force = u[0]
    cdef double s = sin(phi), c = cos(phi)
    cdef double denom = m_c + m_p * s * s
    cdef double xi_dd = (force - mu_f * xi_dot + m_p * s * (l * phi_dot * phi_dot - g * c)) / denom
    out[0] = xi_dot
    out[1] = phi_dot
    out[2] = xi_dd
    out[3] = (g * s - xi_dd * c) / l


cdef inline double _curvature(double sigma, double* ends, double* curv,
                              int nseg, double total) noexcept nogil:
    cdef double s = fmod(sigma, total)
    if s < 0:
        s += total
    cdef int i
    for i in range(nseg - 1):
        if s < ends[i]:
            return curv[i]
    return curv[nseg - 1]


cdef inline int _racecar_rhs(double* x, double* u, double* p, double* out,
                             double* ends, double* curv, int nseg,
                             double total) noexcept nogil:
    cdef double m = p[0], l = p[1], l_r = p[2]
    cdef double c_m1 = p[3], c_m2 = p[4], c_r0 = p[5], c_r2 = p[6], c_r3 = p[7]
    cdef double sigma = x[0], n = x[1], alpha = x[2], v = x[3]
    cdef double D = u[0], delta = u[1]
    cdef double kappa = _curvature(sigma, ends, curv, nseg, total)
    cdef double denom = 1.0 - n * kappa
    if denom <= 0.0:
        return 1
    cdef double beta = alpha + (l_r / l) * delta
    cdef double sigma_dot = v * cos(beta) / denom
    out[0] = sigma_dot
    out[1] = v * sin(beta)
    out[2] = (v / l) * delta - kappa * sigma_dot
    out[3] = ((c_m1 - c_m2 * v) * D - c_r0 * tanh(c_r3 * v) - c_r2 * v * v) / m
    return 0


def rk4_cartpole(double[:, ::1] X, double[:, ::1] U, double h, int nsub,
                 double[::1] p, double[::1] mx, double[::1] mu, double mt):
    cdef int nb = X.shape[0]
    out = np.empty((nb, 4))
    cdef double[:, ::1] O = out
    cdef double xs[4]
    cdef double xp[4]
    cdef double k1[4]
    cdef double k2[4]
    cdef double k3[4]
    cdef double k4[4]
    cdef double up[1]
    cdef int b, i, s
    cdef double* pp = &p[0]
    with nogil:
        for b in range(nb):
            for i in range(4):
                xs[i] = X[b, i]
            up[0] = U[b, 0] * mu[0]
            for s in range(nsub):
                for i in range(4):
                    xp[i] = xs[i] * mx[i]
                _cartpole_rhs(xp, up, pp, k1)
                for i in range(4):
                    k1[i] = mt * k1[i] / mx[i]
                    xp[i] = (xs[i] + 0.5 * h * k1[i]) * mx[i]
                _cartpole_rhs(xp, up, pp, k2)
                for i in range(4):
                    k2[i] = mt * k2[i] / mx[i]
                    xp[i] = (xs[i] + 0.5 * h * k2[i]) * mx[i]
                _cartpole_rhs(xp, up, pp, k3)
                for i in range(4):
                    k3[i] = mt * k3[i] / mx[i]
                    xp[i] = (xs[i] + h * k3[i]) * mx[i]
                _cartpole_rhs(xp, up, pp, k4)
                for i in range(4):
                    k4[i] = mt * k4[i] / mx[i]
                    xs[i] = xs[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            for i in range(4):
                O[b, i] = xs[i]
    return out


def rk4_racecar(double[:, ::1] X, double[:, ::1] U, double h, int nsub,
                double[::1] p, double[::1] ends, double[::1] curv,
                double total, double[::1] mx, double[::1] mu, double mt):
    cdef int nb = X.shape[0]
    cdef int nseg = ends.shape[0]
    out = np.empty((nb, 4))
    cdef double[:, ::1] O = out
    cdef double xs[4]
    cdef double xp[4]
    cdef double k1[4]
    cdef double k2[4]
    cdef double k3[4]
    cdef double k4[4]
    cdef double up[2]
    cdef int b, i, s, bad = 0
    cdef double* pp = &p[0]
    cdef double* pe = &ends[0]
    cdef double* pc = &curv[0]
    with nogil:
        for b in range(nb):
            for i in range(4):
                xs[i] = X[b, i]
            up[0] = U[b, 0] * mu[0]
            up[1] = U[b, 1] * mu[1]
            for s in range(nsub):
                for i in range(4):
                    xp[i] = xs[i] * mx[i]
                bad |= _racecar_rhs(xp, up, pp, k1, pe, pc, nseg, total)
                for i in range(4):
                    k1[i] = mt * k1[i] / mx[i]
                    xp[i] = (xs[i] + 0.5 * h * k1[i]) * mx[i]
                bad |= _racecar_rhs(xp, up, pp, k2, pe, pc, nseg, total)
                for i in range(4):
                    k2[i] = mt * k2[i] / mx[i]
                    xp[i] = (xs[i] + 0.5 * h * k2[i]) * mx[i]
                bad |= _racecar_rhs(xp, up, pp, k3, pe, pc, nseg, total)
                for i in range(4):
                    k3[i] = mt * k3[i] / mx[i]
                    xp[i] = (xs[i] + h * k3[i]) * mx[i]
                bad |= _racecar_rhs(xp, up, pp, k4, pe, pc, nseg, total)
                for i in range(4):
                    k4[i] = mt * k4[i] / mx[i]
                    xs[i] = xs[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                if bad:
                    break
            for i in range(4):
                O[b, i] = xs[i]
            if bad:
                break
    if bad:
        raise ValueError("curvilinear projection singularity: n*kappa >= 1")
    return out


def rk4_racecar_du(double[:, ::1] X, double[:, ::1] U, double h, int nsub,
                   double[::1] p, double[::1] ends, double[::1] curv,
                   double total, double[::1] mx, double[::1] mu, double mt):
    """Rate-augmented race car: state [sigma, n, alpha, v, D, delta], inputs
    are the rates [dD/dt, ddelta/dt] held constant over the step."""
    cdef int nb = X.shape[0]
    cdef int nseg = ends.shape[0]
    out = np.empty((nb, 6))
    cdef double[:, ::1] O = out
    cdef double xs[6]
    cdef double xp[6]
    cdef double k1[6]
    cdef double k2[6]
    cdef double k3[6]
    cdef double k4[6]
    cdef double up[2]
    cdef int b, i, s, bad = 0
    cdef double* pp = &p[0]
    cdef double* pe = &ends[0]
    cdef double* pc = &curv[0]
    with nogil:
        for b in range(nb):
            for i in range(6):
                xs[i] = X[b, i]
            up[0] = U[b, 0] * mu[0]
            up[1] = U[b, 1] * mu[1]
            for s in range(nsub):
                for i in range(6):
                    xp[i] = xs[i] * mx[i]
                bad |= _racecar_rhs(xp, xp + 4, pp, k1, pe, pc, nseg, total)
                k1[4] = up[0]
                k1[5] = up[1]
                for i in range(6):
                    k1[i] = mt * k1[i] / mx[i]
                    xp[i] = (xs[i] + 0.5 * h * k1[i]) * mx[i]
                bad |= _racecar_rhs(xp, xp + 4, pp, k2, pe, pc, nseg, total)
                k2[4] = up[0]
                k2[5] = up[1]
                for i in range(6):
                    k2[i] = mt * k2[i] / mx[i]
                    xp[i] = (xs[i] + 0.5 * h * k2[i]) * mx[i]
                bad |= _racecar_rhs(xp, xp + 4, pp, k3, pe, pc, nseg, total)
                k3[4] = up[0]
                k3[5] = up[1]
                for i in range(6):
                    k3[i] = mt * k3[i] / mx[i]
                    xp[i] = (xs[i] + h * k3[i]) * mx[i]
                bad |= _racecar_rhs(xp, xp + 4, pp, k4, pe, pc, nseg, total)
                k4[4] = up[0]
                k4[5] = up[1]
                for i in range(6):
                    k4[i] = mt * k4[i] / mx[i]
                    xs[i] = xs[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                if bad:
                    break
            for i in range(6):
                O[b, i] = xs[i]
            if bad:
                break
    if bad:
        raise ValueError("curvilinear projection singularity: n*kappa >= 1")
    return out
