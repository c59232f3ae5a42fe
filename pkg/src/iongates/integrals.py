"""Closed-form oscillatory integrals shared by the spectrum and coupling modules.

Everything here reduces to three primitives over a fixed duration T:

    exp_integral(a, T)            = int_0^T e^{i a t} dt
    exp_moment(p, T, n)           = int_0^T t^n e^{i p t} dt
    double_exp_integral(p, q, T)  = int_0^T dt1 int_0^t1 dt2 e^{i p t1} e^{i q t2}

All are evaluated with branch switches so that near-degenerate frequency
combinations (|q| T or |p| T approaching zero) stay accurate to ~1e-12
relative instead of suffering catastrophic cancellation.
"""

from __future__ import annotations

import numpy as np

# |x| below which power series replace the direct formulas.  The direct
# double_exp_integral loses ~eps/|qT| digits, so 1e-3 keeps it at ~1e-13.
_SERIES_Q = 1e-3
_SERIES_P = 2.0
_DOUBLE_SERIES_TERMS = 8


def exp_integral(a, T):
    """int_0^T exp(i a t) dt, stable for all a including a = 0."""
    a = np.asarray(a, dtype=float)
    return T * np.exp(0.5j * a * T) * np.sinc(a * T / (2.0 * np.pi))


def exp_moment(p, T, n):
    """int_0^T t^n exp(i p t) dt for integer n >= 0."""
    p = np.asarray(p, dtype=float)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    x = p * T
    out = np.empty(p.shape, dtype=complex)

    small = np.abs(x) <= _SERIES_P
    if small.any():
        xs = x[small]
        term = np.ones_like(xs, dtype=complex)
        acc = term / (n + 1.0)
        for j in range(1, 80):
            term = term * (1j * xs) / j
            contrib = term / (n + j + 1.0)
            acc = acc + contrib
            if np.all(np.abs(contrib) <= 1e-18 * np.abs(acc) + 1e-300):
                break
        out[small] = T ** (n + 1) * acc

    big = ~small
    if big.any():
        pb = p[big]
        Fk = exp_integral(pb, T)
        eip = np.exp(1j * pb * T)
        for k in range(1, n + 1):
            Fk = (T**k * eip - k * Fk) / (1j * pb)
        out[big] = Fk

    return out[0] if scalar else out


def double_exp_integral(p, q, T):
    """Ordered double integral of exp(i p t1) exp(i q t2) over 0<t2<t1<T."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p, q = np.broadcast_arrays(p, q)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    q = np.atleast_1d(q)
    out = np.empty(p.shape, dtype=complex)

    direct = np.abs(q * T) >= _SERIES_Q
    if direct.any():
        pd = p[direct]
        qd = q[direct]
        out[direct] = (exp_integral(pd + qd, T) - exp_integral(pd, T)) / (1j * qd)

    near = ~direct
    if near.any():
        ps = p[near]
        qs = q[near]
        acc = np.zeros(ps.shape, dtype=complex)
        coef = np.ones(ps.shape, dtype=complex)
        fact = 1.0
        for k in range(_DOUBLE_SERIES_TERMS):
            fact *= k + 1.0
            acc = acc + coef / fact * exp_moment(ps, T, k + 1)
            coef = coef * (1j * qs)
        out[near] = acc

    return out[0] if scalar else out


def sine_overlap(nu, omega, T):
    """int_0^T sin(nu t) sin(omega t) dt, exact for all argument combinations."""
    nu = np.asarray(nu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    diff = nu - omega
    summ = nu + omega
    return 0.5 * T * (np.sinc(diff * T / np.pi) - np.sinc(summ * T / np.pi))


def sine_drive_response(nu, omega, t):
    """int_0^t exp(i nu t') sin(omega t') dt' for each (nu, omega) pair."""
    nu = np.asarray(nu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return (exp_integral(nu + omega, t) - exp_integral(nu - omega, t)) / 2j


def ordered_sine_triple(nu, a, b, T):
    """int_0^T dt1 int_0^t1 dt2 sin(nu (t1-t2)) sin(a t1) sin(b t2).

    Expanded over the eight sign combinations of the three sines; each term
    is a double_exp_integral, so degeneracies (a ~ nu, b ~ nu, a ~ b) are
    handled by the series branches of the primitive.
    """
    nu = np.asarray(nu, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    total = 0.0j
    for sn in (1.0, -1.0):
        for sa in (1.0, -1.0):
            for sb in (1.0, -1.0):
                total = total + (sn * sa * sb) * double_exp_integral(
                    sn * nu + sa * a, -sn * nu + sb * b, T
                )
    return np.real(1j / 8.0 * total)


def mode_phase_form(nu, omegas, T):
    """Raw sine-quadrature phase-accumulation matrix of one motional mode.

    Entry (m, l) is -int_0^T dt1 int_0^t1 dt2 sin(nu (t1-t2))
    [sin(w_m t1) sin(w_l t2) + sin(w_m t2) sin(w_l t1)]; symmetric by
    construction.
    """
    omegas = np.asarray(omegas, dtype=float)
    wm, wl = np.meshgrid(omegas, omegas, indexing="ij")
    s = ordered_sine_triple(nu, wm, wl, T)
    return -(s + s.T)
