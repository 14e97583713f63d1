"""Independent scalar transcriptions used as test oracles.

Written loop-by-loop from the definitions, sharing no code with the package,
so a slip in the vectorized implementation shows up as a disagreement.
"""

import math

import numpy as np
from scipy.integrate import dblquad, quad


def coupling_matrix(n, edges):
    a = [[0.0] * (n + 1) for _ in range(n + 1)]
    for src, dst, w in edges:
        a[dst][src] += w
    H = np.zeros((n, n))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i != j:
                H[i - 1, j - 1] = -a[i][j]
        H[i - 1, i - 1] = sum(a[i][j] for j in range(n + 1))
    return H


def error_coords(leader, follower):
    """(bar_x, bar_y, bar_theta) for one follower, scalar math only."""
    x0, y0, t0 = leader
    x, y, t = follower
    xt0 = math.cos(t0) * x0 + math.sin(t0) * y0
    yt0 = -math.sin(t0) * x0 + math.cos(t0) * y0
    xt = math.cos(t) * x + math.sin(t) * y
    yt = -math.sin(t) * x + math.cos(t) * y
    return xt - xt0, yt - yt0, t - t0


def phi_nested(t, w, T):
    """phi by the literal double integral (inner over tau in [s, t])."""
    f = lambda tau, s: w(max(tau, 0.0)) ** 2
    val, _ = dblquad(f, t - T, t, lambda s: s, lambda s: t, epsabs=1e-11, epsrel=1e-11)
    return 1.0 + 2.0 / T * val


def phi_riemann(t, w, T, n=1_000_000):
    """Midpoint rule on the single-integral form with n cells."""
    tau = t - T + (np.arange(n) + 0.5) * (T / n)
    vals = (tau - (t - T)) * w(np.maximum(tau, 0.0)) ** 2
    return 1.0 + 2.0 / T * vals.sum() * (T / n)


def window_energy(w, t, T):
    return quad(lambda s: w(s) ** 2, t, t + T, epsabs=1e-13, epsrel=1e-13)[0]


def inverse_sqrt_energy(a, b, c, t, T):
    """Closed form of int_t^{t+T} (a - (b s + c)^(-1/2))^2 ds."""
    def F(s):
        u = b * s + c
        return a * a * s - 4 * a * math.sqrt(u) / b + math.log(u) / b
    return F(t + T) - F(t)


def ratio_sup_closed(C1, C2):
    """sup_u (C1 u^2 + C2 u)/(1 + u^2) = (C1 + sqrt(C1^2 + C2^2))/2 for C2 > 0."""
    return 0.5 * (C1 + math.hypot(C1, C2))


def ratio_sup_brute(C1, C2, n=1_000_000, umax=None):
    umax = umax or 10.0 * (1 + (C2 / C1 if C1 > 0 else 1) + (2 * C1 / C2 if C2 > 0 else 1))
    u = np.linspace(0.0, umax, n)
    return float(((C1 * u * u + C2 * u) / (1 + u * u)).max())


def constants(lmin_q, lmax, lmin, nH, nDH, T, mu, wb, kw, kv, M):
    """Every scalar constant of the continuous and sampled certificates."""
    c = {}
    eps = (T / mu) * (wb + kv * wb * lmax)
    brk = kv * eps * wb * nH * nH / 2.0 + eps * wb * lmax / 2.0 + 2.0 * wb * wb * lmax
    g = max(2.0 / (kv * lmin_q) * brk - 1.0, wb)
    c["epsilon"], c["gamma"] = eps, g
    phi_hi = 1.0 + T * wb  # valid as the phi ceiling because the tests keep wb <= 1
    c["C1"] = 2.0 * kw * wb * nH
    c["C2"] = 2.0 * math.sqrt(2.0) * kw * M * (g + phi_hi + wb) * math.sqrt(lmax) * nH
    c["C0"] = ratio_sup_closed(c["C1"], c["C2"])
    c["C0_bar"] = mu / (T * (phi_hi + 2.0 * g))
    c["sigma"] = 2.0 * c["C0"] ** 2 / (lmin_q * kw * c["C0_bar"])
    c["C3"] = min(c["C0_bar"] / 4.0, kw * lmin_q / (4.0 * lmax))
    c["h1"] = kw * lmin_q / lmax
    c["h2"] = 2.0 * kw * kw * nH * nDH / lmin
    c["T1_star"] = c["h1"] / c["h2"]
    c["C4"] = 2.0 * kv * (g + phi_hi + wb) * math.sqrt(lmax) * nH
    c["C5"] = math.sqrt(2.0) * kw * M * nH
    c["L1"] = kv * nH * math.sqrt(lmax / lmin)
    c["L2"] = 2.0 * kw * M * nH * math.sqrt(lmax / lmin)
    c["L3"] = math.sqrt(2.0 / lmin) * (kv * nH + kw * c["C0_bar"] / (4.0 * c["C1"]) * nH + wb)
    A, B, Cq = c["C4"] * c["C5"], c["C2"] + c["C4"] * c["L3"], -0.75 * c["C0_bar"]
    root = (-B + math.sqrt(B * B - 4 * A * Cq)) / (2 * A)  # textbook form
    c["T2_root"] = root
    c["T2_star"] = min(3.0 * c["C0_bar"] / (4.0 * c["C2"]), root)
    c["T_star"] = min(c["T1_star"], c["T2_star"])
    return c


def rho(T0, h1, h2):
    r = h2 * T0 / h1
    return math.exp(-h1 * T0 / 2) * (1 - r) + r


def envelope(r0, lmin_q, lmax, lmin, T, mu, kw, C1, C2, C0_bar, sigma):
    big = max(mu / (T * C0_bar), sigma)
    d1 = math.sqrt(lmax / lmin * r0 ** 2 + 16.0 * math.sqrt(lmax * big) / lmin * r0)
    d2 = math.sqrt((2.0 * math.exp(lmax * big * r0 ** 2) - 2.0) / (lmin * min(1.0, sigma)))
    delta = max(d1, d2)
    dbar = C1 * math.sqrt(lmax / 2.0) * delta + C2
    D0 = 2.0 * T * dbar ** 2 / (mu * kw * lmin_q)
    low = min(1.0, 2.0 * T * C2 ** 2 / (mu * kw * lmin_q))
    M0 = math.sqrt(max(mu / (T * C0_bar), D0) * lmax / (low * lmin)) * r0
    return {"delta1": d1, "delta2": d2, "Delta0": D0, "M0": M0}
