"""Independent reference computations used by the tests."""

import numpy as np


def kalman_log_likelihood(a, q, r, z, u=None, x0=0.0, p0=1e-6, c=1.0):
    """Exact log-likelihood of ``x_k = a x_{k-1} + u_k + w``, ``z_k = c x_k + v``."""
    z = np.asarray(z, dtype=float).ravel()
    u = np.zeros_like(z) if u is None else np.asarray(u, dtype=float).ravel()
    m, P, ll = float(x0), float(p0), 0.0
    for k in range(len(z)):
        m = a * m + u[k]
        P = a * a * P + q
        S = c * c * P + r
        e = z[k] - c * m
        ll += -0.5 * (np.log(2 * np.pi * S) + e * e / S)
        K = P * c / S
        m = m + K * e
        P = (1 - K * c) * P
    return ll


def dense_gp_posterior(X, y, Xs, variance, lengthscales, noise, family="matern52"):
    """Posterior via explicit matrix inverse, in the standardized target space."""
    X, Xs = np.atleast_2d(X), np.atleast_2d(Xs)
    ls = np.broadcast_to(np.asarray(lengthscales, float), (X.shape[1],))

    def k(A, B):
        d = np.sqrt((((A[:, None, :] - B[None, :, :]) / ls) ** 2).sum(-1))
        if family == "se":
            return variance * np.exp(-0.5 * d ** 2)
        s5 = np.sqrt(5.0) * d
        return variance * (1 + s5 + s5 ** 2 / 3.0) * np.exp(-s5)

    mu0 = y.mean()
    sc = y.std() if y.std() > 0 else 1.0
    ys = (y - mu0) / sc
    Kinv = np.linalg.inv(k(X, X) + noise * np.eye(len(X)))
    ks = k(Xs, X)
    mean = ks @ Kinv @ ys
    var = variance - np.einsum("ij,jk,ik->i", ks, Kinv, ks)
    return mu0 + sc * mean, sc * np.sqrt(np.clip(var, 0, None))


def battx_rhs_by_hand(x, I, T_amb, theta, N=5, T_ref=298.0, ocv=None):
    """BattX derivatives written out term by term for a uniform chain."""
    (Cs1, Rs1, Ce, Re, Cc, Csu, Rc, Rsu, b1, b2, g1, g2, g3, k1, k2, c1, c2, c3) = theta
    Vs = x[:N]
    Ve1, Ve2, Ve3, Tc, Ts = x[N:]
    Rs = Rs1 * np.exp(k2 * (1 / Tc - 1 / T_ref))
    dVs = np.zeros(N)
    dVs[0] = (I + (Vs[1] - Vs[0]) / Rs) / Cs1
    for i in range(1, N - 1):
        dVs[i] = ((Vs[i - 1] - Vs[i]) / Rs + (Vs[i + 1] - Vs[i]) / Rs) / Cs1
    dVs[N - 1] = (Vs[N - 2] - Vs[N - 1]) / Rs / Cs1
    dVe1 = (Ve2 - Ve1) / (Re * Ce) + I / Ce
    dVe2 = (Ve1 - 2 * Ve2 + Ve3) / (Re * Ce)
    dVe3 = (Ve2 - Ve3) / (Re * Ce) - I / Ce
    soc = Vs.mean()
    Ro = (g1 + g2 * soc + g3 * soc ** 2) * np.exp(k1 * (1 / Tc - 1 / T_ref))
    V = ocv(Vs[0]) + b1 * np.log((Ve1 + b2) / (Ve3 + b2)) + Ro * I
    Q = I * (V - ocv(soc)) + I * Tc * (c1 + c2 * soc + c3 * soc ** 2)
    dTc = Q / Cc + (Ts - Tc) / (Rc * Cc)
    dTs = (T_amb - Ts) / (Rsu * Csu) - (Ts - Tc) / (Rc * Csu)
    return np.concatenate([dVs, [dVe1, dVe2, dVe3, dTc, dTs]]), V, Q
