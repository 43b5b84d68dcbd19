"""Shared construction helpers for the test suite."""

import numpy as np

from offsetbf.channel import Scenario, UncertaintyModel, UserChannel


def standard_complex(rng, shape):
    z = rng.standard_normal(size=tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


def unit_scale_scenario(k=3, nt=4, seed=0, sigma_e=0.1, noise=1.0, gamma=4.0,
                        delta=0.05):
    """Scenario with h_est rows drawn CN(0, I): channel norms ~ nt >> sigma_e^2.

    This is the small-relative-uncertainty regime in which offset designs at
    moderate r are almost surely feasible, handy for statistical checks.
    """
    rng = np.random.default_rng(seed)
    h_est = standard_complex(rng, (k, nt))
    users = []
    for i in range(k):
        users.append(UserChannel(
            h_true=h_est[i].copy(),
            h_est=h_est[i],
            uncertainty=UncertaintyModel.iid(sigma_e, nt),
            noise_power=noise,
            sinr_target=gamma,
            outage_tolerance=delta,
        ))
    return Scenario(users=users, n_antennas=nt, rng_seed=seed)


def orthonormal_rows(k, nt, seed=0, norms=None):
    """k orthonormal rows of length nt, optionally rescaled to given norms."""
    rng = np.random.default_rng(seed)
    a = standard_complex(rng, (nt, nt))
    q, _ = np.linalg.qr(a)
    rows = q.T[:k]
    if norms is not None:
        rows = rows * np.sqrt(np.asarray(norms, dtype=float))[:, None]
    return rows


def scenario_from_rows(h_est, sigma_e=0.1, noise=1.0, gamma=4.0, delta=0.05):
    """Wrap explicit channel rows into a Scenario (h_true = h_est)."""
    h_est = np.asarray(h_est, dtype=complex)
    k, nt = h_est.shape
    sigma_e = np.broadcast_to(np.asarray(sigma_e, dtype=float), (k,))
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (k,))
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (k,))
    users = [UserChannel(
        h_true=h_est[i].copy(),
        h_est=h_est[i],
        uncertainty=UncertaintyModel.iid(float(sigma_e[i]), nt),
        noise_power=float(noise[i]),
        sinr_target=float(gamma[i]),
        outage_tolerance=delta,
    ) for i in range(k)]
    return Scenario(users=users, n_antennas=nt)
