"""Covariance-matrix machinery for Gaussian states (xp ordering per mode,
vacuum variance 1).

Builds the entanglement-based picture of the GMCS protocol explicitly:
Alice's two-mode squeezed vacuum, the lossy noisy channel, and Bob's
trusted heterodyne detector as a beam splitter fed by one arm of a
thermal EPR pair. Used as the independent route for mutual information
and Holevo quantities.
"""

import numpy as np

__all__ = [
    "omega",
    "symplectic_eigenvalues",
    "entropy_g",
    "von_neumann_entropy",
    "epr_covariance",
    "channel_covariance",
    "beam_splitter",
    "heterodyne_condition",
    "gmcs_covariance",
    "holevo_covariance",
    "mutual_information_covariance",
]

I2 = np.eye(2)
Z2 = np.diag([1.0, -1.0])


def omega(n_modes):
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def symplectic_eigenvalues(sigma):
    """Moduli of the eigenvalues of i Omega sigma, one per mode, ascending."""
    n = sigma.shape[0] // 2
    ev = np.abs(np.linalg.eigvals(1j * omega(n) @ sigma))
    return np.sort(ev)[::2]


def entropy_g(x):
    """g(x) = (x+1) log2(x+1) - x log2 x, with g(0) = 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (x + 1) * np.log2(x + 1) - np.where(x > 0, x * np.log2(np.where(x > 0, x, 1)), 0.0)
    return out


def von_neumann_entropy(sigma, tol=1e-9):
    nu = symplectic_eigenvalues(sigma)
    if np.any(nu < 1 - tol):
        raise ValueError(f"non-physical covariance: symplectic eigenvalue {nu.min():.12g} < 1")
    return float(np.sum(entropy_g(np.clip((nu - 1) / 2, 0, None))))


def epr_covariance(v):
    c = np.sqrt(max(v * v - 1.0, 0.0))
    return np.block([[v * I2, c * Z2], [c * Z2, v * I2]])


def channel_covariance(V, T, xi):
    """Alice-Bob state after a thermal-loss channel (T, excess noise xi)."""
    chi_line = 1.0 / T - 1.0 + xi
    c = np.sqrt(T * (V * V - 1.0))
    return np.block([[V * I2, c * Z2], [c * Z2, T * (V + chi_line) * I2]])


def beam_splitter(n_modes, i, j, eta):
    """Symplectic matrix mixing modes i and j with transmissivity eta."""
    S = np.eye(2 * n_modes)
    t, r = np.sqrt(eta), np.sqrt(1.0 - eta)
    ii, jj = slice(2 * i, 2 * i + 2), slice(2 * j, 2 * j + 2)
    S[ii, ii] = t * I2
    S[ii, jj] = r * I2
    S[jj, ii] = -r * I2
    S[jj, jj] = t * I2
    return S


def heterodyne_condition(sigma, mode):
    """Covariance of the remaining modes after heterodyning ``mode``."""
    idx = np.arange(sigma.shape[0])
    b = np.array([2 * mode, 2 * mode + 1])
    rest = np.setdiff1d(idx, b)
    sX = sigma[np.ix_(rest, rest)]
    sB = sigma[np.ix_(b, b)]
    sXB = sigma[np.ix_(rest, b)]
    return sX - sXB @ np.linalg.inv(sB + I2) @ sXB.T


def gmcs_covariance(V_A, T, xi_ch, eta_d, xi_d):
    """Four-mode covariance (A, B', F, G) after the trusted detector.

    Detector noise xi_d (input-referred as 2 xi_d / (eta_d T)) is injected
    by an EPR pair of variance 1 + 2 xi_d / (1 - eta_d). Needs eta_d < 1
    when xi_d > 0.
    """
    V = V_A + 1.0
    if eta_d >= 1.0:
        if xi_d > 0:
            raise ValueError("trusted detector noise needs eta_d < 1")
        v = 1.0
    else:
        v = 1.0 + 2.0 * xi_d / (1.0 - eta_d)
    sigma = np.zeros((8, 8))
    sigma[:4, :4] = channel_covariance(V, T, xi_ch)
    sigma[4:, 4:] = epr_covariance(v)
    S = beam_splitter(4, 1, 2, eta_d)
    return S @ sigma @ S.T


def holevo_covariance(V_A, T, xi_ch, eta_d, xi_d):
    """S(E) - S(E|b) from explicit covariance matrices and a generic
    eigensolver."""
    V = V_A + 1.0
    s_e = von_neumann_entropy(channel_covariance(V, T, xi_ch))
    full = gmcs_covariance(V_A, T, xi_ch, eta_d, xi_d)
    s_e_b = von_neumann_entropy(heterodyne_condition(full, 1))
    return s_e - s_e_b


def mutual_information_covariance(V_A, T, xi_ch, eta_d, xi_d):
    """I(A:B) for heterodyne on both sides, from Bob's outcome covariance
    with and without conditioning on Alice's heterodyne."""
    full = gmcs_covariance(V_A, T, xi_ch, eta_d, xi_d)
    ab = full[:4, :4]
    sB = ab[2:, 2:]
    sB_a = heterodyne_condition(ab, 0)
    return 0.5 * float(np.log2(np.linalg.det(sB + I2) / np.linalg.det(sB_a + I2)))
