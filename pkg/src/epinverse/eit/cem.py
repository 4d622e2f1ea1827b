"""2D complete electrode model: piecewise-linear FEM forward solver, adjoint
Jacobian, and synthetic data generation.

The variational system couples node potentials u with electrode voltages V
through the contact-impedance boundary terms; the zero-sum voltage constraint
is enforced by an explicit (L-1)-dimensional basis so the assembled system
stays SPD and one Cholesky factorization serves all current patterns and all
adjoint solves.  Conductivity lives in the same nodal P1 space as the
potential and is interpolated at element centroids (1-point rule) for the
stiffness entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from ..errors import SingularSystem
from ..nonlinear import ForwardModel
from .mesh import Mesh

# defaults from the flagship tank setup (16 electrodes on a 28 cm disk)
TANK_RADIUS = 0.14  # m
N_ELECTRODES = 16
ELECTRODE_WIDTH = 0.025  # m of arc
ELECTRODE_COVERAGE = ELECTRODE_WIDTH / (2.0 * np.pi * TANK_RADIUS)
CURRENT_AMPLITUDE = 1e-3  # A
SIGMA_BG = 1.41e-3  # 2D-reduced background conductivity [1/Ohm]
SIGMA_FLOOR = 1e-5  # positivity floor, well below background
ALPHA_DEFAULT = 6.9e4  # noise inverse variance
LAMBDA_DEFAULT = 3.0e4  # sparsity scale
CONTACT_IMPEDANCES = 1e-4 * np.array(
    [2.64, 3.00, 2.76, 4.27, 3.50, 4.30, 3.91, 2.35, 2.01, 2.21, 2.04, 1.43, 2.98, 2.78, 2.92, 3.40]
)


def adjacent_patterns(L: int) -> list[tuple[int, int]]:
    """The L-1 linearly independent adjacent-pair injections."""
    return [(l, l + 1) for l in range(L - 1)]


@dataclass
class CEMConfig:
    """Electrode layer of the CEM: contact impedances, injection patterns and
    amplitude.  Grounding is the zero-sum convention sum_l V_l = 0, enforced
    structurally by the solver's reduced basis."""

    z: np.ndarray  # contact impedances [Ohm*m, 2D-reduced], one per electrode
    patterns: list[tuple[int, int]]
    amplitude: float = CURRENT_AMPLITUDE

    def __post_init__(self) -> None:
        self.z = np.asarray(self.z, dtype=float)
        if np.any(self.z <= 0.0):
            raise ValueError("contact impedances must be positive")
        for a, b in self.patterns:
            if a == b:
                raise ValueError("pattern injects and grounds the same electrode")

    @property
    def L(self) -> int:
        return self.z.shape[0]

    @property
    def n_patterns(self) -> int:
        return len(self.patterns)

    def current_matrix(self) -> np.ndarray:
        """(L, P) injected currents; each column sums to zero."""
        I = np.zeros((self.L, self.n_patterns))
        for p, (a, b) in enumerate(self.patterns):
            I[a, p] = self.amplitude
            I[b, p] = -self.amplitude
        return I

    def kept_electrodes(self) -> list[np.ndarray]:
        """Per pattern, the electrodes whose voltages enter the measurement
        (current-carrying electrodes are discarded)."""
        out = []
        for a, b in self.patterns:
            out.append(np.array([l for l in range(self.L) if l not in (a, b)], dtype=np.int64))
        return out

    @property
    def n_measurements(self) -> int:
        return sum(len(k) for k in self.kept_electrodes())


def default_config(L: int = N_ELECTRODES) -> CEMConfig:
    if L == N_ELECTRODES:
        z = CONTACT_IMPEDANCES.copy()
    else:
        z = np.full(L, float(np.mean(CONTACT_IMPEDANCES)))
    return CEMConfig(z=z, patterns=adjacent_patterns(L))


@dataclass
class _Geometry:
    areas: np.ndarray  # (T,)
    b: np.ndarray  # (T, 3) gradient coefficients, grad phi_i = (b_i, c_i)/(2A)
    c: np.ndarray  # (T, 3)


def _geometry(mesh: Mesh) -> _Geometry:
    p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    areas = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    return _Geometry(areas, b, c)


@dataclass
class ForwardSolution:
    voltages: np.ndarray  # (P, L) electrode voltages, sum_l V = 0 per pattern
    node_potentials: np.ndarray  # (N, P)
    factor: tuple  # cho_factor of the reduced system
    Q: np.ndarray  # (L, L-1) zero-sum basis
    geometry: _Geometry


def _assemble(mesh: Mesh, cfg: CEMConfig, sigma: np.ndarray, geo: _Geometry) -> np.ndarray:
    N = mesh.n_nodes
    L = cfg.L
    sigma_e = sigma[mesh.triangles].mean(axis=1)  # centroid value
    coef = sigma_e / (4.0 * geo.areas)
    Ke = coef[:, None, None] * (
        geo.b[:, :, None] * geo.b[:, None, :] + geo.c[:, :, None] * geo.c[:, None, :]
    )
    A = np.zeros((N + L, N + L))
    rows = np.repeat(mesh.triangles, 3, axis=1).reshape(-1)
    cols = np.tile(mesh.triangles, (1, 3)).reshape(-1)
    np.add.at(A, (rows, cols), Ke.reshape(-1))

    for l, edges in enumerate(mesh.electrode_edges):
        zl = cfg.z[l]
        for a, b in edges:
            d = float(np.linalg.norm(mesh.nodes[b] - mesh.nodes[a]))
            m = d / (6.0 * zl)
            A[a, a] += 2.0 * m
            A[b, b] += 2.0 * m
            A[a, b] += m
            A[b, a] += m
            A[a, N + l] -= d / (2.0 * zl)
            A[N + l, a] -= d / (2.0 * zl)
            A[b, N + l] -= d / (2.0 * zl)
            A[N + l, b] -= d / (2.0 * zl)
            A[N + l, N + l] += d / zl
    return A


def solve_forward(mesh: Mesh, cfg: CEMConfig, sigma: np.ndarray) -> ForwardSolution:
    """Solve the CEM for all patterns off one factorization.

    Raises
    ------
    SingularSystem
        If the conductivity is non-positive somewhere or the reduced system
        fails to factor.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (mesh.n_nodes,):
        raise ValueError(f"sigma has shape {sigma.shape}, expected ({mesh.n_nodes},)")
    if np.any(sigma <= 0.0) or not np.all(np.isfinite(sigma)):
        raise SingularSystem("conductivity must be strictly positive and finite")
    geo = _geometry(mesh)
    N, L = mesh.n_nodes, cfg.L
    A = _assemble(mesh, cfg, sigma, geo)

    Q = np.vstack([np.eye(L - 1), -np.ones((1, L - 1))])
    R = np.zeros((N + L - 1, N + L - 1))
    R[:N, :N] = A[:N, :N]
    R[:N, N:] = A[:N, N:] @ Q
    R[N:, :N] = Q.T @ A[N:, :N]
    R[N:, N:] = Q.T @ A[N:, N:] @ Q
    try:
        factor = cho_factor(R, lower=True, check_finite=False, overwrite_a=True)
    except LinAlgError as exc:
        raise SingularSystem(f"reduced CEM system not SPD: {exc}") from exc

    I = cfg.current_matrix()  # (L, P)
    rhs = np.zeros((N + L - 1, cfg.n_patterns))
    rhs[N:, :] = Q.T @ I
    sol = cho_solve(factor, rhs, check_finite=False)
    voltages = (Q @ sol[N:, :]).T  # (P, L)
    return ForwardSolution(voltages, sol[:N, :], factor, Q, geo)


def measurements(cfg: CEMConfig, voltages: np.ndarray) -> np.ndarray:
    """Stack per-pattern voltages, discarding the current-carrying electrodes."""
    return np.concatenate([voltages[p, kept] for p, kept in enumerate(cfg.kept_electrodes())])


def forward(mesh: Mesh, cfg: CEMConfig, sigma: np.ndarray) -> np.ndarray:
    """F(sigma): the stacked measurement vector."""
    return measurements(cfg, solve_forward(mesh, cfg, sigma).voltages)


def jacobian(mesh: Mesh, cfg: CEMConfig, sigma: np.ndarray) -> np.ndarray:
    """dF/dsigma at the interior nodes, by the adjoint method.

    One extra block solve against the already-factored system yields the
    electrode-functional adjoint fields; the sensitivity of measurement
    (p, l) to nodal sigma_q is -(1/3) sum over elements containing q of
    A_e grad(u_p) . grad(w_l).
    """
    fs = solve_forward(mesh, cfg, sigma)
    N, L = mesh.n_nodes, cfg.L
    rhs = np.zeros((N + L - 1, L))
    rhs[N:, :] = fs.Q.T  # functional of V_l, expressed in the zero-sum basis
    adj = cho_solve(fs.factor, rhs, check_finite=False)
    w = adj[:N, :]  # (N, L) adjoint node potentials

    tri = mesh.triangles
    geo = fs.geometry
    u = fs.node_potentials  # (N, P)
    Bu = np.einsum("ti,tip->tp", geo.b, u[tri])  # (T, P)
    Cu = np.einsum("ti,tip->tp", geo.c, u[tri])
    Bw = np.einsum("ti,til->tl", geo.b, w[tri])  # (T, L)
    Cw = np.einsum("ti,til->tl", geo.c, w[tri])
    T1 = (Bu[:, :, None] * Bw[:, None, :] + Cu[:, :, None] * Cw[:, None, :]) / (
        4.0 * geo.areas[:, None, None]
    )  # (T, P, L) = A_e grad u_p . grad w_l

    sens = np.zeros((N, cfg.n_patterns, L))
    for i in range(3):
        np.add.at(sens, tri[:, i], T1)
    sens *= -1.0 / 3.0

    rows = []
    for p, kept in enumerate(cfg.kept_electrodes()):
        rows.append(sens[:, p, kept].T)  # (len(kept), N)
    J_full = np.concatenate(rows, axis=0)
    return J_full[:, mesh.interior_node_ids]


def paint_disk_inclusion(
    mesh: Mesh, background: float, center: tuple[float, float], radius: float, value: float
) -> np.ndarray:
    """Nodal conductivity: background with a circular inclusion set to value."""
    sigma = np.full(mesh.n_nodes, background)
    d = np.hypot(mesh.nodes[:, 0] - center[0], mesh.nodes[:, 1] - center[1])
    sigma[d <= radius] = value
    return sigma


def synth_data(
    mesh_fine: Mesh,
    cfg: CEMConfig,
    sigma_true: np.ndarray,
    noise_std: float,
    seed: int,
) -> tuple[np.ndarray, dict]:
    """Noisy measurements from a fine forward mesh (inverse-crime avoidance is
    the caller's responsibility: synthesize on a strictly finer mesh than the
    inversion mesh)."""
    clean = forward(mesh_fine, cfg, sigma_true)
    rng = np.random.default_rng(seed)
    data = clean + noise_std * rng.standard_normal(clean.shape)
    truth = {
        "seed": int(seed),
        "noise_std": float(noise_std),
        "clean": clean,
        "sigma_true": np.asarray(sigma_true, dtype=float),
    }
    return data, truth


class EITForwardModel(ForwardModel):
    """Forward map on interior nodal conductivities; boundary nodes are held
    at the background value."""

    def __init__(self, mesh: Mesh, cfg: CEMConfig, sigma_bg: float = SIGMA_BG,
                 floor: float = SIGMA_FLOOR):
        self.mesh = mesh
        self.cfg = cfg
        self.sigma_bg = float(sigma_bg)
        self.floor = float(floor)
        self.m = cfg.n_measurements
        self.n = len(mesh.interior_node_ids)

    def full_sigma(self, x: np.ndarray) -> np.ndarray:
        sigma = np.full(self.mesh.n_nodes, self.sigma_bg)
        sigma[self.mesh.interior_node_ids] = x
        return sigma

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        if np.any(x < self.floor):
            raise SingularSystem("conductivity below the admissibility floor")
        return forward(self.mesh, self.cfg, self.full_sigma(x))

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        if np.any(x < self.floor):
            raise SingularSystem("conductivity below the admissibility floor")
        return jacobian(self.mesh, self.cfg, self.full_sigma(x))
