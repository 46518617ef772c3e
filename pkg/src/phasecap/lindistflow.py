"""Linear branch-flow sensitivities and convex current envelopes.

For a radial single-phase feeder with squared node voltages V, nodal net
injections (p, q) (generation positive) and squared branch currents l,
eliminating the branch-flow recursion gives an exact linear map

    V = V0^2 * 1 + M_p p + M_q q - H l
    P = C p + D_R l
    Q = C q + D_X l

with branch flows P, Q measured at the sending end, positive parent to
child. Branch k feeds node ``order[k]``, so branches and non-slack nodes
share one index.

The nonconvex closure l = (P^2 + Q^2) / V_send is handled through a
second-order Taylor expansion around the base-case operating point. Its
Hessian is positive semi-definite by construction, which yields

* an affine lower envelope: drop the quadratic term and evaluate the
  split Jacobian against the worst proxy corner;
* a convex quadratic upper envelope: the larger of twice the absolute
  linear term and the worst of the eight proxy-corner quadratic forms.

Matrix entries are accumulated branch-by-branch in index order so a
brute-force path summation reproduces them bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import NonConvergence
from .feeder import SinglePhaseFeeder
from .loadflow import solve_single_phase


@dataclass(frozen=True)
class SensitivityMatrices:
    """Exact linear map from injections and currents to voltages and flows.

    Shapes are (n, n) with n = number of branches = non-slack nodes.
    ``m_p[i, j]`` is twice the resistance shared by the root paths of nodes
    i and j; ``c[e, i]`` is -1 when node i sits below branch e; ``d_r[e, f]``
    is r_f when branch f is branch e or below it; ``h[i, e]`` collects the
    loss-to-voltage propagation terms.
    """

    m_p: np.ndarray
    m_q: np.ndarray
    h: np.ndarray
    c: np.ndarray
    d_r: np.ndarray
    d_x: np.ndarray
    v0_sq: float
    subtree: np.ndarray  # (n, n) bool, subtree[e, i]: node i at/below branch e


def build_sensitivity_matrices(sp: SinglePhaseFeeder) -> SensitivityMatrices:
    """Build the linear sensitivity matrices by tree traversal."""
    n = sp.n_branches
    parent_edge = sp.parent_edge

    subtree = np.zeros((n, n), dtype=bool)
    for i in range(n):
        e = i
        while e >= 0:
            subtree[e, i] = True
            e = parent_edge[e]

    r, x = sp.r, sp.x
    m_p = np.zeros((n, n))
    m_q = np.zeros((n, n))
    h = np.zeros((n, n))
    for e in range(n):
        nodes = np.flatnonzero(subtree[e])
        ix = np.ix_(nodes, nodes)
        m_p[ix] += 2.0 * r[e]
        m_q[ix] += 2.0 * x[e]
        # f := e contributes 2 (r_f r_e + x_f x_e) to H[i, g] for every node
        # i below f and every branch g at/below f
        h[ix] += 2.0 * (r[e] * r[nodes] + x[e] * x[nodes])[None, :]
    h -= subtree.T * (r**2 + x**2)[None, :]

    c = -subtree.astype(float)
    d_r = subtree * r[None, :]
    d_x = subtree * x[None, :]
    return SensitivityMatrices(
        m_p=m_p, m_q=m_q, h=h, c=c, d_r=d_r, d_x=d_x,
        v0_sq=sp.slack_voltage**2, subtree=subtree,
    )


@dataclass(frozen=True)
class TaylorPoint:
    """Second-order expansion of l = (P^2 + Q^2) / V_send per branch.

    ``v0`` is the squared sending-node voltage of the base case. The
    Jacobian J = [2 P0/v0, 2 Q0/v0, -l0/v0] is split elementwise into its
    nonnegative (``j_pos``) and nonpositive (``j_neg``) parts. The Hessian
    factors as (2/v0) G^T G with G = [[1, 0, -P0/v0], [0, 1, -Q0/v0]], so
    the quadratic form is evaluated as g * ((dP - c1 dV)^2 + (dQ - c2 dV)^2).
    """

    p0: np.ndarray
    q0: np.ndarray
    v0: np.ndarray
    l0: np.ndarray
    jac: np.ndarray    # (n, 3)
    j_pos: np.ndarray
    j_neg: np.ndarray
    g: np.ndarray      # 2 / v0
    c1: np.ndarray     # P0 / v0
    c2: np.ndarray     # Q0 / v0

    @property
    def hessians(self) -> np.ndarray:
        """(n, 3, 3) explicit Hessians, for verification."""
        n = len(self.p0)
        he = np.zeros((n, 3, 3))
        he[:, 0, 0] = self.g
        he[:, 1, 1] = self.g
        he[:, 0, 2] = he[:, 2, 0] = -self.g * self.c1
        he[:, 1, 2] = he[:, 2, 1] = -self.g * self.c2
        he[:, 2, 2] = self.g * (self.c1**2 + self.c2**2)
        return he


def build_taylor_point(
    sp: SinglePhaseFeeder, base_injections: np.ndarray | None = None
) -> TaylorPoint:
    """Expansion point from a converged base-case load flow.

    The sending-end branch flows of the base case define (P0, Q0, v0);
    l0 = (P0^2 + Q0^2) / v0 holds exactly by construction.
    """
    res = solve_single_phase(sp, base_injections)
    if not res.converged:
        raise NonConvergence(
            "base-case load flow did not converge", result=res
        )
    v_send = res.v[sp.parent_pos[sp.order]]
    s_send = v_send * np.conj(res.i_branch)
    p0 = s_send.real
    q0 = s_send.imag
    v0 = np.abs(v_send) ** 2
    l0 = (p0**2 + q0**2) / v0
    jac = np.stack([2 * p0 / v0, 2 * q0 / v0, -l0 / v0], axis=1)
    return TaylorPoint(
        p0=p0, q0=q0, v0=v0, l0=l0,
        jac=jac,
        j_pos=np.maximum(jac, 0.0),
        j_neg=np.minimum(jac, 0.0),
        g=2.0 / v0,
        c1=p0 / v0,
        c2=q0 / v0,
    )


def eval_f_aff(
    tp: TaylorPoint, delta_plus: np.ndarray, delta_minus: np.ndarray
) -> np.ndarray:
    """Affine lower envelope of l at proxy deviations from the expansion.

    ``delta_plus``/``delta_minus`` are (n, 3) deviations of the upper/lower
    proxies (P, Q, V_send order). The result underestimates l for any
    physical point sandwiched by the proxies.
    """
    return tp.l0 + np.sum(tp.j_pos * delta_minus + tp.j_neg * delta_plus, axis=1)


def quad_form(tp: TaylorPoint, delta: np.ndarray) -> np.ndarray:
    """delta^T H_e delta per branch via the exact PSD factorization."""
    dp, dq, dv = delta[:, 0], delta[:, 1], delta[:, 2]
    return tp.g * ((dp - tp.c1 * dv) ** 2 + (dq - tp.c2 * dv) ** 2)


def proxy_corners(delta_plus: np.ndarray, delta_minus: np.ndarray):
    """The eight (P, Q, V) upper/lower proxy combinations, each (n, 3)."""
    for sel in product((0, 1), repeat=3):
        yield np.stack(
            [
                (delta_plus if sel[k] == 0 else delta_minus)[:, k]
                for k in range(3)
            ],
            axis=1,
        )


def eval_f_quad(
    tp: TaylorPoint, delta_plus: np.ndarray, delta_minus: np.ndarray
) -> np.ndarray:
    """Convex upper envelope of l at proxy deviations.

    Largest of twice the absolute split-Jacobian term and the worst of the
    eight proxy-corner quadratic forms, shifted by l0.
    """
    lin = 2.0 * np.abs(
        np.sum(tp.j_pos * delta_plus + tp.j_neg * delta_minus, axis=1)
    )
    psi = np.max(
        [quad_form(tp, d) for d in proxy_corners(delta_plus, delta_minus)],
        axis=0,
    )
    return tp.l0 + np.maximum(lin, psi)


def matrices_to_csv(sm: SensitivityMatrices) -> dict:
    """Matrices as row,col,value CSV strings keyed by matrix name."""
    out = {}
    for name in ("m_p", "m_q", "h", "c", "d_r", "d_x"):
        mat = getattr(sm, name)
        lines = ["row,col,value"]
        for i in range(mat.shape[0]):
            for j in range(mat.shape[1]):
                if mat[i, j] != 0.0:
                    lines.append(f"{i},{j},{mat[i, j]:.17g}")
        out[name] = "\n".join(lines) + "\n"
    return out
