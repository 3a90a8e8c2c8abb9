"""Posterior-marginal multiuser detection at matched noise (beta = 1).

Two routes to the per-user posteriors P(tau_k = +1 | y):

* exact_marginals -- exhaustive enumeration of all 2^K configurations of the
  posterior weight exp{-Q sum_mu (y_mu - sum_k s_{mu k} tau_k)^2}, log-domain.
* bp_detect -- sum-product message passing on the Tanner graph with a
  flooding schedule.  Messages are half log-likelihood ratios: a message m
  represents the distribution proportional to exp(m * tau).

Detection quality is summarised by the overlap m = (1/K) sum_k b_k tau_k and
BER = (1 - m)/2, with posterior ties contributing zero overlap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import TransmissionRecord
from .ensemble import SparseCode
from .errors import CapacityError, DomainError
from .util import sigmoid, spin_table

EXACT_K_LIMIT = 24
BP_DEGREE_LIMIT = 16
_ENUM_CHUNK_BITS = 14

UNINFORMED = "uninformed"
INFORMED = "informed"
INFORMED_MAGNITUDE = 25.0


@dataclass
class BPParams:
    """Belief-propagation controls (flooding schedule only)."""

    max_iterations: int = 1000
    tolerance: float = 1e-8
    damping: float = 0.0
    schedule: str = "flooding"
    init: str = UNINFORMED

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if self.tolerance <= 0:
            raise DomainError("tolerance must be positive")
        if not 0.0 <= self.damping < 1.0:
            raise DomainError("damping must lie in [0, 1)")
        if self.schedule != "flooding":
            raise DomainError(f"unknown schedule {self.schedule!r}")
        if self.init not in (UNINFORMED, INFORMED):
            raise DomainError(f"unknown init {self.init!r}")


@dataclass
class PosteriorMarginals:
    """Per-user P(tau_k = +1 | y) plus how they were computed."""

    prob_plus: np.ndarray
    method: str
    iterations: int | None = None
    converged: bool | None = None
    residual: float | None = None


def exact_marginals(code: SparseCode, record: TransmissionRecord, Q: float) -> PosteriorMarginals:
    """Marginals by exhaustive enumeration; K <= 24."""
    K, N = code.K, code.N
    if K > EXACT_K_LIMIT:
        raise CapacityError(f"K={K} exceeds enumeration budget {EXACT_K_LIMIT}")
    y = record.received
    s_dense = code.dense()  # (N, K)

    total = 1 << K
    chunk = 1 << min(K, _ENUM_CHUNK_BITS)
    # streaming log-sum-exp accumulators: total and per-user tau_k = +1
    acc_tot = -np.inf
    acc_plus = np.full(K, -np.inf)
    kbits = np.arange(K, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        spins = (((idx[:, None] >> kbits[None, :]) & 1) * 2 - 1).astype(float)
        resid = y[None, :] - spins @ s_dense.T
        logw = -Q * np.einsum("ij,ij->i", resid, resid)
        m = logw.max()
        acc_tot = np.logaddexp(acc_tot, m + np.log(np.exp(logw - m).sum()))
        for k in range(K):
            sel = logw[spins[:, k] > 0]
            if len(sel):
                mk = sel.max()
                acc_plus[k] = np.logaddexp(acc_plus[k], mk + np.log(np.exp(sel - mk).sum()))
    prob_plus = np.exp(acc_plus - acc_tot)
    return PosteriorMarginals(prob_plus=prob_plus, method="exact")


class _BPGraph:
    """Degree-grouped chip-major layout for vectorised flooding updates."""

    def __init__(self, code: SparseCode, Q: float, y: np.ndarray):
        self.K = code.K
        self.E = code.n_edges
        self.edge_user = code.edge_user
        degrees = code.chip_degrees()
        dmax = int(degrees.max()) if code.N else 0
        if dmax > BP_DEGREE_LIMIT:
            raise CapacityError(
                f"chip degree {dmax} exceeds factor enumeration budget {BP_DEGREE_LIMIT}")
        self.groups = []
        values = code.edge_value
        for d in np.unique(degrees):
            if d == 0:
                continue
            chips = np.nonzero(degrees == d)[0]
            eids = np.concatenate([code.chip_edges(mu) for mu in chips]).reshape(len(chips), d)
            T = spin_table(int(d))  # (2^d, d)
            self.groups.append({
                "eids": eids,
                "s": values[eids],
                "y": y[chips],
                "T": T,
            })
        self.Q = Q

    def factor_update(self, h_flat: np.ndarray) -> np.ndarray:
        """One flooding round of factor-to-variable messages from fields h."""
        u_new = np.zeros(self.E)
        Q = self.Q
        for g in self.groups:
            T, eids = g["T"], g["eids"]
            h = h_flat[eids]  # (n, d)
            energy = -Q * (g["y"][:, None] - g["s"] @ T.T) ** 2  # (n, 2^d)
            W = energy + h @ T.T
            d = T.shape[1]
            for l in range(d):
                Wl = W - h[:, l:l + 1] * T[None, :, l]
                plus = T[:, l] > 0
                wp, wm = Wl[:, plus], Wl[:, ~plus]
                mp = wp.max(axis=1)
                mm = wm.max(axis=1)
                u_new[eids[:, l]] = 0.5 * (
                    (mp + np.log(np.exp(wp - mp[:, None]).sum(axis=1)))
                    - (mm + np.log(np.exp(wm - mm[:, None]).sum(axis=1))))
        return u_new

    def fields(self, u_flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Variable-side sums: per-user total H_k and per-edge cavity h_e."""
        Hk = np.bincount(self.edge_user, weights=u_flat, minlength=self.K)
        h_flat = Hk[self.edge_user] - u_flat
        return Hk, h_flat


def bp_detect(code: SparseCode, record: TransmissionRecord, Q: float,
              params: BPParams | None = None) -> PosteriorMarginals:
    """Sum-product marginals on the Tanner graph, flooding schedule.

    Bias messages start at zero (uninformed) or at +/-INFORMED_MAGNITUDE
    aligned with the true bits (informed), the latter for metastability
    probes.  Exact on cycle-free instances.
    """
    if params is None:
        params = BPParams()
    graph = _BPGraph(code, Q, record.received)
    if params.init == INFORMED:
        u = INFORMED_MAGNITUDE * record.bits[code.edge_user].astype(float)
    else:
        u = np.zeros(code.n_edges)
    converged = False
    residual = np.inf
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        _, h = graph.fields(u)
        u_next = graph.factor_update(h)
        if params.damping > 0:
            u_next = (1.0 - params.damping) * u_next + params.damping * u
        residual = float(np.max(np.abs(u_next - u))) if len(u) else 0.0
        u = u_next
        if residual < params.tolerance:
            converged = True
            break
    Hk, _ = graph.fields(u)
    prob_plus = sigmoid(2.0 * Hk)
    return PosteriorMarginals(prob_plus=prob_plus, method="bp",
                              iterations=iterations, converged=converged,
                              residual=residual)


def hard_decisions(marginals: PosteriorMarginals) -> tuple[np.ndarray, np.ndarray]:
    """Sign decisions from marginals; exact ties decide +1 and are flagged."""
    p = marginals.prob_plus
    ties = p == 0.5
    decided = np.where(p >= 0.5, 1, -1).astype(np.int8)
    return decided, ties


def overlap_ber(decoded, sent, tie_flags=None) -> tuple[float, float]:
    """Overlap m = (1/K) sum b_k tau_k (ties contribute 0) and BER = (1-m)/2."""
    decoded = np.asarray(decoded, dtype=float)
    sent = np.asarray(sent, dtype=float)
    if decoded.shape != sent.shape:
        raise DomainError(f"length mismatch: {decoded.shape} vs {sent.shape}")
    prod = decoded * sent
    if tie_flags is not None:
        tie_flags = np.asarray(tie_flags, dtype=bool)
        if tie_flags.shape != decoded.shape:
            raise DomainError("tie_flags length mismatch")
        prod = np.where(tie_flags, 0.0, prod)
    m = float(prod.mean())
    return m, (1.0 - m) / 2.0
