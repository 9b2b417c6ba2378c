"""Spectral pruning of the hidden layer.

A subset ``J`` of hidden nodes is chosen to minimize a convex combination of
an input information loss (how well ``phi_J`` linearly reconstructs the full
state ``phi``) and two output information losses (how well the next layer's
pre-activations are reconstructed). The compressed network then uses the
reconstruction matrix ``A_J`` to fold the dropped nodes into the kept ones.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .covariance import HiddenCovariance, covariance_of, nonzero_rows
from .rnn import RnnParams, SequenceBatch, params_from_dict, params_to_dict

__all__ = [
    "TauSpec",
    "Reconstruction",
    "PruneResult",
    "as_index_set",
    "tau_vector",
    "reconstruct",
    "reconstruct_ridge",
    "reconstruction_matrix",
    "input_information_loss",
    "ridge_input_loss",
    "output_information_losses",
    "information_losses",
    "objective",
    "greedy_path",
    "greedy_select",
    "exhaustive_select",
    "compress_with",
    "compress",
    "select",
    "spectral_prune",
]

NEG_CLAMP = 1e-10
PINV_CUTOFF = 1e-12
DEGENERATE_REL_TOL = 1e-12
EXHAUSTIVE_BUDGET = 10**6
DEFAULT_THETA = (1.0, 0.0, 0.0)
SELECTORS = ("greedy", "exhaustive")


def as_index_set(j, m: int) -> tuple[int, ...]:
    """Sorted, duplicate-free tuple of node ids in ``[0, m)``."""
    idx = sorted({int(k) for k in j})
    if idx and (idx[0] < 0 or idx[-1] >= m):
        raise ValueError(f"index set {idx} not contained in [0, {m})")
    return tuple(idx)


@dataclass(frozen=True)
class TauSpec:
    """Ridge weights on the reconstruction matrix.

    ``zero``: no regularization (pseudo-inverse limit). ``scalar``: the same
    ``value`` on every kept node. ``leverage``: ``value`` is ``lambda`` and node
    ``k`` gets ``lambda * |J| * tau'_k`` with ``tau'`` the leverage scores.
    """

    mode: str = "zero"
    value: float = 0.0

    def __post_init__(self):
        if self.mode not in ("zero", "scalar", "leverage"):
            raise ValueError(f"unknown tau mode {self.mode!r}")
        if self.mode == "zero" and self.value != 0.0:
            raise ValueError("zero mode carries no value")
        if self.mode == "scalar" and not self.value >= 0.0:
            raise ValueError("scalar tau must be >= 0")
        if self.mode == "leverage" and not self.value > 0.0:
            raise ValueError("leverage mode needs lambda > 0")

    @classmethod
    def zero(cls) -> "TauSpec":
        return cls("zero", 0.0)

    @classmethod
    def scalar(cls, c: float) -> "TauSpec":
        return cls("scalar", float(c))

    @classmethod
    def leverage(cls, lam: float) -> "TauSpec":
        return cls("leverage", float(lam))

    @classmethod
    def parse(cls, text) -> "TauSpec":
        """``"zero"``, a number (scalar mode) or ``"leverage:<lambda>"``."""
        if isinstance(text, TauSpec):
            return text
        if isinstance(text, (int, float)):
            return cls.zero() if float(text) == 0.0 else cls.scalar(text)
        s = str(text).strip()
        if s == "zero":
            return cls.zero()
        if s.startswith("leverage:"):
            return cls.leverage(float(s.split(":", 1)[1]))
        if s.startswith("scalar:"):
            s = s.split(":", 1)[1]
        value = float(s)
        return cls.zero() if value == 0.0 else cls.scalar(value)

    def __str__(self) -> str:
        return "zero" if self.mode == "zero" else f"{self.mode}:{self.value!r}"


def tau_vector(spec: TauSpec, j, cov: HiddenCovariance) -> np.ndarray:
    j = as_index_set(j, cov.m)
    if spec.mode == "zero":
        return np.zeros(len(j))
    if spec.mode == "scalar":
        return np.full(len(j), spec.value)
    from .bounds.spectral import leverage_scores

    scores = leverage_scores(cov, spec.value)
    return spec.value * len(j) * scores[list(j)]


@dataclass(frozen=True)
class Reconstruction:
    """``a_j = Sigma[:, J] K^+`` with ``K = Sigma[J, J] + diag(tau)`` and ``captured = a_j Sigma[J, :]``."""

    j: tuple[int, ...]
    tau: np.ndarray
    a_j: np.ndarray
    captured: np.ndarray
    pinv_fallback: bool
    # tau = 0 and J holds every row above the zero-row tolerance
    lossless: bool = False


def reconstruct(cov: HiddenCovariance, j, tau: TauSpec) -> Reconstruction:
    """Solve for the reconstruction matrix.

    With every ridge weight positive the system is SPD and solved by
    Cholesky. With all weights zero the pseudo-inverse is used. A mixed
    vector falls back to the pseudo-inverse only if Cholesky fails, which is
    flagged in ``pinv_fallback``.
    """
    j = as_index_set(j, cov.m)
    return reconstruct_ridge(cov, j, tau_vector(tau, j, cov))


def reconstruct_ridge(cov: HiddenCovariance, j, tau_vec) -> Reconstruction:
    """``reconstruct`` with an explicit ridge vector aligned with the sorted ``j``."""
    j = as_index_set(j, cov.m)
    if not j:
        raise ValueError("index set must be non-empty")
    tau_vec = np.asarray(tau_vec, dtype=np.float64)
    if tau_vec.shape != (len(j),) or np.any(tau_vec < 0.0):
        raise ValueError("ridge vector must be non-negative with one entry per kept node")
    sigma = cov.sigma
    cols = list(j)
    k = sigma[np.ix_(cols, cols)] + np.diag(tau_vec)
    rows_j = sigma[cols, :]
    fallback = False
    if np.all(tau_vec == 0.0):
        # identically zero rows (dead units) get zero coefficients; leaving them
        # out of the pseudo-inverse keeps the result bitwise independent of them
        live = np.flatnonzero(np.any(rows_j != 0.0, axis=1))
        solved = np.zeros_like(rows_j)
        if live.size:
            solved[live] = linalg.pseudo_inverse(k[np.ix_(live, live)], PINV_CUTOFF) @ rows_j[live]
        a_j = solved.T
        captured = a_j[:, live] @ rows_j[live]
        captured = 0.5 * (captured + captured.T)
        lossless = set(nonzero_rows(cov)[1]) <= set(cols)
        return Reconstruction(j, tau_vec, a_j, captured, fallback, lossless)
    else:
        try:
            solved = linalg.spd_solve(k, rows_j)
        except linalg.NotPositiveDefiniteError:
            solved = linalg.pseudo_inverse(k, PINV_CUTOFF) @ rows_j
            fallback = True
    a_j = solved.T
    captured = a_j @ rows_j
    captured = 0.5 * (captured + captured.T)
    return Reconstruction(j, tau_vec, a_j, captured, fallback)


def reconstruction_matrix(cov: HiddenCovariance, j, tau: TauSpec = TauSpec.zero()) -> np.ndarray:
    return reconstruct(cov, j, tau).a_j


def _clamp(value: float, scale: float) -> float:
    if value < 0.0:
        if value < -NEG_CLAMP * max(1.0, scale):
            raise ArithmeticError(f"trace of a PSD expression is negative: {value:.3e}")
        return 0.0
    return value


def _losses_from(cov: HiddenCovariance, rec: Reconstruction, w_out, w_hid) -> tuple[float, float, float]:
    # the residual is supported on zero rows only, so every loss vanishes;
    # the subtraction would leave round-off of order eps * trace instead
    resid = np.zeros_like(cov.sigma) if rec.lossless else cov.sigma - rec.captured
    scale = cov.trace
    l_a = _clamp(float(np.trace(resid)), scale)
    l_o = l_h = 0.0
    if w_out is not None:
        w_out = np.asarray(w_out, dtype=np.float64)
        if w_out.shape[1] != cov.m:
            raise linalg.DimensionError(f"w_out has {w_out.shape[1]} columns, expected {cov.m}")
        l_o = _clamp(float(np.sum((w_out @ resid) * w_out)), scale * max(1.0, float(np.sum(w_out**2))))
    if w_hid is not None:
        w_hid = np.asarray(w_hid, dtype=np.float64)
        if w_hid.shape != (cov.m, cov.m):
            raise linalg.DimensionError(f"w_hid has shape {w_hid.shape}, expected {(cov.m, cov.m)}")
        w_j = w_hid[list(rec.j), :]
        l_h = _clamp(float(np.sum((w_j @ resid) * w_j)), scale * max(1.0, float(np.sum(w_j**2))))
    return l_a, l_o, l_h


def ridge_input_loss(cov: HiddenCovariance, j, tau_vec) -> float:
    return _losses_from(cov, reconstruct_ridge(cov, j, tau_vec), None, None)[0]


def input_information_loss(cov: HiddenCovariance, j, tau: TauSpec = TauSpec.zero()) -> float:
    """``Tr[Sigma - Sigma[:, J] (Sigma[J, J] + I_tau)^-1 Sigma[J, :]]``."""
    return _losses_from(cov, reconstruct(cov, j, tau), None, None)[0]


def output_information_losses(cov: HiddenCovariance, j, tau: TauSpec, w_out, w_hid) -> tuple[float, float]:
    """Output-side losses through ``w_out`` and through the kept rows ``w_hid[J, :]``."""
    _, l_o, l_h = _losses_from(cov, reconstruct(cov, j, tau), w_out, w_hid)
    return l_o, l_h


def information_losses(cov: HiddenCovariance, j, tau: TauSpec, weights: RnnParams | None = None):
    rec = reconstruct(cov, j, tau)
    w_out = weights.w_out if weights is not None else None
    w_hid = weights.w_hid if weights is not None else None
    return _losses_from(cov, rec, w_out, w_hid)


def _check_theta(theta) -> tuple[float, float, float]:
    theta = tuple(float(t) for t in theta)
    if len(theta) != 3 or any(not 0.0 <= t <= 1.0 for t in theta) or abs(sum(theta) - 1.0) > 1e-12:
        raise ValueError(f"theta must be a convex combination of three weights, got {theta}")
    return theta


def _needs_weights(theta, weights):
    if (theta[1] > 0 or theta[2] > 0) and weights is None:
        raise ValueError("output information losses need the trained weights")


def objective(cov: HiddenCovariance, j, tau: TauSpec = TauSpec.zero(), weights: RnnParams | None = None,
              theta=DEFAULT_THETA) -> float:
    theta = _check_theta(theta)
    _needs_weights(theta, weights)
    losses = information_losses(cov, j, tau, weights)
    return float(sum(t * l for t, l in zip(theta, losses) if t != 0.0))


def _check_size(m_sharp: int, m: int) -> None:
    if not 1 <= m_sharp <= m:
        raise ValueError(f"m_sharp={m_sharp} must lie in [1, {m}]")


def _greedy_incremental(cov, m_sharp, c, weights, theta):
    """Forward selection with rank-one updates of ``C = Sigma[:, J] K^-1 Sigma[J, :]``."""
    sigma = cov.sigma
    m = cov.m
    diag = np.diag(sigma)
    tol = DEGENERATE_REL_TOL * float(diag.max()) if m else 0.0
    w_out = weights.w_out if weights is not None else np.zeros((0, m))
    w_hid = weights.w_hid if weights is not None else np.zeros((m, m))
    captured = np.zeros((m, m))
    in_j = np.zeros(m, dtype=bool)
    order, values = [], []
    for _ in range(m_sharp):
        resid = sigma - captured
        d = diag + c - np.diag(captured)
        usable = d > tol if c == 0.0 else d > 0.0
        inv_d = np.divide(1.0, d, out=np.zeros(m), where=usable)
        l_a = float(np.trace(resid))
        gain_a = np.sum(resid * resid, axis=0) * inv_d
        wr_o = w_out @ resid
        l_o = float(np.sum(wr_o * w_out))
        gain_o = np.sum(wr_o * wr_o, axis=0) * inv_d
        wr_h = w_hid @ resid
        q = np.sum(wr_h * w_hid, axis=1)
        l_h = float(q[in_j].sum())
        sq = wr_h * wr_h
        drop_h = (sq[in_j].sum(axis=0) + np.diag(sq)) * inv_d
        cand = (theta[0] * (l_a - gain_a) + theta[1] * (l_o - gain_o)
                + theta[2] * (l_h + q - drop_h))
        cand[in_j] = np.inf
        v = int(np.argmin(cand))
        if usable[v]:
            r = resid[:, v]
            captured = captured + np.outer(r, r) * inv_d[v]
        in_j[v] = True
        order.append(v)
        values.append(float(cand[v]))
    return order, values


def greedy_path(cov: HiddenCovariance, m_sharp: int, tau: TauSpec = TauSpec.zero(),
                weights: RnnParams | None = None, theta=DEFAULT_THETA,
                incremental: bool = True) -> tuple[list[int], list[float]]:
    """Order in which forward selection adds nodes and the objective after each addition.

    Ties go to the smallest node id. Zero and scalar ridge modes use rank-one
    updates unless ``incremental`` is false; leverage mode always recomputes,
    since the ridge weights depend on the current size of ``J``.
    """
    theta = _check_theta(theta)
    _needs_weights(theta, weights)
    _check_size(m_sharp, cov.m)
    if incremental and tau.mode != "leverage":
        return _greedy_incremental(cov, m_sharp, tau.value, weights, theta)
    chosen: list[int] = []
    values = []
    for _ in range(m_sharp):
        best_v, best = -1, math.inf
        for v in range(cov.m):
            if v in chosen:
                continue
            val = objective(cov, chosen + [v], tau, weights, theta)
            if val < best:
                best_v, best = v, val
        chosen.append(best_v)
        values.append(best)
    return chosen, values


def greedy_select(cov: HiddenCovariance, m_sharp: int, tau: TauSpec = TauSpec.zero(),
                  weights: RnnParams | None = None, theta=DEFAULT_THETA) -> tuple[int, ...]:
    order, _ = greedy_path(cov, m_sharp, tau, weights, theta)
    return as_index_set(order, cov.m)


def exhaustive_select(cov: HiddenCovariance, m_sharp: int, tau: TauSpec = TauSpec.zero(),
                      weights: RnnParams | None = None, theta=DEFAULT_THETA,
                      budget: int = EXHAUSTIVE_BUDGET) -> tuple[int, ...]:
    """Global minimizer over all subsets of size ``m_sharp``; ties go to the lexicographically first."""
    theta = _check_theta(theta)
    _needs_weights(theta, weights)
    _check_size(m_sharp, cov.m)
    if math.comb(cov.m, m_sharp) > budget:
        raise ValueError(f"C({cov.m}, {m_sharp}) subsets exceed the budget of {budget}")
    best_j, best = None, math.inf
    for j in itertools.combinations(range(cov.m), m_sharp):
        val = objective(cov, j, tau, weights, theta)
        if val < best:
            best_j, best = j, val
    return best_j


@dataclass(frozen=True)
class PruneResult:
    j: tuple[int, ...]
    a_j: np.ndarray | None
    compressed: RnnParams
    losses: tuple[float, float, float]
    objective: float
    tau: TauSpec = TauSpec.zero()
    pinv_fallback: bool = False
    info: dict = field(default_factory=dict)

    @property
    def m_sharp(self) -> int:
        return len(self.j)

    def to_dict(self) -> dict:
        out = params_to_dict(self.compressed)
        out["j"] = list(self.j)
        out["a_j"] = None if self.a_j is None else self.a_j.tolist()
        out["losses"] = dict(zip(("input", "out_o", "out_h"), self.losses))
        out["objective"] = self.objective
        out["tau_mode"] = str(self.tau)
        out["pinv_fallback"] = self.pinv_fallback
        if self.info:
            out["info"] = self.info
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PruneResult":
        losses = data["losses"]
        a_j = data.get("a_j")
        return cls(
            j=tuple(data["j"]),
            a_j=None if a_j is None else np.array(a_j, dtype=np.float64).reshape(-1, len(data["j"])),
            compressed=params_from_dict(data),
            losses=(losses["input"], losses["out_o"], losses["out_h"]),
            objective=data["objective"],
            tau=TauSpec.parse(data["tau_mode"]),
            pinv_fallback=bool(data.get("pinv_fallback", False)),
            info=data.get("info", {}),
        )


def compress_with(trained: RnnParams, j, a_j: np.ndarray) -> RnnParams:
    """Fold the reconstruction into the kept rows: ``w_out A``, ``w_hid[J, :] A``, ``w_in[J]``."""
    cols = list(as_index_set(j, trained.m))
    return RnnParams(
        w_out=trained.w_out @ a_j,
        w_hid=trained.w_hid[cols, :] @ a_j,
        w_in=trained.w_in[cols, :],
        b_out=trained.b_out.copy(),
        b_hid=trained.b_hid[cols],
        activation=trained.activation,
    )


def compress(trained: RnnParams, cov: HiddenCovariance, j, tau: TauSpec = TauSpec.zero(),
             theta=DEFAULT_THETA) -> PruneResult:
    if cov.m != trained.m:
        raise linalg.DimensionError(f"covariance is {cov.m}x{cov.m} but the network has {trained.m} nodes")
    theta = _check_theta(theta)
    rec = reconstruct(cov, j, tau)
    losses = _losses_from(cov, rec, trained.w_out, trained.w_hid)
    obj = float(sum(t * l for t, l in zip(theta, losses) if t != 0.0))
    return PruneResult(rec.j, rec.a_j, compress_with(trained, rec.j, rec.a_j), losses, obj, tau, rec.pinv_fallback)


def select(cov: HiddenCovariance, m_sharp: int, tau: TauSpec, weights: RnnParams, theta, selector: str):
    if selector == "greedy":
        return greedy_select(cov, m_sharp, tau, weights, theta)
    if selector == "exhaustive":
        return exhaustive_select(cov, m_sharp, tau, weights, theta)
    raise ValueError(f"unknown selector {selector!r}; expected one of {SELECTORS}")


def spectral_prune(trained: RnnParams, dataset: SequenceBatch, m_sharp: int, tau: TauSpec = TauSpec.zero(),
                   theta=DEFAULT_THETA, selector: str = "greedy",
                   cov: HiddenCovariance | None = None) -> PruneResult:
    """Covariance of the hidden states on ``dataset``, node selection, then compression."""
    if cov is None:
        cov = covariance_of(trained, dataset)
    j = select(cov, m_sharp, tau, trained, theta, selector)
    return compress(trained, cov, j, tau, theta)
