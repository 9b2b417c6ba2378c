"""Numeric evaluators for the approximation and generalization bounds of a compressed RNN.

All geometric sums are accumulated term by term so that the ratio-one case
``R_h * rho_sigma == 1`` needs no special handling.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import linalg
from ..covariance import HiddenCovariance
from ..rnn import RnnParams, SequenceBatch, forward

__all__ = [
    "C_HAT",
    "NormBudget",
    "MeasuredTerms",
    "BoundReport",
    "geometric_sum",
    "r_infinity",
    "m_t",
    "covering_bound",
    "approx_bound_rhs",
    "generalization_bound_terms",
    "generalization_bound_rhs",
    "hatted_budget",
    "spectral_bound_quantities",
    "spectral_generalization_bound_rhs",
    "budget_from_params",
    "measured_terms",
    "approx_lhs",
]

C_HAT = 192.0 * math.sqrt(5.0)


@dataclass(frozen=True)
class NormBudget:
    """Norm bounds on the compressed weights plus the data and loss constants.

    ``r_o``, ``r_h``, ``r_i`` bound Frobenius norms of the output, recurrent
    and input weights; ``rb_o``, ``rb_hi`` bound the bias norms; ``r_x`` bounds
    every input vector; ``rho_sigma`` and ``rho_psi`` are Lipschitz constants
    of the activation and the loss; ``r_y`` bounds the loss at a zero output.
    """

    r_o: float
    r_h: float
    r_i: float
    r_x: float
    rb_o: float = 0.0
    rb_hi: float = 0.0
    rho_sigma: float = 1.0
    rho_psi: float = 1.0
    r_y: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value >= 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")


@dataclass(frozen=True)
class MeasuredTerms:
    """Discrepancies between a trained net and its compression.

    ``out_err`` and ``hid_err`` are empirical (n, T) norms of the output and
    kept-row recurrent reconstructions, ``in_op`` the operator norm of the
    input-weight difference, ``bias_hi`` and ``bias_o`` bias-difference norms.
    """

    out_err: float = 0.0
    hid_err: float = 0.0
    in_op: float = 0.0
    bias_hi: float = 0.0
    bias_o: float = 0.0


def geometric_sum(ratio: float, start: int, stop: int) -> float:
    """``sum_{l=start}^{stop} ratio**l`` (empty when ``stop < start``)."""
    total = 0.0
    for l in range(start, stop + 1):
        total += ratio**l
    return total


def _check_t(t: int) -> None:
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")


def r_infinity(b: NormBudget, t: int) -> float:
    """Sup-norm bound on the output at step ``t``."""
    _check_t(t)
    ratio = b.r_h * b.rho_sigma
    return b.r_o * b.rho_sigma * (b.r_i * b.r_x + b.rb_hi) * geometric_sum(ratio, 0, t - 1) + b.rb_o


def _double_sum(ratio: float, t: int) -> float:
    total = 0.0
    for l in range(1, t):
        for k in range(l):
            total += ratio ** (t - 1 - l + k)
    return total


def m_t(b: NormBudget, m_sharp: int, d_x: int, d_y: int, t: int) -> float:
    """Lipschitz-type constant entering the covering number at step ``t``."""
    _check_t(t)
    ratio = b.r_h * b.rho_sigma
    root = math.sqrt(m_sharp)
    cy = d_y * min(root, math.sqrt(d_y))
    cx = d_x * min(root, math.sqrt(d_x))
    first = b.r_o * b.rho_sigma * ((cy + cx) * b.r_i * b.r_x + (cy + 1.0) * b.rb_hi) * geometric_sum(ratio, 0, t - 1)
    second = (m_sharp**1.5 * b.r_h * b.rho_sigma**2 * b.r_o * (b.r_i * b.r_x + b.rb_hi)
              * _double_sum(ratio, t))
    return first + second + d_y * b.rb_o


def covering_bound(m_sharp: int, n: int, mt: float, eps: float) -> float:
    """Upper bound on the log covering number at scale ``eps``."""
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    return 10.0 * m_sharp * math.sqrt(n) * mt / eps


def _recurrent_factor(b: NormBudget, steps: int) -> float:
    ratio = b.r_h * b.rho_sigma
    return b.r_o * b.rho_sigma * max(1.0, ratio ** (steps - 2)) * steps


def approx_bound_rhs(b: NormBudget, meas: MeasuredTerms, steps: int) -> float:
    """Upper bound on ``||f_hat - f_sharp||_{n,T}``."""
    _check_t(steps)
    ratio = b.r_h * b.rho_sigma
    braces = (meas.out_err
              + _recurrent_factor(b, steps) * meas.hid_err
              + b.r_o * b.rho_sigma * geometric_sum(ratio, 0, steps - 1) * (b.r_x * meas.in_op + meas.bias_hi)
              + meas.bias_o)
    return math.sqrt(3.0) * braces


def generalization_bound_terms(b: NormBudget, meas: MeasuredTerms, m_sharp: int, d_x: int, d_y: int,
                               n: int, steps: int, delta: float, train_error: float = 0.0) -> dict[str, float]:
    """Training error, approximation (bias) and estimation (variance) parts of the bound."""
    if delta < math.log(2.0):
        raise ValueError(f"delta must be >= log 2, got {delta}")
    if n < 1:
        raise ValueError("n must be >= 1")
    bias = b.rho_psi * approx_bound_rhs(b, meas, steps)
    return {"train": float(train_error), "bias": bias, **_variance(b, m_sharp, d_x, d_y, n, steps, delta)}


def _variance(b: NormBudget, m_sharp, d_x, d_y, n, steps, delta) -> dict[str, float]:
    chain = sum(math.sqrt(m_t(b, m_sharp, d_x, d_y, t) * r_infinity(b, t)) for t in range(1, steps + 1))
    complexity = C_HAT * b.rho_psi * math.sqrt(m_sharp) / steps * chain / math.sqrt(n)
    concentration = 3.0 * math.sqrt(2.0 * delta) * (b.rho_psi * r_infinity(b, steps) + b.r_y) / math.sqrt(n)
    return {"complexity": complexity, "concentration": concentration}


def generalization_bound_rhs(b: NormBudget, meas: MeasuredTerms, m_sharp: int, d_x: int, d_y: int,
                             n: int, steps: int, delta: float, train_error: float = 0.0) -> float:
    terms = generalization_bound_terms(b, meas, m_sharp, d_x, d_y, n, steps, delta, train_error)
    return terms["train"] + terms["bias"] + terms["complexity"] + terms["concentration"]


def _inflation(m: int, delta_tilde: float) -> float:
    if not 0.0 < delta_tilde < 0.5:
        raise ValueError(f"delta_tilde must lie in (0, 1/2), got {delta_tilde}")
    return math.sqrt(m / (1.0 - 2.0 * delta_tilde))


def hatted_budget(trained: NormBudget, m: int, delta_tilde: float) -> NormBudget:
    """Budget of the leverage-sampled compression, built from bounds on the trained weights."""
    s = _inflation(m, delta_tilde)
    return replace(trained, r_o=2.0 * trained.r_o * s, r_h=2.0 * trained.r_h * s)


def spectral_bound_quantities(trained: NormBudget, m: int, delta_tilde: float, m_sharp: int,
                              d_x: int, d_y: int, t: int) -> dict[str, float]:
    hb = hatted_budget(trained, m, delta_tilde)
    return {"r_infinity": r_infinity(hb, t), "m_t": m_t(hb, m_sharp, d_x, d_y, t)}


def spectral_generalization_bound_rhs(trained: NormBudget, m: int, delta_tilde: float, m_sharp: int,
                                      d_x: int, d_y: int, n: int, steps: int, delta: float, lam: float,
                                      train_error: float = 0.0) -> dict[str, float]:
    """Bound for the leverage-sampled compression; the bias part scales with ``sqrt(lambda)``."""
    if delta < math.log(2.0):
        raise ValueError(f"delta must be >= log 2, got {delta}")
    s = _inflation(m, delta_tilde)
    rho = trained.rho_sigma
    growth = max(1.0, (2.0 * rho * trained.r_h * s) ** (steps - 2))
    bias = (math.sqrt(3.0) * trained.rho_psi
            * (2.0 * trained.r_o + 4.0 * trained.r_o * rho * s * growth * steps * trained.r_h) * math.sqrt(lam))
    var = _variance(hatted_budget(trained, m, delta_tilde), m_sharp, d_x, d_y, n, steps, delta)
    terms = {"train": float(train_error), "bias": bias, **var}
    terms["total"] = terms["train"] + bias + var["complexity"] + var["concentration"]
    return terms


def budget_from_params(params: RnnParams, r_x: float, rho_psi: float = 1.0, r_y: float = 0.0) -> NormBudget:
    """Tightest budget containing ``params``: its own Frobenius and bias norms."""
    if params.hid_factors is not None:
        left, right = params.hid_factors
        w_hid = left @ right
    else:
        w_hid = params.w_hid
    return NormBudget(
        r_o=float(np.linalg.norm(params.w_out)),
        r_h=float(np.linalg.norm(w_hid)),
        r_i=float(np.linalg.norm(params.w_in)),
        r_x=float(r_x),
        rb_o=float(np.linalg.norm(params.b_out)),
        rb_hi=float(np.linalg.norm(params.b_hid)),
        rho_sigma=1.0,
        rho_psi=rho_psi,
        r_y=r_y,
    )


def _effective_hid(params: RnnParams) -> np.ndarray:
    if params.hid_factors is not None:
        left, right = params.hid_factors
        return left @ right
    return params.w_hid


def _weighted_norm(err: np.ndarray, sigma: np.ndarray) -> float:
    """``sqrt(Tr[E Sigma E^T])``: the (n, T) norm of ``E phi``."""
    value = float(np.sum((err @ sigma) * err))
    return math.sqrt(max(value, 0.0))


def measured_terms(trained: RnnParams, compressed: RnnParams, j, cov: HiddenCovariance) -> MeasuredTerms:
    """Discrepancy terms evaluated on the trained net's hidden covariance."""
    cols = list(j)
    if len(cols) != compressed.m:
        raise linalg.DimensionError(f"|J|={len(cols)} but the compressed net has {compressed.m} nodes")
    m = trained.m
    select = np.zeros((len(cols), m))
    select[np.arange(len(cols)), cols] = 1.0
    err_o = trained.w_out - compressed.w_out @ select
    err_h = trained.w_hid[cols, :] - _effective_hid(compressed) @ select
    return MeasuredTerms(
        out_err=_weighted_norm(err_o, cov.sigma),
        hid_err=_weighted_norm(err_h, cov.sigma),
        in_op=linalg.op_norm(trained.w_in[cols, :] - compressed.w_in),
        bias_hi=float(np.linalg.norm(trained.b_hid[cols] - compressed.b_hid)),
        bias_o=float(np.linalg.norm(trained.b_out - compressed.b_out)),
    )


def approx_lhs(trained: RnnParams, compressed: RnnParams, dataset: SequenceBatch, chunk: int = 1000) -> float:
    """``||f_hat - f_sharp||_{n,T}``: root mean squared output gap over all sequences and steps."""
    total, count = 0.0, 0
    for start in range(0, dataset.n, chunk):
        x = dataset.inputs[start : start + chunk]
        a, _ = forward(trained, x)
        b, _ = forward(compressed, x)
        total += float(np.sum((a - b) ** 2))
        count += a.shape[0] * a.shape[1]
    return math.sqrt(total / max(count, 1))


@dataclass
class BoundReport:
    """Inputs, evaluated quantities and LHS/RHS pairs of every checked inequality."""

    inputs: dict = field(default_factory=dict)
    quantities: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    def add_check(self, name: str, lhs: float, rhs: float, **extra) -> bool:
        ok = bool(lhs <= rhs)
        self.checks.append({"name": name, "lhs": lhs, "rhs": rhs, "holds": ok, **extra})
        return ok

    @property
    def all_hold(self) -> bool:
        return all(c["holds"] for c in self.checks)

    def to_dict(self) -> dict:
        return {"inputs": self.inputs, "quantities": self.quantities, "checks": self.checks}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
