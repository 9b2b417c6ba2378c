"""Comparison methods: random and reconstruction-free node pruning, weight pruning,
column sparsification during training, low-rank factorization and masked fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .covariance import HiddenCovariance
from .pruning import (
    DEFAULT_THETA,
    PruneResult,
    TauSpec,
    as_index_set,
    compress,
    information_losses,
    select,
)
from .rnn import RnnParams, SequenceBatch, TrainConfig, TrainResult, train

__all__ = [
    "WeightMask",
    "submatrix_compress",
    "spectral_no_reconstruction",
    "random_node_prune",
    "magnitude_weight_prune",
    "random_weight_prune",
    "column_mask",
    "column_sparsify_train",
    "low_rank_factorize",
    "finetune",
    "weight_counts",
]

COLUMN_NOISE_STD = 1e-4


@dataclass(frozen=True)
class WeightMask:
    """Boolean keep-mask over the recurrent weight matrix."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        object.__setattr__(self, "mask", mask)

    @property
    def kept_count(self) -> int:
        return int(self.mask.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def apply(self, params: RnnParams) -> RnnParams:
        if params.w_hid.shape != self.mask.shape:
            raise linalg.DimensionError(f"mask {self.mask.shape} does not fit w_hid {params.w_hid.shape}")
        return params.with_arrays(w_hid=np.where(self.mask, params.w_hid, 0.0))

    def indices(self) -> list[int]:
        """Row-major flat indices of the kept entries."""
        return [int(k) for k in np.flatnonzero(self.mask)]

    def to_dict(self) -> dict:
        return {"shape": list(self.mask.shape), "kept": self.indices()}

    @classmethod
    def from_dict(cls, data: dict) -> "WeightMask":
        mask = np.zeros(int(np.prod(data["shape"])), dtype=bool)
        mask[np.asarray(data["kept"], dtype=np.intp)] = True
        return cls(mask.reshape(data["shape"]))

    @classmethod
    def keep_flat(cls, shape, flat_indices) -> "WeightMask":
        mask = np.zeros(int(np.prod(shape)), dtype=bool)
        mask[np.asarray(flat_indices, dtype=np.intp)] = True
        return cls(mask.reshape(shape))


def submatrix_compress(trained: RnnParams, j) -> RnnParams:
    """Keep rows and columns ``J`` of every weight, with no reconstruction."""
    cols = list(as_index_set(j, trained.m))
    return RnnParams(
        w_out=trained.w_out[:, cols],
        w_hid=trained.w_hid[np.ix_(cols, cols)],
        w_in=trained.w_in[cols, :],
        b_out=trained.b_out.copy(),
        b_hid=trained.b_hid[cols],
        activation=trained.activation,
    )


def _submatrix_result(trained, cov, j, tau, theta, **info) -> PruneResult:
    theta = tuple(float(t) for t in theta)
    losses = information_losses(cov, j, tau, trained)
    obj = float(sum(t * l for t, l in zip(theta, losses) if t != 0.0))
    return PruneResult(tuple(j), None, submatrix_compress(trained, j), losses, obj, tau, False, info)


def spectral_no_reconstruction(trained: RnnParams, cov: HiddenCovariance, m_sharp: int,
                               tau: TauSpec = TauSpec.zero(), theta=DEFAULT_THETA,
                               selector: str = "greedy", j=None) -> PruneResult:
    """Spectral node selection followed by plain submatrix extraction.

    Pass ``j`` to reuse a selection already computed for the reconstructed variant.
    """
    if j is None:
        j = select(cov, m_sharp, tau, trained, theta, selector)
    j = as_index_set(j, trained.m)
    return _submatrix_result(trained, cov, j, tau, theta)


def random_node_prune(trained: RnnParams, cov: HiddenCovariance, m_sharp: int, with_reconstruction: bool,
                      seed, tau: TauSpec = TauSpec.zero()) -> PruneResult:
    if not 1 <= m_sharp <= trained.m:
        raise ValueError(f"m_sharp={m_sharp} must lie in [1, {trained.m}]")
    rng = np.random.default_rng(seed)
    j = as_index_set(rng.choice(trained.m, size=m_sharp, replace=False), trained.m)
    if with_reconstruction:
        return compress(trained, cov, j, tau)
    return _submatrix_result(trained, cov, j, tau, DEFAULT_THETA)


def _check_kept(kept: int, size: int) -> None:
    if not 0 <= kept <= size:
        raise ValueError(f"kept={kept} must lie in [0, {size}]")


def magnitude_weight_prune(trained: RnnParams, kept: int) -> tuple[RnnParams, WeightMask]:
    """Keep the ``kept`` recurrent weights of largest absolute value.

    Equal magnitudes are ranked in row-major order, earlier entries first.
    """
    w = trained.w_hid
    _check_kept(kept, w.size)
    order = np.argsort(-np.abs(w).ravel(), kind="stable")
    mask = WeightMask.keep_flat(w.shape, order[:kept])
    return mask.apply(trained), mask


def random_weight_prune(trained: RnnParams, kept: int, seed) -> tuple[RnnParams, WeightMask]:
    w = trained.w_hid
    _check_kept(kept, w.size)
    rng = np.random.default_rng(seed)
    mask = WeightMask.keep_flat(w.shape, rng.choice(w.size, size=kept, replace=False))
    return mask.apply(trained), mask


def column_mask(w_hid: np.ndarray, kept_cols: int) -> WeightMask:
    """Mask keeping the ``kept_cols`` columns of largest L2 norm (ties keep the lower index)."""
    m = w_hid.shape[1]
    _check_kept(kept_cols, m)
    norms = np.linalg.norm(w_hid, axis=0)
    order = np.argsort(-norms, kind="stable")
    keep = np.zeros(m, dtype=bool)
    keep[order[:kept_cols]] = True
    return WeightMask(np.broadcast_to(keep, w_hid.shape).copy())


def column_sparsify_train(init: RnnParams, dataset: SequenceBatch, config: TrainConfig, kept_cols: int,
                          noise_std: float | None = None, noise_seed: int = 0) -> tuple[TrainResult, WeightMask]:
    """Train while zeroing the weakest recurrent columns after every optimizer step.

    For ReLU networks a small Gaussian perturbation is added to the recurrent
    weights before each masking step so that the identical columns of an
    identity initialization can be ranked. ``noise_std`` defaults to 1e-4 for
    ReLU and 0 otherwise. With ``kept_cols == m`` no noise or masking is
    applied and the run matches ``train`` exactly.
    """
    m = init.m
    _check_kept(kept_cols, m)
    if noise_std is None:
        noise_std = COLUMN_NOISE_STD if init.activation == "relu" else 0.0
    rng = np.random.default_rng(noise_seed)
    last = {}

    def hook(params: RnnParams, step: int) -> RnnParams:
        w = params.w_hid
        if noise_std > 0.0:
            w = w + rng.normal(0.0, noise_std, size=w.shape)
        mask = column_mask(w, kept_cols)
        last["mask"] = mask
        return params.with_arrays(w_hid=np.where(mask.mask, w, 0.0))

    if kept_cols == m:
        result = train(init, dataset, config)
        return result, WeightMask(np.ones((m, m), dtype=bool))
    result = train(init, dataset, config, after_step=hook)
    mask = last.get("mask", column_mask(result.params.w_hid, kept_cols))
    return result, mask


def low_rank_factorize(trained: RnnParams, k: int) -> RnnParams:
    """Replace the recurrent matrix by its rank-``k`` truncated SVD, kept in factored form."""
    m = trained.m
    if not 1 <= k <= m:
        raise linalg.DimensionError(f"rank k={k} must lie in [1, {m}]")
    u, s, v = linalg.truncated_svd(trained.w_hid, k)
    left = u * s
    right = v.T
    return trained.with_arrays(w_hid=left @ right, hid_factors=(left, right))


def finetune(params: RnnParams, dataset: SequenceBatch, config: TrainConfig,
             mask: WeightMask | None = None) -> TrainResult:
    """Continue training; a mask, when given, is re-imposed after every step."""
    if mask is None:
        return train(params, dataset, config)
    return train(mask.apply(params), dataset, config, after_step=lambda p, step: mask.apply(p))


def weight_counts(method: str, m: int, d_x: int, d_y: int, m_sharp: int | None = None,
                  kept: int | None = None, kept_cols: int | None = None, rank: int | None = None) -> dict[str, int]:
    """Weight parameters per block (biases excluded) under each method's accounting."""
    if method in ("baseline", "spectral_rec", "spectral_norec", "random_rec", "random_norec"):
        size = m if m_sharp is None else m_sharp
        hh = size * size
        ih, ho = size * d_x, d_y * size
    elif method in ("magnitude_weight", "random_weight"):
        hh, ih, ho = kept, m * d_x, d_y * m
    elif method == "column_sparsification":
        hh, ih, ho = kept_cols * m, m * d_x, d_y * m
    elif method == "low_rank":
        hh, ih, ho = 2 * m * rank, m * d_x, d_y * m
    else:
        raise ValueError(f"unknown method {method!r}")
    return {"input_hidden": ih, "hidden_hidden": hh, "hidden_out": ho, "total": ih + hh + ho}
