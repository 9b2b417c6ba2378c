"""Noncentered, time-averaged covariance of hidden states."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .rnn import HiddenTrace, RnnParams, SequenceBatch, forward

__all__ = [
    "HiddenCovariance",
    "CovarianceAccumulator",
    "accumulate",
    "covariance_of",
    "merge",
    "nonzero_rows",
    "spectrum",
    "write_spectrum_csv",
    "read_spectrum_csv",
]

ZERO_ROW_REL_TOL = 1e-12


@dataclass(frozen=True)
class HiddenCovariance:
    """``sigma = (1/nT) sum_{i,t} h_t^i h_t^iT`` together with the sample count ``nT``."""

    sigma: np.ndarray
    samples: int
    _eig: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        sigma = linalg.as_matrix(self.sigma, "sigma")
        if sigma.shape[0] != sigma.shape[1]:
            raise linalg.DimensionError(f"sigma must be square, got {sigma.shape}")
        if self.samples < 0:
            raise ValueError("samples must be non-negative")
        object.__setattr__(self, "sigma", sigma)

    @property
    def m(self) -> int:
        return self.sigma.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.sigma))

    def eig(self) -> linalg.SymEig:
        """Cached PSD eigendecomposition (descending, clamped at zero)."""
        if not self._eig:
            self._eig.append(linalg.psd_eig(self.sigma))
        return self._eig[0]


class CovarianceAccumulator:
    """Streaming outer-product sum; divide by the count only at ``finalize``."""

    def __init__(self, m: int):
        self.m = m
        self._sum = np.zeros((m, m))
        self._count = 0

    def add_states(self, states) -> None:
        h = np.asarray(states, dtype=np.float64)
        if h.shape[-1] != self.m:
            raise linalg.DimensionError(f"states have width {h.shape[-1]}, expected {self.m}")
        flat = h.reshape(-1, self.m)
        self._sum += flat.T @ flat
        self._count += flat.shape[0]

    def finalize(self) -> HiddenCovariance:
        if self._count == 0:
            return HiddenCovariance(np.zeros((self.m, self.m)), 0)
        sigma = self._sum / self._count
        return HiddenCovariance(0.5 * (sigma + sigma.T), self._count)


def accumulate(trace) -> HiddenCovariance:
    """Covariance of the states in a ``HiddenTrace`` (or a raw (n, T, m) array)."""
    states = trace.states if isinstance(trace, HiddenTrace) else np.asarray(trace, dtype=np.float64)
    if states.ndim < 2 or states.size == 0:
        raise ValueError("cannot accumulate an empty trace")
    acc = CovarianceAccumulator(states.shape[-1])
    acc.add_states(states)
    return acc.finalize()


def covariance_of(params: RnnParams, dataset: SequenceBatch, chunk: int = 1000) -> HiddenCovariance:
    """Run the network over ``dataset`` in chunks and accumulate without keeping the states."""
    if dataset.n == 0:
        raise ValueError("cannot accumulate over an empty dataset")
    acc = CovarianceAccumulator(params.m)
    for start in range(0, dataset.n, chunk):
        _, tr = forward(params, dataset.inputs[start : start + chunk])
        acc.add_states(tr.states)
    return acc.finalize()


def merge(a: HiddenCovariance, b: HiddenCovariance) -> HiddenCovariance:
    """Sample-weighted average of two covariances."""
    if a.m != b.m:
        raise linalg.DimensionError(f"cannot merge covariances of size {a.m} and {b.m}")
    total = a.samples + b.samples
    if total == 0:
        return HiddenCovariance(np.zeros((a.m, a.m)), 0)
    if b.samples == 0:
        return a
    if a.samples == 0:
        return b
    sigma = (a.samples / total) * a.sigma + (b.samples / total) * b.sigma
    return HiddenCovariance(0.5 * (sigma + sigma.T), total)


def nonzero_rows(cov: HiddenCovariance, tol: float | None = None) -> tuple[int, list[int]]:
    """Count rows whose diagonal entry exceeds ``tol`` (default ``1e-12 * max diag``).

    For a PSD matrix a zero diagonal entry forces the whole row to vanish.
    """
    diag = np.diag(cov.sigma)
    if tol is None:
        tol = ZERO_ROW_REL_TOL * float(diag.max()) if diag.size else 0.0
    if tol < 0:
        raise ValueError("tol must be non-negative")
    idx = [int(k) for k in np.flatnonzero(diag > tol)]
    return len(idx), idx


def spectrum(cov: HiddenCovariance) -> tuple[np.ndarray, np.ndarray]:
    eig = cov.eig()
    return eig.eigenvalues, eig.eigenvectors


def write_spectrum_csv(cov_or_values, path) -> None:
    values = spectrum(cov_or_values)[0] if isinstance(cov_or_values, HiddenCovariance) else cov_or_values
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "eigenvalue"])
        for k, mu in enumerate(values):
            writer.writerow([k, repr(float(mu))])


def read_spectrum_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["eigenvalue"]) for r in rows])
