"""Batch-means estimators over chains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Estimate:
    mean: float
    error: float

    def __iter__(self):
        yield self.mean
        yield self.error

    def z(self, reference: float = 0.0) -> float:
        """Standardized deviation from a reference value."""
        if self.error == 0:
            return 0.0 if self.mean == reference else np.inf
        return (self.mean - reference) / self.error

    def to_dict(self) -> dict:
        return {"mean": float(self.mean), "error": float(self.error)}


def batch_means(values: np.ndarray, batches_per_chain: int = 10) -> np.ndarray:
    """Means of contiguous batches within each chain; values is (chains, samples)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[None]
    chains, k = values.shape[:2]
    if k == 0:
        raise ValueError("empty sample set")
    nb = max(1, min(batches_per_chain, k))
    size = k // nb
    trimmed = values[:, : nb * size]
    return trimmed.reshape((chains, nb, size) + values.shape[2:]).mean(axis=2).reshape((chains * nb,) + values.shape[2:])


def estimate_values(values: np.ndarray, batches_per_chain: int = 10) -> Estimate:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample set")
    bm = batch_means(values, batches_per_chain)
    mean = float(np.mean(values))
    if bm.shape[0] < 2:
        return Estimate(mean, float("nan"))
    err = float(np.std(bm, ddof=1) / np.sqrt(bm.shape[0]))
    return Estimate(mean, err)


def estimate(observable, s, batches_per_chain: int = 10) -> Estimate:
    """Mean and batch-means error of observable(phi, pi) over a SampleSet.

    The observable is evaluated on arrays with leading (chain, sample) axes and
    must return one value per sample.
    """
    if s.phi.size == 0:
        raise ValueError("empty sample set")
    values = np.asarray(observable(s.phi, s.pi), dtype=float)
    values = np.broadcast_to(values, s.phi.shape[:2])
    return estimate_values(values, batches_per_chain)


def combine(terms, batches_per_chain: int = 10, offset: float = 0.0) -> Estimate:
    """Linear combination of sample means over independent ensembles.

    terms is a list of (ensemble_key, coefficient, values[chains, samples]).
    Terms sharing a key are combined per batch first so their correlation is
    kept; distinct keys are treated as independent.
    """
    grouped: dict = {}
    for key, coef, values in terms:
        v = coef * np.asarray(values, dtype=float)
        grouped[key] = grouped.get(key, 0.0) + v
    mean = offset
    var = 0.0
    for v in grouped.values():
        e = estimate_values(v, batches_per_chain)
        mean += e.mean
        var += e.error**2
    return Estimate(float(mean), float(np.sqrt(var)))


def log_mean_exp(r: np.ndarray) -> tuple[float, np.ndarray]:
    """log E[exp r] and the linearized per-sample influence values."""
    r = np.asarray(r, dtype=float)
    top = np.max(r)
    w = np.exp(r - top)
    mean = np.mean(w)
    return float(top + np.log(mean)), w / mean


def effective_sample_size(r: np.ndarray) -> float:
    w = np.exp(np.asarray(r, dtype=float) - np.max(r))
    return float(np.sum(w) ** 2 / np.sum(w * w))


__all__ = ["Estimate", "batch_means", "estimate_values", "estimate", "combine", "log_mean_exp",
           "effective_sample_size"]
