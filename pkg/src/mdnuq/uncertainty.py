"""Closed-form mixture moments and the variance decomposition.

For a Gaussian mixture {pi_k, mu_k, Sigma_k} the predictive variance splits,
by the law of total variance, into the spread of the mixture means around
the total mean (explained part, the model-ignorance channel) and the
weighted average of the per-mixture variances (unexplained part, the noise
channel). Everything here is a single forward pass plus O(K*d) arithmetic;
`mc_dropout_variance` is the sampling-based comparator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdn import GmmParams, MdnModel, head_transform


def total_mean(g: GmmParams) -> np.ndarray:
    """Mixture-weighted mean, one value per output dimension."""
    return g.weights @ g.means


def explained_variance(g: GmmParams) -> np.ndarray:
    """Variance over the mixture index of the mixture means, per dimension."""
    dev = g.means - total_mean(g)
    return g.weights @ (dev * dev)


def unexplained_variance(g: GmmParams) -> np.ndarray:
    """Mixture-weighted average of the per-mixture variances, per dimension."""
    return g.weights @ g.variances


def total_variance(g: GmmParams) -> np.ndarray:
    """Predictive variance of the mixture, per dimension."""
    dev = g.means - total_mean(g)
    return g.weights @ (g.variances + dev * dev)


@dataclass
class UncertaintyReport:
    total_mean: np.ndarray
    total_variance: np.ndarray
    explained: np.ndarray
    unexplained: np.ndarray
    map_index: int

    @property
    def explained_sum(self) -> float:
        """Scalar used for policy thresholds: explained variance summed over dims."""
        return float(self.explained.sum())

    @property
    def unexplained_sum(self) -> float:
        return float(self.unexplained.sum())

    @property
    def total_sum(self) -> float:
        return float(self.total_variance.sum())

    def to_record(self) -> dict:
        rec: dict = {}
        for name, arr in (
            ("total", self.total_variance),
            ("explained", self.explained),
            ("unexplained", self.unexplained),
        ):
            for i, v in enumerate(arr):
                rec[f"{name}_{i}"] = float(v)
        rec["map_index"] = self.map_index
        return rec


def report_from_gmm(g: GmmParams) -> UncertaintyReport:
    return UncertaintyReport(
        total_mean=total_mean(g),
        total_variance=total_variance(g),
        explained=explained_variance(g),
        unexplained=unexplained_variance(g),
        map_index=int(np.argmax(g.weights)),
    )


def report(model: MdnModel, x: np.ndarray) -> UncertaintyReport:
    """Full decomposition from one deterministic forward pass; no sampling."""
    return report_from_gmm(model.gmm(x))


@dataclass
class McDropoutReport:
    variance: np.ndarray
    num_samples: int
    sample_means: np.ndarray | None = None
    sample_variances: np.ndarray | None = None


def mc_dropout_variance(
    model: MdnModel,
    x: np.ndarray,
    num_samples: int,
    rng: np.random.Generator,
    keep_samples: bool = False,
) -> McDropoutReport:
    """Predictive variance from stochastic forward passes with dropout.

    Runs `num_samples` dropout-masked passes, takes the MAP mixture's mean
    and variance from each, and combines sample moments: variance of the
    means (clamped at zero, finite sampling can push it slightly negative)
    plus the average of the predicted variances.
    """
    if num_samples < 2:
        raise ValueError("num_samples must be at least 2")
    d = model.cfg.output_dim
    means = np.empty((num_samples, d))
    variances = np.empty((num_samples, d))
    for t in range(num_samples):
        raw = model.net.forward(x, mode="eval", rng=rng, stochastic_eval=True)
        g = head_transform(raw, model.cfg)
        j = int(np.argmax(g.weights))
        means[t] = g.means[j]
        variances[t] = g.variances[j]
    mean_of_means = means.mean(axis=0)
    var_of_means = np.maximum((means * means).mean(axis=0) - mean_of_means**2, 0.0)
    variance = var_of_means + variances.mean(axis=0)
    return McDropoutReport(
        variance=variance,
        num_samples=num_samples,
        sample_means=means if keep_samples else None,
        sample_variances=variances if keep_samples else None,
    )
