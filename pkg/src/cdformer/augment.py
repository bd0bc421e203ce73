"""Composite temporal data augmentation: warping, resampling, noise.

All techniques map a (T, C) sequence to a (T, C) sequence and are applied
online during training only. Warp and resample are convex recombinations of
the input, so per-channel outputs stay inside the input's range; noise is
additive i.i.d. Gaussian.

Draw order inside :func:`apply_composite` is fixed (three fire decisions,
then per-technique draws), so outputs are reproducible from
(x, config, seed, counter) alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ContractError, DataError


@dataclass
class AugmentConfig:
    alpha: float = 0.1       # warp strength, fraction of the unit cycle step
    rho: float = 0.8         # resampling retention ratio
    sigma: float = 0.01      # noise std in normalized feature units
    per_technique_prob: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 < self.rho <= 1:
            raise ConfigurationError(f"rho must be in (0, 1], got {self.rho}")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 <= self.per_technique_prob <= 1:
            raise ConfigurationError(
                f"per_technique_prob must be in [0, 1], got {self.per_technique_prob}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be >= 0, got {self.seed}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AugmentedSequence:
    values: np.ndarray                      # (T, C), same length as the source
    provenance: list = field(default_factory=list)


def linear_interpolate(xs, ys, q):
    """Piecewise-linear value(s) of the polyline (xs, ys) at q.

    Queries outside [xs[0], xs[-1]] clamp to the boundary value. xs must be
    strictly increasing.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
        raise ContractError(
            f"interpolation needs matching 1-D knots of length >= 2, got {xs.shape}/{ys.shape}")
    if np.any(np.diff(xs) <= 0):
        raise ContractError("interpolation knots must be strictly increasing")
    return np.interp(q, xs, ys)


def _check_sequence(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"augmentation expects a (T, C) matrix, got shape {x.shape}")
    return x


def time_warp(x: np.ndarray, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Jitter the time axis and re-read the sequence at the warped indices.

    Each index t gets a uniform perturbation in [-alpha, alpha] cycle units.
    Endpoints stay pinned and the perturbed index set is sorted and clamped,
    which keeps the interpolation well defined.
    """
    x = _check_sequence(x)
    t = x.shape[0]
    if t < 2:
        raise DataError(f"time_warp needs at least 2 time steps, got {t}")
    grid = np.arange(1.0, t + 1.0)
    warped = grid + rng.uniform(-alpha, alpha, size=t)
    warped[0], warped[-1] = 1.0, float(t)
    warped = np.clip(np.sort(warped), 1.0, float(t))
    out = np.empty_like(x)
    for c in range(x.shape[1]):
        out[:, c] = np.interp(warped, grid, x[:, c])
    return out


def time_resample(x: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Keep floor(rho*T) random time points and interpolate back to length T.

    The first and last points are always retained so no query needs
    extrapolation.
    """
    x = _check_sequence(x)
    t = x.shape[0]
    keep = int(np.floor(rho * t))
    if keep < 2:
        raise ConfigurationError(
            f"time_resample would keep {keep} of {t} points; needs at least 2")
    if keep >= t:
        return x.copy()
    middle = rng.choice(np.arange(1, t - 1), size=keep - 2, replace=False)
    kept = np.sort(np.concatenate(([0], middle, [t - 1])))
    grid = np.arange(1.0, t + 1.0)
    knots = grid[kept]
    out = np.empty_like(x)
    for c in range(x.shape[1]):
        out[:, c] = np.interp(grid, knots, x[kept, c])
    return out


def gaussian_noise(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise to every element."""
    x = _check_sequence(x)
    if sigma < 0:
        raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
    return x + rng.normal(0.0, sigma, size=x.shape)


def apply_composite(x: np.ndarray, cfg: AugmentConfig,
                    rng: np.random.Generator) -> AugmentedSequence:
    """Apply warp, resample and noise, each independently with
    ``per_technique_prob``, in that fixed order."""
    cfg.validate()
    x = _check_sequence(x)
    fire = rng.random(3) < cfg.per_technique_prob
    out = x.copy()
    provenance = []
    if fire[0]:
        out = time_warp(out, cfg.alpha, rng)
        provenance.append({"technique": "time_warp", "alpha": cfg.alpha})
    if fire[1]:
        out = time_resample(out, cfg.rho, rng)
        provenance.append({"technique": "time_resample", "rho": cfg.rho})
    if fire[2]:
        out = gaussian_noise(out, cfg.sigma, rng)
        provenance.append({"technique": "gaussian_noise", "sigma": cfg.sigma})
    return AugmentedSequence(values=out, provenance=provenance)


class AugmentPipeline:
    """Counter-addressed augmentation stream.

    Sample i of a run always sees the RNG stream derived from
    (config.seed, i), independent of batching or worker layout.
    """

    def __init__(self, cfg: AugmentConfig):
        cfg.validate()
        self.cfg = cfg
        self.counter = 0

    def augment(self, x: np.ndarray, counter: Optional[int] = None) -> AugmentedSequence:
        if counter is None:
            counter = self.counter
            self.counter += 1
        rng = np.random.default_rng([self.cfg.seed, counter])
        return apply_composite(x, self.cfg, rng)
