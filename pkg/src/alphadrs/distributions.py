"""Target densities and variational families with reparameterized sampling.

Everything is computed and stored in log space; densities are never
exponentiated before a reduction.  All types are immutable after
construction and safe to share across threads; each sampling call owns
its random stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "ValidationError",
    "TargetDensity",
    "VariationalDist",
    "GmmSpec",
    "GAUSSIAN",
    "STUDENT_T",
    "make_gmm_target",
    "four_mode_gmm_spec",
    "gmm_spec_from_file",
    "log_q",
    "sample_reparam",
    "points_from_noise",
    "eval_log_unnorm",
    "eval_grad_log_unnorm",
]

LOG_2PI = math.log(2.0 * math.pi)

GAUSSIAN = "diag-gaussian"
STUDENT_T = "student-t"


class ValidationError(ValueError):
    """A domain object violates one of its declared invariants."""


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalized target density log p~(x) with optional log normalizer.

    ``log_unnorm`` must accept an ``(n, dim)`` array and return ``(n,)``
    values.  ``grad_log_unnorm``, when provided, returns the ``(n, dim)``
    gradient of log p~ with respect to x; estimators fall back to central
    finite differences when it is absent.
    """

    dim: int
    log_unnorm: Callable[[np.ndarray], np.ndarray]
    log_Z: Optional[float] = None
    grad_log_unnorm: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValidationError(f"dim must be a positive integer, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))


def eval_log_unnorm(target: TargetDensity, points: np.ndarray) -> np.ndarray:
    """Evaluate log p~ at an (n, dim) array of points, returning (n,)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != target.dim:
        raise ValidationError(
            f"points have dimension {points.shape[1]}, target expects {target.dim}"
        )
    vals = np.asarray(target.log_unnorm(points), dtype=float)
    if vals.shape != (points.shape[0],):
        raise ValidationError(
            f"log_unnorm returned shape {vals.shape}, expected ({points.shape[0]},)"
        )
    return vals


def eval_grad_log_unnorm(target: TargetDensity, points: np.ndarray) -> np.ndarray:
    """d/dx log p~ at each point; central differences if no analytic gradient."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if target.grad_log_unnorm is not None:
        g = np.asarray(target.grad_log_unnorm(points), dtype=float)
        if g.shape != points.shape:
            raise ValidationError(
                f"grad_log_unnorm returned shape {g.shape}, expected {points.shape}"
            )
        return g
    # step ~ cbrt(eps) balances truncation and cancellation for central differences
    step = 6e-6 * (1.0 + np.abs(points))
    grad = np.empty_like(points)
    for j in range(points.shape[1]):
        hi = points.copy()
        lo = points.copy()
        hi[:, j] += step[:, j]
        lo[:, j] -= step[:, j]
        grad[:, j] = (eval_log_unnorm(target, hi) - eval_log_unnorm(target, lo)) / (
            hi[:, j] - lo[:, j]
        )
    return grad


@dataclass(frozen=True)
class VariationalDist:
    """Location-scale variational family: diagonal Gaussian or Student-t.

    Parameters are ``mu`` and ``log_var`` per dimension.  The Student-t
    family has fixed degrees of freedom ``nu`` (not learned); each
    dimension is an independent location-scale t(nu).
    """

    mu: np.ndarray
    log_var: np.ndarray
    family: str = GAUSSIAN
    nu: float = 10.0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        log_var = np.atleast_1d(np.asarray(self.log_var, dtype=float))
        if mu.ndim != 1 or log_var.shape != mu.shape:
            raise ValidationError(
                f"mu and log_var must be 1-D with equal length, got {mu.shape} and {log_var.shape}"
            )
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(log_var))):
            raise ValidationError("mu and log_var entries must be finite")
        if self.family not in (GAUSSIAN, STUDENT_T):
            raise ValidationError(f"unknown family {self.family!r}")
        if self.family == STUDENT_T and not self.nu > 0:
            raise ValidationError(f"nu must be positive, got {self.nu}")
        mu.setflags(write=False)
        log_var.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_var", log_var)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)

    def replace(self, mu=None, log_var=None) -> "VariationalDist":
        return VariationalDist(
            mu=self.mu if mu is None else mu,
            log_var=self.log_var if log_var is None else log_var,
            family=self.family,
            nu=self.nu,
        )


def log_q(q: VariationalDist, x: np.ndarray):
    """Exact log density of q at x.

    Accepts a single point of shape (dim,) or a batch (n, dim); returns a
    float or an (n,) array correspondingly.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != q.dim:
        raise ValidationError(f"x has dimension {pts.shape[1]}, q expects {q.dim}")
    z = (pts - q.mu) / q.sigma
    if q.family == GAUSSIAN:
        vals = -0.5 * np.sum(z**2 + q.log_var + LOG_2PI, axis=1)
    else:
        nu = q.nu
        const = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
        vals = np.sum(
            const - 0.5 * q.log_var - (nu + 1) / 2 * np.log1p(z**2 / nu), axis=1
        )
    return float(vals[0]) if single else vals


def sample_reparam(q: VariationalDist, rng: np.random.Generator, S: int):
    """Draw S reparameterized samples from q.

    Returns ``(points, base_noise)`` where ``points = mu + sigma * base_noise``
    elementwise.  Base noise is standard normal for the Gaussian family and
    standard t(nu), generated as normal / sqrt(chi2(nu)/nu) per element, for
    the Student-t family.  Returning the noise lets the same draw be replayed
    under perturbed parameters.
    """
    if S < 1:
        raise ValidationError(f"S must be >= 1, got {S}")
    if q.family == GAUSSIAN:
        eps = rng.standard_normal((S, q.dim))
    else:
        z = rng.standard_normal((S, q.dim))
        w = rng.chisquare(q.nu, (S, q.dim))
        eps = z / np.sqrt(w / q.nu)
    return points_from_noise(q, eps), eps


def points_from_noise(q: VariationalDist, base_noise: np.ndarray) -> np.ndarray:
    """Deterministic half of the reparameterization: mu + sigma * noise."""
    base_noise = np.asarray(base_noise, dtype=float)
    return q.mu + q.sigma * base_noise


@dataclass(frozen=True)
class GmmSpec:
    """One-dimensional Gaussian mixture specification."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.atleast_1d(np.asarray(self.means, dtype=float))
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if not (w.shape == m.shape == v.shape) or w.ndim != 1 or w.size == 0:
            raise ValidationError("weights, means, variances must be 1-D of equal length")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights must sum to 1 within 1e-12, got {w.sum()!r}")
        if not np.all(v > 0):
            raise ValidationError("variances must be positive")
        if not np.all(np.isfinite(m)) or not np.all(np.isfinite(v)):
            raise ValidationError("means and variances must be finite")
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def four_mode_gmm_spec() -> GmmSpec:
    """Equal-weight four-component benchmark mixture on the real line."""
    return GmmSpec(
        weights=np.full(4, 0.25),
        means=np.array([-12.0, -6.0, 0.0, 6.0]),
        variances=np.full(4, 0.64),
    )


def make_gmm_target(spec: GmmSpec) -> TargetDensity:
    """Normalized 1-D mixture target (log_Z = 0) with analytic gradient."""
    log_w = np.log(spec.weights)
    means = spec.means
    variances = spec.variances

    def _log_components(x):
        # x (n, 1) -> (n, K)
        d = x - means
        return log_w - 0.5 * (d**2 / variances + np.log(variances) + LOG_2PI)

    def log_unnorm(points):
        return logsumexp(_log_components(points), axis=1)

    def grad_log_unnorm(points):
        comp = _log_components(points)
        resp = np.exp(comp - logsumexp(comp, axis=1, keepdims=True))
        g = np.sum(resp * (-(points - means) / variances), axis=1)
        return g[:, None]

    return TargetDensity(
        dim=1, log_unnorm=log_unnorm, log_Z=0.0, grad_log_unnorm=grad_log_unnorm
    )


def gmm_spec_from_file(path) -> GmmSpec:
    """Read a GmmSpec from a plain-text key-value config file.

    Expected keys: ``weights``, ``means``, ``variances``, each a
    comma-separated list.  Blank lines and ``#`` comments are ignored.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    fields: dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = v1, v2, ...'")
        key, _, rest = line.partition("=")
        key = key.strip().lower()
        if key not in ("weights", "means", "variances"):
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values = np.array([float(tok) for tok in rest.split(",") if tok.strip()])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: non-numeric value ({exc})") from None
        fields[key] = values
    missing = {"weights", "means", "variances"} - fields.keys()
    if missing:
        raise ValidationError(f"{path}: missing keys {sorted(missing)}")
    return GmmSpec(fields["weights"], fields["means"], fields["variances"])
