"""Independent oracles: closed forms, quadrature pairs, finite differences.

These back the divergence-check command and the verification suite.  The
quadrature oracle never touches the Monte-Carlo code path it checks, and
the finite-difference cases replay the exact base noise used by the
pathwise gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import (
    GAUSSIAN,
    STUDENT_T,
    TargetDensity,
    VariationalDist,
    four_mode_gmm_spec,
    log_q,
    make_gmm_target,
    sample_reparam,
)
from .divergence import (
    DivergenceEstimate,
    batch_from_points,
    estimate_renyi,
    quadrature_renyi_1d,
)
from .rdvi import gradient_from_noise, replay_objective

__all__ = [
    "gaussian_renyi",
    "gaussian_kl",
    "gmm_cdf",
    "normal_target",
    "dist_target",
    "QuadratureCase",
    "GradientCase",
    "mc_vs_quadrature_cases",
    "gradient_fd_cases",
]


def gaussian_renyi(alpha: float, mu1: float, var1: float, mu2: float, var2: float) -> float:
    """Closed-form Renyi divergence between two 1-D Gaussians.

    Valid while var_alpha = alpha*var2 + (1-alpha)*var1 > 0.
    """
    var_a = alpha * var2 + (1.0 - alpha) * var1
    if var_a <= 0:
        raise ValueError(f"order {alpha} divergence undefined: mixed variance {var_a} <= 0")
    dmu = mu1 - mu2
    return float(
        alpha * dmu**2 / (2.0 * var_a)
        + 0.5
        / (1.0 - alpha)
        * (math.log(var_a) - (1.0 - alpha) * math.log(var1) - alpha * math.log(var2))
    )


def gaussian_kl(mu1: float, var1: float, mu2: float, var2: float) -> float:
    """KL(N(mu1,var1) || N(mu2,var2)) in closed form."""
    return float(
        0.5 * (var1 / var2 + (mu1 - mu2) ** 2 / var2 - 1.0 + math.log(var2 / var1))
    )


def gmm_cdf(spec, x):
    """Exact CDF of a 1-D Gaussian mixture (for distribution tests)."""
    from scipy.stats import norm

    x = np.asarray(x, dtype=float)
    return sum(
        w * norm.cdf(x, m, math.sqrt(v))
        for w, m, v in zip(spec.weights, spec.means, spec.variances)
    )


def normal_target(mu: float, var: float) -> TargetDensity:
    """Normalized 1-D Gaussian as a TargetDensity (log_Z = 0)."""
    def log_unnorm(points):
        return -0.5 * ((points[:, 0] - mu) ** 2 / var + math.log(var) + math.log(2 * math.pi))

    def grad(points):
        return -(points - mu) / var

    return TargetDensity(dim=1, log_unnorm=log_unnorm, log_Z=0.0, grad_log_unnorm=grad)


def dist_target(q: VariationalDist) -> TargetDensity:
    """Use a variational family member as a normalized target density."""
    return TargetDensity(
        dim=q.dim, log_unnorm=lambda pts: np.asarray(log_q(q, pts)), log_Z=0.0
    )


@dataclass(frozen=True)
class QuadratureCase:
    name: str
    mc: DivergenceEstimate
    quadrature: float
    closed_form: float | None


def _pairs():
    t = lambda mu, scale: VariationalDist(
        mu=[mu], log_var=[2 * math.log(scale)], family=STUDENT_T, nu=10.0
    )
    g = lambda mu, scale: VariationalDist(mu=[mu], log_var=[2 * math.log(scale)])
    return [
        # name, target, proposal, alpha, grid, closed form
        ("N(0,1)||N(1,1) a=2", normal_target(0, 1), g(1, 1), 2.0, (-14, 15, 120001),
         gaussian_renyi(2.0, 0, 1, 1, 1)),
        ("N(0,1)||N(0,4) a=0.5", normal_target(0, 1), g(0, 2), 0.5, (-30, 30, 120001),
         gaussian_renyi(0.5, 0, 1, 0, 4)),
        ("N(0,1)||N(0,4) a=2", normal_target(0, 1), g(0, 2), 2.0, (-30, 30, 120001),
         gaussian_renyi(2.0, 0, 1, 0, 4)),
        ("t10(0,1.2)||t10(0.3,1.5) a=2", dist_target(t(0, 1.2)), t(0.3, 1.5), 2.0,
         (-80, 80, 400001), None),
        ("N(-1,4)||t10(0,6.25) a=5", normal_target(-1, 4), t(0, 2.5), 5.0,
         (-60, 60, 300001), None),
        ("N(0,1)||t10(0,1) a=11", normal_target(0, 1), t(0, 1), 11.0,
         (-40, 40, 200001), None),
    ]


def mc_vs_quadrature_cases(seed: int = 0, sample_size: int = 100_000):
    """Monte-Carlo estimates next to the trapezoid oracle for six density pairs."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1A]))
    cases = []
    for name, target, proposal, alpha, grid, closed in _pairs():
        points, _ = sample_reparam(proposal, rng, sample_size)
        batch = batch_from_points(proposal, target, points)
        mc = estimate_renyi(alpha, batch, log_Z_p=0.0)
        quad = quadrature_renyi_1d(
            lambda x: np.asarray(target.log_unnorm(x[:, None])),
            lambda x: np.asarray(log_q(proposal, x[:, None])),
            alpha,
            grid,
        )
        cases.append(QuadratureCase(name, mc, quad, closed))
    return cases


@dataclass(frozen=True)
class GradientCase:
    name: str
    rel_error: float
    grad_norm: float


def gradient_fd_cases(seed: int = 0, n_cases: int = 10, fd_step: float = 1e-5):
    """Pathwise gradient vs central differences under replayed base noise."""
    alphas = [0.5, 1.5, 2.0, 5.0, 11.0]
    gmm = make_gmm_target(four_mode_gmm_spec())
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF00D]))
    cases = []
    for i in range(n_cases):
        alpha = alphas[i % len(alphas)]
        family = GAUSSIAN if i % 2 == 0 else STUDENT_T
        target = gmm if i % 3 != 2 else normal_target(float(rng.uniform(-2, 2)), 2.0)
        q = VariationalDist(
            mu=[float(rng.uniform(-4, 2))],
            log_var=[float(rng.uniform(0.0, 3.5))],
            family=family,
            nu=10.0,
        )
        _, eps = sample_reparam(q, rng, 64)
        d_mu, d_lv = gradient_from_noise(q, target, alpha, eps)
        grad = np.concatenate([d_mu, d_lv])
        fd = np.empty_like(grad)
        for j in range(q.dim):
            for k, attr in enumerate(("mu", "log_var")):
                base = getattr(q, attr).copy()
                hi, lo = base.copy(), base.copy()
                hi[j] += fd_step
                lo[j] -= fd_step
                f_hi = replay_objective(q.replace(**{attr: hi}), target, alpha, eps)
                f_lo = replay_objective(q.replace(**{attr: lo}), target, alpha, eps)
                fd[k * q.dim + j] = (f_hi - f_lo) / (2 * fd_step)
        scale = max(float(np.max(np.abs(grad))), 1e-8)
        rel = float(np.max(np.abs(fd - grad)) / scale)
        cases.append(
            GradientCase(
                f"case {i}: {family} alpha={alpha:g}", rel, float(np.linalg.norm(grad))
            )
        )
    return cases
