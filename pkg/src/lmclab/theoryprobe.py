"""Monte Carlo checks of the Gaussian/ReLU identities.

Covers the closed form of E[relu(x) relu(y)] for unit-variance Gaussians
with correlation rho, and the concentration of
cos(relu(u) + relu(v), relu(u + v)) for u, v ~ N(0, I_d) around
(3/4 + 1/pi) / sqrt(1 + 1/pi).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .ndcore import make_rng, relu, rowwise_cosine

# sub-exponential norm bound entering Bernstein's inequality
K_CONSTANT = 32.0 / 3.0
COSINE_LIMIT = (0.75 + 1.0 / math.pi) / math.sqrt(1.0 + 1.0 / math.pi)
_MC_CHUNK = 1 << 18


@dataclass
class McResult:
    estimate: float
    std_error: float
    n_samples: int
    analytic_value: float | None = None
    z_score: float | None = None

    def __post_init__(self):
        if self.analytic_value is not None and self.z_score is None:
            diff = self.estimate - self.analytic_value
            if self.std_error > 0:
                self.z_score = diff / self.std_error
            else:
                self.z_score = 0.0 if diff == 0 else math.copysign(math.inf, diff)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConcentrationResult(McResult):
    spread: float = 0.0  # sample std of the per-trial cosines
    dim: int = 0
    cosines: list[float] = field(default_factory=list)
    flagged: int = 0


def relu_product_expectation(rho: float) -> float:
    """E[relu(x) relu(y)] = (rho + (2/pi)(sqrt(1 - rho^2) + rho asin rho)) / 4."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    return 0.25 * (rho + (2.0 / math.pi) * (math.sqrt(1.0 - rho * rho) + rho * math.asin(rho)))


def abs_product_expectation(rho: float) -> float:
    """E[|x| |y|] = (2/pi)(sqrt(1 - rho^2) + rho asin rho)."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    return (2.0 / math.pi) * (math.sqrt(1.0 - rho * rho) + rho * math.asin(rho))


def _mean_and_se(parts_sum: float, parts_sq: float, n: int) -> tuple[float, float]:
    mean = parts_sum / n
    var = max(parts_sq / n - mean * mean, 0.0) * n / (n - 1)
    return mean, math.sqrt(var / n)


def mc_relu_product(rho: float, n: int, rng: np.random.Generator) -> dict[str, McResult]:
    """Estimate E[relu(x)relu(y)], E[x|y|] and E[|x||y|] from ``n`` correlated pairs.

    Pairs are drawn as y ~ N(0,1), x = rho y + sqrt(1 - rho^2) g.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    if n < 1000:
        raise ValueError("use at least 1000 samples")
    sums = {k: [0.0, 0.0] for k in ("relu_product", "cross_term", "abs_product")}
    done = 0
    mix = math.sqrt(1.0 - rho * rho)
    while done < n:
        m = min(_MC_CHUNK, n - done)
        y = rng.standard_normal(m)
        x = rho * y + mix * rng.standard_normal(m)
        for key, v in (("relu_product", relu(x) * relu(y)),
                       ("cross_term", x * np.abs(y)),
                       ("abs_product", np.abs(x) * np.abs(y))):
            sums[key][0] += math.fsum(v)
            sums[key][1] += math.fsum(v * v)
        done += m
    analytic = {
        "relu_product": relu_product_expectation(rho),
        "cross_term": 0.0,
        "abs_product": abs_product_expectation(rho),
    }
    out = {}
    for key, (s, sq) in sums.items():
        mean, se = _mean_and_se(s, sq, n)
        out[key] = McResult(mean, se, n, analytic[key])
    return out


def relu_cosine_trial(u: np.ndarray, v: np.ndarray) -> tuple[float, bool]:
    """cos(relu(u) + relu(v), relu(u + v)) and whether it was degenerate."""
    c, f = rowwise_cosine((relu(u) + relu(v))[None, :], relu(u + v)[None, :])
    return float(c[0]), bool(f[0])


def mc_cosine_concentration(d: int, trials: int, seed: int) -> ConcentrationResult:
    """Per-trial cosines for u, v ~ N(0, I_d); trial ``t`` uses stream (seed, d, t)."""
    if d < 1:
        raise ValueError("dimension must be positive")
    if trials < 2:
        raise ValueError("need at least two trials to measure spread")
    cos, flagged = [], 0
    for t in range(trials):
        rng = make_rng(seed, d, t)
        u = rng.standard_normal(d)
        v = rng.standard_normal(d)
        c, f = relu_cosine_trial(u, v)
        flagged += f
        cos.append(c)
    arr = np.array(cos)
    spread = float(arr.std(ddof=1))
    return ConcentrationResult(
        estimate=math.fsum(cos) / trials,
        std_error=spread / math.sqrt(trials),
        n_samples=trials,
        analytic_value=COSINE_LIMIT,
        spread=spread,
        dim=d,
        cosines=cos,
        flagged=flagged,
    )


def concentration_bound(d: int, delta: float, c: float) -> tuple[float, float, float]:
    """Smallest admissible epsilon and the two-sided cosine bounds it yields.

    epsilon = K max(sqrt(log(2/delta) / (c d)), log(2/delta) / (c d)) with
    K = 32/3. The absolute constant ``c`` is not known numerically and must
    be supplied. The upper bound is ``inf`` once epsilon >= 1 (the expression
    under its square root is no longer positive).
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if c <= 0:
        raise ValueError("c must be positive")
    r = math.log(2.0 / delta) / (c * d)
    eps = K_CONSTANT * max(math.sqrt(r), r)
    return eps, *cosine_bounds(eps)


def cosine_bounds(eps: float) -> tuple[float, float]:
    a = 0.75 + 1.0 / math.pi
    lower = (a - eps) / math.sqrt((1.0 + eps) * (1.0 + 1.0 / math.pi + eps))
    if eps >= 1.0:
        return lower, math.inf
    upper = (a + eps) / math.sqrt((1.0 - eps) * (1.0 + 1.0 / math.pi - eps))
    return lower, upper
