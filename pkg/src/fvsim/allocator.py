"""Popularity-weighted bit allocation across both representations.

The per-chunk objective trades logarithmic rate quality against two
penalties: an inter-view smoothness term over the switching representation
(so sweeps do not stutter across quality cliffs) and a temporal term tying
each constant-view rate to its previous chunk.  A Lagrangian bisection on
the budget multiplier drives total allocated rate to the chunk target.

Rates are in abstract rate units (think Mbit per chunk); the stream encoder
converts to integer bits separately.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteValue, ShapeError


@dataclass(frozen=True)
class QoeParams:
    """Objective weights and the bisection controls."""

    eta: float = 1.0          # constant-view log offset
    eta_hat: float = 4.0      # switching-view log offset
    mu1: float = 1.0          # weight of the inter-view penalty
    mu2: float = 1.0 / 16.0   # weight of the temporal penalty
    mu3: float = 1.0          # weight inside the inter-view penalty's first sum
    epsilon: float = 0.005    # relative budget tolerance
    lambda_min: float = 0.0
    lambda_max: float = 100.0
    max_iterations: int = 64

    def __post_init__(self):
        if self.eta <= 0 or self.eta_hat <= 0:
            raise ConfigError("eta and eta_hat must be positive")
        if min(self.mu1, self.mu2, self.mu3) < 0:
            raise ConfigError("mu weights must be >= 0")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must be in (0, 1)")
        if self.lambda_min < 0 or self.lambda_max <= self.lambda_min:
            raise ConfigError("need 0 <= lambda_min < lambda_max")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")


@dataclass(frozen=True)
class RateBounds:
    r_min: float
    r_max: float
    rhat_min: float
    rhat_max: float

    def __post_init__(self):
        if not (0 <= self.r_min < self.r_max and 0 <= self.rhat_min < self.rhat_max):
            raise ConfigError("bounds must satisfy 0 <= min < max")

    @classmethod
    def default_for(cls, r_avg: float, n_views: int) -> "RateBounds":
        """Box around the fair share r_avg / (2N): a tenth to four times."""
        fair = r_avg / (2 * n_views)
        return cls(r_min=0.1 * fair, r_max=4.0 * fair,
                   rhat_min=0.1 * fair, rhat_max=4.0 * fair)


@dataclass(frozen=True)
class Allocation:
    """Solved rates for one chunk, plus solver diagnostics."""

    chunk: int
    budget: float
    constant: np.ndarray    # (N,) rate units
    switching: np.ndarray   # (N,)
    lam: float
    iterations: int
    flags: tuple[str, ...] = ()

    @property
    def total(self) -> float:
        return float(self.constant.sum() + self.switching.sum())


def qoe_total(
    constant: np.ndarray,
    switching: np.ndarray,
    prev_constant: np.ndarray,
    p: np.ndarray,
    p_hat: np.ndarray,
    params: QoeParams,
) -> float:
    """Chunk QoE: quality minus inter-view and temporal penalties.

    For the first chunk pass prev_constant == constant, which zeroes the
    temporal term.
    """
    arrays = [np.asarray(a, dtype=float) for a in (constant, switching, prev_constant, p, p_hat)]
    n = arrays[0].shape[0]
    if any(a.shape != (n,) for a in arrays):
        raise ShapeError("all allocation vectors must share shape (N,)")
    r, rh, r_prev, p, p_hat = arrays
    if not all(np.all(np.isfinite(a)) for a in (r, rh, r_prev, p, p_hat)):
        raise NonFiniteValue("non-finite value in QoE inputs")
    quality = float(np.sum(p * np.log1p(r / params.eta)) + np.sum(p_hat * np.log1p(rh / params.eta_hat)))
    inter = 0.0
    if n >= 2:
        inter = params.mu3 * float(np.sum(p_hat[1:] * (rh[1:] - rh[:-1]) ** 2))
        inter += float(np.sum(p_hat[1:] * (rh[1:] / params.eta_hat - r[:-1] / params.eta) ** 2))
    temporal = float(np.sum(p * (r - r_prev) ** 2))
    return quality - params.mu1 * inter - params.mu2 * temporal


@dataclass
class BudgetSchedule:
    """Sliding-window rate control across the whole run.

    r_tar is the target rate in units per second; each chunk's target is
    r_avg = r_tar * chunk_seconds.  The chunk budget compensates for the
    accumulated over/undershoot of already-coded chunks over a window of
    ``sw`` future chunks.
    """

    r_tar: float
    chunk_seconds: float = 1.0
    sw: int = 4
    n_coded: int = 0
    r_coded: float = 0.0

    def __post_init__(self):
        if self.r_tar <= 0 or self.chunk_seconds <= 0 or self.sw < 1:
            raise ConfigError("need r_tar > 0, chunk_seconds > 0, sw >= 1")

    @property
    def r_avg(self) -> float:
        return self.r_tar * self.chunk_seconds

    def record(self, spent: float) -> None:
        self.n_coded += 1
        self.r_coded += spent


def target_bits(
    schedule: BudgetSchedule, bounds: RateBounds, n_views: int
) -> tuple[float, bool]:
    """Chunk budget from the sliding window; floored at the bound minimum.

    Returns (budget, infeasible) where infeasible marks a budget that had to
    be raised to the floor.
    """
    r_avg = schedule.r_avg
    budget = (r_avg * (schedule.n_coded + schedule.sw) - schedule.r_coded) / schedule.sw
    floor = n_views * (bounds.r_min + bounds.rhat_min)
    if budget < floor:
        return floor, True
    return budget, False


def _positive_quadratic_root(alpha: float, beta: float, p: float, eta: float) -> float:
    """Root of p/(eta + R) - alpha*R + beta = 0 with alpha > 0.

    Equivalent quadratic: alpha R^2 + (alpha*eta - beta) R - (beta*eta + p) = 0.
    The discriminant (alpha*eta + beta)^2 + 4*alpha*p is never negative.
    """
    b = alpha * eta - beta
    disc = (alpha * eta + beta) ** 2 + 4.0 * alpha * p
    return (-b + math.sqrt(disc)) / (2.0 * alpha)


def solve_constant_rate(
    p: float,
    r_prev: float,
    lam: float,
    params: QoeParams,
    bounds: RateBounds,
) -> float:
    """Stationary constant-view rate for one view at multiplier lam.

    Solves p/(eta + R) - 2 mu2 p (R - r_prev) - lam = 0, clamped to the box.
    Zero popularity pins the rate at the minimum.
    """
    if p <= 0.0:
        return bounds.r_min
    alpha = 2.0 * params.mu2 * p
    beta = 2.0 * params.mu2 * p * r_prev - lam
    if alpha == 0.0:
        if lam <= 0.0:
            return bounds.r_max
        root = p / lam - params.eta
    else:
        root = _positive_quadratic_root(alpha, beta, p, params.eta)
    return min(max(root, bounds.r_min), bounds.r_max)


def solve_switching_rate(
    p_hat: float,
    rhat_prev_view: float | None,
    r_prev_view: float | None,
    lam: float,
    params: QoeParams,
    bounds: RateBounds,
) -> float:
    """Stationary switching rate for one view at multiplier lam.

    View 1 has no left neighbor, so its equation loses both coupling terms
    and reduces to p_hat/(eta_hat + R) = lam.
    """
    if p_hat <= 0.0:
        return bounds.rhat_min
    c1 = 2.0 * params.mu1 * params.mu3 * p_hat
    c2 = 2.0 * params.mu1 * p_hat / params.eta_hat
    if rhat_prev_view is None or r_prev_view is None:
        c1 = c2 = 0.0
        rhat_prev_view = r_prev_view = 0.0
    alpha = c1 + c2 / params.eta_hat
    beta = c1 * rhat_prev_view + c2 * r_prev_view / params.eta - lam
    if alpha == 0.0:
        if lam <= 0.0:
            return bounds.rhat_max
        root = p_hat / lam - params.eta_hat
    else:
        root = _positive_quadratic_root(alpha, beta, p_hat, params.eta_hat)
    return min(max(root, bounds.rhat_min), bounds.rhat_max)


_SWEEP_TOL = 1e-10
_MAX_SWEEPS = 1000


def _solve_rates_at(
    lam: float,
    p: np.ndarray,
    p_hat: np.ndarray,
    prev_constant: np.ndarray,
    params: QoeParams,
    bounds: RateBounds,
    seed: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Maximizer of the lam-priced objective over the box.

    The left-coupled per-view solves (one forward pass) only seed the
    answer: each rate also feeds its right neighbor's penalty terms, so the
    seed is refined by Gauss-Seidel sweeps over the full per-coordinate
    stationarity conditions until the iteration reaches its fixed point.
    The objective is concave with unique coordinate maximizers, so the
    sweeps converge to the joint optimum at this multiplier.
    """
    n = p.shape[0]
    if seed is not None:
        r, rh = seed[0].copy(), seed[1].copy()
    else:
        r = np.empty(n)
        rh = np.empty(n)
        for i in range(n):
            r[i] = solve_constant_rate(p[i], prev_constant[i], lam, params, bounds)
            if i == 0:
                rh[i] = solve_switching_rate(p_hat[i], None, None, lam, params, bounds)
            else:
                rh[i] = solve_switching_rate(
                    p_hat[i], rh[i - 1], r[i - 1], lam, params, bounds
                )
    e, eh = params.eta, params.eta_hat
    mu1, mu2, mu3 = params.mu1, params.mu2, params.mu3
    for _ in range(_MAX_SWEEPS):
        delta = 0.0
        for i in range(n):
            # constant rate: temporal pull plus the right neighbor's
            # quality-matching penalty (R_hat_{i+1}, already in rate units)
            alpha = 2.0 * mu2 * p[i]
            beta = 2.0 * mu2 * p[i] * prev_constant[i] - lam
            if i + 1 < n:
                alpha += 2.0 * mu1 * p_hat[i + 1] / (e * e)
                beta += 2.0 * mu1 * p_hat[i + 1] * rh[i + 1] / (e * eh)
            if alpha > 0.0:
                root = _positive_quadratic_root(alpha, beta, p[i], e)
            elif p[i] > 0.0:
                root = p[i] / lam - e if lam > 0.0 else bounds.r_max
            else:
                root = bounds.r_min
            new = min(max(root, bounds.r_min), bounds.r_max)
            delta = max(delta, abs(new - r[i]))
            r[i] = new
            # switching rate: left smoothness and quality-matching terms
            # plus the right neighbor's smoothness pull
            ah = 0.0
            bh = -lam
            if i >= 1:
                ah += 2.0 * mu1 * (mu3 * p_hat[i] + p_hat[i] / (eh * eh))
                bh += 2.0 * mu1 * (
                    mu3 * p_hat[i] * rh[i - 1] + p_hat[i] * r[i - 1] / (e * eh)
                )
            if i + 1 < n:
                ah += 2.0 * mu1 * mu3 * p_hat[i + 1]
                bh += 2.0 * mu1 * mu3 * p_hat[i + 1] * rh[i + 1]
            if ah > 0.0:
                root = _positive_quadratic_root(ah, bh, p_hat[i], eh)
            elif p_hat[i] > 0.0:
                root = p_hat[i] / lam - eh if lam > 0.0 else bounds.rhat_max
            else:
                root = bounds.rhat_min
            new = min(max(root, bounds.rhat_min), bounds.rhat_max)
            delta = max(delta, abs(new - rh[i]))
            rh[i] = new
        if delta < _SWEEP_TOL:
            break
    return r, rh


def allocate(
    chunk: int,
    budget: float,
    p: np.ndarray,
    p_hat: np.ndarray,
    prev_constant: np.ndarray,
    params: QoeParams,
    bounds: RateBounds,
) -> Allocation:
    """Bisection on the budget multiplier until the total meets the budget.

    Each candidate multiplier prices the budget; the priced objective is
    concave, so its maximizer's total spend never rises with lam and the
    bracket [lambda_min, lambda_max] is halved toward |budget - total| <=
    epsilon * budget.  If even lambda_max cannot bring the total under
    budget the allocation is flagged Infeasible; running out of iterations
    flags BracketExhausted (typically a budget above the unconstrained
    optimum, where nothing more is worth spending).
    """
    p = np.asarray(p, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    prev_constant = np.asarray(prev_constant, dtype=float)
    n = p.shape[0]
    if p_hat.shape != (n,) or prev_constant.shape != (n,):
        raise ShapeError("p, p_hat, prev_constant must share shape (N,)")
    if budget <= 0:
        raise ConfigError(f"budget must be positive, got {budget}")
    flags: list[str] = []
    min_total = n * (bounds.r_min + bounds.rhat_min)
    if min_total > budget * (1 + params.epsilon):
        r = np.full(n, bounds.r_min)
        rh = np.full(n, bounds.rhat_min)
        return Allocation(
            chunk=chunk, budget=budget, constant=r, switching=rh,
            lam=params.lambda_max, iterations=0, flags=("Infeasible",),
        )
    lo, hi = params.lambda_min, params.lambda_max
    lam = lo
    r, rh = _solve_rates_at(lam, p, p_hat, prev_constant, params, bounds)
    iterations = 0
    total = float(r.sum() + rh.sum())
    if abs(budget - total) > params.epsilon * budget:
        for iterations in range(1, params.max_iterations + 1):
            lam = 0.5 * (lo + hi)
            # the previous multiplier's solution seeds the sweeps; nearby
            # multipliers have nearby optima, so refinement is cheap
            r, rh = _solve_rates_at(
                lam, p, p_hat, prev_constant, params, bounds, seed=(r, rh)
            )
            total = float(r.sum() + rh.sum())
            if abs(budget - total) <= params.epsilon * budget:
                break
            if total > budget:
                lo = lam
            else:
                hi = lam
        else:
            flags.append("BracketExhausted")
    return Allocation(
        chunk=chunk, budget=budget, constant=r, switching=rh,
        lam=lam, iterations=iterations, flags=tuple(flags),
    )


def uniform_allocate(
    chunk: int, budget: float, n_views: int, bounds: RateBounds
) -> Allocation:
    """Equal split across all 2N representations, water-filled on the box.

    Clamped representations release or absorb budget which is redistributed
    equally among the still-free ones until everything fits; an impossible
    budget (outside the box sums) is flagged Infeasible.
    """
    if budget <= 0:
        raise ConfigError(f"budget must be positive, got {budget}")
    mins = np.array([bounds.r_min] * n_views + [bounds.rhat_min] * n_views)
    maxs = np.array([bounds.r_max] * n_views + [bounds.rhat_max] * n_views)
    rates = np.empty(2 * n_views)
    flags: tuple[str, ...] = ()
    if budget <= mins.sum():
        rates[:] = mins
        if budget < mins.sum() * (1 - 1e-12):
            flags = ("Infeasible",)
    elif budget >= maxs.sum():
        rates[:] = maxs
        if budget > maxs.sum() * (1 + 1e-12):
            flags = ("Infeasible",)
    else:
        # common water level s with sum(clip(s, min_i, max_i)) == budget;
        # the sum is continuous and nondecreasing in s, so bisect
        lo, hi = float(mins.min()), float(maxs.max())
        for _ in range(200):
            s = 0.5 * (lo + hi)
            if np.clip(s, mins, maxs).sum() < budget:
                lo = s
            else:
                hi = s
        s = 0.5 * (lo + hi)
        rates = np.clip(s, mins, maxs)
        free = (s > mins) & (s < maxs)
        if free.any():
            # make the total exact, not just within bisection tolerance
            rates[free] = (budget - rates[~free].sum()) / free.sum()
    return Allocation(
        chunk=chunk, budget=budget, constant=rates[:n_views],
        switching=rates[n_views:], lam=0.0, iterations=0, flags=flags,
    )


def write_allocation_csv(allocations: list[Allocation], path) -> None:
    """Allocation dump: chunk,lambda,view,R,R_hat,flags."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chunk", "lambda", "view", "R", "R_hat", "flags"])
        for a in allocations:
            flag_str = "|".join(a.flags)
            for v in range(a.constant.shape[0]):
                writer.writerow(
                    [a.chunk, f"{a.lam:.9f}", v + 1,
                     f"{a.constant[v]:.9f}", f"{a.switching[v]:.9f}", flag_str]
                )


def read_allocation_csv(path) -> list[Allocation]:
    """Inverse of write_allocation_csv (budget is reconstructed as the sum)."""
    rows: dict[int, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            j = int(row["chunk"])
            entry = rows.setdefault(j, {"lam": float(row["lambda"]),
                                        "flags": row["flags"], "r": {}, "rh": {}})
            v = int(row["view"])
            entry["r"][v] = float(row["R"])
            entry["rh"][v] = float(row["R_hat"])
    out = []
    for j in sorted(rows):
        e = rows[j]
        n = max(e["r"])
        r = np.array([e["r"][v] for v in range(1, n + 1)])
        rh = np.array([e["rh"][v] for v in range(1, n + 1)])
        out.append(
            Allocation(
                chunk=j, budget=float(r.sum() + rh.sum()), constant=r, switching=rh,
                lam=e["lam"], iterations=0,
                flags=tuple(f for f in e["flags"].split("|") if f),
            )
        )
    return out
