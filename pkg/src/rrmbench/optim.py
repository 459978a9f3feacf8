"""Classical power/subcarrier allocators and rate objectives.

Four system models share this module:

* SM1  -- single-user single-cell OFDM; rate log2(1 + kappa*SINR).
* SM2A -- multi-user single-cell OFDM; unique user per subcarrier.
* SM2B -- multi-cell single-carrier with BS b serving user b (B = U).
* SM3  -- multi-cell multi-user OFDM with time-shared subcarriers, where
          cross-cell interference is averaged through per-cell loads.

Powers are expressed in the same unit as ``p_max`` (microwatts by default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

LN2 = math.log(2.0)


class SystemModel(Enum):
    SM1 = "sm1"
    SM2A = "sm2a"
    SM2B = "sm2b"
    SM3 = "sm3"


@dataclass(frozen=True)
class NetworkConfig:
    num_bs: int = 1
    num_users: int = 1
    num_subcarriers: int = 1
    p_max: float = 10.0
    sigma2: float = 1e-3
    omega: float = 1e-9

    def __post_init__(self):
        if self.num_bs < 1 or self.num_users < 1 or self.num_subcarriers < 1:
            raise ValueError("network dimensions must be positive")
        if self.p_max <= 0:
            raise ValueError(f"p_max must be positive, got {self.p_max}")
        if self.sigma2 <= 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not 0 < self.omega < 0.2:
            raise ValueError(f"omega must lie in (0, 0.2), got {self.omega}")

    @property
    def kappa(self) -> float:
        """M-QAM rate-gap constant -1.5/ln(5*omega); positive for omega < 0.2."""
        return -1.5 / math.log(5.0 * self.omega)


def _check_power(p: np.ndarray):
    if np.any(p < 0):
        raise ValueError("negative power in allocation")


def sinr(model: SystemModel, gains: np.ndarray, p: np.ndarray,
         cfg: NetworkConfig, alpha: np.ndarray | None = None) -> np.ndarray:
    """Per-link SINR for the given system model.

    Expected shapes: SM1 gains/p (N,); SM2A (U, N); SM2B gains (B, B) with
    p (B,); SM3 gains/p/alpha (B, U, N).
    """
    g2 = np.abs(np.asarray(gains)) ** 2
    p = np.asarray(p, dtype=float)
    _check_power(p)
    if model is SystemModel.SM1:
        if g2.shape != p.shape or g2.ndim != 1:
            raise ValueError(f"shape mismatch: gains {g2.shape}, p {p.shape}")
        return g2 * p / cfg.sigma2
    if model is SystemModel.SM2A:
        if g2.shape != p.shape or g2.ndim != 2:
            raise ValueError(f"shape mismatch: gains {g2.shape}, p {p.shape}")
        return g2 * p / cfg.sigma2
    if model is SystemModel.SM2B:
        B = g2.shape[0]
        if g2.shape != (B, B) or p.shape != (B,):
            raise ValueError(f"shape mismatch: gains {g2.shape}, p {p.shape}")
        own = np.diag(g2) * p
        # interference at user b: powers of all other BSs through their
        # channel to this user
        interf = g2.T @ p - own
        return own / (interf + cfg.sigma2)
    if model is SystemModel.SM3:
        if alpha is None:
            raise ValueError("SM3 SINR requires the load matrix alpha")
        if g2.shape != p.shape or g2.shape != alpha.shape or g2.ndim != 3:
            raise ValueError(
                f"shape mismatch: gains {g2.shape}, p {p.shape}, alpha {alpha.shape}")
        q = np.sum(alpha * p, axis=1)  # (B, N) time-averaged cell powers
        # total received power at (u, n) from every cell, minus the own cell
        total = np.einsum("bn,bun->un", q, g2)
        interf = total[None, :, :] - q[:, None, :] * g2
        return p * g2 / (interf + cfg.sigma2)
    raise ValueError(f"unknown system model {model!r}")


def sum_rate(model: SystemModel, sinrs: np.ndarray, cfg: NetworkConfig) -> float:
    """Total rate in bits/s/Hz; SM1 applies the M-QAM gap constant."""
    s = np.asarray(sinrs, dtype=float)
    if np.any(s < 0):
        raise ValueError("negative SINR")
    if model is SystemModel.SM1:
        return float(np.sum(np.log2(1.0 + cfg.kappa * s)))
    return float(np.sum(np.log2(1.0 + s)))


def rate_for_power(model: SystemModel, gains: np.ndarray, p: np.ndarray,
                   cfg: NetworkConfig, alpha: np.ndarray | None = None) -> float:
    return sum_rate(model, sinr(model, gains, p, cfg, alpha=alpha), cfg)


def waterfill(gain_sq: np.ndarray, p_max: float, sigma2: float,
              kappa: float = 1.0, tol: float = 1e-10) -> np.ndarray:
    """Budget-exhausting water-filling over parallel channels.

    Returns p(n) = max(0, w - sigma2/(kappa*|g(n)|^2)) with the water level w
    found by bisection so that sum(p) = p_max.  Channels with zero gain get
    zero power.
    """
    g2 = np.asarray(gain_sq, dtype=float)
    if g2.ndim != 1 or len(g2) == 0:
        raise ValueError("gain_sq must be a non-empty 1-D array")
    if np.any(g2 < 0):
        raise ValueError("gains squared must be nonnegative")
    active = g2 > 0
    if not np.any(active):
        raise ValueError("water-filling needs at least one positive gain")
    floors = sigma2 / (kappa * g2[active])
    lo, hi = 0.0, p_max + floors.max()
    # monotone residual: sum of max(0, w - floor) - p_max
    for _ in range(200):
        w = 0.5 * (lo + hi)
        resid = np.maximum(0.0, w - floors).sum() - p_max
        if abs(resid) <= tol:
            break
        if resid > 0:
            hi = w
        else:
            lo = w
    p = np.zeros_like(g2)
    p[active] = np.maximum(0.0, w - floors)
    return p


def greedy_subcarrier_alloc(gain_sq: np.ndarray) -> np.ndarray:
    """Assign each subcarrier to the user with the largest squared gain.

    ``gain_sq`` is (U, N); returns an int array (N,) of user indices.  Ties
    go to the lowest user index.
    """
    g2 = np.asarray(gain_sq)
    if g2.ndim != 2:
        raise ValueError(f"gain_sq must be (U, N), got {g2.shape}")
    return np.argmax(g2, axis=0)


@dataclass
class WmmseResult:
    p: np.ndarray
    objective_history: list[float]
    iterations: int


def _wmmse_from(v0: np.ndarray, h: np.ndarray, cfg: NetworkConfig,
                max_iter: int, tol: float) -> WmmseResult:
    h2 = h * h
    hd = np.diag(h)
    B = len(v0)
    v = v0.copy()
    u = np.zeros(B)
    w = np.ones(B)

    def rate(v):
        return rate_for_power(SystemModel.SM2B, h, v * v, cfg)

    for b in range(B):
        u[b] = hd[b] * v[b] / (h2[:, b] @ (v * v) + cfg.sigma2)
        w[b] = 1.0 / (1.0 - u[b] * hd[b] * v[b])
    history = [rate(v)]
    it = 0
    for it in range(1, max_iter + 1):
        # transmit amplitudes updated in place so later links see new values
        for b in range(B):
            scale = np.sum(w * u * u * h2[b, :])
            v[b] = min(max(w[b] * u[b] * hd[b] / scale, 0.0), math.sqrt(cfg.p_max))
        for b in range(B):
            u[b] = hd[b] * v[b] / (h2[:, b] @ (v * v) + cfg.sigma2)
            w[b] = 1.0 / (1.0 - u[b] * hd[b] * v[b])
        history.append(rate(v))
        if history[-1] - history[-2] < tol * max(1.0, abs(history[-2])):
            break
    return WmmseResult(p=v * v, objective_history=history, iterations=it)


def wmmse(gains: np.ndarray, cfg: NetworkConfig, max_iter: int = 100,
          tol: float = 0.0) -> WmmseResult:
    """Weighted-MMSE power control for the single-carrier interference
    channel with BS b serving user b.

    Alternates closed-form per-link updates of receiver gain, MSE weight,
    and transmit amplitude (clamped to [0, sqrt(p_max)]); each run's sum
    rate is non-decreasing over iterations.  The conventional budget of 100
    full sweeps is spent unless ``tol`` is raised above zero.  Because the
    problem is non-convex and strong cross-interference traps the full-power
    start at poor stationary points, the solver restarts from each
    one-BS-only corner as well and returns the best run.
    """
    h = np.abs(np.asarray(gains, dtype=complex))
    B = h.shape[0]
    if h.shape != (B, B):
        raise ValueError(f"gains must be square (B, B), got {h.shape}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    vmax = math.sqrt(cfg.p_max)
    starts = [np.full(B, vmax)]
    for b in range(B):
        v0 = np.zeros(B)
        v0[b] = vmax
        starts.append(v0)
    best = None
    for v0 in starts:
        res = _wmmse_from(v0, h, cfg, max_iter, tol)
        if best is None or res.objective_history[-1] > best.objective_history[-1]:
            best = res
    return best


def project_nonneg_budget(v: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) <= budget}."""
    x = np.maximum(v, 0.0)
    total = x.sum()
    if total <= budget:
        return x
    # project onto the simplex sum = budget
    flat = np.ravel(v)
    a = -np.sort(-flat)
    cums = (np.cumsum(a) - budget) / np.arange(1, len(flat) + 1)
    k = np.nonzero(a > cums)[0][-1]
    return np.maximum(v - cums[k], 0.0)


def sm3_objective_grad(p: np.ndarray, gain_sq: np.ndarray, alpha: np.ndarray,
                       sigma2: float) -> tuple[float, np.ndarray]:
    """Sum rate of the interference-averaged multi-cell model and its exact
    gradient with respect to the power tensor (B, U, N)."""
    g2 = gain_sq
    q = np.sum(alpha * p, axis=1)  # (B, N)
    total = np.einsum("bn,bun->un", q, g2)
    interf = total[None, :, :] - q[:, None, :] * g2
    D = interf + sigma2
    S = p * g2
    rate = float(np.sum(np.log2(1.0 + S / D)))
    own = g2 / (D + S) / LN2
    # sensitivity of every other cell's rate to this cell's averaged power
    W = S / (D * (D + S))
    cross = np.einsum("bun,cun->bcn", g2, W)  # source cell b onto victim cell c
    dq = -(cross.sum(axis=1) - np.einsum("bbn->bn", cross)) / LN2  # (B, N)
    grad = own + alpha * dq[:, None, :]
    return rate, grad


@dataclass
class Sm3Result:
    p: np.ndarray
    objective_history: list[float]
    iterations: int


def _validated_sm3_inputs(gains, alpha):
    g2 = np.abs(np.asarray(gains)) ** 2
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != g2.shape:
        raise ValueError(f"alpha shape {alpha.shape} does not match gains {g2.shape}")
    if np.any(alpha < 0) or np.any(alpha.sum(axis=1) > 1.0 + 1e-9):
        raise ValueError("load shares must be nonnegative and sum to at most 1 per (b, n)")
    mask = alpha > 0
    if np.any(mask.sum(axis=(1, 2)) == 0):
        raise ValueError("every BS needs at least one served slot")
    return g2, alpha, mask


def iterative_sm3(gains: np.ndarray, alpha: np.ndarray, cfg: NetworkConfig,
                  max_iter: int = 150, tol: float = 1e-8,
                  method: str = "slsqp") -> Sm3Result:
    """Near-optimal benchmark for the multi-cell sum-rate problem under
    per-BS budgets; served (b, u) slots are the ones with a positive load
    share.

    ``slsqp`` (default) hands the problem to sequential least squares
    programming with numerically estimated gradients, the conventional slow
    reference whose per-sample cost grows quickly with the number of
    variables.  ``pgd`` is a projected gradient ascent with backtracking line
    search whose accepted objective sequence is non-decreasing and which
    terminates when the relative improvement falls below ``tol``.
    """
    if method == "slsqp":
        return _sm3_slsqp(gains, alpha, cfg, max_iter, tol)
    if method == "pgd":
        return _sm3_pgd(gains, alpha, cfg, max_iter, tol)
    raise ValueError(f"unknown method {method!r}")


def _sm3_slsqp(gains, alpha, cfg, max_iter, tol) -> Sm3Result:
    from scipy.optimize import minimize

    g2, alpha, mask = _validated_sm3_inputs(gains, alpha)
    idx = np.nonzero(mask)
    d = len(idx[0])

    def unpack(x):
        p = np.zeros_like(g2)
        p[idx] = x
        return p

    def negated(x):
        return -sm3_objective_grad(unpack(x), g2, alpha, cfg.sigma2)[0]

    constraints = [
        {"type": "ineq", "fun": (lambda x, sel=(idx[0] == b): cfg.p_max - x[sel].sum())}
        for b in range(g2.shape[0])
    ]
    x0 = np.full(d, 0.5 * cfg.p_max * g2.shape[0] / d)
    start_obj = -negated(x0)
    res = minimize(negated, x0, bounds=[(0.0, None)] * d, constraints=constraints,
                   method="SLSQP", options={"maxiter": max_iter, "ftol": tol})
    p = unpack(np.maximum(res.x, 0.0))
    # guard against constraint slack from the solver's tolerance
    for b in range(g2.shape[0]):
        total = p[b].sum()
        if total > cfg.p_max:
            p[b] *= cfg.p_max / total
    final = sm3_objective_grad(p, g2, alpha, cfg.sigma2)[0]
    return Sm3Result(p=p, objective_history=[start_obj, final], iterations=int(res.nit))


def _sm3_pgd(gains, alpha, cfg, max_iter, tol) -> Sm3Result:
    g2, alpha, mask = _validated_sm3_inputs(gains, alpha)
    B = g2.shape[0]
    slots = mask.sum(axis=(1, 2))

    def project(p):
        out = np.zeros_like(p)
        for b in range(B):
            vec = p[b][mask[b]]
            out[b][mask[b]] = project_nonneg_budget(vec, cfg.p_max)
        return out

    p = np.zeros_like(g2)
    for b in range(B):
        p[b][mask[b]] = cfg.p_max / slots[b]

    obj, grad = sm3_objective_grad(p, g2, alpha, cfg.sigma2)
    history = [obj]
    step = cfg.p_max
    it = 0
    for it in range(1, max_iter + 1):
        accepted = False
        for _ in range(40):
            cand = project(p + step * grad)
            cand_obj, cand_grad = sm3_objective_grad(cand, g2, alpha, cfg.sigma2)
            if cand_obj > obj:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = cand_obj - obj
        p, obj, grad = cand, cand_obj, cand_grad
        history.append(obj)
        step *= 2.0
        if improvement < tol * max(1.0, abs(obj)):
            break
    return Sm3Result(p=p, objective_history=history, iterations=it)


def equal_share_load(adjacency: np.ndarray, num_subcarriers: int) -> np.ndarray:
    """Load matrix giving each served user an equal share 1/|U_b| of every
    subcarrier; zero for users served elsewhere."""
    adj = np.asarray(adjacency, dtype=float)
    counts = adj.sum(axis=1, keepdims=True)
    share = np.divide(adj, counts, out=np.zeros_like(adj), where=counts > 0)
    return np.repeat(share[:, :, None], num_subcarriers, axis=2)


def percell_waterfill(gains: np.ndarray, mask: np.ndarray, cfg: NetworkConfig,
                      kappa: float = 1.0) -> np.ndarray:
    """Interference-blind baseline: water-fill each cell's budget over its
    served (user, subcarrier) slots independently."""
    g2 = np.abs(np.asarray(gains)) ** 2
    p = np.zeros_like(g2)
    for b in range(g2.shape[0]):
        slots = mask[b]
        if not np.any(slots):
            continue  # a cell that serves nobody spends nothing
        p[b][slots] = waterfill(g2[b][slots], cfg.p_max, cfg.sigma2, kappa=kappa)
    return p


def random_alloc(cfg: NetworkConfig, seed: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Uniform random powers on the active slots, rescaled per BS so the
    total never exceeds the budget."""
    shape = (cfg.num_bs, cfg.num_users, cfg.num_subcarriers)
    if mask is None:
        mask = np.ones(shape, dtype=bool)
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.0, cfg.p_max, size=shape) * mask
    totals = p.sum(axis=(1, 2))
    over = totals > cfg.p_max
    scale = np.where(over, cfg.p_max / np.maximum(totals, 1e-300), 1.0)
    return p * scale[:, None, None]


def maxpower_alloc(cfg: NetworkConfig, mask: np.ndarray | None = None) -> np.ndarray:
    """Per-BS budget split equally across that BS's active slots."""
    shape = (cfg.num_bs, cfg.num_users, cfg.num_subcarriers)
    if mask is None:
        mask = np.ones(shape, dtype=bool)
    slots = mask.sum(axis=(1, 2))
    if np.any(slots == 0):
        raise ValueError("every BS needs at least one active slot")
    p = np.zeros(shape)
    for b in range(cfg.num_bs):
        p[b][mask[b]] = cfg.p_max / slots[b]
    return p


def grid_oracle_sm1(gain_sq: np.ndarray, cfg: NetworkConfig, levels: int) -> np.ndarray:
    """Exact maximizer of the SM1 rate over the power lattice
    {0, d, 2d, ..., p_max}^N with d = p_max/levels and sum <= p_max.

    The objective is separable, so the lattice argmax is found by dynamic
    programming over (subcarrier, budget units); the result equals full
    enumeration and is cross-checked against random lattice points in tests.
    """
    g2 = np.asarray(gain_sq, dtype=float)
    n = len(g2)
    delta = cfg.p_max / levels
    units = np.arange(levels + 1)
    # per-subcarrier rate for each number of budget units
    rates = np.log2(1.0 + cfg.kappa * g2[:, None] * (units[None, :] * delta) / cfg.sigma2)
    best = np.full(levels + 1, -np.inf)
    best[0] = 0.0
    choice = np.zeros((n, levels + 1), dtype=int)
    for i in range(n):
        new = np.full(levels + 1, -np.inf)
        for used in range(levels + 1):
            if not np.isfinite(best[used]):
                continue
            vals = best[used] + rates[i, : levels + 1 - used]
            take = np.arange(levels + 1 - used)
            better = vals > new[used + take]
            new[used + take] = np.where(better, vals, new[used + take])
            choice[i, used + take] = np.where(better, take, choice[i, used + take])
        best = new
    total = int(np.argmax(best))
    p = np.zeros(n)
    remaining = total
    for i in range(n - 1, -1, -1):
        k = choice[i, remaining]
        p[i] = k * delta
        remaining -= k
    return p


def grid_oracle_sm2b(gains: np.ndarray, cfg: NetworkConfig, levels: int) -> np.ndarray:
    """Brute-force maximizer of the interference-channel sum rate over the
    per-BS power lattice; search space capped at 1e7 points."""
    h = np.abs(np.asarray(gains))
    B = h.shape[0]
    if (levels + 1) ** B > 10 ** 7:
        raise ValueError("discrete search space exceeds 1e7 points")
    axes = [np.linspace(0.0, cfg.p_max, levels + 1)] * B
    mesh = np.meshgrid(*axes, indexing="ij")
    powers = np.stack([m.ravel() for m in mesh], axis=1)  # (points, B)
    h2 = h * h
    own = powers * np.diag(h2)[None, :]
    received = powers @ h2  # (points, B): total power at each user
    interf = received - own
    rates = np.sum(np.log2(1.0 + own / (interf + cfg.sigma2)), axis=1)
    return powers[int(np.argmax(rates))]


def grid_oracle(model: SystemModel, gains: np.ndarray, cfg: NetworkConfig,
                levels: int) -> np.ndarray:
    """Best allocation on the discrete power lattice, for verification only."""
    if levels < 1:
        raise ValueError("levels must be positive")
    if model is SystemModel.SM1:
        return grid_oracle_sm1(np.abs(np.asarray(gains)) ** 2, cfg, levels)
    if model is SystemModel.SM2B:
        return grid_oracle_sm2b(gains, cfg, levels)
    raise ValueError(f"no grid oracle for model {model!r}")
