"""Large-deviations machinery: rate functions, path costs, and decay-rate optimization.

The central objects:

* ``poisson_rate`` / ``relative_entropy`` -- per-slot deviation costs of the
  arrival and channel-state empirical processes.
* ``w_growth`` -- the min-max LP giving the smallest achievable growth rate of
  the largest queue when arrivals run at ``y`` and channel states follow ``gamma``.
* ``compute_iopt`` -- the best possible overflow decay rate: the infimum of
  (arrival cost + channel cost) / growth over all overflow-driving deviations.
* ``aux_growth`` -- the auxiliary min-max problem tying the scheduler's
  normalized-rate exponent to the growth rate of the largest queue.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import (
    MalformedPathError,
    NegativeArgumentError,
    NotAProbabilityVectorError,
    SolverFailureError,
)
from .lp import solve_standard_form
from .model import SystemConfig

PROB_TOL = 1e-9
W_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# rate functions


def poisson_rate(xi, lam):
    """Cramer rate of a Poisson(lam) increment: xi*ln(xi/lam) - xi + lam.

    Accepts scalars or arrays (broadcast). Zero exactly at xi = lam, the
    xi = 0 limit equals lam, and growth is superlinear in xi.
    """
    xi_arr = np.asarray(xi, dtype=float)
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(xi_arr < 0):
        raise NegativeArgumentError("xi must be >= 0")
    if np.any(lam_arr <= 0):
        raise NegativeArgumentError("lam must be > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        # log(xi) - log(lam) rather than log(xi/lam): the quotient can
        # underflow to 0 for subnormal xi while the logs stay finite
        val = xi_arr * (np.log(xi_arr) - np.log(lam_arr)) - xi_arr + lam_arr
    out = np.where(xi_arr > 0, val, np.broadcast_to(lam_arr, val.shape))
    if np.isscalar(xi) and np.isscalar(lam):
        return float(out)
    return out


def _check_prob_vector(v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise NotAProbabilityVectorError(f"{name} must be 1-D")
    if np.any(v < 0):
        raise NotAProbabilityVectorError(f"{name} has negative entries")
    if abs(v.sum() - 1.0) > PROB_TOL:
        raise NotAProbabilityVectorError(f"{name} sums to {v.sum()}, not 1 within {PROB_TOL}")
    return v


def _kl(gamma: np.ndarray, p: np.ndarray) -> float:
    """KL divergence kernel; assumes inputs are (near-)probability vectors."""
    total = 0.0
    for g, pm in zip(gamma, p):
        if g > 0:
            if pm <= 0:
                return math.inf
            total += g * math.log(g / pm)
    return total


def relative_entropy(gamma, p) -> float:
    """H(gamma || p) with 0*ln(0/p) = 0; +inf when gamma puts mass where p has none."""
    gamma = _check_prob_vector(gamma, "gamma")
    p = _check_prob_vector(p, "p")
    if gamma.shape != p.shape:
        raise NotAProbabilityVectorError("gamma and p must have equal length")
    return _kl(gamma, p)


# ---------------------------------------------------------------------------
# piecewise-linear path costs


@dataclass(frozen=True)
class PathSample:
    """Piecewise-linear cumulative paths on a shared time grid.

    times is ascending starting at the path origin; f_values (len(times), N)
    and g_values (len(times), M) are the cumulative arrival and channel-state
    counts, both nondecreasing componentwise.
    """

    times: np.ndarray
    f_values: np.ndarray
    g_values: np.ndarray


def path_cost(path: PathSample, cfg: SystemConfig) -> float:
    """Integrated deviation cost of a path; +inf when a step's channel
    increment is not a probability distribution over the step length."""
    t = np.asarray(path.times, dtype=float)
    f = np.asarray(path.f_values, dtype=float)
    g = np.asarray(path.g_values, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise MalformedPathError("times must be a 1-D grid with at least two points")
    if f.shape != (len(t), cfg.n_users) or g.shape != (len(t), cfg.n_states):
        raise MalformedPathError("f_values/g_values shapes disagree with the time grid")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise MalformedPathError("times must be strictly ascending")
    df = np.diff(f, axis=0)
    dg = np.diff(g, axis=0)
    if np.any(df < -1e-12) or np.any(dg < -1e-12):
        raise MalformedPathError("paths must be nondecreasing componentwise")

    fdot = np.clip(df, 0.0, None) / dt[:, None]
    gdot = np.clip(dg, 0.0, None) / dt[:, None]
    total = 0.0
    for k in range(len(dt)):
        if abs(gdot[k].sum() - 1.0) > PROB_TOL * max(1.0, 1.0 / dt[k]):
            return math.inf
        h = _kl(gdot[k], cfg.state_probs)
        if math.isinf(h):
            return math.inf
        total += dt[k] * (float(np.sum(poisson_rate(fdot[k], cfg.arrival_rates))) + h)
    return total


# ---------------------------------------------------------------------------
# allocation matrices and the growth-rate LP


@dataclass(frozen=True)
class AllocationMatrix:
    """Row-stochastic per-state time shares: phi[m][i] = fraction of state-m
    slots in which user i is served."""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        object.__setattr__(self, "phi", phi)
        if phi.ndim != 2:
            raise ValueError("phi must be a 2-D matrix")
        if np.any(phi < -1e-12) or np.any(phi > 1.0 + 1e-12):
            raise ValueError("phi entries must lie in [0, 1]")
        sums = phi.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROB_TOL):
            raise ValueError(f"phi rows must sum to 1 within {PROB_TOL}, got {sums}")


def _clean_rows(phi: np.ndarray) -> np.ndarray:
    phi = np.clip(phi, 0.0, None)
    return phi / phi.sum(axis=1, keepdims=True)


def w_growth(y, gamma, cfg: SystemConfig) -> tuple[float, AllocationMatrix]:
    """Minimum achievable growth rate of the largest queue.

    Solves min w s.t. w >= y_i - sum_m gamma_m phi[m][i] F[m][i] for all i,
    rows of phi stochastic, everything nonnegative. Returns the optimum and a
    minimizing allocation.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise NegativeArgumentError("y entries must be >= 0")
    gamma = _check_prob_vector(gamma, "gamma")
    M, N = cfg.n_states, cfg.n_users
    if y.shape != (N,) or gamma.shape != (M,):
        raise SolverFailureError("y/gamma dimensions disagree with the config")

    R = gamma[:, None] * cfg.rate_matrix  # (M, N) effective service rates
    # variables: [w, phi (M*N), surplus (N)]
    nv = 1 + M * N + N
    A = np.zeros((N + M, nv))
    b = np.zeros(N + M)
    for i in range(N):
        A[i, 0] = 1.0
        A[i, 1 + i::N][:M] = R[:, i]
        A[i, 1 + M * N + i] = -1.0
        b[i] = y[i]
    for m in range(M):
        A[N + m, 1 + m * N : 1 + (m + 1) * N] = 1.0
        b[N + m] = 1.0
    c = np.zeros(nv)
    c[0] = 1.0
    x, value = solve_standard_form(c, A, b)
    phi = _clean_rows(x[1 : 1 + M * N].reshape(M, N))
    return max(0.0, value), AllocationMatrix(phi)


def is_stabilizable(cfg: SystemConfig, epsilon: float = 0.0) -> tuple[bool, AllocationMatrix | None]:
    """True iff some allocation serves every user at >= lambda_i (1 + epsilon)
    under the true state distribution; returns the witness allocation."""
    w, phi = w_growth(cfg.arrival_rates * (1.0 + epsilon), cfg.state_probs, cfg)
    if w <= 1e-9:
        return True, phi
    return False, None


# ---------------------------------------------------------------------------
# fast exact evaluation of w via dual vertices
#
# The LP dual is max_{u >= 0, sum u <= 1} [u.y - sum_m gamma_m max_i u_i F[m][i]],
# a concave piecewise-linear maximization whose optimum sits on a vertex of the
# arrangement cut by the hyperplanes u_i F[m][i] = u_j F[m][j]. The vertex set
# depends only on the rate matrix, so grid sweeps reduce to one matmul per gamma.

_CANDIDATE_CAP = 400_000


def _dual_candidates(rate_matrix: np.ndarray) -> np.ndarray | None:
    M, N = rate_matrix.shape
    rows = [np.eye(N)[i] for i in range(N)]
    rhs = [0.0] * N
    rows.append(np.ones(N))
    rhs.append(1.0)
    seen = {tuple(np.round(r, 12)) for r in rows}
    for m in range(M):
        for i in range(N):
            for j in range(i + 1, N):
                a = np.zeros(N)
                a[i] = rate_matrix[m, i]
                a[j] = -rate_matrix[m, j]
                norm = np.max(np.abs(a))
                if norm == 0:
                    continue
                key = tuple(np.round(a / norm, 12))
                key_neg = tuple(np.round(-a / norm, 12))
                if key in seen or key_neg in seen:
                    continue
                seen.add(key)
                rows.append(a)
                rhs.append(0.0)
    if math.comb(len(rows), N) > _CANDIDATE_CAP:
        return None
    A = np.array(rows)
    b = np.array(rhs)
    cands = []
    for comb in itertools.combinations(range(len(rows)), N):
        sub = A[list(comb)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        u = np.linalg.solve(sub, b[list(comb)])
        if np.all(u >= -1e-9) and u.sum() <= 1.0 + 1e-9:
            cands.append(np.clip(u, 0.0, None))
    if not cands:
        return None
    return np.unique(np.round(np.array(cands), 12), axis=0)


class _GrowthEvaluator:
    """Evaluates w(y, gamma) for many points; dual-vertex fast path when the
    candidate enumeration is tractable, LP fallback otherwise."""

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        self.cands = _dual_candidates(cfg.rate_matrix)
        if self.cands is not None:
            # per-candidate, per-state cost of the inner max: max_i u_i F[m][i]
            self.state_cost = np.max(
                self.cands[:, None, :] * cfg.rate_matrix[None, :, :], axis=2
            )

    def batch(self, ys: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        if self.cands is not None:
            cost = self.state_cost @ gamma
            return np.maximum(0.0, (self.cands @ ys.T - cost[:, None]).max(axis=0))
        return np.array([w_growth(y, gamma, self.cfg)[0] for y in ys])

    def one(self, y: np.ndarray, gamma: np.ndarray) -> float:
        if self.cands is not None:
            cost = self.state_cost @ gamma
            return max(0.0, float((self.cands @ y - cost).max()))
        return w_growth(y, gamma, self.cfg)[0]


# ---------------------------------------------------------------------------
# the decay-rate optimization


@dataclass(frozen=True)
class IoptSearch:
    """Knobs for the two-phase search: coarse grid seeding, then local
    derivative-free refinement of the best seeds."""

    y_max: float | None = None  # None -> 3 * max rate + max arrival rate
    y_grid: int = 9
    gamma_grid: int = 15
    refine_tol: float = 1e-6
    max_refine_iter: int = 100_000
    n_seeds: int = 3
    w_floor: float = W_FLOOR


@dataclass(frozen=True)
class IoptResult:
    value: float
    arg_y: np.ndarray
    arg_gamma: np.ndarray
    arg_phi: AllocationMatrix
    arg_w: float
    converged: bool


def _gamma_from_beta(beta: np.ndarray, m: int) -> np.ndarray:
    """Stick-breaking map from [0,1]^(m-1) onto the m-simplex."""
    g = np.empty(m)
    rest = 1.0
    for j in range(m - 1):
        g[j] = rest * beta[j]
        rest *= 1.0 - beta[j]
    g[m - 1] = rest
    return g


def _beta_from_gamma(gamma: np.ndarray) -> np.ndarray:
    m = len(gamma)
    beta = np.empty(m - 1)
    rest = 1.0
    for j in range(m - 1):
        beta[j] = min(max(gamma[j] / rest, 0.0), 1.0) if rest > 1e-300 else 0.0
        rest -= gamma[j]
    return beta


def _y_axis(lam_i: float, y_max: float, k: int) -> np.ndarray:
    """k grid points on [0, y_max]: 0, a geometric ladder from lam_i/2 up to
    y_max, with lam_i itself snapped onto the ladder."""
    if k < 3:
        return np.unique(np.array([0.0, min(lam_i, y_max), y_max]))
    ladder = np.geomspace(lam_i / 2.0, y_max, k - 1)
    ladder[np.argmin(np.abs(ladder - lam_i))] = lam_i
    return np.unique(np.concatenate([[0.0], ladder]))


def _canonical_phi(y: np.ndarray, gamma: np.ndarray, w: float, cfg: SystemConfig) -> np.ndarray:
    """Deterministic representative of the optimal-allocation face.

    Among allocations achieving the optimal w, picks the vertex maximizing the
    squared-rate weight sum (time concentrates on high-rate user/state pairs);
    states with all-zero rates get a uniform row since any split is optimal.
    """
    M, N = cfg.n_states, cfg.n_users
    R = gamma[:, None] * cfg.rate_matrix
    req = y - w - 1e-9
    keep = [i for i in range(N) if req[i] > 0]
    nk = len(keep)
    nv = M * N + nk
    A = np.zeros((nk + M, nv))
    b = np.zeros(nk + M)
    for r, i in enumerate(keep):
        A[r, i::N][:M] = R[:, i]
        A[r, M * N + r] = -1.0
        b[r] = req[i]
    for m in range(M):
        A[nk + m, m * N : (m + 1) * N] = 1.0
        b[nk + m] = 1.0
    c = np.zeros(nv)
    c[: M * N] = -(cfg.rate_matrix**2).ravel()
    x, _ = solve_standard_form(c, A, b)
    phi = x[: M * N].reshape(M, N)
    dead = cfg.rate_matrix.max(axis=1) <= 0
    phi[dead] = 1.0 / N
    return _clean_rows(phi)


def compute_iopt(cfg: SystemConfig, search: IoptSearch = IoptSearch()) -> IoptResult:
    """Optimal overflow decay rate over all scheduling algorithms.

    Minimizes (sum_i poisson_rate(y_i) + relative_entropy(gamma, p)) /
    w_growth(y, gamma) over y in [0, y_max]^N and gamma in the state simplex,
    restricted to w_growth >= w_floor. Coarse grid seeding (arrival-anchored
    y axes, stick-breaking gamma axes) followed by Nelder-Mead refinement of
    the best seeds; the returned point is feasible, so the value is always an
    upper bound on the true infimum.
    """
    lam = cfg.arrival_rates
    p = cfg.state_probs
    M, N = cfg.n_states, cfg.n_users
    y_max = search.y_max if search.y_max is not None else 3.0 * cfg.rate_matrix.max() + lam.max()

    w0, phi0 = w_growth(lam, p, cfg)
    if w0 > 1e-9:
        # the mean path itself overflows at zero deviation cost
        return IoptResult(0.0, lam.copy(), p.copy(), phi0, w0, True)

    ev = _GrowthEvaluator(cfg)

    axes = [_y_axis(lam[i], y_max, search.y_grid) for i in range(N)]
    mesh = np.array(list(itertools.product(*axes)))
    lsum = poisson_rate(mesh, lam[None, :]).sum(axis=1)

    if M == 1:
        gammas = [np.array([1.0])]
    else:
        bgrid = np.linspace(0.0, 1.0, search.gamma_grid)
        gammas = [
            _gamma_from_beta(np.array(beta), M)
            for beta in itertools.product(bgrid, repeat=M - 1)
        ]

    seeds: list[tuple[float, np.ndarray, np.ndarray]] = []
    best_grid: tuple[float, np.ndarray, np.ndarray] | None = None
    for gamma in gammas:
        h = _kl(gamma, p)
        if math.isinf(h):
            continue
        w = ev.batch(mesh, gamma)
        ok = w >= search.w_floor
        if not ok.any():
            continue
        obj = np.where(ok, (lsum + h) / np.where(ok, w, 1.0), np.inf)
        k = int(np.argmin(obj))
        entry = (float(obj[k]), mesh[k].copy(), gamma.copy())
        seeds.append(entry)
        if best_grid is None or entry[0] < best_grid[0]:
            best_grid = entry
    if best_grid is None:
        raise SolverFailureError("no feasible point with w >= w_floor on the seeding grid")
    seeds.sort(key=lambda s: s[0])

    def objective(x: np.ndarray) -> float:
        y = np.clip(x[:N], 0.0, y_max)
        gamma = _gamma_from_beta(np.clip(x[N:], 0.0, 1.0), M)
        h = _kl(gamma, p)
        if math.isinf(h):
            return 1e18
        w = ev.one(y, gamma)
        if w < search.w_floor:
            return 1e15
        return (float(poisson_rate(y, lam).sum()) + h) / w

    best = best_grid
    converged = True
    for _, y0, g0 in seeds[: search.n_seeds]:
        x0 = np.concatenate([y0, _beta_from_gamma(g0)])
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={
                "fatol": search.refine_tol,
                "xatol": search.refine_tol,
                "maxiter": search.max_refine_iter,
                "maxfev": search.max_refine_iter,
            },
        )
        if res.fun < best[0]:
            y_r = np.clip(res.x[:N], 0.0, y_max)
            g_r = _gamma_from_beta(np.clip(res.x[N:], 0.0, 1.0), M)
            best = (float(res.fun), y_r, g_r)
            converged = bool(res.success)

    _, y_star, g_star = best
    w_star, _ = w_growth(y_star, g_star, cfg)
    if w_star <= 0:
        raise SolverFailureError("optimal point lost positivity of the growth rate")
    cost = float(poisson_rate(y_star, lam).sum()) + _kl(g_star, p)
    phi_star = AllocationMatrix(_canonical_phi(y_star, g_star, w_star, cfg))
    return IoptResult(cost / w_star, y_star, g_star, phi_star, w_star, converged)


# ---------------------------------------------------------------------------
# the auxiliary growth problem


def _row_lattice(n: int, parts: int) -> np.ndarray:
    """All compositions of `parts` into n nonnegative cells, scaled to the simplex."""
    combos = itertools.combinations(range(parts + n - 1), n - 1)
    out = []
    for cut in combos:
        prev = -1
        row = []
        for c in cut:
            row.append(c - prev - 1)
            prev = c
        row.append(parts + n - 2 - prev)
        out.append(row)
    return np.array(out, dtype=float) / parts


def aux_growth(
    cfg: SystemConfig, gamma, rho1: float = 0.0, rho2: float = 0.0
) -> tuple[float, np.ndarray]:
    """Smallest achievable max_i [lambda_i - exp(-v_i / max_j v_j + rho1 + rho2)]
    over mean service vectors v achievable under channel distribution gamma.

    Nonconvex in the allocation (exponential of a ratio), so this seeds a
    per-state simplex lattice and polishes with Nelder-Mead; the returned
    value never exceeds any lattice point. When every achievable v is zero
    the normalized-rate term is defined as 0, mirroring the selector rule.
    """
    gamma = _check_prob_vector(gamma, "gamma")
    lam = cfg.arrival_rates
    M, N = cfg.n_states, cfg.n_users
    R = gamma[:, None] * cfg.rate_matrix

    def value_of(phi: np.ndarray) -> tuple[float, np.ndarray]:
        v = (R * phi).sum(axis=0)
        vmax = v.max()
        t = v / vmax if vmax > 0 else np.zeros(N)
        return float(np.max(lam - np.exp(-t + rho1 + rho2))), v

    uniform = np.full((M, N), 1.0 / N)
    if R.max() <= 0:
        return value_of(uniform)[0], np.zeros(N)

    if N == 1:
        return value_of(np.ones((M, 1)))

    # lattice granularity chosen so the candidate count stays desk-sized
    parts = 1
    while True:
        per_row = math.comb(parts + 1 + N - 1, N - 1)
        if per_row**M > 25_000 or parts >= 16:
            break
        parts += 1
    lattice = _row_lattice(N, parts)
    combos = np.array(list(itertools.product(range(len(lattice)), repeat=M)))
    cand = lattice[combos]  # (B, M, N)
    cand = np.concatenate([uniform[None], cand], axis=0)

    v_all = np.einsum("bmn,mn->bn", cand, R)
    vmax = v_all.max(axis=1)
    t = np.where(vmax[:, None] > 0, v_all / np.where(vmax[:, None] > 0, vmax[:, None], 1.0), 0.0)
    obj = (lam[None, :] - np.exp(-t + rho1 + rho2)).max(axis=1)

    order = np.argsort(obj, kind="stable")
    best_phi = cand[order[0]]
    best_val = float(obj[order[0]])

    def objective(x: np.ndarray) -> float:
        beta = np.clip(x, 0.0, 1.0).reshape(M, N - 1)
        phi = np.array([_gamma_from_beta(beta[m], N) for m in range(M)])
        return value_of(phi)[0]

    for idx in order[:3]:
        phi0 = _clean_rows(cand[idx] + 1e-9)
        x0 = np.concatenate([_beta_from_gamma(phi0[m]) for m in range(M)])
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={"fatol": 1e-10, "xatol": 1e-10, "maxiter": 20_000, "maxfev": 20_000},
        )
        if res.fun < best_val - 1e-15:
            best_val = float(res.fun)
            beta = np.clip(res.x, 0.0, 1.0).reshape(M, N - 1)
            best_phi = np.array([_gamma_from_beta(beta[m], N) for m in range(M)])

    val, v = value_of(best_phi)
    return val, v
