"""Radiation-pattern dictionary and fast-timescale pattern selection.

Every antenna picks one column of a shared gain dictionary (M angle bins by
U patterns).  Selection is relaxed to per-antenna weights on the simplex and
solved by Frank-Wolfe with a certified duality gap; rounding takes the
per-block argmax.  The exhaustive oracle enumerates all U**N assignments for
tiny instances.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

LN2 = np.log(2.0)


@dataclass
class CallCounter:
    """Counts solver invocations for complexity bookkeeping."""

    count: int = 0

    def add(self):
        self.count += 1


@dataclass(frozen=True)
class PatternDictionary:
    """Columns are unit-power gain profiles over the angular grid.

    gains   : (M, U) nonnegative, each column has unit l2 norm
    centers : (U,) mainlobe bearings
    """

    gains: np.ndarray
    centers: np.ndarray
    beamwidth: float
    kappa: float

    @property
    def num_bins(self):
        return self.gains.shape[0]

    @property
    def num_patterns(self):
        return self.gains.shape[1]


def build_dictionary(num_bins, num_patterns, beamwidth, kappa=None):
    """Von-Mises-shaped mainlobes at evenly spaced bearings.

    ``beamwidth`` is the full width at which the power pattern drops to half
    its peak; it sets the concentration ``kappa`` unless one is given
    explicitly.  Columns are normalized to unit l2 norm in log-safe form.
    """
    if num_patterns < 1:
        raise ValueError("num_patterns must be >= 1")
    if num_bins < num_patterns:
        raise ValueError("need at least as many angle bins as patterns")
    if kappa is None:
        if not 0 < beamwidth:
            raise ValueError("beamwidth must be positive")
        kappa = LN2 / (2.0 * (1.0 - np.cos(0.5 * beamwidth)))
    theta = 2.0 * np.pi * np.arange(num_bins) / num_bins
    centers = 2.0 * np.pi * np.arange(num_patterns) / num_patterns
    log_gain = kappa * np.cos(theta[:, None] - centers[None, :])
    gains = np.exp(log_gain - log_gain.max(axis=0, keepdims=True))
    gains /= np.linalg.norm(gains, axis=0, keepdims=True)
    return PatternDictionary(gains=gains, centers=centers,
                             beamwidth=float(beamwidth), kappa=float(kappa))


def broadside_index(dictionary: PatternDictionary, target=0.5 * np.pi):
    """Index of the dictionary column aimed closest to ``target``.

    Ties resolve to the lowest index.
    """
    diff = np.abs(np.mod(dictionary.centers - target + np.pi, 2.0 * np.pi) - np.pi)
    return int(np.argmin(diff))


@dataclass(frozen=True)
class Beamformer:
    """One dictionary column per antenna; block-diagonal combining matrix."""

    dictionary: PatternDictionary
    pattern_indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.pattern_indices)
        if idx.ndim != 1:
            raise ValueError("pattern_indices must be 1D")
        if np.any(idx < 0) or np.any(idx >= self.dictionary.num_patterns):
            raise ValueError("pattern index out of range")

    @property
    def num_antennas(self):
        return len(self.pattern_indices)

    def matrix(self):
        M = self.dictionary.num_bins
        N = self.num_antennas
        G = np.zeros((M * N, N))
        for n, u in enumerate(self.pattern_indices):
            G[n * M:(n + 1) * M, n] = self.dictionary.gains[:, u]
        return G

    def apply(self, H):
        """Combined channel G^H H, shape (..., N, K)."""
        M = self.dictionary.num_bins
        N = self.num_antennas
        blocks = H.reshape(H.shape[:-2] + (N, M, H.shape[-1]))
        sel = self.dictionary.gains[:, self.pattern_indices].T  # (N, M)
        return np.einsum("nm,...nmk->...nk", sel, blocks)


def project_onto_patterns(samples, dictionary: PatternDictionary, num_antennas):
    """Per-draw projection W = H^H (I_N kron gains), shape (Z, K, U*N).

    Column u + n*U couples antenna n's pattern u to every user, matching the
    selector's block layout.
    """
    arr = np.asarray(samples)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    Z, MN, K = arr.shape
    M = dictionary.num_bins
    if MN != M * num_antennas:
        raise ValueError("samples row count disagrees with bins * antennas")
    blocks = arr.conj().reshape(Z, num_antennas, M, K)
    W = np.einsum("znmk,mu->zknu", blocks, dictionary.gains)
    W = W.reshape(Z, K, num_antennas * dictionary.num_patterns)
    return W[0] if single else W


def _as_w_stack(W):
    W = np.asarray(W)
    return W[None] if W.ndim == 2 else W


def ergodic_rate(v, W, rho, sigma2):
    """Average relaxed sum rate over the fast-timescale draws.

    ``W`` is the stacked projection from :func:`project_onto_patterns`;
    ``v`` holds per-antenna simplex weights over patterns.
    """
    W = _as_w_stack(W)
    c = rho / sigma2
    K = W.shape[1]
    A = np.eye(K) + c * np.einsum("zku,zlu->zkl", W * np.asarray(v), W.conj())
    A = 0.5 * (A + A.conj().transpose(0, 2, 1))
    L = np.linalg.cholesky(A)
    diag = np.real(np.diagonal(L, axis1=1, axis2=2))
    return float(np.mean(2.0 * np.sum(np.log2(diag), axis=1)))


def selector_gradient(v, W, rho, sigma2):
    """Analytic gradient of :func:`ergodic_rate` with respect to ``v``."""
    W = _as_w_stack(W)
    c = rho / sigma2
    K = W.shape[1]
    A = np.eye(K) + c * np.einsum("zku,zlu->zkl", W * np.asarray(v), W.conj())
    A = 0.5 * (A + A.conj().transpose(0, 2, 1))
    X = np.linalg.solve(A, W)
    quad = np.real(np.einsum("zku,zku->zu", W.conj(), X))
    return (c / LN2) * quad.mean(axis=0)


@dataclass
class RelaxedSolution:
    weights: np.ndarray
    objective: float
    gap: float
    iterations: int
    converged: bool


def _golden_max(fun, f_zero, hi, iters=10):
    """Golden-section maximization on [0, hi]; returns (gamma, value).

    Endpoints are always candidates, so the result never undercuts staying
    put.
    """
    invphi = 0.5 * (np.sqrt(5.0) - 1.0)
    a, b = 0.0, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = fun(x1), fun(x2)
    cand = [(f_zero, 0.0), (f1, x1), (f2, x2)]
    for _ in range(iters):
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = fun(x1)
            cand.append((f1, x1))
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = fun(x2)
            cand.append((f2, x2))
    cand.append((fun(hi), hi))
    best = max(cand, key=lambda t: t[0])
    return best[1], best[0]


def _toward_vertex(grad, num_blocks, num_patterns):
    gb = grad.reshape(num_blocks, num_patterns)
    idx = gb.argmax(axis=1)
    s = np.zeros(grad.shape)
    s[np.arange(num_blocks) * num_patterns + idx] = 1.0
    return s


def _slope_bisect_max(slope_at, hi, iters=40):
    """Maximize a concave 1-D function by bisecting its derivative sign.

    Assumes a nonnegative slope at zero, so the returned point sits on the
    increasing side of the maximum and its value never undercuts the
    origin.
    """
    if slope_at(hi) >= 0.0:
        return hi
    lo, up = 0.0, hi
    for _ in range(iters):
        mid = 0.5 * (lo + up)
        if slope_at(mid) > 0.0:
            lo = mid
        else:
            up = mid
    return lo


def solve_relaxed(samples, dictionary: PatternDictionary, rho, sigma2,
                  max_iters=500, tol=1.0e-4, line_search=True,
                  away_steps=True, counter=None):
    """Frank-Wolfe over the product of per-antenna simplices.

    Starts from uniform weights.  Each iteration compares the toward step
    with an away step (which unloads the worst supported pattern) and moves
    by golden-section line search, or by 2/(t+2) when ``line_search`` is
    off.  When golden search cannot resolve a maximum narrower than its
    grid, the concavity of the objective along the segment lets a slope
    bisection recover it; an away step that still makes no progress falls
    back to the toward step, so the iteration never stalls.  Terminates
    once the duality gap certifies the objective within ``tol`` of the
    relaxed optimum; otherwise returns the iterate with the smallest
    certified gap.
    """
    if counter is not None:
        counter.add()
    arr = samples.samples if hasattr(samples, "samples") else np.asarray(samples)
    if arr.ndim == 2:
        arr = arr[None]
    M = dictionary.num_bins
    U = dictionary.num_patterns
    N = arr.shape[1] // M
    W = project_onto_patterns(arr, dictionary, N)

    v = np.full(N * U, 1.0 / U)
    fv = ergodic_rate(v, W, rho, sigma2)
    best = None  # smallest-gap iterate seen

    for t in range(max_iters):
        g = selector_gradient(v, W, rho, sigma2)
        s = _toward_vertex(g, N, U)
        gap = float(g @ (s - v))
        if best is None or gap < best[2]:
            best = (v.copy(), fv, gap)
        if gap < tol:
            return RelaxedSolution(weights=v, objective=fv, gap=gap,
                                   iterations=t, converged=True)

        d = s - v
        hi = 1.0
        went_away = False
        if away_steps:
            gb = g.reshape(N, U)
            vb = v.reshape(N, U)
            masked = np.where(vb > 0, gb, np.inf)
            aw = masked.argmin(axis=1)
            a = np.zeros_like(v)
            a[np.arange(N) * U + aw] = 1.0
            d_away = v - a
            if float(g @ d_away) > float(g @ d):
                vw = vb[np.arange(N), aw]
                caps = vw[vw < 1.0]
                d = d_away
                hi = float((caps / (1.0 - caps)).min()) if caps.size else 1.0e6
                hi = min(hi, 1.0e6)
                went_away = True

        def line_max(direction, cap):
            gamma, fnew = _golden_max(
                lambda gm: ergodic_rate(v + gm * direction, W, rho, sigma2),
                fv, cap,
            )
            if fnew <= fv:
                gamma = _slope_bisect_max(
                    lambda gm: float(selector_gradient(
                        v + gm * direction, W, rho, sigma2) @ direction),
                    cap,
                )
                fnew = ergodic_rate(v + gamma * direction, W, rho, sigma2)
            return gamma, fnew

        if line_search:
            gamma, fnew = line_max(d, hi)
            if went_away and fnew <= fv:
                d = s - v
                gamma, fnew = line_max(d, 1.0)
        else:
            gamma = min(2.0 / (t + 2.0), hi)
            fnew = ergodic_rate(v + gamma * d, W, rho, sigma2)

        v = v + gamma * d
        # squash float drift so every iterate stays on the simplices
        v = np.maximum(v, 0.0).reshape(N, U)
        v /= v.sum(axis=1, keepdims=True)
        v = v.reshape(N * U)
        fv = fnew

    g = selector_gradient(v, W, rho, sigma2)
    s = _toward_vertex(g, N, U)
    gap = float(g @ (s - v))
    if best is None or gap < best[2]:
        best = (v, fv, gap)
    if gap < tol:
        return RelaxedSolution(weights=v, objective=fv, gap=gap,
                               iterations=max_iters, converged=True)
    bv, bf, bg = best
    return RelaxedSolution(weights=bv, objective=bf, gap=bg,
                           iterations=max_iters, converged=False)


def round_selector(v, dictionary: PatternDictionary):
    """Per-antenna argmax of the relaxed weights.

    Ties resolve to the lowest pattern index.  Returns the binary weight
    vector together with the induced beamformer.
    """
    U = dictionary.num_patterns
    v = np.asarray(v, dtype=float)
    if v.size % U != 0:
        raise ValueError("weight length is not a multiple of num_patterns")
    N = v.size // U
    idx = v.reshape(N, U).argmax(axis=1)
    binary = np.zeros_like(v)
    binary[np.arange(N) * U + idx] = 1.0
    return binary, Beamformer(dictionary=dictionary, pattern_indices=idx)


def exhaustive_oracle(samples, dictionary: PatternDictionary, rho, sigma2,
                      limit=100_000):
    """Best pattern assignment by enumeration of all U**N combinations.

    Refuses instances with more than ``limit`` combinations.  Ties keep the
    lexicographically first assignment.
    """
    arr = samples.samples if hasattr(samples, "samples") else np.asarray(samples)
    if arr.ndim == 2:
        arr = arr[None]
    M = dictionary.num_bins
    U = dictionary.num_patterns
    N = arr.shape[1] // M
    total = U ** N
    if total > limit:
        raise ValueError(
            f"exhaustive search over {total} assignments exceeds limit {limit}"
        )
    W = project_onto_patterns(arr, dictionary, N)
    offsets = np.arange(N) * U
    best_rate = -np.inf
    best_combo = None
    for combo in product(range(U), repeat=N):
        v = np.zeros(N * U)
        v[offsets + np.array(combo)] = 1.0
        rate = ergodic_rate(v, W, rho, sigma2)
        if rate > best_rate:
            best_rate = rate
            best_combo = combo
    idx = np.array(best_combo)
    binary = np.zeros(N * U)
    binary[offsets + idx] = 1.0
    return binary, Beamformer(dictionary=dictionary, pattern_indices=idx), best_rate


SELECTOR_MAGIC = "flexcoupler-selector-v1"
DICTIONARY_MAGIC = "flexcoupler-dictionary-v1"


def save_selector(v, dictionary: PatternDictionary, path):
    """Selector weights as text rows (block, pattern, weight)."""
    U = dictionary.num_patterns
    v = np.asarray(v, dtype=float)
    N = v.size // U
    lines = [f"# {SELECTOR_MAGIC}",
             f"# num_blocks={N} num_patterns={U}",
             "block,pattern,weight"]
    for n in range(N):
        for u in range(U):
            lines.append(f"{n},{u},{v[n * U + u]:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_selector(path):
    with open(path) as fh:
        if fh.readline().strip() != f"# {SELECTOR_MAGIC}":
            raise ValueError(f"{path}: not a selector container")
        meta = dict(item.split("=") for item in fh.readline().lstrip("# ").split())
        N, U = int(meta["num_blocks"]), int(meta["num_patterns"])
        fh.readline()
        v = np.zeros(N * U)
        for line in fh:
            n, u, w = line.split(",")
            v[int(n) * U + int(u)] = float(w)
    return v


def save_dictionary(dictionary: PatternDictionary, path):
    """Gain table as text rows (bin, pattern, gain) plus shape metadata."""
    lines = [
        f"# {DICTIONARY_MAGIC}",
        f"# num_bins={dictionary.num_bins} num_patterns={dictionary.num_patterns} "
        f"beamwidth={dictionary.beamwidth:.17g} kappa={dictionary.kappa:.17g}",
        "bin,pattern,gain",
    ]
    for m in range(dictionary.num_bins):
        for u in range(dictionary.num_patterns):
            lines.append(f"{m},{u},{dictionary.gains[m, u]:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dictionary(path) -> PatternDictionary:
    with open(path) as fh:
        if fh.readline().strip() != f"# {DICTIONARY_MAGIC}":
            raise ValueError(f"{path}: not a dictionary container")
        meta = dict(item.split("=") for item in fh.readline().lstrip("# ").split())
        M, U = int(meta["num_bins"]), int(meta["num_patterns"])
        fh.readline()
        gains = np.zeros((M, U))
        for line in fh:
            m, u, g = line.split(",")
            gains[int(m), int(u)] = float(g)
    centers = 2.0 * np.pi * np.arange(U) / U
    return PatternDictionary(gains=gains, centers=centers,
                             beamwidth=float(meta["beamwidth"]),
                             kappa=float(meta["kappa"]))
