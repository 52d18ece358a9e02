"""Gaussian-process surrogate search over architecture hyperparameters.

An RBF-kernel GP with per-dimension length-scales is fit to observed
(architecture, score) pairs by maximizing log marginal likelihood over a
deterministic coarse-to-fine grid.  New architectures are sampled either at
the posterior-variance maximum (the information-gain proxy: for a GP the
gain is 0.5*log(1 + var/noise), monotone in variance) or by UCB.  Discrete
spaces are searched by full pool enumeration.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, SurrogateNumericsError
from .models import DrnConfig, RcanConfig

_LS_GRID = (0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.5)
_SV_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)
_NV_GRID = (1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 0.1)
_LS_REFINE = (0.5, 0.7, 1.0, 1.4, 2.0)
_NOISE_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# Search space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    """Discrete per-dimension value grid with a min-max [0,1] encoding."""

    kind: str                       # "drn" | "rcan" | "synthetic"
    dims: tuple                     # ((name, (v1, v2, ...)), ...)
    fixed: tuple = ()               # extra config kwargs, e.g. (("attention_reduction", 4),)

    def __post_init__(self):
        for name, values in self.dims:
            if len(values) != len(set(values)):
                raise InvalidArgumentError(f"dimension {name!r} has duplicate values")

    @property
    def names(self):
        return [name for name, _ in self.dims]

    def points(self):
        """All grid points as tuples, lexicographic in dimension order."""
        out = [()]
        for _, values in self.dims:
            out = [p + (v,) for p in out for v in values]
        return out

    def encode(self, point):
        enc = np.empty(len(self.dims))
        for i, (name, values) in enumerate(self.dims):
            lo, hi = min(values), max(values)
            enc[i] = 0.0 if hi == lo else (point[i] - lo) / (hi - lo)
        return enc

    def encode_all(self, points):
        return np.array([self.encode(p) for p in points])

    def config_for(self, point, scale):
        kwargs = dict(zip(self.names, point))
        kwargs.update(dict(self.fixed))
        if self.kind == "drn":
            return DrnConfig(scale=scale, **kwargs)
        if self.kind == "rcan":
            return RcanConfig(scale=scale, **kwargs)
        raise InvalidArgumentError(f"space kind {self.kind!r} has no model config")


def drn_space():
    return SearchSpace("drn", (
        ("features", (16, 32, 64, 128)),
        ("depth", tuple(range(2, 21))),
        ("block_size", (2, 3, 4)),
    ), fixed=(("attention_reduction", 4),))


def rcan_space():
    return SearchSpace("rcan", (
        ("features", (16, 32, 64, 128)),
        ("groups", tuple(range(2, 12))),
        ("blocks_per_group", (2, 4, 8)),
    ), fixed=(("attention_reduction", 4),))


def benchmark_space():
    """The 4 x 10 x 3 grid used by the synthetic closed-form benchmark."""
    return SearchSpace("synthetic", (
        ("features", (16, 32, 64, 128)),
        ("depth", tuple(range(2, 12))),
        ("block_size", (2, 3, 4)),
    ))


# ---------------------------------------------------------------------------
# GP surrogate
# ---------------------------------------------------------------------------

def _rbf(xa, xb, length_scales, signal_var):
    d = (xa[:, None, :] - xb[None, :, :]) / length_scales
    return signal_var * np.exp(-0.5 * np.sum(d * d, axis=2))


def _chol_with_jitter(k):
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(k + jitter * np.eye(k.shape[0])), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-6:
                raise SurrogateNumericsError(
                    "kernel matrix not positive definite after jitter escalation"
                )


@dataclass
class GpSurrogate:
    x: np.ndarray            # (n, d) encoded observations
    y_raw: np.ndarray        # (n,) raw scores
    y_mean: float
    y_std: float
    length_scales: np.ndarray
    signal_var: float
    noise_var: float
    chol: np.ndarray
    alpha: np.ndarray        # K^-1 z, standardized targets
    lml: float

    @property
    def prior_mean(self):
        return self.y_mean

    @property
    def prior_std(self):
        return self.y_std * math.sqrt(self.signal_var)

    def hyperparams(self):
        return {"length_scales": [float(v) for v in self.length_scales],
                "signal_var": float(self.signal_var),
                "noise_var": float(self.noise_var),
                "lml": float(self.lml)}


def log_marginal_likelihood(x, z, length_scales, signal_var, noise_var):
    """LML of standardized targets z under the RBF kernel (jitter-stabilized)."""
    n = x.shape[0]
    k = _rbf(x, x, np.asarray(length_scales), signal_var)
    k[np.diag_indices_from(k)] += max(noise_var, _NOISE_FLOOR)
    chol, _ = _chol_with_jitter(k)
    w = np.linalg.solve(chol, z)
    alpha = np.linalg.solve(chol.T, w)
    lml = -0.5 * float(z @ alpha) - float(np.log(np.diag(chol)).sum()) - 0.5 * n * math.log(2 * math.pi)
    return lml, chol, alpha


def gp_fit(observations):
    """Fit kernel hyperparameters on (encoded point, score) observations.

    Coarse pass over a shared length-scale / signal / noise grid, then a
    per-dimension coordinate refinement of the length-scales.  Ties break
    toward the smallest noise, then the largest length-scales.
    """
    if len(observations) < 2:
        raise InvalidArgumentError("gp_fit needs at least 2 observations")
    x = np.array([np.asarray(p, dtype=np.float64) for p, _ in observations])
    y = np.array([float(s) for _, s in observations])
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std < 1e-12:
        y_std = 1.0
    z = (y - y_mean) / y_std
    d = x.shape[1]

    def better(a, b):
        # a, b: (lml, nv, mean_ls); maximize lml, then minimize noise, then
        # prefer long length-scales.
        if a[0] != b[0]:
            return a[0] > b[0]
        if a[1] != b[1]:
            return a[1] < b[1]
        return a[2] > b[2]

    best = None
    best_params = None
    for ls in _LS_GRID:
        ls_vec = np.full(d, ls)
        for sv in _SV_GRID:
            for nv in _NV_GRID:
                try:
                    lml, _, _ = log_marginal_likelihood(x, z, ls_vec, sv, nv)
                except SurrogateNumericsError:
                    continue
                key = (lml, nv, float(np.mean(ls_vec)))
                if best is None or better(key, best):
                    best = key
                    best_params = (ls_vec.copy(), sv, nv)

    if best_params is None:
        raise SurrogateNumericsError("no hyperparameter candidate was factorizable")

    ls_vec, sv, nv = best_params
    for _ in range(2):
        for dim in range(d):
            for factor in _LS_REFINE:
                trial = ls_vec.copy()
                trial[dim] = ls_vec[dim] * factor
                try:
                    lml, _, _ = log_marginal_likelihood(x, z, trial, sv, nv)
                except SurrogateNumericsError:
                    continue
                key = (lml, nv, float(np.mean(trial)))
                if better(key, best):
                    best = key
                    ls_vec = trial
    lml, chol, alpha = log_marginal_likelihood(x, z, ls_vec, sv, nv)
    return GpSurrogate(x, y, y_mean, y_std, ls_vec, sv, max(nv, _NOISE_FLOOR),
                       chol, alpha, lml)


def gp_posterior(surrogate, query_points):
    """Posterior (mean, variance) per query point, in raw score units."""
    q = np.atleast_2d(np.asarray(query_points, dtype=np.float64))
    ks = _rbf(surrogate.x, q, surrogate.length_scales, surrogate.signal_var)
    mean_z = ks.T @ surrogate.alpha
    w = np.linalg.solve(surrogate.chol, ks)
    var_z = surrogate.signal_var - np.sum(w * w, axis=0)
    if (var_z < -1e-6).any():
        raise SurrogateNumericsError(f"posterior variance went negative: {var_z.min()}")
    var_z = np.maximum(var_z, 0.0)
    mean = surrogate.y_mean + surrogate.y_std * mean_z
    var = (surrogate.y_std ** 2) * var_z
    return mean, var


# ---------------------------------------------------------------------------
# Acquisition
# ---------------------------------------------------------------------------

def acquire(surrogate, pool_encoded, mode="max-variance", beta=2.0):
    """Pick the next pool index; ties go to the lexicographically smallest
    encoding (callers keep pools in lexicographic order)."""
    pool = np.atleast_2d(pool_encoded)
    if pool.shape[0] == 0:
        raise InvalidArgumentError("acquisition pool is empty")
    if surrogate is None:
        return 0, math.nan  # equal prior variance everywhere
    mean, var = gp_posterior(surrogate, pool)
    if mode == "max-variance":
        scores = var
    elif mode == "ucb":
        scores = mean + beta * np.sqrt(var)
    else:
        raise InvalidArgumentError(f"unknown acquisition mode {mode!r}")
    idx = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[idx]:
            idx = i
    return idx, float(scores[idx])


# ---------------------------------------------------------------------------
# Search loop
# ---------------------------------------------------------------------------

@dataclass
class SearchConfig:
    budget: int
    init_samples: int = 5
    acquisition: str = "ucb"
    beta: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.init_samples > self.budget:
            raise InvalidArgumentError("init_samples must not exceed budget")
        if self.budget < 1:
            raise InvalidArgumentError("budget must be positive")


@dataclass
class SearchResult:
    records: list
    ranked: list                 # [(point, score)] best observed first
    posterior_best: tuple        # (point, predicted mean)
    hyperparams: dict

    @property
    def best_observed(self):
        return self.ranked[0]

    def to_dict(self):
        return {
            "iterations": self.records,
            "best_observed": {"point": list(self.best_observed[0]),
                              "score": self.best_observed[1]},
            "posterior_argmax": {"point": list(self.posterior_best[0]),
                                 "predicted_score": self.posterior_best[1]},
            "hyperparams": self.hyperparams,
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _radical_inverse(index, base):
    out, f = 0.0, 1.0 / base
    while index > 0:
        out += f * (index % base)
        index //= base
        f /= base
    return out


_HALTON_BASES = (2, 3, 5, 7, 11, 13)


def _init_indices(space, n, seed, points):
    """Low-discrepancy starting picks: Halton points snapped to the grid.

    The sequence offset depends on the seed, so different seeds spread
    differently while staying deterministic.
    """
    dims = [len(values) for _, values in space.dims]
    chosen = []
    seen = set()
    idx = 1 + 61 * (seed % 10007)
    while len(chosen) < n:
        u = [_radical_inverse(idx, _HALTON_BASES[j % len(_HALTON_BASES)])
             for j in range(len(dims))]
        grid_idx = tuple(min(k - 1, int(u[j] * k)) for j, k in enumerate(dims))
        flat = 0
        for j, k in enumerate(dims):
            flat = flat * k + grid_idx[j]
        if flat not in seen:
            seen.add(flat)
            chosen.append(flat)
        idx += 1
        if len(seen) >= len(points):
            break
    return chosen


def search(space, evaluator, config):
    """GP-guided search: low-discrepancy start, then fit / acquire / evaluate
    until the budget is spent.  Returns observed points ranked by score plus
    the posterior-mean argmax over the whole space.

    Evaluator failures score the point at (prior mean - 3 * prior std) and
    are flagged; the search continues.
    """
    points = space.points()
    encoded = space.encode_all(points)
    budget = min(config.budget, len(points))

    evaluated = {}
    records = []
    surrogate = None

    def run_eval(flat_idx, iteration, acq_value):
        point = points[flat_idx]
        flagged = False
        try:
            score = float(evaluator(point))
        except Exception as exc:  # noqa: BLE001 - deliberate containment
            if surrogate is not None:
                score = surrogate.prior_mean - 3.0 * surrogate.prior_std
            elif evaluated:
                vals = np.array(list(evaluated.values()))
                score = float(vals.mean() - 3.0 * (vals.std() or 1.0))
            else:
                score = -3.0
            flagged = True
        evaluated[point] = score
        records.append({
            "iteration": iteration,
            "point": list(point),
            "score": score,
            "flagged": flagged,
            "acquisition_value": acq_value,
            "hyperparams": surrogate.hyperparams() if surrogate is not None else None,
        })

    for flat_idx in _init_indices(space, min(config.init_samples, budget),
                                  config.seed, points):
        run_eval(flat_idx, len(records) + 1, None)

    while len(evaluated) < budget:
        obs = [(encoded[points.index(p)], s) for p, s in evaluated.items()]
        surrogate = gp_fit(obs)
        remaining = [i for i, p in enumerate(points) if p not in evaluated]
        pool = encoded[remaining]
        pick, acq_value = acquire(surrogate, pool, config.acquisition, config.beta)
        run_eval(remaining[pick], len(records) + 1, acq_value)

    ranked = sorted(evaluated.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(evaluated) < 2:
        # Not enough data for a posterior; the lone observation is the best guess.
        return SearchResult(records, ranked, ranked[0], {})
    obs = [(encoded[points.index(p)], s) for p, s in evaluated.items()]
    surrogate = gp_fit(obs)
    mean, _ = gp_posterior(surrogate, encoded)
    best_idx = 0
    for i in range(1, len(points)):
        if mean[i] > mean[best_idx]:
            best_idx = i
    return SearchResult(records, ranked, (points[best_idx], float(mean[best_idx])),
                        surrogate.hyperparams())


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------

def quadratic_benchmark(space=None):
    """Closed-form smooth score over the benchmark grid with one known
    optimum; returns (evaluator, optimum_point)."""
    space = space or benchmark_space()
    optimum = (64, 6, 3)
    target = space.encode(optimum)
    coeffs = np.array([1.3, 0.9, 0.6])

    def evaluator(point):
        d = space.encode(point) - target
        return 1.0 - float(coeffs @ (d * d))

    return evaluator, optimum


def random_search(space, evaluator, budget, seed):
    """Uniform without-replacement baseline; returns [(point, score)] in
    evaluation order."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11CE]))
    points = space.points()
    order = rng.permutation(len(points))[:budget]
    return [(points[i], float(evaluator(points[i]))) for i in order]


def make_mini_train_evaluator(manifest, scale, root=".", epochs=2, seed=0,
                              space=None, train_overrides=None):
    """Score an architecture point by a short training run's validation PSNR."""
    from .models import build_model
    from .trainer import TrainConfig, train
    import tempfile

    space = space or drn_space()
    overrides = {"epochs": epochs, "batch_size": 4, "lr": 2e-3, "beta2": 0.97,
                 "crop": 32, "seed": seed, "checkpoint_interval": 10**6}
    overrides.update(train_overrides or {})

    def evaluator(point):
        config = space.config_for(point, scale)
        model = build_model(config, seed=seed)
        with tempfile.TemporaryDirectory() as tmp:
            report = train(model, manifest, TrainConfig(**overrides), tmp, root=root)
        return report.best_psnr

    return evaluator
