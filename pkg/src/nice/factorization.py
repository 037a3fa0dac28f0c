"""Non-negative CP decomposition of a slice-masked third-order tensor.

The objective is the masked least-squares loss

    0.5 * sum_{(i,j) observed} sum_k (x_ijk - sum_r U_ir T_jr F_kr) ** 2

minimised under elementwise non-negativity. Loss and gradient are evaluated
slice-block by slice-block over the observed cells only; the dense I x J x K
tensor is never formed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .tensor import SparseMaskedTensor

logger = logging.getLogger(__name__)

OPTIMIZERS = ("quasi-newton-bounded", "projected-gradient")
_BLOCK = 8192


class FactorizationError(RuntimeError):
    pass


@dataclass
class FitInfo:
    loss: float
    iterations: int
    seed: int
    restart: int
    optimizer: str
    converged: bool
    history: list[float] = field(default_factory=list)
    min_entries: list[float] = field(default_factory=list)


@dataclass(eq=False)
class KruskalFactors:
    """Factor matrices of ``[[U, T, F]]``: users x R, versions x R, champions x R."""

    U: np.ndarray
    T: np.ndarray
    F: np.ndarray
    fit: FitInfo | None = None
    user_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.T = np.asarray(self.T, dtype=np.float64)
        self.F = np.asarray(self.F, dtype=np.float64)
        if not (self.U.ndim == self.T.ndim == self.F.ndim == 2):
            raise ValueError("factor matrices must be 2-D")
        if not (self.U.shape[1] == self.T.shape[1] == self.F.shape[1]):
            raise ValueError("factor matrices disagree on rank")
        if self.user_ids is not None:
            self.user_ids = tuple(str(u) for u in self.user_ids)
            if len(self.user_ids) != len(self.U):
                raise ValueError("user_ids length does not match U")

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.U.shape[0], self.T.shape[0], self.F.shape[0])

    def full(self) -> np.ndarray:
        return np.einsum("ir,jr,kr->ijk", self.U, self.T, self.F)

    def slice_block(self, slices: np.ndarray) -> np.ndarray:
        """Model values over whole (i, j) slices, shape (len(slices), K)."""
        slices = np.asarray(slices, dtype=np.int64).reshape(-1, 2)
        return (self.U[slices[:, 0]] * self.T[slices[:, 1]]) @ self.F.T

    def copy(self) -> "KruskalFactors":
        return KruskalFactors(self.U.copy(), self.T.copy(), self.F.copy(), self.fit, self.user_ids)

    def user_index(self) -> dict[str, int]:
        if self.user_ids is None:
            return {str(i): i for i in range(len(self.U))}
        return {u: i for i, u in enumerate(self.user_ids)}

    def run_id(self) -> str:
        h = hashlib.sha256()
        for m in (self.U, self.T, self.F):
            h.update(np.ascontiguousarray(m).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class FitOptions:
    rank: int
    max_iterations: int = 500
    tolerance: float = 1e-8
    restarts: int = 3
    seed: int = 0
    optimizer: str = "quasi-newton-bounded"

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1 or self.restarts < 1:
            raise ValueError("max_iterations and restarts must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


def reconstruct(factors: KruskalFactors, i: int, j: int, k: int) -> float:
    I, J, K = factors.dims
    if not (0 <= i < I and 0 <= j < J and 0 <= k < K):
        raise IndexError(f"cell ({i}, {j}, {k}) outside {factors.dims}")
    return float(np.sum(factors.U[i] * factors.T[j] * factors.F[k]))


def _check_dims(factors: KruskalFactors, tensor: SparseMaskedTensor) -> None:
    if factors.dims != tuple(tensor.dims):
        raise ValueError(f"factor dims {factors.dims} do not match tensor dims {tensor.dims}")


class _MaskedProblem:
    """Observed-cell loss/gradient evaluator for one tensor."""

    def __init__(self, tensor: SparseMaskedTensor, block: int = _BLOCK):
        self.tensor = tensor
        self.dims = tensor.dims
        self.blocks = []
        es = tensor.entry_slice
        for lo in range(0, tensor.n_slices, block):
            hi = min(lo + block, tensor.n_slices)
            a = np.searchsorted(es, lo, side="left")
            b = np.searchsorted(es, hi, side="left")
            self.blocks.append((lo, hi, es[a:b] - lo, tensor.subs[a:b, 2], tensor.vals[a:b]))

    def residual_blocks(self, U, T, F):
        slices = self.tensor.slices
        for lo, hi, rows, cols, vals in self.blocks:
            i, j = slices[lo:hi, 0], slices[lo:hi, 1]
            A = U[i] * T[j]
            E = A @ F.T
            E[rows, cols] -= vals
            yield i, j, A, E

    def loss(self, U, T, F) -> float:
        total = 0.0
        for _, _, _, E in self.residual_blocks(U, T, F):
            total += 0.5 * float(np.sum(E * E))
        return total

    def loss_grad(self, U, T, F):
        gU = np.zeros_like(U)
        gT = np.zeros_like(T)
        gF = np.zeros_like(F)
        total = 0.0
        for i, j, A, E in self.residual_blocks(U, T, F):
            total += 0.5 * float(np.sum(E * E))
            gF += E.T @ A
            G = E @ F
            np.add.at(gU, i, G * T[j])
            np.add.at(gT, j, G * U[i])
        return total, gU, gT, gF


def masked_loss(factors: KruskalFactors, tensor: SparseMaskedTensor) -> float:
    _check_dims(factors, tensor)
    return _MaskedProblem(tensor).loss(factors.U, factors.T, factors.F)


def masked_gradient(factors: KruskalFactors, tensor: SparseMaskedTensor):
    """Gradients of :func:`masked_loss` with respect to U, T and F.

    Each is a masked MTTKRP of the residual with the Khatri-Rao product of the
    other two factors, accumulated over observed slices.
    """
    _check_dims(factors, tensor)
    _, gU, gT, gF = _MaskedProblem(tensor).loss_grad(factors.U, factors.T, factors.F)
    return gU, gT, gF


def relative_error(factors: KruskalFactors, tensor: SparseMaskedTensor) -> float:
    """Frobenius error over the observed cells relative to the observed data norm."""
    _check_dims(factors, tensor)
    norm = math.sqrt(float(np.sum(tensor.vals ** 2)))
    if norm == 0:
        raise ValueError("observed data has zero norm")
    return math.sqrt(2.0 * masked_loss(factors, tensor)) / norm


def heldout_fit_score(heldout: SparseMaskedTensor) -> Callable[[KruskalFactors], float]:
    """Evaluator for :func:`select_rank`: ``1 - relative_error`` on held-out slices."""
    def score(factors: KruskalFactors) -> float:
        return 1.0 - relative_error(factors, heldout)
    return score


def _initial_factors(problem: _MaskedProblem, rank: int, rng: np.random.Generator):
    I, J, K = problem.dims
    U = rng.random((I, rank))
    T = rng.random((J, rank))
    F = rng.random((K, rank))
    data_norm = math.sqrt(float(np.sum(problem.tensor.vals ** 2)))
    model_norm = 0.0
    for _, _, A, _ in problem.residual_blocks(U, T, F):
        model_norm += float(np.sum((A @ F.T) ** 2))
    model_norm = math.sqrt(model_norm)
    if data_norm > 0 and model_norm > 0:
        s = (data_norm / model_norm) ** (1.0 / 3.0)
        U, T, F = U * s, T * s, F * s
    return U, T, F


def _split(x, dims, rank):
    I, J, K = dims
    U = x[: I * rank].reshape(I, rank)
    T = x[I * rank: (I + J) * rank].reshape(J, rank)
    F = x[(I + J) * rank:].reshape(K, rank)
    return U, T, F


def _converged(prev: float, cur: float, tol: float, floor: float) -> bool:
    return cur <= floor or abs(prev - cur) <= tol * max(abs(prev), floor)


def _fit_lbfgsb(problem, x0, rank, options, floor):
    dims = problem.dims
    history: list[float] = []
    mins: list[float] = []
    state = {"f": None, "x": None, "converged": False}

    def fun(x):
        U, T, F = _split(x, dims, rank)
        f, gU, gT, gF = problem.loss_grad(U, T, F)
        if not math.isfinite(f):
            raise FloatingPointError("non-finite loss")
        return f, np.concatenate([gU.ravel(), gT.ravel(), gF.ravel()])

    def callback(intermediate_result):
        x, f = intermediate_result.x, float(intermediate_result.fun)
        prev = history[-1] if history else state["f0"]
        history.append(f)
        mins.append(float(x.min()))
        state["x"], state["f"] = x.copy(), f
        if _converged(prev, f, options.tolerance, floor):
            state["converged"] = True
            raise StopIteration

    state["f0"] = fun(x0)[0]
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * len(x0),
                   callback=callback,
                   options={"maxiter": options.max_iterations, "ftol": 1e-300, "gtol": 0.0,
                            "maxfun": 20 * options.max_iterations, "maxcor": 10})
    x, f = res.x, float(res.fun)
    if state["f"] is not None and state["f"] < f:
        x, f = state["x"], state["f"]
    return np.maximum(x, 0.0), f, len(history), history, mins, state["converged"]


def _fit_projected_gradient(problem, x0, rank, options, floor):
    dims = problem.dims

    def evaluate(x):
        U, T, F = _split(x, dims, rank)
        f, gU, gT, gF = problem.loss_grad(U, T, F)
        if not math.isfinite(f):
            raise FloatingPointError("non-finite loss")
        return f, np.concatenate([gU.ravel(), gT.ravel(), gF.ravel()])

    x = np.maximum(x0, 0.0)
    f, g = evaluate(x)
    step = 1.0 / max(np.linalg.norm(g), 1e-12)
    history, mins = [], []
    converged = False
    for _ in range(options.max_iterations):
        accepted = False
        trial = step
        for _ in range(60):
            x_new = np.maximum(x - trial * g, 0.0)
            f_new, g_new = evaluate(x_new)
            # Armijo condition along the projection arc
            if f_new <= f - 1e-4 * float(g @ (x - x_new)):
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            converged = True
            break
        s, y = x_new - x, g_new - g
        prev = f
        x, f, g = x_new, f_new, g_new
        history.append(f)
        mins.append(float(x.min()))
        sy = float(s @ y)
        # Barzilai-Borwein step for the next trial, kept in a sane range
        step = min(max(float(s @ s) / sy, 1e-10), 1e10) if sy > 0 else 2.0 * trial
        if _converged(prev, f, options.tolerance, floor):
            converged = True
            break
    return x, f, len(history), history, mins, converged


def factorize(tensor: SparseMaskedTensor, options: FitOptions,
              user_ids: Sequence[str] | None = None) -> KruskalFactors:
    """Fit a non-negative rank-R CP model to the observed slices of ``tensor``.

    Runs ``options.restarts`` fits from independent uniform random starts and
    keeps the one with the lowest final loss. A restart whose loss turns
    non-finite is discarded.
    """
    if tensor.n_slices == 0:
        raise FactorizationError("tensor has no observed slices")
    if options.rank > min(tensor.dims):
        warnings.warn(f"rank {options.rank} exceeds the smallest tensor dimension {min(tensor.dims)}",
                      stacklevel=2)
    problem = _MaskedProblem(tensor)
    rng = np.random.default_rng(options.seed)
    floor = 1e-24 * max(0.5 * float(np.sum(tensor.vals ** 2)), 1e-300)
    fitter = _fit_lbfgsb if options.optimizer == "quasi-newton-bounded" else _fit_projected_gradient

    best = None
    for restart in range(options.restarts):
        U0, T0, F0 = _initial_factors(problem, options.rank, rng)
        x0 = np.concatenate([U0.ravel(), T0.ravel(), F0.ravel()])
        try:
            with np.errstate(over="raise", invalid="raise"):
                x, f, its, hist, mins, conv = fitter(problem, x0, options.rank, options, floor)
        except FloatingPointError as exc:
            logger.warning("restart %d failed: %s", restart, exc)
            continue
        logger.info("restart %d: loss %.6g after %d iterations", restart, f, its)
        if best is None or f < best[1]:
            best = (x, f, its, hist, mins, conv, restart)
    if best is None:
        raise FactorizationError("all restarts produced non-finite losses")

    x, f, its, hist, mins, conv, restart = best
    U, T, F = (m.copy() for m in _split(x, tensor.dims, options.rank))
    info = FitInfo(loss=f, iterations=its, seed=options.seed, restart=restart,
                   optimizer=options.optimizer, converged=conv, history=hist, min_entries=mins)
    return KruskalFactors(U, T, F, fit=info, user_ids=user_ids)


@dataclass
class RankSelection:
    rank: int
    scores: dict[int, float | dict[str, float]]
    factors: dict[int, KruskalFactors]
    tolerance: float


def _within(score: float, best: float, tol: float, greater: bool) -> bool:
    slack = tol * abs(best)
    return score >= best - slack if greater else score <= best + slack


def select_rank(tensor: SparseMaskedTensor, rank_candidates: Sequence[int],
                evaluator: Callable[[KruskalFactors], float | Mapping[str, float]],
                options: FitOptions | None = None, tolerance: float = 0.005,
                greater_is_better: bool | Mapping[str, bool] = True,
                user_ids: Sequence[str] | None = None) -> RankSelection:
    """Smallest candidate rank whose validation score is within ``tolerance``
    (relative) of the best score, for every target the evaluator reports.

    ``evaluator`` maps fitted factors to a score, or to a ``{target: score}``
    mapping. Ranks whose fit or evaluation raises are skipped with a warning.
    """
    candidates = sorted(set(int(r) for r in rank_candidates))
    if not candidates:
        raise ValueError("rank_candidates is empty")
    options = options or FitOptions(rank=candidates[0])

    scores: dict[int, dict[str, float]] = {}
    fitted: dict[int, KruskalFactors] = {}
    for rank in candidates:
        opts = FitOptions(rank=rank, max_iterations=options.max_iterations,
                          tolerance=options.tolerance, restarts=options.restarts,
                          seed=options.seed, optimizer=options.optimizer)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                factors = factorize(tensor, opts, user_ids)
            value = evaluator(factors)
        except Exception as exc:  # noqa: BLE001 - any evaluator failure skips the rank
            warnings.warn(f"rank {rank} skipped: {exc}", stacklevel=2)
            continue
        scores[rank] = dict(value) if isinstance(value, Mapping) else {"score": float(value)}
        fitted[rank] = factors
        logger.info("rank %d: %s", rank, scores[rank])
    if not scores:
        raise FactorizationError("every candidate rank failed")

    targets = list(next(iter(scores.values())))

    def greater(t):
        return greater_is_better[t] if isinstance(greater_is_better, Mapping) else greater_is_better

    best = {}
    for t in targets:
        vals = [s[t] for s in scores.values()]
        best[t] = max(vals) if greater(t) else min(vals)
    chosen = None
    for rank in sorted(scores):
        if all(_within(scores[rank][t], best[t], tolerance, greater(t)) for t in targets):
            chosen = rank
            break
    if chosen is None:  # no single rank is near-best for all targets
        chosen = max(scores)
    flat = {r: (s["score"] if list(s) == ["score"] else s) for r, s in scores.items()}
    return RankSelection(chosen, flat, fitted, tolerance)


def save_factors(factors: KruskalFactors, directory, metadata: dict | None = None) -> dict:
    """Write U.csv, T.csv, F.csv and factors.json into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    ids = {
        "U": list(factors.user_ids) if factors.user_ids is not None else list(range(factors.dims[0])),
        "T": list(range(factors.dims[1])),
        "F": list(range(factors.dims[2])),
    }
    header = ["id"] + [f"c{r}" for r in range(factors.rank)]
    for name, mat in (("U", factors.U), ("T", factors.T), ("F", factors.F)):
        if len(ids[name]) != len(mat):
            raise ValueError(f"{name}: {len(ids[name])} ids for {len(mat)} rows")
        with open(os.path.join(directory, f"{name}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for ident, row in zip(ids[name], mat.tolist()):
                writer.writerow([ident] + [repr(v) for v in row])
    meta = {
        "rank": factors.rank,
        "dims": list(factors.dims),
        "run_id": factors.run_id(),
    }
    if factors.fit is not None:
        meta.update(seed=factors.fit.seed, final_loss=factors.fit.loss,
                    iterations=factors.fit.iterations, optimizer=factors.fit.optimizer,
                    converged=factors.fit.converged)
    meta.update(metadata or {})
    with open(os.path.join(directory, "factors.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return meta


def load_factors(directory):
    """Inverse of :func:`save_factors`; returns ``(factors, metadata)``."""
    mats, ids = {}, {}
    for name in ("U", "T", "F"):
        path = os.path.join(directory, f"{name}.csv")
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        if not header or header[0] != "id":
            raise ValueError(f"{path}: bad header")
        ids[name] = [r[0] for r in rows]
        mats[name] = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), len(header) - 1)
    with open(os.path.join(directory, "factors.json")) as fh:
        meta = json.load(fh)
    factors = KruskalFactors(mats["U"], mats["T"], mats["F"], user_ids=ids["U"])
    if factors.run_id() != meta.get("run_id"):
        raise ValueError(f"{directory}: factor files do not match recorded run_id")
    return factors, meta


def holdout_slices(tensor: SparseMaskedTensor, fraction: float = 0.1, seed: int = 0):
    """Split observed slices into ``(fit, heldout)`` tensors.

    Slices are visited in random order and moved to the held-out side only
    while their user and version each keep at least one other fitted slice,
    so every held-out slice stays predictable from the fitted ones.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    slices = tensor.slices
    target = int(round(fraction * len(slices)))
    users = np.bincount(slices[:, 0], minlength=tensor.dims[0])
    versions = np.bincount(slices[:, 1], minlength=tensor.dims[1])
    held = np.zeros(len(slices), dtype=bool)
    for s in np.random.default_rng(seed).permutation(len(slices)):
        if held.sum() >= target:
            break
        i, j = slices[s]
        if users[i] > 1 and versions[j] > 1:
            held[s] = True
            users[i] -= 1
            versions[j] -= 1
    return tensor.subset_slices(~held), tensor.subset_slices(held)
