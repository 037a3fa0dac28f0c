"""User x version x champion proportion tensor with a slice-level observation mask."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import MatchRecord


class TensorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseMaskedTensor:
    """Third-order tensor stored in COO form with observed (i, j) slices.

    Every cell ``(i, j, k)`` with ``(i, j)`` in ``slices`` is observed; cells of
    an observed slice with no stored entry are observed zeros. Cells outside
    the observed slices are missing and carry no value.

    Attributes
    ----------
    dims : (I, J, K)
    subs : (nnz, 3) int array of entry coordinates, lexicographically sorted
    vals : (nnz,) float array
    slices : (P, 2) int array of observed (i, j) pairs, lexicographically sorted
    """

    dims: tuple[int, int, int]
    subs: np.ndarray
    vals: np.ndarray
    slices: np.ndarray

    def __post_init__(self):
        subs = np.asarray(self.subs, dtype=np.int64).reshape(-1, 3)
        vals = np.asarray(self.vals, dtype=np.float64).reshape(-1)
        slices = np.asarray(self.slices, dtype=np.int64).reshape(-1, 2)
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise TensorError(f"invalid dims {self.dims}")
        if len(subs) != len(vals):
            raise TensorError("subs and vals differ in length")
        if len(subs) and (subs.min() < 0 or np.any(subs.max(axis=0) >= dims)):
            raise TensorError("entry index out of range")
        if len(slices) and (slices.min() < 0 or np.any(slices.max(axis=0) >= dims[:2])):
            raise TensorError("slice index out of range")
        if not np.all(np.isfinite(vals)):
            raise TensorError("entry values must be finite")

        order = np.lexsort((slices[:, 1], slices[:, 0]))
        slices = slices[order]
        if len(slices) > 1 and np.any(np.all(slices[1:] == slices[:-1], axis=1)):
            raise TensorError("duplicate observed slice")
        order = np.lexsort((subs[:, 2], subs[:, 1], subs[:, 0]))
        subs, vals = subs[order], vals[order]
        if len(subs) > 1 and np.any(np.all(subs[1:] == subs[:-1], axis=1)):
            raise TensorError("duplicate entry")

        slice_id = self._locate(slices, dims, subs[:, :2])
        if np.any(slice_id < 0):
            raise TensorError("entry lies outside the observed slices")

        for name, value in (("dims", dims), ("subs", subs), ("vals", vals), ("slices", slices)):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "_entry_slice", slice_id)

    @staticmethod
    def _locate(slices, dims, pairs):
        """Row of ``slices`` holding each (i, j) in ``pairs``, or -1."""
        if len(slices) == 0:
            return np.full(len(pairs), -1, dtype=np.int64)
        keys = slices[:, 0] * dims[1] + slices[:, 1]
        query = pairs[:, 0] * dims[1] + pairs[:, 1]
        pos = np.minimum(np.searchsorted(keys, query), len(keys) - 1)
        return np.where(keys[pos] == query, pos, -1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def nnz(self) -> int:
        return len(self.vals)

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    @property
    def entry_slice(self) -> np.ndarray:
        """Index into ``slices`` of every stored entry."""
        return self._entry_slice

    @classmethod
    def from_dense(cls, values, slice_mask) -> "SparseMaskedTensor":
        """Build from a dense array and a boolean (I, J) mask of observed slices.

        Values outside the mask are ignored entirely.
        """
        values = np.asarray(values, dtype=np.float64)
        slice_mask = np.asarray(slice_mask, dtype=bool)
        if values.ndim != 3 or slice_mask.shape != values.shape[:2]:
            raise TensorError("expected a 3-way array and an (I, J) mask")
        cell_mask = np.broadcast_to(slice_mask[:, :, None], values.shape)
        subs = np.argwhere(cell_mask & (values != 0))
        return cls(values.shape, subs, values[tuple(subs.T)], np.argwhere(slice_mask))

    def slice_mask(self) -> np.ndarray:
        mask = np.zeros(self.dims[:2], dtype=bool)
        mask[self.slices[:, 0], self.slices[:, 1]] = True
        return mask

    def slice_values(self, rows: slice | np.ndarray | None = None) -> np.ndarray:
        """Dense (P, K) block of observed slice values (observed zeros included)."""
        if rows is None:
            rows = slice(0, self.n_slices)
        sel = np.arange(self.n_slices)[rows]
        block = np.zeros((len(sel), self.dims[2]))
        if len(sel) == 0:
            return block
        lo = np.searchsorted(self._entry_slice, sel[0], side="left")
        hi = np.searchsorted(self._entry_slice, sel[-1], side="right")
        e_slice = self._entry_slice[lo:hi]
        keep = np.isin(e_slice, sel)
        local = np.searchsorted(sel, e_slice[keep])
        block[local, self.subs[lo:hi][keep, 2]] = self.vals[lo:hi][keep]
        return block

    def to_dense(self, fill=np.nan) -> np.ndarray:
        out = np.full(self.dims, fill, dtype=np.float64)
        out[self.slices[:, 0], self.slices[:, 1], :] = 0.0
        out[tuple(self.subs.T)] = self.vals
        return out

    def subset_slices(self, keep) -> "SparseMaskedTensor":
        """Tensor restricted to the slices selected by boolean/int index ``keep``."""
        keep_idx = np.arange(self.n_slices)[keep]
        flag = np.zeros(self.n_slices, dtype=bool)
        flag[keep_idx] = True
        entry_keep = flag[self._entry_slice]
        return SparseMaskedTensor(self.dims, self.subs[entry_keep], self.vals[entry_keep],
                                  self.slices[keep_idx])

    def slice_sums(self) -> np.ndarray:
        return np.bincount(self._entry_slice, weights=self.vals, minlength=self.n_slices)

    def is_slice_stochastic(self, atol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.slice_sums() - 1.0) <= atol)
                    and np.all((self.vals >= 0) & (self.vals <= 1)))

    def save(self, path, slices_path=None) -> None:
        """Write ``i j k value`` lines, plus a sidecar of observed ``i j`` pairs."""
        slices_path = slices_path or f"{path}.slices"
        with open(path, "w") as fh:
            fh.write(f"# dims {self.dims[0]} {self.dims[1]} {self.dims[2]}\n")
            for (i, j, k), v in zip(self.subs.tolist(), self.vals.tolist()):
                fh.write(f"{i} {j} {k} {v!r}\n")
        with open(slices_path, "w") as fh:
            for i, j in self.slices.tolist():
                fh.write(f"{i} {j}\n")

    @classmethod
    def load(cls, path, slices_path=None) -> "SparseMaskedTensor":
        slices_path = slices_path or f"{path}.slices"
        with open(path) as fh:
            header = fh.readline().split()
            if header[:2] != ["#", "dims"]:
                raise TensorError(f"{path}: missing dims header")
            dims = tuple(int(x) for x in header[2:5])
            rows = [line.split() for line in fh if line.strip()]
        subs = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows], dtype=np.int64)
        vals = np.array([float(r[3]) for r in rows])
        slices = np.loadtxt(slices_path, dtype=np.int64, ndmin=2).reshape(-1, 2)
        return cls(dims, subs.reshape(-1, 3), vals, slices)


def build_tensor(records: Sequence[MatchRecord], user_index: dict[str, int] | None = None,
                 n_versions: int | None = None,
                 n_champions: int | None = None) -> SparseMaskedTensor:
    """Per-(user, version) champion pick proportions.

    ``x[i, j, k]`` is the share of user ``i``'s matches in version ``j`` played
    as champion ``k``; slice ``(i, j)`` is observed iff that count is positive.
    Users are indexed by ``user_index`` (sorted user ids when omitted).
    """
    if not records:
        raise TensorError("cannot build a tensor from zero records")
    if user_index is None:
        user_index = {u: n for n, u in enumerate(sorted({r.user_id for r in records}))}
    n_users = len(user_index)
    if n_versions is None:
        n_versions = 1 + max(r.version_index for r in records)
    if n_champions is None:
        n_champions = 1 + max(r.champion_id for r in records)

    counts: Counter = Counter()
    for rec in records:
        i = user_index.get(rec.user_id)
        if i is None:
            raise TensorError(f"user {rec.user_id!r} missing from the user index")
        if not 0 <= rec.version_index < n_versions:
            raise TensorError(f"version_index {rec.version_index} out of range")
        if not 0 <= rec.champion_id < n_champions:
            raise TensorError(f"champion_id {rec.champion_id} out of range")
        counts[(i, rec.version_index, rec.champion_id)] += 1

    cells = np.array(sorted(counts), dtype=np.int64).reshape(-1, 3)
    n = np.array([counts[tuple(c)] for c in cells.tolist()], dtype=np.float64)
    slices, inverse = np.unique(cells[:, :2], axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    totals = np.bincount(inverse, weights=n)
    return SparseMaskedTensor((n_users, n_versions, n_champions), cells, n / totals[inverse], slices)


def density(tensor: SparseMaskedTensor) -> float:
    """Fraction of observed cells, ``|slices| * K / (I * J * K)``."""
    I, J, K = tensor.dims
    return tensor.n_slices * K / (I * J * K)


def user_index_for(records: Iterable[MatchRecord]) -> dict[str, int]:
    return {u: n for n, u in enumerate(sorted({r.user_id for r in records}))}
