"""Design matrices for contingency-table and general log-affine models.

Two storage layouts are supported behind one interface:

* sparse binary (CSC; per-column sorted row indices, all values 1), used for
  contingency-table and raking designs where only a column's support matters;
* dense general (row-major float array) for non-negative or signed designs.

Cells of a multi-way table enumerate in row-major order of the factor
levels, last factor fastest.  Dummy coding drops level 1 of every factor.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# Hard cap on table size so N = prod(levels) blow-ups fail loudly instead of
# exhausting memory during construction.
MAX_CELLS = 2**31 - 1

KIND_BINARY = "binary"
KIND_NON_NEGATIVE = "non_negative"
KIND_GENERAL = "general"


class DesignError(ValueError):
    """Invalid design construction (zero rows/columns, bad schema, ...)."""


@dataclass(frozen=True)
class TableSchema:
    """Factors of a multi-way contingency table plus the interaction order.

    factors: ordered (name, levels) pairs, levels >= 2.
    interaction_order: 1 = main effects, 2 = all two-way, 3 = all three-way.
    """

    factors: tuple[tuple[str, int], ...]
    interaction_order: int = 1

    def __post_init__(self):
        if len(self.factors) < 1:
            raise DesignError("schema needs at least one factor")
        object.__setattr__(self, "factors", tuple((str(n), int(m)) for n, m in self.factors))
        names = [n for n, _ in self.factors]
        if len(set(names)) != len(names):
            raise DesignError("duplicate factor names")
        for name, m in self.factors:
            if m < 2:
                raise DesignError(f"factor {name!r} needs >= 2 levels, got {m}")
        if self.interaction_order not in (1, 2, 3):
            raise DesignError("interaction_order must be 1, 2 or 3")
        n_cells = 1
        for _, m in self.factors:
            n_cells *= m
            if n_cells > MAX_CELLS:
                raise DesignError(f"table has more than {MAX_CELLS} cells")

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def n_cells(self) -> int:
        out = 1
        for _, m in self.factors:
            out *= m
        return out

    def strides(self) -> np.ndarray:
        """Cell-index stride of each factor (last factor fastest)."""
        ms = [m for _, m in self.factors]
        out = np.ones(len(ms), dtype=np.int64)
        for k in range(len(ms) - 2, -1, -1):
            out[k] = out[k + 1] * ms[k + 1]
        return out

    def cell_levels(self, index: int) -> tuple[int, ...]:
        """1-based factor levels of the cell at a flat index."""
        strides = self.strides()
        return tuple(int(index // strides[k]) % m + 1 for k, (_, m) in enumerate(self.factors))

    def cell_index(self, levels) -> int:
        """Flat index of a cell given 1-based factor levels."""
        strides = self.strides()
        idx = 0
        for k, (name, m) in enumerate(self.factors):
            lev = int(levels[k])
            if not 1 <= lev <= m:
                raise DesignError(f"level {lev} out of range for factor {name!r}")
            idx += (lev - 1) * strides[k]
        return idx

    def to_dict(self) -> dict:
        return {
            "factors": [{"name": n, "levels": m} for n, m in self.factors],
            "order": self.interaction_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TableSchema":
        try:
            factors = tuple((f["name"], int(f["levels"])) for f in d["factors"])
            order = int(d.get("order", 1))
        except (KeyError, TypeError) as exc:
            raise DesignError(f"malformed schema: {exc}") from exc
        return cls(factors=factors, interaction_order=order)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TableSchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class DesignMatrix:
    """N x p design with cached max absolute row sum and column labels.

    Exactly one of ``csc`` (binary) or ``dense`` is set.  Immutable after
    construction; all accessors are read-only and safe to share across
    workers.
    """

    n_rows: int
    n_cols: int
    kind: str
    column_labels: list[str]
    csc: sp.csc_array | None = None
    dense: np.ndarray | None = None
    row_sum_max: float = field(default=0.0)
    _abs_row_sums: np.ndarray = field(default=None, repr=False)
    _pos_dense: np.ndarray = field(default=None, repr=False)
    _neg_dense: np.ndarray = field(default=None, repr=False)

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_columns(cls, n_rows: int, supports: list[np.ndarray], labels=None) -> "DesignMatrix":
        """Binary design from per-column sorted row-index arrays."""
        indptr = np.zeros(len(supports) + 1, dtype=np.int64)
        for j, supp in enumerate(supports):
            indptr[j + 1] = indptr[j] + len(supp)
        indices = np.concatenate([np.asarray(s, dtype=np.int64) for s in supports]) if supports else np.zeros(0, np.int64)
        data = np.ones(len(indices))
        csc = sp.csc_array((data, indices, indptr), shape=(n_rows, len(supports)))
        return cls._finalize_binary(csc, labels)

    @classmethod
    def from_dense(cls, arr, labels=None) -> "DesignMatrix":
        """Classify a dense array as binary / non-negative / general and wrap it."""
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        if arr.ndim != 2:
            raise DesignError("design must be 2-D")
        if not np.all(np.isfinite(arr)):
            raise DesignError("design entries must be finite")
        is_binary = np.all((arr == 0.0) | (arr == 1.0))
        if is_binary:
            csc = sp.csc_array(arr)
            return cls._finalize_binary(csc, labels)
        kind = KIND_NON_NEGATIVE if np.all(arr >= 0.0) else KIND_GENERAL
        n, p = arr.shape
        obj = cls(n_rows=n, n_cols=p, kind=kind, column_labels=cls._labels(labels, p), dense=arr)
        obj._validate()
        return obj

    @classmethod
    def _finalize_binary(cls, csc: sp.csc_array, labels) -> "DesignMatrix":
        csc = csc.astype(np.float64)
        csc.sort_indices()
        n, p = csc.shape
        if csc.indices.dtype != np.int64:
            csc = sp.csc_array(
                (csc.data, csc.indices.astype(np.int64), csc.indptr.astype(np.int64)),
                shape=(n, p))
        obj = cls(n_rows=n, n_cols=p, kind=KIND_BINARY, column_labels=cls._labels(labels, p), csc=csc)
        obj._validate()
        return obj

    @staticmethod
    def _labels(labels, p) -> list[str]:
        if labels is None:
            return [f"x{j}" for j in range(p)]
        labels = [str(s) for s in labels]
        if len(labels) != p:
            raise DesignError("label count does not match column count")
        return labels

    def _validate(self) -> None:
        ars = self.abs_row_sums()
        if np.any(ars == 0.0):
            raise DesignError("design has an all-zero row")
        col_nz = self._col_abs_sums()
        if np.any(col_nz == 0.0):
            raise DesignError("design has an all-zero column")
        self.row_sum_max = float(ars.max())

    # -- accessors ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def abs_row_sums(self) -> np.ndarray:
        """Row sums of |x_ij|; the max is the design's scaling constant R."""
        if self._abs_row_sums is None:
            if self.csc is not None:
                csr = self.csc.tocsr()
                self._abs_row_sums = np.diff(csr.indptr).astype(np.float64)
            else:
                self._abs_row_sums = np.abs(self.dense).sum(axis=1)
        return self._abs_row_sums

    def _col_abs_sums(self) -> np.ndarray:
        if self.csc is not None:
            return np.diff(self.csc.indptr).astype(np.float64)
        return np.abs(self.dense).sum(axis=0)

    @property
    def has_intercept(self) -> bool:
        """True when column 0 is identically one."""
        if self.csc is not None:
            return self.csc.indptr[1] == self.n_rows
        col = self.dense[:, 0]
        return bool(np.all(col == 1.0))

    def col_support(self, j: int) -> np.ndarray:
        """Sorted row indices with x_ij != 0 (binary storage only)."""
        if self.csc is None:
            raise DesignError("col_support requires binary storage")
        return self.csc.indices[self.csc.indptr[j]:self.csc.indptr[j + 1]]

    def col_dense(self, j: int) -> np.ndarray:
        if self.dense is not None:
            return self.dense[:, j]
        out = np.zeros(self.n_rows)
        out[self.col_support(j)] = 1.0
        return out

    def col_dot(self, j: int, v: np.ndarray) -> float:
        """Exact inner product <x_j, v>; a gather-sum on sparse storage."""
        if self.csc is not None:
            return float(v[self.col_support(j)].sum())
        return float(self.dense[:, j] @ v)

    def matvec(self, b: np.ndarray) -> np.ndarray:
        if self.csc is not None:
            return self.csc @ b
        return self.dense @ b

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        if self.csc is not None:
            return self.csc.T @ v
        return self.dense.T @ v

    def slope_matvec(self, b_slope: np.ndarray) -> np.ndarray:
        """X[:, 1:] @ b_slope (intercept column excluded)."""
        if self.csc is not None:
            return self.csc[:, 1:] @ b_slope
        return self.dense[:, 1:] @ b_slope

    def slope_rmatvec(self, v: np.ndarray) -> np.ndarray:
        return self.rmatvec(v)[1:]

    def slope_row_sums(self) -> np.ndarray:
        """Row sums of X[:, 1:] (used by scaling updates on the slope part)."""
        ones = np.ones(self.n_cols)
        ones[0] = 0.0
        return self.matvec(ones)

    def submatrix_dense(self, cols) -> np.ndarray:
        cols = np.asarray(cols, dtype=np.int64)
        if self.csc is not None:
            return self.csc[:, cols].toarray()
        return np.ascontiguousarray(self.dense[:, cols])

    def submatrix(self, cols):
        """Column subset, sparse when the design is binary."""
        cols = np.asarray(cols, dtype=np.int64)
        if self.csc is not None:
            return self.csc[:, cols]
        return np.ascontiguousarray(self.dense[:, cols])

    def toarray(self) -> np.ndarray:
        if self.csc is not None:
            return self.csc.toarray()
        return self.dense.copy()

    def pos_neg_parts(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (positive part, negative part) of the matrix, both >= 0."""
        if self._pos_dense is None:
            arr = self.toarray()
            self._pos_dense = np.where(arr > 0, arr, 0.0)
            self._neg_dense = np.where(arr < 0, -arr, 0.0)
        return self._pos_dense, self._neg_dense

    def weighted_gram(self, w: np.ndarray) -> np.ndarray:
        """Dense X^T diag(w) X."""
        if self.csc is not None:
            return (self.csc.T @ (self.csc.multiply(w[:, None]))).toarray()
        return self.dense.T @ (w[:, None] * self.dense)

    def gram_slope(self) -> np.ndarray:
        """Dense X[:,1:]^T X[:,1:]."""
        if self.csc is not None:
            slope = self.csc[:, 1:]
            return (slope.T @ slope).toarray()
        slope = self.dense[:, 1:]
        return slope.T @ slope

    def col_sums(self) -> np.ndarray:
        return self.rmatvec(np.ones(self.n_rows))

    def drop_rows(self, keep: np.ndarray) -> "DesignMatrix":
        """Design restricted to the kept rows; re-validated."""
        keep = np.asarray(keep)
        if self.csc is not None:
            sub = sp.csc_array(self.csc[keep, :])
            return DesignMatrix._finalize_binary(sub, self.column_labels)
        return DesignMatrix.from_dense(self.dense[keep, :], self.column_labels)


# -- contingency-table designs ---------------------------------------------


def _combo_support(schema: TableSchema, constrained: list[tuple[int, int]]) -> np.ndarray:
    """Sorted cell indices matching the given (factor, 0-based level) pins.

    Built by accumulating the free factors' stride grids, most significant
    first, so the result comes out sorted without an explicit sort.
    """
    strides = schema.strides()
    pinned = dict(constrained)
    base = sum(strides[k] * lev for k, lev in pinned.items())
    idx = np.array([base], dtype=np.int64)
    for k, (_, m) in enumerate(schema.factors):
        if k in pinned:
            continue
        idx = (idx[:, None] + strides[k] * np.arange(m, dtype=np.int64)[None, :]).ravel()
    return idx


def build_table_design(schema: TableSchema) -> DesignMatrix:
    """Binary design of a homogeneous-association table model.

    Columns: intercept, then dummies for levels 2..m_k of each factor in
    schema order, then interaction columns (products of dummies) for every
    factor pair/triple up to ``interaction_order``, levels enumerated
    lexicographically.
    """
    n_cells = schema.n_cells
    r = schema.n_factors
    supports: list[np.ndarray] = [np.arange(n_cells, dtype=np.int64)]
    labels = ["(intercept)"]
    names = [n for n, _ in schema.factors]
    sizes = [m for _, m in schema.factors]

    for k in range(r):
        for lev in range(2, sizes[k] + 1):
            supports.append(_combo_support(schema, [(k, lev - 1)]))
            labels.append(f"{names[k]}={lev}")
    if schema.interaction_order >= 2:
        for j, k in itertools.combinations(range(r), 2):
            for lj in range(2, sizes[j] + 1):
                for lk in range(2, sizes[k] + 1):
                    supports.append(_combo_support(schema, [(j, lj - 1), (k, lk - 1)]))
                    labels.append(f"{names[j]}={lj}*{names[k]}={lk}")
    if schema.interaction_order >= 3:
        for j, k, l in itertools.combinations(range(r), 3):
            for lj in range(2, sizes[j] + 1):
                for lk in range(2, sizes[k] + 1):
                    for ll in range(2, sizes[l] + 1):
                        supports.append(
                            _combo_support(schema, [(j, lj - 1), (k, lk - 1), (l, ll - 1)])
                        )
                        labels.append(f"{names[j]}={lj}*{names[k]}={lk}*{names[l]}={ll}")
    return DesignMatrix.from_columns(n_cells, supports, labels)


def _canonical_margins(schema: TableSchema, margins_spec) -> list[tuple[int, ...]]:
    name_to_idx = {n: k for k, (n, _) in enumerate(schema.factors)}
    out = []
    for subset in margins_spec:
        idxs = []
        for f in subset:
            if isinstance(f, str):
                if f not in name_to_idx:
                    raise DesignError(f"unknown factor {f!r} in margin spec")
                idxs.append(name_to_idx[f])
            else:
                k = int(f)
                if not 0 <= k < schema.n_factors:
                    raise DesignError(f"factor index {k} out of range")
                idxs.append(k)
        if not idxs:
            raise DesignError("empty margin subset")
        if len(set(idxs)) != len(idxs):
            raise DesignError("repeated factor inside a margin subset")
        out.append(tuple(sorted(idxs)))
    if len(set(out)) != len(out):
        raise DesignError("duplicate margin subsets")
    return out


def build_raking_design(schema: TableSchema, margins_spec) -> DesignMatrix:
    """Binary design whose columns are margin-cell indicators.

    One intercept column, then for each requested factor subset one column
    per level combination of that subset (full indicator coding, no
    reference level dropped).  The fitted mean's inner product with a
    margin column is exactly that margin of the table.
    """
    margins = _canonical_margins(schema, margins_spec)
    names = [n for n, _ in schema.factors]
    sizes = [m for _, m in schema.factors]
    supports: list[np.ndarray] = [np.arange(schema.n_cells, dtype=np.int64)]
    labels = ["(intercept)"]
    for subset in margins:
        ranges = [range(1, sizes[k] + 1) for k in subset]
        for combo in itertools.product(*ranges):
            supports.append(_combo_support(schema, [(k, lev - 1) for k, lev in zip(subset, combo)]))
            labels.append("*".join(f"{names[k]}={lev}" for k, lev in zip(subset, combo)))
    return DesignMatrix.from_columns(schema.n_cells, supports, labels)


def table_column_supports(schema: TableSchema):
    """(constraints, label) per model column, in build_table_design order.

    A constraint is a list of (factor, 0-based level) pins; the intercept has
    none.  Shared by the full-table builder and the observed-cells builder so
    both enumerate identical columns.
    """
    r = schema.n_factors
    names = [n for n, _ in schema.factors]
    sizes = [m for _, m in schema.factors]
    out = [([], "(intercept)")]
    for k in range(r):
        for lev in range(2, sizes[k] + 1):
            out.append(([(k, lev - 1)], f"{names[k]}={lev}"))
    if schema.interaction_order >= 2:
        for j, k in itertools.combinations(range(r), 2):
            for lj in range(2, sizes[j] + 1):
                for lk in range(2, sizes[k] + 1):
                    out.append(([(j, lj - 1), (k, lk - 1)], f"{names[j]}={lj}*{names[k]}={lk}"))
    if schema.interaction_order >= 3:
        for j, k, l in itertools.combinations(range(r), 3):
            for lj in range(2, sizes[j] + 1):
                for lk in range(2, sizes[k] + 1):
                    for ll in range(2, sizes[l] + 1):
                        out.append((
                            [(j, lj - 1), (k, lk - 1), (l, ll - 1)],
                            f"{names[j]}={lj}*{names[k]}={lk}*{names[l]}={ll}",
                        ))
    return out


def build_design_for_cells(schema: TableSchema, level_rows: np.ndarray,
                           drop_empty: bool = True) -> tuple[DesignMatrix, list[str]]:
    """Table-model design restricted to the observed cells.

    ``level_rows`` is an (n_obs, r) array of 1-based factor levels, one row
    per observed cell.  Columns whose indicator never fires among the
    observed cells are non-identifiable; with ``drop_empty`` they are removed
    and their labels returned, otherwise construction fails.
    """
    level_rows = np.asarray(level_rows, dtype=np.int64)
    if level_rows.ndim != 2 or level_rows.shape[1] != schema.n_factors:
        raise DesignError("level rows must be (n_obs, n_factors)")
    for k, (name, m) in enumerate(schema.factors):
        col = level_rows[:, k]
        if col.min() < 1 or col.max() > m:
            raise DesignError(f"level out of range for factor {name!r}")
    lev0 = level_rows - 1
    supports = []
    labels = []
    dropped = []
    n_obs = level_rows.shape[0]
    for constraint, label in table_column_supports(schema):
        if not constraint:
            supp = np.arange(n_obs, dtype=np.int64)
        else:
            mask = np.ones(n_obs, dtype=bool)
            for k, lv in constraint:
                mask &= lev0[:, k] == lv
            supp = np.nonzero(mask)[0]
        if len(supp) == 0:
            if drop_empty:
                dropped.append(label)
                continue
            raise DesignError(f"column {label!r} is all-zero on the observed cells")
        supports.append(supp)
        labels.append(label)
    return DesignMatrix.from_columns(n_obs, supports, labels), dropped


def expected_column_count(schema: TableSchema) -> int:
    """Closed-form independent-parameter count of the table model."""
    sizes = [m for _, m in schema.factors]
    p = 1 + sum(m - 1 for m in sizes)
    if schema.interaction_order >= 2:
        p += sum((sizes[j] - 1) * (sizes[k] - 1) for j, k in itertools.combinations(range(len(sizes)), 2))
    if schema.interaction_order >= 3:
        p += sum(
            (sizes[j] - 1) * (sizes[k] - 1) * (sizes[l] - 1)
            for j, k, l in itertools.combinations(range(len(sizes)), 3)
        )
    return p


# -- triplet CSV interchange -------------------------------------------------


def write_triplet_csv(X: DesignMatrix, path) -> None:
    """Sparse triplet export: header ``row,col,value``, 0-based indices."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        if X.csc is not None:
            coo = X.csc.tocoo()
            order = np.lexsort((coo.col, coo.row))
            for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                w.writerow([int(i), int(j), format(float(v), ".17g")])
        else:
            for i in range(X.n_rows):
                row = X.dense[i]
                for j in np.nonzero(row)[0]:
                    w.writerow([i, int(j), format(float(row[j]), ".17g")])


def read_triplet_csv(path, n_rows=None, n_cols=None, labels=None) -> DesignMatrix:
    """Load a triplet CSV written by :func:`write_triplet_csv`."""
    rows, cols, vals = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["row", "col", "value"]:
            raise DesignError(f"{path}: expected header 'row,col,value'")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                rows.append(int(rec[0]))
                cols.append(int(rec[1]))
                vals.append(float(rec[2]))
            except (ValueError, IndexError) as exc:
                raise DesignError(f"{path}:{lineno}: bad triplet record: {exc}") from exc
    if not rows:
        raise DesignError(f"{path}: no entries")
    n = n_rows if n_rows is not None else max(rows) + 1
    p = n_cols if n_cols is not None else max(cols) + 1
    arr = np.zeros((n, p))
    arr[rows, cols] = vals
    return DesignMatrix.from_dense(arr, labels)
