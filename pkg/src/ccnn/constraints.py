"""Linear constraints ``A vec(P) >= b`` on per-pixel label marginals.

Every row is kept in the canonical ``>=`` form; upper bounds carry negated
coefficients.  Each row also carries a slack weight ``beta`` (``inf`` for a
hard constraint), which later becomes the upper bound on its dual variable.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .distributions import InvalidInputError


class RowTag(str, enum.Enum):
    SUPPRESSION = "suppression"
    FOREGROUND = "foreground"
    BACKGROUND_LOWER = "background_lower"
    BACKGROUND_UPPER = "background_upper"
    SIZE_UPPER = "size_upper"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ConstraintConfig:
    """Bound fractions (multiplied by the pixel count n) and slack weights."""

    a_fg: float = 0.05
    beta_fg: float = 2.0
    a_bg: float = 0.3
    b_bg: float = 0.7
    a_big: float = 0.1
    b_small: float = 0.01
    beta_default: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.a_bg <= self.b_bg <= 1.0:
            raise InvalidInputError(f"need 0 <= a_bg <= b_bg <= 1, got {self.a_bg}, {self.b_bg}")
        for name in ("a_fg", "a_big", "b_small"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {v}")
        for name in ("beta_fg", "beta_default"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class ConstraintRow:
    """One sparse row of ``A`` together with its bound and slack weight.

    ``pixels``, ``labels`` and ``values`` are parallel arrays holding the
    nonzero coefficients ``A[(pixel, label)]``.
    """

    pixels: np.ndarray
    labels: np.ndarray
    values: np.ndarray
    bound: float
    slack_weight: float = math.inf
    tag: RowTag = RowTag.CUSTOM

    def __post_init__(self):
        pix = np.asarray(self.pixels, dtype=np.int64).ravel()
        lab = np.asarray(self.labels, dtype=np.int64).ravel()
        val = np.asarray(self.values, dtype=np.float64).ravel()
        if not (pix.shape == lab.shape == val.shape):
            raise InvalidInputError("pixels, labels and values must have equal length")
        if not np.any(val != 0):
            raise InvalidInputError("constraint row needs at least one nonzero coefficient")
        if not np.all(np.isfinite(val)) or not math.isfinite(self.bound):
            raise InvalidInputError("coefficients and bound must be finite")
        if not self.slack_weight > 0:
            raise InvalidInputError(f"slack weight must be positive, got {self.slack_weight}")
        for arr in (pix, lab, val):
            arr.setflags(write=False)
        object.__setattr__(self, "pixels", pix)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "bound", float(self.bound))
        object.__setattr__(self, "slack_weight", float(self.slack_weight))
        object.__setattr__(self, "tag", RowTag(self.tag))

    @property
    def is_hard(self):
        return math.isinf(self.slack_weight)

    def evaluate(self, p):
        """Return ``A_row . vec(P)`` for an ``(n, m)`` distribution."""
        return float(np.dot(self.values, np.asarray(p)[self.pixels, self.labels]))

    def to_dict(self):
        coeffs = [[int(i), int(l), float(c)] for i, l, c in zip(self.pixels, self.labels, self.values)]
        beta = None if self.is_hard else self.slack_weight
        return {"coeffs": coeffs, "bound": self.bound, "beta": beta, "tag": self.tag.value}

    @classmethod
    def from_dict(cls, d):
        try:
            coeffs = np.asarray(d["coeffs"], dtype=np.float64).reshape(-1, 3)
            bound = float(d["bound"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed constraint row: {exc}") from exc
        if np.any(coeffs[:, :2] != np.round(coeffs[:, :2])):
            raise InvalidInputError("coefficient indices must be integers")
        beta = d.get("beta")
        return cls(
            pixels=coeffs[:, 0].astype(np.int64),
            labels=coeffs[:, 1].astype(np.int64),
            values=coeffs[:, 2],
            bound=bound,
            slack_weight=math.inf if beta is None else float(beta),
            tag=RowTag(d.get("tag", "custom")),
        )


def _label_column(label, n, sign, bound, beta, tag):
    return ConstraintRow(
        pixels=np.arange(n),
        labels=np.full(n, label),
        values=np.full(n, float(sign)),
        bound=bound,
        slack_weight=beta,
        tag=tag,
    )


def _check_labels(labels, m, what):
    labels = sorted(int(l) for l in labels)
    bad = [l for l in labels if not 1 <= l < m]
    if bad:
        raise InvalidInputError(f"{what} must be foreground labels in [1, {m - 1}], got {bad}")
    return labels


def suppression_rows(tags, n, m, cfg=None):
    """Rows ``sum_i p_i(l) <= 0`` for every foreground label absent from ``tags``."""
    cfg = cfg or ConstraintConfig()
    present = set(_check_labels(tags, m, "tags"))
    return [
        _label_column(l, n, -1.0, 0.0, cfg.beta_default, RowTag.SUPPRESSION)
        for l in range(1, m)
        if l not in present
    ]


def foreground_rows(tags, cfg, n, m, large=()):
    """Rows ``sum_i p_i(l) >= a_fg n`` (``a_big n`` for large labels) for present labels."""
    tags = _check_labels(tags, m, "tags")
    large = set(_check_labels(large, m, "large labels"))
    rows = []
    for l in tags:
        frac = cfg.a_big if l in large else cfg.a_fg
        rows.append(_label_column(l, n, 1.0, frac * n, cfg.beta_fg, RowTag.FOREGROUND))
    return rows


def background_rows(cfg, n, m):
    """Lower and upper bound on the total background mass."""
    if m < 2:
        raise InvalidInputError("need m >= 2 labels")
    return [
        _label_column(0, n, 1.0, cfg.a_bg * n, cfg.beta_default, RowTag.BACKGROUND_LOWER),
        _label_column(0, n, -1.0, -cfg.b_bg * n, cfg.beta_default, RowTag.BACKGROUND_UPPER),
    ]


def size_rows(small_labels, cfg, n, m, large=()):
    """Rows ``sum_i p_i(l) <= b_small n`` for labels known to be small."""
    small = _check_labels(small_labels, m, "small labels")
    clash = set(small) & {int(l) for l in large}
    if clash:
        raise InvalidInputError(f"labels marked both small and large: {sorted(clash)}")
    return [
        _label_column(l, n, -1.0, -cfg.b_small * n, cfg.beta_default, RowTag.SIZE_UPPER)
        for l in small
    ]


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Validated, ordered list of rows over an ``n x m`` output.

    Row order is the dual variable order.  ``warnings`` records rows that a
    builder had to leave out.
    """

    rows: tuple
    n: int
    m: int
    warnings: tuple = ()
    matrix: sparse.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        if self.n < 1 or self.m < 2:
            raise InvalidInputError(f"invalid dimensions n={self.n}, m={self.m}")
        r_idx, c_idx, vals = [], [], []
        for j, row in enumerate(self.rows):
            if not isinstance(row, ConstraintRow):
                raise InvalidInputError(f"row {j} is not a ConstraintRow")
            if np.any((row.pixels < 0) | (row.pixels >= self.n)) or np.any(
                (row.labels < 0) | (row.labels >= self.m)
            ):
                raise InvalidInputError(f"row {j} indexes outside [0,{self.n})x[0,{self.m})")
            r_idx.append(np.full(row.values.size, j))
            c_idx.append(row.pixels * self.m + row.labels)
            vals.append(row.values)
        k = len(self.rows)
        if k:
            mat = sparse.csr_matrix(
                (np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))),
                shape=(k, self.n * self.m),
            )
        else:
            mat = sparse.csr_matrix((0, self.n * self.m))
        object.__setattr__(self, "matrix", mat)

    def __len__(self):
        return len(self.rows)

    @property
    def k(self):
        return len(self.rows)

    @property
    def bounds(self):
        return np.array([r.bound for r in self.rows], dtype=np.float64)

    @property
    def betas(self):
        return np.array([r.slack_weight for r in self.rows], dtype=np.float64)

    def dense(self):
        """Dense ``(k, n*m)`` coefficient matrix."""
        return self.matrix.toarray()

    def apply(self, p):
        """Return ``A vec(P)`` as a length-k vector."""
        return self.matrix @ np.asarray(p, dtype=np.float64).ravel()

    def bias(self, lam):
        """Return the ``(n, m)`` score offsets ``A_{i;l}^T lambda``."""
        return (self.matrix.T @ np.asarray(lam, dtype=np.float64)).reshape(self.n, self.m)

    def violations(self, p):
        """Per-row ``b_j - A_j vec(P)`` (positive means violated)."""
        return self.bounds - self.apply(p)

    def to_list(self):
        return [r.to_dict() for r in self.rows]

    @classmethod
    def from_list(cls, rows, n, m):
        return assemble([ConstraintRow.from_dict(d) for d in rows], n, m)


def assemble(rows, n, m, warnings=()):
    """Validate rows against ``n x m`` and freeze them in the given order."""
    return ConstraintSet(tuple(rows), int(n), int(m), tuple(warnings))
