"""Synthetic generators and CSV ingestion.

CSV layout: a header row, numeric feature columns, and an optional last
column named ``label`` holding 0 (normal) or 1 (anomaly).
"""

import csv
import math

import numpy as np

from .errors import DomainError, InvalidInputError
from .metrics import LabeledDataset
from .noise_scale import ggd_variance

MODES = np.array([[-2.0, 2.0], [2.0, -2.0]])
MODE_VAR = 0.3
ANOMALY_BOX = 4.0
ANOMALY_EXCLUSION = 1.5


class CSVFormatError(InvalidInputError):
    """Ill-formed CSV; carries the 1-based row and column of the problem."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


def gen_two_gaussians(n, seed):
    """``n // 2`` draws from each of N((-2, 2), 0.3 I) and N((2, -2), 0.3 I), all normal.

    An odd ``n`` puts the extra sample in the first component.
    """
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    rng = np.random.default_rng(seed)
    n1 = n - n // 2
    comp = np.concatenate([np.zeros(n1, dtype=np.int64), np.ones(n // 2, dtype=np.int64)])
    X = MODES[comp] + math.sqrt(MODE_VAR) * rng.standard_normal((n, 2))
    return LabeledDataset(X, np.zeros(n, dtype=np.int64), name="two_gaussians")


def gen_two_gaussian_anomalies(n, seed):
    """Uniform points in [-4, 4]^2 at distance >= 1.5 from both modes."""
    rng = np.random.default_rng(seed)
    out = []
    total = 0
    while total < n:
        cand = rng.uniform(-ANOMALY_BOX, ANOMALY_BOX, size=(2 * (n - total) + 8, 2))
        dist = np.linalg.norm(cand[:, None, :] - MODES[None, :, :], axis=2)
        keep = cand[np.all(dist >= ANOMALY_EXCLUSION, axis=1)]
        out.append(keep)
        total += len(keep)
    return np.concatenate(out)[:n]


def gen_gauss_laplace(n, seed):
    """Columns x ~ N(0, 1) and y ~ Laplace(0, 1/sqrt(2)); both unit variance."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = rng.laplace(0.0, 1.0 / math.sqrt(2.0), size=n)
    return np.column_stack([x, y])


def gen_ggd(beta, n, seed):
    """Unit-variance generalised Gaussian samples via ``|X| = G**(1/beta)``, G ~ Gamma(1/beta)."""
    if not 0.5 <= beta <= 50.0:
        raise DomainError(f"beta must lie in [0.5, 50], got {beta}")
    rng = np.random.default_rng(seed)
    g = rng.gamma(1.0 / beta, 1.0, size=n)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return sign * g ** (1.0 / beta) / math.sqrt(ggd_variance(beta))


def gen_student_t(nu, n, seed):
    """Unit-variance Student-t samples: normal over sqrt(chi2/nu), times sqrt((nu-2)/nu)."""
    if not nu > 4.0:
        raise DomainError(f"nu must be > 4, got {nu}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    chi2 = rng.chisquare(nu, size=n)
    return z / np.sqrt(chi2 / nu) * math.sqrt((nu - 2.0) / nu)


def gen_heterogeneous_tails(n_normal, n_anomaly, seed, offset=(2.0, 3.0)):
    """Four unit-variance features: Gaussian, Gaussian, Laplace, Student-t (nu=5).

    Anomalies are drawn from the same marginals, then both heavy-tailed
    coordinates are replaced by a random-sign offset of magnitude in
    ``offset``. Rows are normals first, then anomalies.
    """
    rng = np.random.default_rng(seed)
    n = n_normal + n_anomaly
    X = np.column_stack([
        rng.standard_normal(n),
        rng.standard_normal(n),
        rng.laplace(0.0, 1.0 / math.sqrt(2.0), size=n),
        rng.standard_t(5.0, size=n) * math.sqrt(3.0 / 5.0),
    ])
    mag = rng.uniform(offset[0], offset[1], size=(n_anomaly, 2))
    sign = np.where(rng.random((n_anomaly, 2)) < 0.5, -1.0, 1.0)
    X[n_normal:, 2:] = sign * mag
    y = np.concatenate([np.zeros(n_normal, dtype=np.int64), np.ones(n_anomaly, dtype=np.int64)])
    return LabeledDataset(X, y, name="heterogeneous_tails")


def gen_contaminated(n, contamination, seed, shift=6.0):
    """``(1 - contamination)`` of N(0, I_2) plus ``contamination`` of N((shift, shift), I_2)."""
    if not 0.0 < contamination < 1.0:
        raise DomainError(f"contamination must lie in (0, 1), got {contamination}")
    rng = np.random.default_rng(seed)
    n_anom = int(round(contamination * n))
    Xn = rng.standard_normal((n - n_anom, 2))
    Xa = rng.standard_normal((n_anom, 2)) + shift
    y = np.concatenate([np.zeros(n - n_anom, dtype=np.int64), np.ones(n_anom, dtype=np.int64)])
    X = np.concatenate([Xn, Xa])
    perm = rng.permutation(n)
    return LabeledDataset(X[perm], y[perm], name="contaminated")


def read_csv(path):
    """Read a feature CSV. Returns ``(X, y_or_None, feature_names)``."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError("file is empty", row=1) from None
        header = [h.strip() for h in header]
        has_label = bool(header) and header[-1] == "label"
        names = header[:-1] if has_label else header
        if not names:
            raise CSVFormatError("no feature columns", row=1)
        rows, labels = [], []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(header):
                raise CSVFormatError(f"expected {len(header)} fields, got {len(raw)}", row=lineno)
            values = []
            for col, cell in enumerate(raw[:len(names)], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise CSVFormatError(f"not a number: {cell!r}", row=lineno, column=col) from None
                if not math.isfinite(v):
                    raise CSVFormatError(f"non-finite value {cell!r}", row=lineno, column=col)
                values.append(v)
            rows.append(values)
            if has_label:
                cell = raw[-1].strip()
                if cell not in ("0", "1", "0.0", "1.0"):
                    raise CSVFormatError(f"label must be 0 or 1, got {cell!r}",
                                         row=lineno, column=len(header))
                labels.append(int(float(cell)))
    if not rows:
        raise CSVFormatError("no data rows", row=2)
    X = np.array(rows, dtype=np.float64)
    y = np.array(labels, dtype=np.int64) if has_label else None
    return X, y, names


def write_csv(path, X, y=None, names=None):
    """Write features (and labels) with ``repr``-exact floats."""
    X = np.asarray(X, dtype=np.float64)
    if names is None:
        names = [f"f{j}" for j in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + (["label"] if y is not None else []))
        for i, row in enumerate(X):
            cells = [repr(float(v)) for v in row]
            if y is not None:
                cells.append(str(int(y[i])))
            w.writerow(cells)
