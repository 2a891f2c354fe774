"""Per-feature distribution statistics that feed the noise-scale rules.

All moments are population (1/n) moments. Histogram bins are equal width
over ``[min, max]``, half-open on the right except for the last bin, which
also takes the maximum. Bin indices are 0-based.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateFeatureError, InvalidInputError

DEFAULT_BINS = 64
DEGENERATE_STD = 1e-12
# Kurtosis assigned to constant features so that every rule returns sigma_base.
GAUSSIAN_KURTOSIS = 3.0


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    bin_of: np.ndarray

    @property
    def n_bins(self):
        return len(self.counts)


@dataclass(frozen=True)
class FeatureStats:
    """Summary of one feature column as seen at training time."""

    mean: float
    std: float
    kurtosis_raw: float
    kurtosis_rearranged: float
    iqr: float
    degenerate: bool

    @property
    def scale(self):
        """Divisor used for standardisation; 1 for constant features."""
        return 1.0 if self.degenerate else self.std

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(mean=float(d["mean"]), std=float(d["std"]),
                   kurtosis_raw=float(d["kurtosis_raw"]),
                   kurtosis_rearranged=float(d["kurtosis_rearranged"]),
                   iqr=float(d["iqr"]), degenerate=bool(d["degenerate"]))


def _as_column(column):
    x = np.asarray(column, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"expected a 1-D column, got shape {x.shape}")
    if x.size == 0:
        raise InvalidInputError("column is empty")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("column contains NaN or Inf")
    return x


def standardize(column):
    """Return ``(z, mean, std, degenerate)`` with population std.

    Constant columns (std below 1e-12) come back as all zeros with the
    degenerate flag set.
    """
    x = _as_column(column)
    mean = float(np.mean(x))
    centred = x - mean
    std = float(np.sqrt(np.mean(centred * centred)))
    if std < DEGENERATE_STD:
        return np.zeros_like(x), mean, std, True
    return centred / std, mean, std, False


def pearson_kurtosis(z):
    """Fourth standardised moment ``m4 / m2**2`` with population moments.

    The input is re-centred before taking moments, so any affine image of a
    column gives the same value.
    """
    x = _as_column(z)
    if x.size < 4:
        raise InvalidInputError(f"kurtosis needs at least 4 samples, got {x.size}")
    d = x - np.mean(x)
    d2 = d * d
    m2 = float(np.mean(d2))
    if np.sqrt(m2) < DEGENERATE_STD:
        raise DegenerateFeatureError("kurtosis of a constant column is undefined")
    return float(np.mean(d2 * d2)) / (m2 * m2)


def freedman_diaconis_bins(column):
    x = _as_column(column)
    return max(1, len(np.histogram_bin_edges(x, bins="fd")) - 1)


def build_histogram(column, bins=DEFAULT_BINS):
    """Equal-width histogram of ``column`` over its range.

    ``bins=0`` selects the Freedman-Diaconis bin count.
    """
    x = _as_column(column)
    if bins == 0:
        bins = freedman_diaconis_bins(x)
    if bins < 1:
        raise InvalidInputError(f"bin count must be >= 1, got {bins}")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    bin_of = np.searchsorted(edges, x, side="right") - 1
    np.clip(bin_of, 0, bins - 1, out=bin_of)
    counts = np.bincount(bin_of, minlength=bins)
    return Histogram(edges=edges, counts=counts, bin_of=bin_of)


def rank_codes(counts):
    """Code assigned to each bin: 0 for the fullest, then +1, -1, +2, -2, ...

    Bins are ordered by count descending; ties go to the lower bin index.
    """
    counts = np.asarray(counts)
    order = np.argsort(-counts, kind="stable")
    codes = np.empty(len(counts), dtype=np.int64)
    position = np.arange(len(counts))
    # position p (0-based) -> 0, +1, -1, +2, -2, ...
    magnitude = (position + 1) // 2
    sign = np.where(position % 2 == 1, 1, -1)
    codes[order] = sign * magnitude
    return codes


def rearrange(hist):
    """Map every sample to the rank code of its bin (symmetric decreasing layout)."""
    return rank_codes(hist.counts)[hist.bin_of]


def rearranged_kurtosis(column, bins=DEFAULT_BINS):
    """Kurtosis of the standardised rank-code column.

    Returns the Gaussian value 3 when every sample lands in one bin.
    """
    codes = rearrange(build_histogram(column, bins))
    z, _, _, degenerate = standardize(codes)
    if degenerate:
        return GAUSSIAN_KURTOSIS
    return pearson_kurtosis(z)


def iqr(column):
    """Interquartile range with linear-interpolation quantiles."""
    x = _as_column(column)
    if x.size < 4:
        raise InvalidInputError(f"IQR needs at least 4 samples, got {x.size}")
    q25, q75 = np.percentile(x, [25.0, 75.0])
    return float(q75 - q25)


def feature_stats(column, bins=DEFAULT_BINS):
    """All statistics for one column.

    The IQR is measured on the standardised column, so that a Gaussian
    feature gives roughly 1.349 regardless of its units.
    """
    x = _as_column(column)
    z, mean, std, degenerate = standardize(x)
    if degenerate:
        return FeatureStats(mean=mean, std=std, kurtosis_raw=GAUSSIAN_KURTOSIS,
                            kurtosis_rearranged=GAUSSIAN_KURTOSIS, iqr=0.0,
                            degenerate=True)
    codes = rearrange(build_histogram(x, bins))
    zc, _, _, codes_degenerate = standardize(codes)
    k_rearr = GAUSSIAN_KURTOSIS if codes_degenerate else pearson_kurtosis(zc)
    return FeatureStats(mean=mean, std=std, kurtosis_raw=pearson_kurtosis(z),
                        kurtosis_rearranged=k_rearr, iqr=iqr(z), degenerate=False)


def compute_feature_stats(X, bins=DEFAULT_BINS):
    """Column-wise :func:`feature_stats` for an ``n x d`` matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise InvalidInputError(f"expected a non-empty n x d matrix, got shape {X.shape}")
    if X.shape[0] < 4:
        raise InvalidInputError(f"need at least 4 rows, got {X.shape[0]}")
    return [feature_stats(X[:, j], bins) for j in range(X.shape[1])]


def apply_standardization(X, stats):
    """Standardise ``X`` column-wise with stored training statistics."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(stats):
        raise InvalidInputError(
            f"expected {len(stats)} feature columns, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("input contains NaN or Inf")
    mean = np.array([s.mean for s in stats])
    scale = np.array([s.scale for s in stats])
    return (X - mean) / scale
