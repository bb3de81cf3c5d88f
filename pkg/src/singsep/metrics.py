"""SDR / SIR from a least-squares decomposition of an estimate.

The estimate ``e`` is projected onto delayed copies (delays 0..L-1, truncated
to the estimate length) of the target reference, then of all references:

    s_target = P_target e
    e_interf = P_all e - s_target
    e_artif  = e - P_all e

Projections are solved through the Gram system built from correlations,
so no delay matrix is ever materialized.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.signal import fftconvolve


DB_CAP = 200.0


@dataclass
class BssDecomposition:
    s_target: np.ndarray
    e_interf: np.ndarray
    e_artif: np.ndarray


def _xcorr(a, b, lags):
    """sum_m a[m + k] * b[m] for k = 0..lags-1."""
    full = fftconvolve(a, b[::-1])
    n = len(b)
    return full[n - 1:n - 1 + lags]


def _tail_sums(a, b, lags):
    """T[k, s] = sum_{q=1..s} a[N-q] * b[N-q-k] for k, s in 0..lags-1."""
    n = len(a)
    q = np.arange(1, lags)
    k = np.arange(lags)[:, None]
    idx = n - q[None, :] - k
    prod = a[n - q][None, :] * np.where(idx >= 0, b[np.clip(idx, 0, None)], 0.0)
    out = np.zeros((lags, lags))
    out[:, 1:] = np.cumsum(prod, axis=1)
    return out


def _gram_block(a, b, lags):
    """G[j, k] = <shift(a, j), shift(b, k)> with shifts truncated to len(a)."""
    xab, xba = _xcorr(a, b, lags), _xcorr(b, a, lags)
    tab, tba = _tail_sums(a, b, lags), _tail_sums(b, a, lags)
    j = np.arange(lags)[:, None]
    k = np.arange(lags)[None, :]
    d = k - j
    upper = xab[np.abs(d)] - tab[np.abs(d), np.minimum(j, k)]  # k >= j
    lower = xba[np.abs(d)] - tba[np.abs(d), np.minimum(j, k)]  # j > k
    return np.where(d >= 0, upper, lower)


def _project(estimate, refs, lags):
    n = len(estimate)
    grams = [[_gram_block(ri, rj, lags) for rj in refs] for ri in refs]
    gram = np.block(grams)
    rhs = np.concatenate([_xcorr(estimate, r, lags) for r in refs])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            coef = linalg.solve(gram, rhs, assume_a="pos")
    except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
        warnings.warn("singular Gram matrix, adding 1e-10 diagonal regularization", RuntimeWarning)
        coef = linalg.solve(gram + 1e-10 * np.eye(len(gram)), rhs)
    out = np.zeros(n)
    for i, r in enumerate(refs):
        out += fftconvolve(r, coef[i * lags:(i + 1) * lags])[:n]
    return out


def decompose(estimate, references, target=0, filter_len=512):
    """Split ``estimate`` into target, interference and artifact parts.

    ``references`` is a list of equal-length source signals; ``target``
    indexes the one the estimate is meant to recover.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    refs = [np.asarray(r, dtype=np.float64) for r in references]
    if filter_len < 1:
        raise ValueError(f"filter_len must be >= 1, got {filter_len}")
    if any(len(r) != len(estimate) for r in refs):
        raise ValueError("estimate and references must have equal lengths")
    if len(estimate) < filter_len:
        raise ValueError(f"signal of {len(estimate)} samples is shorter than filter_len={filter_len}")
    s_target = _project(estimate, [refs[target]], filter_len)
    p_all = _project(estimate, refs, filter_len)
    return BssDecomposition(s_target, p_all - s_target, estimate - p_all)


def _ratio_db(num, den):
    """(dB value, capped flag)."""
    if num <= 0:
        return -DB_CAP, True
    if den <= 0:
        return DB_CAP, True
    db = 10.0 * np.log10(num / den)
    return float(np.clip(db, -DB_CAP, DB_CAP)), bool(abs(db) >= DB_CAP)


def sdr_sir(dec, with_flags=False):
    """(SDR, SIR) in dB, capped to +-200.

    With ``with_flags=True`` a third element ``(sdr_capped, sir_capped)``
    marks values that hit the cap (zero-energy numerator or denominator).
    """
    target = float(np.dot(dec.s_target, dec.s_target))
    interf = float(np.dot(dec.e_interf, dec.e_interf))
    distortion = dec.e_interf + dec.e_artif
    sdr, sdr_cap = _ratio_db(target, float(np.dot(distortion, distortion)))
    sir, sir_cap = _ratio_db(target, interf)
    return (sdr, sir, (sdr_cap, sir_cap)) if with_flags else (sdr, sir)


def bss_eval(estimate, references, target=0, filter_len=512):
    return sdr_sir(decompose(estimate, references, target, filter_len))


@dataclass
class MetricReport:
    ids: list
    sdr: list
    sir: list
    median_sdr: float = field(init=False)
    median_sir: float = field(init=False)

    def __post_init__(self):
        self.median_sdr = lower_median(self.sdr)
        self.median_sir = lower_median(self.sir)

    def rows(self):
        return list(zip(self.ids, self.sdr, self.sir))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["track", "sdr", "sir"])
            for row in self.rows():
                w.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}"])
            w.writerow(["median", f"{self.median_sdr:.6f}", f"{self.median_sir:.6f}"])

    def format(self):
        width = max([len(str(i)) for i in self.ids] + [6])
        lines = [f"{'track':<{width}}  {'SDR':>9}  {'SIR':>9}"]
        lines += [f"{str(i):<{width}}  {s:9.3f}  {r:9.3f}" for i, s, r in self.rows()]
        lines.append(f"{'median':<{width}}  {self.median_sdr:9.3f}  {self.median_sir:9.3f}")
        return "\n".join(lines)


def lower_median(values):
    """Median of the finite values; even counts take the lower middle element."""
    vals = sorted(float(np.clip(v, -DB_CAP, DB_CAP)) for v in values if not np.isnan(v))
    if not vals:
        raise ValueError("median of an empty collection")
    return vals[(len(vals) - 1) // 2]


def median_report(items):
    """``items`` is a list of (id, sdr, sir) tuples."""
    items = list(items)
    if not items:
        raise ValueError("cannot build a report from zero items")
    ids, sdr, sir = zip(*items)
    return MetricReport(list(ids), list(sdr), list(sir))
