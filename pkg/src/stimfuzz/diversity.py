"""Diversity scoring of discovered violation sets.

Two complementary scores: geometric diversity (log-determinant of the Gram
matrix of input feature vectors; higher means the violating inputs span a
broader region of feature space) and violation-space diversity (the norm of
per-column standard deviations over per-electrode violation-degree and
amplitude rows; higher means violations vary across the array instead of
clustering).  Because both are sample-size sensitive, the summary draws
five random subsets of 200 violations and reports the means; smaller sets
are scored once in full and flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureExtractor
from .fuzzer import ViolationSet
from .safety import ViolationReport

# eigenvalues below this times the largest are treated as exact zeros
_GRAM_RTOL = 1e-12


def geometric_diversity(features: np.ndarray) -> float:
    """Log-determinant of the Gram matrix of feature rows.

    Returns -inf when the Gram matrix is singular (e.g. any repeated row, or
    more rows than feature dimensions).
    """
    rows = np.asarray(features, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.size == 0:
        raise ValueError("need at least one feature row")
    if not np.isfinite(rows).all():
        raise ValueError("feature rows contain non-finite values")
    gram = rows @ rows.T
    eigvals = np.linalg.eigvalsh(gram)
    largest = float(eigvals[-1])
    if largest <= 0:
        return float("-inf")
    tol = _GRAM_RTOL * largest
    if (eigvals <= tol).any():
        return float("-inf")
    return float(np.log(eigvals).sum())


def violation_degree(proportion: float) -> float:
    """Severity above the safety boundary: max(0, proportion - 1)."""
    if proportion < 0:
        raise ValueError("violation proportions are non-negative")
    return max(0.0, proportion - 1.0)


def violation_space_row(report: ViolationReport, pattern) -> np.ndarray:
    """Per-electrode (pulse-feasibility degree, charge degree, amplitude)
    triples concatenated over the array; length 3 x electrodes.

    Only the electrode-wise constraints contribute degrees; the aggregate
    constraints enter indirectly through the raw amplitudes.
    """
    amps = np.asarray(pattern.amplitude_ua, dtype=np.float64)
    if amps.shape[0] != report.electrode_count:
        raise ValueError("report and pattern disagree on electrode count")
    row = np.empty(3 * report.electrode_count, dtype=np.float64)
    row[0::3] = np.maximum(0.0, report.pi - 1.0)
    row[1::3] = np.maximum(0.0, report.cd - 1.0)
    row[2::3] = amps
    return row


def violation_space_std(rows: np.ndarray, normalize: bool = False) -> float:
    """Euclidean norm of per-column population standard deviations.

    Columns are used as-is by default (reproducible across runs); with
    normalize=True each column is min-max scaled to [0, 1] first, which
    stops the raw amplitudes from dominating the degree columns.
    """
    mat = np.asarray(rows, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.size == 0:
        raise ValueError("need at least one row")
    if normalize:
        lo = mat.min(axis=0)
        span = mat.max(axis=0) - lo
        span[span == 0] = 1.0
        mat = (mat - lo) / span
    sigma = mat.std(axis=0)  # population std (ddof=0)
    sigma[mat.max(axis=0) == mat.min(axis=0)] = 0.0  # constant columns score exactly 0
    return float(np.linalg.norm(sigma))


@dataclass
class DiversityScores:
    gd_logdet: float
    vd_std: float
    n: int                      # violations scored
    subset_size: int
    subsets: int
    full_set: bool              # True when n < subset_size forced a single full pass

    def to_json(self) -> dict:
        gd = self.gd_logdet
        return {"gd_logdet": gd if np.isfinite(gd) else "-inf",
                "vd_std": self.vd_std, "n": self.n, "subset_size": self.subset_size,
                "subsets": self.subsets, "full_set": self.full_set}

    @classmethod
    def from_json(cls, obj: dict) -> "DiversityScores":
        gd = obj["gd_logdet"]
        return cls(gd_logdet=float("-inf") if gd == "-inf" else float(gd),
                   vd_std=float(obj["vd_std"]), n=int(obj["n"]),
                   subset_size=int(obj["subset_size"]), subsets=int(obj["subsets"]),
                   full_set=bool(obj["full_set"]))


def diversity_summary(violations: ViolationSet, rng: np.random.Generator,
                      extractor: FeatureExtractor, subset_size: int = 200,
                      subsets: int = 5, normalize_vd: bool = False) -> DiversityScores:
    """Score a violation set with the subset protocol.

    With at least subset_size violations, draws `subsets` random subsets
    (each without replacement) and reports mean GD and VD; otherwise scores
    the full set once and flags it.
    """
    n = len(violations)
    if n == 0:
        raise ValueError("cannot score an empty violation set")
    feats = np.stack([np.asarray(extractor(f.image), dtype=np.float64)
                      for f in violations.findings])
    rows = np.stack([violation_space_row(f.report, f.pattern)
                     for f in violations.findings])
    if n >= subset_size:
        gds, vds = [], []
        for _ in range(subsets):
            idx = rng.choice(n, size=subset_size, replace=False)
            gds.append(geometric_diversity(feats[idx]))
            vds.append(violation_space_std(rows[idx], normalize=normalize_vd))
        return DiversityScores(gd_logdet=float(np.mean(gds)), vd_std=float(np.mean(vds)),
                               n=n, subset_size=subset_size, subsets=subsets,
                               full_set=False)
    return DiversityScores(gd_logdet=geometric_diversity(feats),
                           vd_std=violation_space_std(rows, normalize=normalize_vd),
                           n=n, subset_size=subset_size, subsets=subsets, full_set=True)
