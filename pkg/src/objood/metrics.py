"""FPR at a fixed ID true-positive rate, AUROC, and report formatting.

Scores are uncertainties: higher means more OOD. ID is the positive class
and a sample counts as ID when its score is ``<= gamma``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .scoring import calibrate_gamma

__all__ = ["auroc", "fpr_at_tpr", "EvalReport", "summarize", "format_table", "Summary"]


def _scores(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} scores are empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} scores must be finite")
    return arr


def auroc(id_uncertainties, ood_uncertainties) -> float:
    """P(random OOD score > random ID score), ties counted one half.

    Computed from midranks of the pooled scores (Mann-Whitney U).
    """
    id_s = _scores(id_uncertainties, "ID")
    ood_s = _scores(ood_uncertainties, "OOD")
    n_id, n_ood = id_s.size, ood_s.size
    ranks = rankdata(np.concatenate([ood_s, id_s]), method="average")
    # midranks are half-integers; doubling keeps the U statistic exact in integers
    twice_u = int(round(2 * ranks[:n_ood].sum())) - n_ood * (n_ood + 1)
    return twice_u / (2 * n_id * n_ood)


def fpr_at_tpr(id_uncertainties, ood_uncertainties, q: float = 0.95) -> float:
    """Fraction of OOD scores accepted as ID at the threshold keeping ``q`` of ID."""
    id_s = _scores(id_uncertainties, "ID")
    ood_s = _scores(ood_uncertainties, "OOD")
    gamma = calibrate_gamma(id_s, q)
    return int(np.count_nonzero(ood_s <= gamma)) / ood_s.size


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    min: float
    max: float

    @classmethod
    def of(cls, values: np.ndarray) -> "Summary":
        return cls(float(values.mean()), float(values.std()), float(values.min()), float(values.max()))


@dataclass(frozen=True)
class EvalReport:
    fpr_at_q: float
    auroc: float
    q: float
    n_id: int
    n_ood: int
    gamma_used: float
    id_summary: Summary
    ood_summary: Summary
    name: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        d = dict(d)
        d["id_summary"] = Summary(**d["id_summary"])
        d["ood_summary"] = Summary(**d["ood_summary"])
        return cls(**d)


def summarize(id_uncertainties, ood_uncertainties, q: float = 0.95, name: str = "") -> EvalReport:
    id_s = _scores(id_uncertainties, "ID")
    ood_s = _scores(ood_uncertainties, "OOD")
    return EvalReport(
        fpr_at_q=fpr_at_tpr(id_s, ood_s, q),
        auroc=auroc(id_s, ood_s),
        q=q,
        n_id=id_s.size,
        n_ood=ood_s.size,
        gamma_used=calibrate_gamma(id_s, q),
        id_summary=Summary.of(id_s),
        ood_summary=Summary.of(ood_s),
        name=name,
    )


def format_table(reports: Sequence[EvalReport], row_header: str = "Method") -> str:
    """Aligned text table, FPR and AUROC in percent with two decimals."""
    if not reports:
        return ""
    fpr_col = f"FPR{round(reports[0].q * 100)} ↓"
    header = [row_header, fpr_col, "AUROC ↑", "N_id", "N_ood"]
    rows = [
        [r.name or "-", f"{100 * r.fpr_at_q:.2f}", f"{100 * r.auroc:.2f}", str(r.n_id), str(r.n_ood)]
        for r in reports
    ]
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    rule = "-" * len(fmt(header))
    return "\n".join([fmt(header), rule, *map(fmt, rows)])
