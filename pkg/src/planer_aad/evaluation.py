"""ROC, AUC, standardized partial AUC and per-anomaly-type reports."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ANOMALY_TYPES

log = logging.getLogger(__name__)

SCORES_HEADER = ("clip_id", "score", "is_anomaly", "anomaly_type")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreRecord:
    clip_id: str
    score: float
    is_anomaly: bool
    anomaly_type: str = "none"

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise EvaluationError(f"{self.clip_id}: non-finite score {self.score}")


@dataclass
class EvalReport:
    model: str
    auc: float
    pauc: float
    p: float
    n_pos: int
    n_neg: int
    per_type: dict = field(default_factory=dict)  # type -> {"auc", "pauc", "n_pos"}
    roc: list = field(default_factory=list)  # (fpr, tpr, threshold)

    def to_dict(self):
        return {"model": self.model, "auc": self.auc, "pauc": self.pauc, "p": self.p,
                "per_type": self.per_type, "n_pos": self.n_pos, "n_neg": self.n_neg}

    @classmethod
    def from_dict(cls, d, roc=()):
        return cls(d["model"], d["auc"], d["pauc"], d["p"], d.get("n_pos", 0), d["n_neg"],
                   {k: dict(v) for k, v in d.get("per_type", {}).items()}, [tuple(r) for r in roc])


def _arrays(records):
    scores = np.array([r.score for r in records], dtype=np.float64)
    labels = np.array([bool(r.is_anomaly) for r in records])
    return scores, labels


def roc_from_arrays(scores, labels):
    """ROC vertices for 'positive iff score >= threshold'.

    One vertex per distinct score, in descending threshold order, preceded
    by (0, 0, +inf). Tied scores move the curve diagonally.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    roc = [(0.0, 0.0, math.inf)]
    roc += [(float(fp[i] / n_neg), float(tp[i] / n_pos), float(s[ends[i]])) for i in range(ends.size)]
    return roc


def compute_roc(records):
    return roc_from_arrays(*_arrays(records))


def _area(roc, max_fpr=1.0):
    area = 0.0
    for (x0, y0, _), (x1, y1, _) in zip(roc, roc[1:]):
        if x0 >= max_fpr:
            break
        if x1 > max_fpr:
            y1 = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0)
            x1 = max_fpr
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def auc_from_arrays(scores, labels):
    return float(_area(roc_from_arrays(scores, labels)))


def pauc_from_arrays(scores, labels, p=0.1):
    """Partial AUC over fpr in [0, p], standardized so chance -> 0.5, perfect -> 1."""
    if not 0.0 < p <= 1.0:
        raise EvaluationError("p must be in (0, 1]")
    a = _area(roc_from_arrays(scores, labels), p)
    a_min, a_max = p * p / 2.0, p
    return float(0.5 * (1.0 + (a - a_min) / (a_max - a_min)))


def compute_auc(records):
    return auc_from_arrays(*_arrays(records))


def compute_pauc(records, p=0.1):
    return pauc_from_arrays(*_arrays(records), p)


def per_type_report(records, p=0.1, model="") -> EvalReport:
    """Overall metrics plus, per anomaly type, metrics on that type's clips
    against every normal clip. Types with no anomalies are skipped."""
    records = list(records)
    scores, labels = _arrays(records)
    per_type = {}
    normals = [r for r in records if not r.is_anomaly]
    for kind in ANOMALY_TYPES[1:]:
        pos = [r for r in records if r.is_anomaly and r.anomaly_type == kind]
        if not pos:
            log.warning("no anomalies of type %s; omitted from per-type report", kind)
            continue
        sub = pos + normals
        per_type[kind] = {"auc": compute_auc(sub), "pauc": compute_pauc(sub, p), "n_pos": len(pos)}
    return EvalReport(model, auc_from_arrays(scores, labels), pauc_from_arrays(scores, labels, p), p,
                      int(labels.sum()), int((~labels).sum()), per_type, roc_from_arrays(scores, labels))


# -- files -------------------------------------------------------------------

def write_scores(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORES_HEADER)
        for r in records:
            w.writerow([r.clip_id, repr(float(r.score)), int(r.is_anomaly), r.anomaly_type])


def read_scores(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCORES_HEADER:
            raise EvaluationError(f"{path}: header must be {','.join(SCORES_HEADER)}")
        for row in reader:
            try:
                out.append(ScoreRecord(row["clip_id"], float(row["score"]), row["is_anomaly"] == "1",
                                       row["anomaly_type"]))
            except (TypeError, ValueError) as exc:
                raise EvaluationError(f"{path} line {reader.line_num}: {exc}") from None
    return out


def write_roc(path, roc):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, thr in roc:
            w.writerow([repr(float(fpr)), repr(float(tpr)), repr(float(thr))])


def read_roc(path):
    with open(path, newline="") as fh:
        return [(float(r["fpr"]), float(r["tpr"]), float(r["threshold"])) for r in csv.DictReader(fh)]


def load_report(directory) -> EvalReport:
    directory = Path(directory)
    d = json.loads((directory / "report.json").read_text())
    roc_path = directory / "roc.csv"
    return EvalReport.from_dict(d, read_roc(roc_path) if roc_path.exists() else ())


def _to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scaled = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    # frames run left to right, low mel bands at the bottom
    return np.flipud(np.round(scaled * 255.0).astype(np.uint8).T)


def write_gray_png(path, img):
    from PIL import Image

    Image.fromarray(_to_gray(img), mode="L").save(path)


def export_artifacts(report: EvalReport, out_dir, recon_examples=()):
    """Write ``roc.csv``, ``report.json`` and, per reconstruction example,
    ``<name>_input.png``, ``<name>_recon.png`` and ``<name>_error.png``
    (8-bit grayscale, min-max scaled per image). Examples are
    ``(input, reconstruction)`` or ``(name, input, reconstruction)``.
    Returns the written paths.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise EvaluationError(f"cannot create {out}: {exc}") from exc
    written = [out / "roc.csv", out / "report.json"]
    write_roc(written[0], report.roc)
    written[1].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    for i, ex in enumerate(recon_examples):
        name, x, y = ex if len(ex) == 3 else (f"example{i}", *ex)
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        for suffix, img in (("input", x), ("recon", y), ("error", np.abs(x - y))):
            path = out / f"{name}_{suffix}.png"
            write_gray_png(path, img)
            written.append(path)
    return written
