"""Top-k exact-match evaluation and report rendering.

Exact match is byte-level on detokenized text: a fix that differs by one
space is not a match, because stylistic fidelity is part of what the toolkit
claims to repair.
"""

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

# Accuracy of the same architecture trained on the full-scale historical
# corpus (tens of thousands of samples, days of GPU time).  Shown in reports
# for orientation only; desk-scale runs are never expected to reach it.
FULL_SCALE_REFERENCE = {
    "model_c": {1: 16.29, 5: 20.94, 10: 23.37},
    "model_cc": {1: 19.59, 5: 27.73, 10: 31.51},
    "relative_improvement_pct": {1: 20.33, 5: 32.41, 10: 34.82},
}

DEFAULT_KS = (1, 5, 10)


def exact_match(prediction_text: str, gold_target_text: str) -> bool:
    return prediction_text == gold_target_text


def merge_duplicate_predictions(predictions: Sequence[str]) -> List[str]:
    """Collapse repeated texts, keeping the first (best-ranked) occurrence."""
    seen = set()
    out = []
    for p in predictions:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


@dataclass
class EvalReport:
    total: int
    ks: Tuple[int, ...]
    hits: Dict[int, int]
    per_project: Dict[str, Dict[int, int]]
    per_label: Dict[str, Dict[int, int]]
    project_totals: Dict[str, int]
    label_totals: Dict[str, int]
    config_fingerprint: str = ""
    config_summary: Dict[str, object] = field(default_factory=dict)

    def accuracy(self, k: int) -> float:
        if self.total == 0:
            return 0.0
        return 100.0 * self.hits[k] / self.total

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "ks": list(self.ks),
            "hits": {str(k): self.hits[k] for k in self.ks},
            "accuracy_pct": {str(k): round(self.accuracy(k), 2) for k in self.ks},
            "per_project": {
                p: {
                    "total": self.project_totals[p],
                    "hits": {str(k): v[k] for k in self.ks},
                }
                for p, v in sorted(self.per_project.items())
            },
            "per_label": {
                l: {
                    "total": self.label_totals[l],
                    "hits": {str(k): v[k] for k in self.ks},
                }
                for l, v in sorted(self.per_label.items())
            },
            "config_fingerprint": self.config_fingerprint,
            "config_summary": self.config_summary,
            "full_scale_reference": FULL_SCALE_REFERENCE,
        }


def topk_accuracy(
    predictions: Mapping[str, Sequence[str]],
    golds: Mapping[str, str],
    ks: Sequence[int] = DEFAULT_KS,
    projects: Optional[Mapping[str, str]] = None,
    labels: Optional[Mapping[str, str]] = None,
    config_fingerprint: str = "",
    config_summary: Optional[dict] = None,
    merge_duplicates: bool = False,
) -> EvalReport:
    """Score suggestion lists against gold targets.

    A sample hits at k when any suggestion ranked <= k byte-matches the gold
    text; samples with no suggestions miss at every k.
    """
    ks = tuple(sorted(ks))
    hits = {k: 0 for k in ks}
    per_project: Dict[str, Dict[int, int]] = {}
    per_label: Dict[str, Dict[int, int]] = {}
    project_totals: Dict[str, int] = {}
    label_totals: Dict[str, int] = {}
    for sample_id in sorted(golds):
        gold = golds[sample_id]
        preds = list(predictions.get(sample_id, ()))
        if merge_duplicates:
            preds = merge_duplicate_predictions(preds)
        if len(preds) > max(ks):
            raise ValueError(
                f"sample {sample_id} has {len(preds)} suggestions; expected <= {max(ks)}"
            )
        first_hit = None
        for rank, text in enumerate(preds, start=1):
            if exact_match(text, gold):
                first_hit = rank
                break
        project = (projects or {}).get(sample_id, "unknown")
        label = (labels or {}).get(sample_id, "unlabeled")
        project_totals[project] = project_totals.get(project, 0) + 1
        label_totals[label] = label_totals.get(label, 0) + 1
        pp = per_project.setdefault(project, {k: 0 for k in ks})
        pl = per_label.setdefault(label, {k: 0 for k in ks})
        for k in ks:
            if first_hit is not None and first_hit <= k:
                hits[k] += 1
                pp[k] += 1
                pl[k] += 1
    return EvalReport(
        total=len(golds),
        ks=ks,
        hits=hits,
        per_project=per_project,
        per_label=per_label,
        project_totals=project_totals,
        label_totals=label_totals,
        config_fingerprint=config_fingerprint,
        config_summary=config_summary or {},
    )


def compare_variants(report_cc: EvalReport, report_c: EvalReport) -> Dict[int, Optional[float]]:
    """Relative improvement of the comment-aware variant, per k, in percent;
    None where the code-only accuracy is zero (undefined)."""
    if report_cc.ks != report_c.ks:
        raise ValueError("reports cover different k values")
    out: Dict[int, Optional[float]] = {}
    for k in report_cc.ks:
        base = report_c.accuracy(k)
        if base == 0.0:
            out[k] = None
        else:
            out[k] = 100.0 * (report_cc.accuracy(k) - base) / base
    return out


def render_report(report: EvalReport, title: str = "exact-match accuracy") -> str:
    lines = [title, "=" * len(title), ""]
    lines.append(f"samples: {report.total}")
    header = "k      hits   accuracy"
    lines.append(header)
    for k in report.ks:
        lines.append(f"{k:<6} {report.hits[k]:<6} {report.accuracy(k):6.2f}%")
    if report.per_project:
        lines.append("")
        lines.append("per project (hits@" + "/".join(str(k) for k in report.ks) + "):")
        for p in sorted(report.per_project):
            v = report.per_project[p]
            counts = "/".join(str(v[k]) for k in report.ks)
            lines.append(f"  {p:<24} n={report.project_totals[p]:<5} {counts}")
    if any(l != "unlabeled" for l in report.per_label):
        lines.append("")
        lines.append("per taxonomy label:")
        for l in sorted(report.per_label):
            v = report.per_label[l]
            counts = "/".join(str(v[k]) for k in report.ks)
            lines.append(f"  {l:<24} n={report.label_totals[l]:<5} {counts}")
    lines.append("")
    lines.append("full-scale reference accuracies (orientation only, not asserted):")
    for name in ("model_c", "model_cc"):
        ref = FULL_SCALE_REFERENCE[name]
        vals = "  ".join(f"top-{k} {ref[k]:.2f}%" for k in sorted(ref))
        lines.append(f"  {name:<10} {vals}")
    rel = FULL_SCALE_REFERENCE["relative_improvement_pct"]
    lines.append(
        "  relative improvement of model_cc: "
        + "  ".join(f"top-{k} +{rel[k]:.2f}%" for k in sorted(rel))
    )
    if report.config_fingerprint:
        lines.append("")
        lines.append(f"config fingerprint: {report.config_fingerprint}")
        for key in sorted(report.config_summary):
            lines.append(f"  {key}: {report.config_summary[key]}")
    return "\n".join(lines) + "\n"


def report_csv_row(report: EvalReport, row_name: str) -> str:
    """One CSV line for ablation sweeps."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        [row_name, report.total]
        + [f"{report.accuracy(k):.2f}" for k in report.ks]
        + [report.config_fingerprint]
    )
    return buf.getvalue()
