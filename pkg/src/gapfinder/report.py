"""Gap reports: top-k tables, the verdict, and the on-disk attack run layout.

An attack run directory holds::

    iter_0000.ppm ... iter_NNNN.ppm   every image of the trace (8-bit views)
    worst.ppm                         the worst-case image
    trace.csv                         index,target_prob,original_class_prob,loss_to_target
    report.txt                        text rendering of the report
    report.json                       the report fields, for ``gapfinder report``
"""

from __future__ import annotations

import csv
import io
import json
import shutil
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import pnm
from .adversarial_search import SearchTrace, select_worst, worst_case_search
from .cnn_model import load_weights
from .invariance_spec import parse_change_spec

GAP_FOUND = "gap_found"
NO_GAP = "no_gap"
DEFAULT_DROP_THRESHOLD = 0.5
DEFAULT_TOP_K = 10

TRACE_COLUMNS = ("index", "target_prob", "original_class_prob", "loss_to_target")
CSV_COLUMNS = (
    "section", "rank", "class_name", "probability",
    "worst_iteration_index", "original_class_prob_drop", "verdict", "stop_reason",
)


@dataclass
class GapReport:
    spec_description: str
    initial_topk: list[tuple[str, float]]
    worst_topk: list[tuple[str, float]]
    worst_iteration_index: int
    original_class_prob_drop: float
    verdict: str
    stop_reason: str
    elapsed_seconds: float = 0.0
    original_class: str = ""
    target_class: str = ""

    def to_json(self) -> dict:
        data = asdict(self)
        del data["elapsed_seconds"]
        return data

    @classmethod
    def from_json(cls, data: dict) -> "GapReport":
        data = dict(data)
        data["initial_topk"] = [(n, float(p)) for n, p in data["initial_topk"]]
        data["worst_topk"] = [(n, float(p)) for n, p in data["worst_topk"]]
        return cls(**data)


def top_k(probs, class_names, k: int) -> list[tuple[str, float]]:
    """Highest ``k`` probabilities, ties broken by ascending class index."""
    probs = np.asarray(probs)
    if len(class_names) != len(probs):
        raise ValueError(f"{len(class_names)} class names for {len(probs)} probabilities")
    if not 1 <= k <= len(probs):
        raise ValueError(f"k must lie in [1, {len(probs)}], got {k}")
    order = sorted(range(len(probs)), key=lambda i: (-float(probs[i]), i))
    return [(class_names[i], float(probs[i])) for i in order[:k]]


def gap_verdict(initial_probs, worst_probs, original_class: int, drop_threshold: float = DEFAULT_DROP_THRESHOLD) -> str:
    drop = float(initial_probs[original_class]) - float(worst_probs[original_class])
    return GAP_FOUND if drop > drop_threshold else NO_GAP


def build_report(trace: SearchTrace, class_names, description: str,
                 drop_threshold: float = DEFAULT_DROP_THRESHOLD, k: int = DEFAULT_TOP_K,
                 elapsed: float = 0.0) -> GapReport:
    k = min(k, len(class_names))
    first = trace.iterations[0]
    worst = select_worst(trace)
    orig = trace.original_class
    return GapReport(
        spec_description=description,
        initial_topk=top_k(first.probs, class_names, k),
        worst_topk=top_k(worst.probs, class_names, k),
        worst_iteration_index=worst.index,
        original_class_prob_drop=float(first.probs[orig]) - float(worst.probs[orig]),
        verdict=gap_verdict(first.probs, worst.probs, orig, drop_threshold),
        stop_reason=trace.stop_reason,
        elapsed_seconds=elapsed,
        original_class=class_names[orig],
        target_class=class_names[trace.target_class],
    )


# ---------------------------------------------------------------- rendering


def _f6(x: float) -> str:
    return f"{x:.6f}"


def render_report(report: GapReport, format: str = "text") -> bytes:
    if format == "text":
        return _render_text(report).encode("utf-8")
    if format == "csv":
        return _render_csv(report).encode("utf-8")
    raise ValueError(f"unknown format {format!r}, expected 'text' or 'csv'")


def _render_text(r: GapReport) -> str:
    name_w = max([len(n) for n, _ in r.initial_topk + r.worst_topk] + [10])
    col = name_w + 11
    lines = [
        f"Change: {r.spec_description}",
        f"Original class: {r.original_class}    Target class: {r.target_class}",
        "",
        f"{'Initial image':<{col}}  {f'Worst image (iteration {r.worst_iteration_index})':<{col}}",
    ]
    for (n0, p0), (n1, p1) in zip(r.initial_topk, r.worst_topk):
        lines.append(f"{n0:<{name_w}} {_f6(p0):>10}  {n1:<{name_w}} {_f6(p1):>10}")
    lines += [
        "",
        f"Stop reason: {r.stop_reason}",
        f"Original-class probability drop: {_f6(r.original_class_prob_drop)}",
        "VERDICT: GAP FOUND" if r.verdict == GAP_FOUND else "VERDICT: NO GAP",
    ]
    return "\n".join(lines) + "\n"


def _render_csv(r: GapReport) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for section, table in (("initial", r.initial_topk), ("worst", r.worst_topk)):
        for rank, (name, p) in enumerate(table, 1):
            w.writerow([section, rank, name, _f6(p), "", "", "", ""])
    w.writerow(["summary", "", "", "", r.worst_iteration_index, _f6(r.original_class_prob_drop),
                r.verdict, r.stop_reason])
    return buf.getvalue()


def parse_report_csv(text: str) -> dict:
    """Inverse of the csv rendering (numbers come back as floats/ints)."""
    rows = list(csv.DictReader(io.StringIO(text, newline="")))
    out: dict = {"initial": [], "worst": []}
    for row in rows:
        if row["section"] == "summary":
            out["worst_iteration_index"] = int(row["worst_iteration_index"])
            out["original_class_prob_drop"] = float(row["original_class_prob_drop"])
            out["verdict"] = row["verdict"]
            out["stop_reason"] = row["stop_reason"]
        else:
            out[row["section"]].append((int(row["rank"]), row["class_name"], float(row["probability"])))
    return out


def trace_csv(trace: SearchTrace) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in trace.iterations:
        w.writerow([r.index, _f6(r.target_prob), _f6(r.original_class_prob), _f6(r.loss_to_target)])
    return buf.getvalue()


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {"index": int(r["index"]), **{c: float(r[c]) for c in TRACE_COLUMNS[1:]}}
            for r in csv.DictReader(fh)
        ]


# ---------------------------------------------------------------- end to end


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(text.encode("utf-8"))
    tmp.replace(path)


def write_run(out_dir, trace: SearchTrace, report: GapReport) -> None:
    out = Path(out_dir)
    width = max(4, len(str(len(trace) - 1)))
    for r in trace.iterations:
        pnm.write_ppm(out / f"iter_{r.index:0{width}d}.ppm", r.image)
    pnm.write_ppm(out / "worst.ppm", select_worst(trace).image)
    _write_text(out / "trace.csv", trace_csv(trace))
    _write_text(out / "report.txt", render_report(report, "text").decode("utf-8"))
    _write_text(out / "report.json", json.dumps(report.to_json(), indent=2) + "\n")


def run_attack(model_path, image_path, spec_path, out_dir,
               drop_threshold: float = DEFAULT_DROP_THRESHOLD, k: int = DEFAULT_TOP_K) -> GapReport:
    """Load inputs, search, and write the run directory.

    On any failure the files this call created are removed before re-raising.
    """
    out = Path(out_dir)
    created_dir = not out.exists()
    before = set(out.iterdir()) if out.exists() else set()
    try:
        model = load_weights(model_path)
        image = pnm.read_ppm(image_path)
        spec = parse_change_spec(spec_path)
        start = time.perf_counter()
        trace = worst_case_search(model, image, spec)
        elapsed = time.perf_counter() - start
        report = build_report(trace, model.class_names, spec.description, drop_threshold, k, elapsed)
        out.mkdir(parents=True, exist_ok=True)
        write_run(out, trace, report)
        return report
    except BaseException:
        if created_dir:
            shutil.rmtree(out, ignore_errors=True)
        elif out.exists():
            for p in set(out.iterdir()) - before:
                if p.is_dir():
                    shutil.rmtree(p, ignore_errors=True)
                else:
                    p.unlink(missing_ok=True)
        raise


def load_run(run_dir) -> GapReport:
    path = Path(run_dir) / "report.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; is {run_dir} an attack output directory?")
    return GapReport.from_json(json.loads(path.read_text(encoding="utf-8")))
