"""CSV report writers and optional SVG rendering."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

from . import __version__
from .dataio import Label, format_float
from .errors import DataFormatError
from .metrics import DetCurve, DetectionSummary, VulnerabilityRow
from .verify import DescriptiveStats


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def header_lines(subcommand: str, seed: int, config: dict) -> list[str]:
    return [f"# dgdetect {__version__} subcommand={subcommand} seed={seed} "
            f"config={config_digest(config)}"]


def _fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def _csv_text(comments, header, rows) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(c + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, comments, header, rows) -> None:
    Path(path).write_text(_csv_text(comments, header, rows), encoding="utf-8")


def read_csv_rows(path, header: list[str]) -> list[list[str]]:
    """Rows of a headered CSV written by this package (comment lines skipped)."""
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows or [c.strip() for c in rows[0]] != header:
        raise DataFormatError(f"expected CSV header {','.join(header)}", path)
    for n, r in enumerate(rows[1:], 2):
        if len(r) != len(header):
            raise DataFormatError(f"expected {len(header)} fields", path, n)
    return rows[1:]


SCORE_HEADER = ["reference_id", "probe_id", "score"]
SCORESET_HEADER = ["label", "score"]


def read_detection_scores(path) -> list[tuple[str, str, float]]:
    out = []
    for n, (ref, probe, s) in enumerate(read_csv_rows(path, SCORE_HEADER), 2):
        try:
            out.append((ref, probe, float(s)))
        except ValueError:
            raise DataFormatError(f"non-numeric score {s!r}", path, n) from None
    return out


def read_score_set(path) -> dict[Label, list[float]]:
    out = {lab: [] for lab in Label}
    for n, (lab, s) in enumerate(read_csv_rows(path, SCORESET_HEADER), 2):
        try:
            out[Label(lab)].append(float(s))
        except ValueError:
            raise DataFormatError(f"bad row {lab},{s}", path, n) from None
    return out


def detection_rows(name: str, configuration: str, s: DetectionSummary):
    return [name, configuration, s.d_eer, s.bpcer10, s.bpcer20, s.n_attack, s.n_bonafide]


DETECTION_HEADER = ["dataset", "configuration", "d_eer", "bpcer10", "bpcer20",
                    "n_attack", "n_bonafide"]
VULN_HEADER = ["dataset", "target_fmr", "threshold", "achieved_fmr", "fnmr", "iapmr"]
STATS_HEADER = ["dataset", "category", "n", "mean", "std_dev", "skewness", "excess_kurtosis"]
LONG_HEADER = ["dataset", "configuration", "metric", "operating_point", "value"]
DET_HEADER = ["threshold", "apcer", "bpcer"]


def long_rows(name: str, configuration: str, det: DetectionSummary | None,
              vuln: list[VulnerabilityRow] | None) -> list[list]:
    rows = []
    if det is not None:
        rows += [[name, configuration, "D-EER", "APCER=BPCER", det.d_eer],
                 [name, configuration, "BPCER", "APCER=10%", det.bpcer10],
                 [name, configuration, "BPCER", "APCER=5%", det.bpcer20]]
    for v in vuln or []:
        op = f"FMR={v.target_fmr:.2%}"
        rows += [[name, configuration, "achieved FMR", op, v.achieved_fmr],
                 [name, configuration, "FNMR", op, v.fnmr],
                 [name, configuration, "IAPMR", op, v.iapmr]]
    return rows


def stats_rows(name: str, stats: dict[str, DescriptiveStats]):
    return [[name, cat, s.n, s.mean, s.std, s.skewness, s.excess_kurtosis]
            for cat, s in stats.items()]


def det_rows(curve: DetCurve):
    return [[float(t), float(a), float(b)] for t, a, b in curve.points()]


def render_det_svg(path, curves: dict[str, DetCurve]) -> None:
    """Log-log DET plot; the data files stay the reference."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "dgdetect"
    fig, ax = plt.subplots(figsize=(5, 5))
    lowest = 1.0
    for name, c in curves.items():
        mask = (c.error1 > 0) & (c.error2 > 0)
        ax.step(c.error1[mask] * 100, c.error2[mask] * 100, where="post", label=name)
        if mask.any():
            lowest = min(lowest, c.error1[mask].min() * 100, c.error2[mask].min() * 100)
    ax.set_xscale("log")
    ax.set_yscale("log")
    # explicit limits keep the log axes valid when a curve never leaves zero
    ax.set_xlim(lowest / 2, 100)
    ax.set_ylim(lowest / 2, 100)
    ax.set_xlabel("APCER (%)")
    ax.set_ylabel("BPCER (%)")
    ax.grid(True, which="both", alpha=0.3)
    if curves:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
