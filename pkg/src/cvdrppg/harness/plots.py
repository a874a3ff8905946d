"""Plot-data export.  Rendering is left to whatever tool reads the CSVs."""
from __future__ import annotations

import csv
import io
from pathlib import Path

from .train import LOSS_COLUMNS, parse_eval_csv

SCATTER_COLUMNS = ("hr_gt", "hr_pred")


def scatter_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCATTER_COLUMNS)
    for r in rows:
        w.writerow([repr(float(r["hr_gt"])), repr(float(r["hr_pred"]))])
    return buf.getvalue()


def parse_scatter_csv(text: str) -> list[tuple[float, float]]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != SCATTER_COLUMNS:
        raise ValueError(f"unexpected scatter columns {header}")
    return [(float(a), float(b)) for a, b in reader]


def parse_loss_csv(text: str) -> list[dict]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != LOSS_COLUMNS:
        raise ValueError(f"unexpected loss columns {header}")
    out = []
    for row in reader:
        rec = {"step": int(row[0])}
        rec.update({k: float(v) for k, v in zip(LOSS_COLUMNS[1:], row[1:])})
        out.append(rec)
    steps = [r["step"] for r in out]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("loss CSV step column is not strictly increasing")
    return out


def export_plots(out_dir, run_dir=None, eval_csv_path=None) -> list[Path]:
    """Write ``scatter.csv`` and/or ``loss.csv`` into ``out_dir``.

    The scatter comes from ``eval_csv_path`` or, failing that, the run's
    ``val.csv``; the loss curve from the run's ``loss.csv``.
    """
    if run_dir is None and eval_csv_path is None:
        raise ValueError("export-plots needs a run directory or an eval CSV")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    src = Path(eval_csv_path) if eval_csv_path else Path(run_dir) / "val.csv"
    if src.exists():
        rows = parse_eval_csv(src.read_text())
        (out_dir / "scatter.csv").write_text(scatter_csv(rows))
        written.append(out_dir / "scatter.csv")
    elif eval_csv_path:
        raise FileNotFoundError(src)
    if run_dir is not None:
        loss = Path(run_dir) / "loss.csv"
        if not loss.exists():
            raise FileNotFoundError(loss)
        parse_loss_csv(loss.read_text())  # validates schema and step order
        (out_dir / "loss.csv").write_text(loss.read_text())
        written.append(out_dir / "loss.csv")
    return written
