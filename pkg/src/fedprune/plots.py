"""Static figures from ledger files.

Every PNG embeds the exact table it was drawn from in a ``Source-Table``
text chunk, so plotted values can be checked against the ledgers.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import LedgerParseError  # noqa: E402
from .metrics import MetricsLedger  # noqa: E402

SOURCE_KEY = "Source-Table"


def _table(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _save(fig, path: Path, rows: list[dict]) -> Path:
    fig.savefig(path, format="png", metadata={SOURCE_KEY: _table(rows)})
    plt.close(fig)
    return path


def read_embedded_table(path) -> list[dict]:
    from PIL import Image

    with Image.open(path) as img:
        text = img.text[SOURCE_KEY]
    return list(csv.DictReader(io.StringIO(text)))


def _series(ledgers: dict, column: str) -> list[dict]:
    return [{"series": label, "round": r.round, column: getattr(r, column)}
            for label, led in ledgers.items() for r in led.records]


def _line_plot(ledgers, column, ylabel, title, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, led in ledgers.items():
        ax.plot(led.column("round"), led.column(column), label=label)
    ax.set_xlabel("round")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path, _series(ledgers, column))


def emit_plots(ledger_paths, out_dir, sweep_rows: list[dict] | None = None) -> list[Path]:
    """Cumulative cost, parameter count and accuracy curves (one series per
    ledger), plus a k-sweep Pareto chart when ``sweep_rows`` is given."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ledgers = {}
    for p in ledger_paths:
        p = Path(p)
        led = MetricsLedger.read(p)
        if not led.records:
            raise LedgerParseError(f"{p}: ledger has zero rounds; nothing to plot")
        label = p.stem.removesuffix("_ledger")
        while label in ledgers:
            label += "'"
        ledgers[label] = led
    if not ledgers:
        raise LedgerParseError("no ledgers given")
    paths = [
        _line_plot(ledgers, "cum_bytes", "cumulative bytes", "Communication cost", out / "comm_cost.png"),
        _line_plot(ledgers, "params", "parameters", "Model size", out / "params.png"),
        _line_plot(ledgers, "test_acc", "test accuracy", "Accuracy", out / "accuracy.png"),
    ]
    if sweep_rows:
        paths.append(pareto_plot(sweep_rows, out / "k_pareto.png"))
    return paths


def pareto_plot(rows: list[dict], path) -> Path:
    rows = [{"k": float(r["k"]), "final_params": int(r["final_params"]), "final_acc": float(r["final_acc"])}
            for r in rows]
    fig, ax = plt.subplots(figsize=(5, 4))
    labels = [f"{r['k']:g}" for r in rows]
    ax.bar(labels, [r["final_params"] / 1e3 for r in rows], color="tab:blue")
    ax.set_xlabel("k")
    ax.set_ylabel("parameters (thousands)", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(labels, [r["final_acc"] for r in rows], color="tab:red", marker="o")
    ax2.set_ylabel("test accuracy", color="tab:red")
    ax.set_title("Pruning aggressiveness vs accuracy")
    fig.tight_layout()
    return _save(fig, Path(path), rows)
