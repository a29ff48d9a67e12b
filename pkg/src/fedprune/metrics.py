"""Communication-cost accounting and the per-round metrics ledger."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import LedgerParseError

DEFAULT_WIDTH = 4  # float32 payloads


def round_bytes(params: int, clients: int, width: int = DEFAULT_WIDTH) -> int:
    """Bytes moved in one round: the model goes down to and comes back from each client."""
    if params < 0 or clients < 0 or width < 0:
        raise ValueError("params, clients and width must be nonnegative")
    return int(params) * int(width) * int(clients) * 2


@dataclass
class RoundRecord:
    round: int
    stage: str
    clients: int
    params_sent: int   # size of the broadcast model
    params: int        # size after the round (post-prune in stage 1)
    flops: int
    test_acc: float
    best_acc: float
    bytes_down: int
    bytes_up: int
    cum_bytes: int
    filters: str       # per-layer filter counts, "name=count;..."
    wall_seconds: float = 0.0


LEDGER_COLUMNS = [f.name for f in fields(RoundRecord)]
TIMING_COLUMNS = ("wall_seconds",)
_INT_COLS = {"round", "clients", "params_sent", "params", "flops", "bytes_down", "bytes_up", "cum_bytes"}
_FLOAT_COLS = {"test_acc", "best_acc", "wall_seconds"}


def format_filters(counts: dict) -> str:
    return ";".join(f"{k}={v}" for k, v in counts.items())


def parse_filters(text: str) -> dict:
    if not text:
        return {}
    return {k: int(v) for k, v in (item.split("=") for item in text.split(";"))}


@dataclass
class MetricsLedger:
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add_round(self, *, stage, clients, params_sent, params, flops, test_acc, filters,
                  width=DEFAULT_WIDTH, wall_seconds=0.0) -> RoundRecord:
        one_way = round_bytes(params_sent, clients, width) // 2
        prev_cum = self.records[-1].cum_bytes if self.records else 0
        prev_best = self.records[-1].best_acc if self.records else 0.0
        rec = RoundRecord(len(self.records) + 1, stage, int(clients), int(params_sent), int(params),
                          int(flops), float(test_acc), max(prev_best, float(test_acc)), one_way, one_way,
                          prev_cum + 2 * one_way, format_filters(filters), float(wall_seconds))
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)

    def column(self, name) -> list:
        return [getattr(r, name) for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.meta.items():
            buf.write(f"# {k}={v}\n")
        w = csv.DictWriter(buf, fieldnames=LEDGER_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.records:
            w.writerow(asdict(r))
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path

    @classmethod
    def read(cls, path) -> "MetricsLedger":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise LedgerParseError(f"{path}: {exc}") from exc
        return cls.parse(text, str(path))

    @classmethod
    def parse(cls, text: str, source: str = "<ledger>") -> "MetricsLedger":
        meta, body = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
            elif line.strip():
                body.append(line)
        if not body:
            raise LedgerParseError(f"{source}: missing header row")
        reader = csv.DictReader(body)
        if reader.fieldnames != LEDGER_COLUMNS:
            raise LedgerParseError(f"{source}: header {reader.fieldnames} does not match {LEDGER_COLUMNS}")
        records = []
        for i, row in enumerate(reader, start=1):
            try:
                if None in row or any(v is None for v in row.values()):
                    raise ValueError("wrong number of fields")
                vals = {k: int(v) if k in _INT_COLS else float(v) if k in _FLOAT_COLS else v
                        for k, v in row.items()}
            except ValueError as exc:
                raise LedgerParseError(f"{source}: row {i}: {exc}") from exc
            records.append(RoundRecord(**vals))
        return cls(records, meta)


def cumulative_cost(ledger: MetricsLedger) -> int:
    if not ledger.records:
        raise ValueError("cumulative cost of an empty ledger is undefined")
    return sum(r.bytes_up + r.bytes_down for r in ledger.records)
