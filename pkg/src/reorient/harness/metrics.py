"""Metrics and trace files: versioned JSON-lines and CSV.

Every metrics record embeds the seed and the config hash so a run can
be tied back to the exact configuration; identical config and seed
reproduce the files byte for byte. Traces carry one record per policy
step and can be re-rendered to CSV for plotting.
"""

import csv
import json
from dataclasses import dataclass, field

METRICS_VERSION = 1
TRACE_VERSION = 1


@dataclass
class MetricsRecord:
    kind: str
    seed: int
    config_hash: str
    values: dict
    version: int = METRICS_VERSION

    def to_json(self):
        return json.dumps({
            "kind": self.kind, "seed": self.seed,
            "config_hash": self.config_hash, "version": self.version,
            "values": self.values,
        }, sort_keys=True)


def write_metrics(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_metrics(path):
    records = []
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            records.append(MetricsRecord(
                kind=d["kind"], seed=d["seed"],
                config_hash=d["config_hash"], values=d["values"],
                version=d["version"]))
    return records


def write_trace(path, records):
    """JSON-lines trace; the first line is a version header."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"trace_version": TRACE_VERSION}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("trace_version") != TRACE_VERSION:
            raise ValueError("unsupported trace version")
        return [json.loads(line) for line in fh]


def _flatten(rec):
    flat = {}
    for key, val in rec.items():
        if isinstance(val, list):
            for j, x in enumerate(val):
                flat["%s%d" % (key, j)] = x
        else:
            flat[key] = val
    return flat


def trace_to_csv(trace_path, csv_path):
    """Re-render a JSON-lines trace to a flat CSV (lists split per column)."""
    records = [_flatten(rec) for rec in read_trace(trace_path)]
    if not records:
        raise ValueError("trace is empty")
    cols = sorted({k for rec in records for k in rec})
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(records)
    return len(records)


def write_rows_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})
