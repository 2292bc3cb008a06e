"""Attempt logs on disk.

Every executed grasp becomes one JSON line holding the aligned input window
(hex-encoded 16-bit heights in 0.1 mm units plus a bit-packed mask), the full
action, the outcome, and the lateral angles used (auxiliary regression
targets). Metrics are a plain CSV, one row per retrain boundary. Nothing in
these files depends on wall time, so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .heightmap import HEIGHT_UNIT_M
from .imaging import WINDOW_PX

METRICS_FIELDS = ("attempt", "rows", "stage", "success_rolling", "val_bce",
                  "mean_abs_b", "mean_abs_c", "temperature")


class DatasetError(ValueError):
    pass


def encode_window(values: np.ndarray, mask: np.ndarray) -> tuple[str, str]:
    counts = np.clip(np.round(np.where(mask, 0.0, values) / HEIGHT_UNIT_M),
                     0, 65535).astype(">u2")
    return counts.tobytes().hex(), np.packbits(mask.astype(np.uint8)).tobytes().hex()


def decode_window(win_hex: str, mask_hex: str, size: int = WINDOW_PX):
    counts = np.frombuffer(bytes.fromhex(win_hex), dtype=">u2")
    if counts.size != size * size:
        raise DatasetError("window payload has the wrong size")
    values = counts.reshape(size, size).astype(np.float32) * HEIGHT_UNIT_M
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(mask_hex), dtype=np.uint8))
    mask = bits[: size * size].reshape(size, size).astype(bool)
    values[mask] = np.nan
    return values, mask


def make_record(index: int, stage: int, strategy: str, action_dict: dict,
                outcome, values: np.ndarray, mask: np.ndarray) -> dict:
    win_hex, mask_hex = encode_window(values, mask)
    return {
        "i": index, "stage": stage, "strategy": strategy,
        **action_dict,
        "reward": outcome.reward, "q": round(outcome.quality, 6),
        "width": round(outcome.width, 6), "events": list(outcome.events),
        "window": win_hex, "mask": mask_hex,
    }


def append_records(path: str, records: list) -> None:
    with open(path, "a") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True))
            f.write("\n")


def read_records(path: str, limit: int | None = None) -> list:
    out = []
    if not os.path.exists(path):
        return out
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            out.append(json.loads(line))
            if limit is not None and len(out) >= limit:
                break
    return out


def truncate_records(path: str, rows: int) -> None:
    """Keep the first `rows` lines (resume discards rows past a checkpoint)."""
    records = read_records(path, limit=rows)
    if len(records) < rows:
        raise DatasetError(f"dataset has {len(records)} rows, need {rows}")
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True))
            f.write("\n")


def training_arrays(records: list):
    """Stack records into model inputs.

    Returns (x, primitives, rewards, aux) with x of shape (N, 2, win, win) and
    aux columns (b, c, width).
    """
    n = len(records)
    x = np.zeros((n, 2, WINDOW_PX, WINDOW_PX), dtype=np.float32)
    prim = np.zeros(n, dtype=np.int64)
    rew = np.zeros(n, dtype=np.float32)
    aux = np.zeros((n, 3), dtype=np.float64)
    for i, rec in enumerate(records):
        values, mask = decode_window(rec["window"], rec["mask"])
        x[i, 0] = np.where(mask, 0.0, values)
        x[i, 1] = mask
        prim[i] = rec["m"]
        rew[i] = rec["reward"]
        aux[i] = (rec["b"], rec["c"], rec["width"])
    return x, prim, rew, aux


def write_metrics(path: str, rows: list[dict]) -> None:
    new = not os.path.exists(path)
    with open(path, "a", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_FIELDS)
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_metrics(path: str) -> list[dict]:
    with open(path, newline="") as f:
        return [dict(row) for row in csv.DictReader(f)]
