"""Delimited outputs: per-client metrics, MSE CDFs, loss curves, divergence matrices."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .federation import RoundReport, final_metrics


def read_reports(path) -> list[RoundReport]:
    with open(path) as fh:
        return [RoundReport.from_json(line) for line in fh if line.strip()]


def write_reports(reports: Iterable[RoundReport], path) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics_csv(metrics: dict[int, tuple[float, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", "mse", "mae"])
        for cid in sorted(metrics):
            mse, mae = metrics[cid]
            w.writerow([cid, _fmt(mse), _fmt(mae)])


def read_metrics_csv(path) -> dict[int, tuple[float, float]]:
    with open(path, newline="") as fh:
        return {int(r["client_id"]): (float(r["mse"]), float(r["mae"])) for r in csv.DictReader(fh)}


def cdf_rows(mse_values: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical CDF of per-client MSE: one row per distinct value."""
    vals = np.sort(np.asarray(list(mse_values), dtype=np.float64))
    if vals.size == 0:
        return []
    thresholds = np.unique(vals)
    fractions = np.searchsorted(vals, thresholds, side="right") / vals.size
    return list(zip(thresholds.tolist(), fractions.tolist()))


def write_cdf_csv(mse_values: Sequence[float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mse_threshold", "fraction_of_clients"])
        for thr, frac in cdf_rows(mse_values):
            w.writerow([_fmt(thr), _fmt(frac)])


def loss_curve_rows(reports: Sequence[RoundReport]) -> list[dict]:
    rows = []
    for r in reports:
        row = {"round": r.round}
        for key in ("pred", "intra", "inter", "total"):
            vals = [parts[key] for parts in r.losses.values()]
            row[key] = float(np.mean(vals)) if vals else float("nan")
        row["mean_mse"] = r.mean_mse
        row["mean_mae"] = r.mean_mae
        row["uplink"] = r.uplink
        row["downlink"] = r.downlink
        row["beta"] = r.beta if r.beta is not None else ""
        rows.append(row)
    return rows


def write_loss_curve_csv(reports: Sequence[RoundReport], path) -> None:
    rows = loss_curve_rows(reports)
    cols = ["round", "pred", "intra", "inter", "total", "mean_mse", "mean_mae", "uplink", "downlink", "beta"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_matrix_csv(matrix: np.ndarray, path, row_label: str = "row", col_label: str = "col", value_label: str = "value") -> None:
    """Long-format ``row,col,value`` dump of a matrix (divergences, filtering weights)."""
    m = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([row_label, col_label, value_label])
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                w.writerow([i, j, _fmt(m[i, j])])


def write_run_outputs(reports: Sequence[RoundReport], run_dir) -> dict[str, Path]:
    run_dir = Path(run_dir)
    paths = {"metrics": run_dir / "metrics.csv", "cdf": run_dir / "cdf.csv", "loss_curve": run_dir / "loss_curve.csv"}
    metrics = final_metrics(reports)
    write_metrics_csv(metrics, paths["metrics"])
    write_cdf_csv([m for m, _ in metrics.values()], paths["cdf"])
    write_loss_curve_csv(reports, paths["loss_curve"])
    return paths
