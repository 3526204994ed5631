import csv

import numpy as np

from fuels.config import ExperimentConfig
from fuels.federation import run_training
from fuels.report import cdf_rows, read_metrics_csv, read_reports, write_matrix_csv, write_metrics_csv, write_reports


def test_cdf_rows():
    assert cdf_rows([0.3, 0.1, 0.3, 0.2]) == [(0.1, 0.25), (0.2, 0.5), (0.3, 1.0)]
    assert cdf_rows([]) == []


def test_metrics_csv_round_trip(tmp_path):
    m = {2: (0.1, 0.2), 0: (1 / 3, 2 / 3)}
    write_metrics_csv(m, tmp_path / "m.csv")
    assert read_metrics_csv(tmp_path / "m.csv") == m
    assert (tmp_path / "m.csv").read_text().splitlines()[1].startswith("0,")


def test_reports_round_trip(tmp_path):
    reports = run_training(ExperimentConfig(n_clients=2, K=300, h=2, T=2))
    write_reports(reports, tmp_path / "r.jsonl")
    assert read_reports(tmp_path / "r.jsonl") == reports


def test_matrix_export(tmp_path):
    write_matrix_csv(np.array([[1.0, 2.0], [3.0, 4.0]]), tmp_path / "w.csv", "a", "b", "v")
    with open(tmp_path / "w.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["a", "b", "v"] and rows[3] == ["1", "0", "3.0"]
