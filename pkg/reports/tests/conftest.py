import pytest

from report_fixtures import (TRIO_RETURNS, TRIO_VIOLATIONS, ENSEMBLE_MS,
                             HORIZON_MS, WIDTH_MS, square_record, write_bench,
                             write_run)


@pytest.fixture
def seed_trio(tmp_path):
    return [write_run(tmp_path, f"run_s{i}", ret, vio, seed=i)
            for i, (ret, vio) in enumerate(zip(TRIO_RETURNS, TRIO_VIOLATIONS))]


@pytest.fixture
def squares_run(tmp_path):
    history = [square_record(e, side) for e, side in enumerate((1.0, 2.0, 3.0))]
    return write_run(tmp_path, "run_squares", [1.0, 2.0, 3.0], [0, 0, 0],
                     history=history)


@pytest.fixture
def bench_csv(tmp_path):
    return write_bench(str(tmp_path / "bench.csv"),
                       {"horizon": HORIZON_MS, "width": WIDTH_MS,
                        "ensemble_size": ENSEMBLE_MS})
