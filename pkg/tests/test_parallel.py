import time

from lieflow.cartan import GradingVector
from lieflow.config import build_config
from lieflow.parallel import max_workers, ordered_map
from lieflow.pipeline import run_verify


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("LIEFLOW_THREADS", "2")
    assert max_workers(8) == 2
    monkeypatch.setenv("LIEFLOW_THREADS", "junk")
    assert max_workers(3) == 3
    monkeypatch.delenv("LIEFLOW_THREADS")
    assert max_workers(5) == 5 and max_workers() >= 1


def test_ordered_map_keeps_order():
    def slow(k):
        time.sleep(0.001 * (5 - k))
        return k * k
    assert ordered_map(slow, range(5), workers=4) == [0, 1, 4, 9, 16]


def test_verify_independent_of_worker_count():
    cfg = build_config({"n": 3, "grading": "0,1,0", "samples": 6, "seed": 11})
    a = [c.as_dict() for c in run_verify(cfg, workers=1)]
    b = [c.as_dict() for c in run_verify(cfg, workers=3)]
    assert a == b
    assert isinstance(cfg.grading, GradingVector)
