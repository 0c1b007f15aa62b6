"""Trend buffer tests: FIFO eviction, stale drops, window queries."""

import pytest

from agentscada.plcsim import Quality
from agentscada.trends import TrendSeries


class TestTrendSeries:
    def test_fifo_eviction_at_capacity(self):
        series = TrendSeries("a", capacity=3)
        for i in range(4):
            series.append(i, float(i), Quality.GOOD)
        assert [s[0] for s in series] == [1, 2, 3]

    def test_stale_sample_dropped_and_counted(self):
        series = TrendSeries("a", capacity=10)
        assert series.append(100, 1.0, Quality.GOOD)
        assert not series.append(100, 2.0, Quality.GOOD)
        assert not series.append(50, 3.0, Quality.GOOD)
        assert series.dropped_stale == 2
        assert len(series) == 1

    def test_many_appends_keep_invariants(self):
        series = TrendSeries("a", capacity=100)
        for i in range(10_000):
            series.append(i, float(i), Quality.GOOD)
        assert len(series) == 100
        stamps = [s[0] for s in series]
        assert stamps == sorted(stamps)
        assert len(set(stamps)) == len(stamps)
        assert stamps[-1] == 9999

    def test_window_query_inclusive(self):
        series = TrendSeries("a", capacity=10)
        for i in range(10):
            series.append(i * 10, float(i), Quality.GOOD)
        window = series.window(20, 50)
        assert [s[0] for s in window] == [20, 30, 40, 50]

    def test_empty_window(self):
        series = TrendSeries("a")
        assert series.window(0, 100) == []
        assert series.latest() is None

    def test_capacity_validation(self):
        with pytest.raises(ValueError):
            TrendSeries("a", capacity=0)
