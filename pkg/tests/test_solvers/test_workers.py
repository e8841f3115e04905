"""Tests for star_uav.workers."""

from __future__ import annotations

import threading
import time

import pytest

from star_uav.workers import map_ordered


class TestMapOrdered:
    def test_inline(self):
        names = []

        def fn(x):
            names.append(threading.current_thread().name)
            return x * x

        assert map_ordered(fn, [1, 2, 3]) == [1, 4, 9]
        assert set(names) == {threading.current_thread().name}

    def test_threads_keep_input_order(self):
        def fn(x):
            # later items finish first
            time.sleep(0.01 * (5 - x))
            return x

        assert map_ordered(fn, range(5), workers=4, name="slot") == [0, 1, 2, 3, 4]

    def test_thread_prefix(self):
        seen = set()

        def fn(x):
            seen.add(threading.current_thread().name)
            return x

        map_ordered(fn, range(4), workers=2, name="power")
        assert all(name.startswith("power") for name in seen)

    def test_empty(self):
        assert map_ordered(lambda x: x, [], workers=3) == []

    def test_exception_propagates(self):
        def fn(x):
            if x == 2:
                raise RuntimeError("boom")
            return x

        with pytest.raises(RuntimeError, match="boom"):
            map_ordered(fn, range(4), workers=2)
