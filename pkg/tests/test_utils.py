import numpy as np
import pytest

from netexp.utils import parallel_map, rng_stream, round_half

VECTORS_ROUND = (
    (2.5, "half_away", 3),
    (2.5, "half_even", 2),
    (-2.5, "half_away", -3),
    (3.49, "half_away", 3),
    (3.5, "half_even", 4),
)


@pytest.mark.parametrize("value, mode, expected", VECTORS_ROUND)
def test_round_half(value, mode, expected):
    assert round_half(value, mode) == expected


def test_round_half_unknown_mode():
    with pytest.raises(ValueError, match="Unknown rounding mode"):
        round_half(1.5, "ceiling")


@pytest.mark.parametrize("threads", [1, 4])
def test_parallel_map_keeps_order(threads):
    assert parallel_map(lambda v: v * v, range(50), threads) == [v * v for v in range(50)]


def test_parallel_map_propagates_errors():
    def fail(v):
        if v == 3:
            raise KeyError(v)
        return v

    with pytest.raises(KeyError):
        parallel_map(fail, range(6), threads=3)


def test_rng_streams_depend_on_key_only():
    a = rng_stream(5, 2, 7).random(4)
    rng_stream(5, 1).random(100)
    np.testing.assert_array_equal(rng_stream(5, 2, 7).random(4), a)
    assert not np.array_equal(rng_stream(5, 2, 8).random(4), a)
    assert not np.array_equal(rng_stream(6, 2, 7).random(4), a)
