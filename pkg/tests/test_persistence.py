import numpy as np
import pytest

from pidheal.analytic import GainSchedule, lambda_schedule
from pidheal.dynamics import propagate_basis, random_basis, random_orthogonal_stack
from pidheal.harness import persistence as ps
from pidheal.manifolds import ChannelKind, EmbeddingBasis


def d_basis():
    rng = np.random.default_rng(0)
    layers = (None,) + tuple(random_basis(6, 2, rng) for _ in range(3))
    return EmbeddingBasis(ChannelKind.D, layers, 0.95)


def gains():
    stack = random_orthogonal_stack(5, 3, 1)
    return GainSchedule.build(propagate_basis(stack, random_basis(5, 2, 1))[:3], 0.7)


def assert_same_layers(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        if x is None:
            assert y is None
        else:
            assert x.tobytes() == y.tobytes()


def test_basis_round_trip_is_bitwise():
    b = d_basis()
    back = ps.loads(ps.dumps(b))
    assert back.channel is ChannelKind.D and back.threshold == 0.95
    assert_same_layers(b.per_layer, back.per_layer)
    assert ps.dumps(back) == ps.dumps(b)


def test_basis_with_temporal_round_trip():
    rng = np.random.default_rng(2)
    layers = tuple(random_basis(4, 1, rng) for _ in range(2))
    temporal = tuple(random_basis(3, 2, rng) for _ in range(2))
    b = EmbeddingBasis(ChannelKind.P, layers, 1.0, temporal)
    back = ps.loads(ps.dumps(b))
    assert_same_layers(temporal, back.temporal)


def test_gain_schedule_round_trip(tmp_path):
    g = gains()
    ps.save(tmp_path / "g.shc", g)
    back = ps.load(tmp_path / "g.shc")
    assert_same_layers(g.bases, back.bases)
    assert back.schedule.lambdas.tobytes() == g.schedule.lambdas.tobytes()
    np.testing.assert_allclose(back.schedule.alphas, g.schedule.alphas, rtol=0, atol=0)


def test_lambda_schedule_round_trip():
    s = lambda_schedule(0.1, 24)
    back = ps.loads(ps.dumps(s))
    assert back.c == 0.1 and back.lambdas.tobytes() == s.lambdas.tobytes()


def test_little_endian_header():
    data = ps.dumps(lambda_schedule(1.0, 2))
    assert data[:4] == b"SHC1" and data[4:8] == b"\x01\x00\x00\x00" and data[8:9] == b"L"


@pytest.mark.parametrize("mutate, message", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + b"\x02\x00\x00\x00" + b[8:], "version"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\x00", "trailing"),
    (lambda b: b[:8] + b"Z" + b[9:], "tag"),
])
def test_corrupt_input_raises(mutate, message):
    with pytest.raises(ps.FormatError, match=message):
        ps.loads(mutate(ps.dumps(d_basis())))


def test_unsupported_type():
    with pytest.raises(TypeError):
        ps.dumps(np.eye(2))


def test_check_against_stack_reports_layer():
    ps.check_against_stack(d_basis(), 6, 4)
    with pytest.raises(ValueError, match="layer 1"):
        ps.check_against_stack(d_basis(), 7)
    with pytest.raises(ValueError, match="stack needs 5"):
        ps.check_against_stack(d_basis(), 6, 5)
