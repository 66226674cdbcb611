import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnet.fixtures import fix_b, fix_c, symmetric_complete, tandem
from qnet.model import (ALWAYS_UP, BlockSpec, LinkSpec, NetworkSpec, NodeSpec, ValidationError,
                        block_status, effective_rates, link_indicator, make_network,
                        state_rates, validate)


def spec(nodes, links=(), blocks=()):
    return NetworkSpec(tuple(NodeSpec(*n) for n in nodes), tuple(LinkSpec(*ln) for ln in links),
                       tuple(BlockSpec(*b) for b in blocks))


@pytest.mark.parametrize("code, s", [
    ("negative-rate", spec([("a", -1.0, 1.0)])),
    ("negative-rate", spec([("a", 1.0, 1.0), ("b", 0.0, 1.0)], [("a", "b", -0.5)])),
    ("negative-rate", spec([("a", 1.0, 1.0), ("b", 0.0, 1.0)], [("a", "b", 1.0, 1.0, "x")],
                           [("x", 0.0, 1.0)])),
    ("f-range", spec([("a", 1.0, 1.0), ("b", 0.0, 1.0)], [("a", "b", 1.0, 1.5)])),
    ("missing-block", spec([("a", 1.0, 1.0), ("b", 0.0, 1.0)], [("a", "b", 1.0, 1.0, "nope")])),
    ("no-exit", spec([("a", 1.0, 0.0)])),
    ("unreachable-exit", spec([("a", 1.0, 0.0), ("b", 0.0, 1.0), ("c", 0.0, 0.0)],
                              [("a", "c", 1.0)])),
    ("duplicate-link", spec([("a", 1.0, 1.0), ("b", 0.0, 1.0)],
                            [("a", "b", 1.0), ("a", "b", 2.0)])),
    ("duplicate-link", spec([("a", 1.0, 1.0), ("b", 0.0, 1.0)],
                            [("a", "b", 1.0, 1.0, ALWAYS_UP, True), ("b", "a", 2.0)])),
    ("self-loop", spec([("a", 1.0, 1.0)], [("a", "a", 1.0)])),
    ("bad-node", spec([("a", 1.0, 1.0)], [("a", "z", 1.0)])),
    ("bad-node", spec([("a", 1.0, 1.0), ("a", 1.0, 1.0)])),
    ("too-many-blocks", spec([("a", 1.0, 1.0)], (), [(f"b{i}", 1.0, 1.0) for i in range(17)])),
])
def test_validation_errors(code, s):
    with pytest.raises(ValidationError) as info:
        validate(s)
    assert info.value.code == code


def test_f_range_message_names_link():
    with pytest.raises(ValidationError, match="a.*b"):
        validate(spec([("a", 1.0, 1.0), ("b", 0.0, 1.0)], [("a", "b", 1.0, 1.5)]))


def test_idle_node_warns():
    with pytest.warns(RuntimeWarning, match="no service"):
        validate(spec([("a", 1.0, 1.0), ("b", 1.0, 0.0)]))


def test_bidirectional_expands_to_two_links_same_block():
    net = fix_c()
    assert len(net.links()) == 6
    assert np.all(net.link_block[net.link_block != -2] == 0)
    assert np.allclose(net.mu, net.mu.T)


def test_state_encoding_first_block_is_high_bit():
    up = block_status(2)
    assert up.tolist() == [[False, False], [False, True], [True, False], [True, True]]


def test_link_indicator_and_effective_rates():
    net = fix_b()
    assert link_indicator(net, "1", "2", 0) == 0
    assert link_indicator(net, "1", "2", 1) == 1
    down = effective_rates(net, "1", 0)
    assert down.loss == 1.0 and down.jump.sum() == 0.0 and down.retry == 0.0
    retry = effective_rates(fix_b(0.0), "1", 0)
    assert retry.retry == 1.0 and retry.loss == 0.0
    assert effective_rates(net, "1", 1).total == pytest.approx(1.0)


def test_routing_probabilities_rows_sum_to_one():
    P = fix_c().routing_probabilities()
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.allclose(P[:, 0], 0.5)


def test_with_scaling():
    net = tandem(2.0, 1.0, 1.0, 3.0, 4.0).with_scaling(10, 0.5)
    assert net.lam[0] == 20.0
    assert net.q_up[0] == pytest.approx(3.0 * np.sqrt(10))
    assert net.mu[0, 1] == 1.0


def test_validate_is_idempotent():
    net = fix_c()
    assert validate(net).equals(net)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5),
       st.floats(0.1, 5), st.floats(0.1, 5), st.sampled_from([0.0, 0.3, 1.0]))
def test_rates_decompose(n, lam, nu, mu0, qu, qd, f):
    net = symmetric_complete(n, lam, nu, mu0, qu, qd, f)
    r = state_rates(net)
    assert np.allclose(r.mu_plus + r.mu_minus, net.mu[None])
    # decay + retry = total service rate in every state
    retry = (r.mu_minus * (1 - net.f[None])).sum(axis=2)
    assert np.allclose(r.decay + retry, net.mu_total[None])


def test_make_network_shorthand_matches_spec():
    a = make_network([("x", 1.0, 1.0), ("y", 0.0, 2.0)], [("x", "y", 0.5, 0.2, "blk")],
                     [("blk", 1.0, 2.0)])
    b = validate(a.to_spec())
    assert a.equals(b)
