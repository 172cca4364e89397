from __future__ import annotations

import math

import numpy as np
import pytest

from bikestress.analytics import lts_score
from bikestress.geo import haversine_m
from bikestress.lts import classify_network
from bikestress.routing import Router, WeightScheme
from bikestress.synth import (
    AgentSpec,
    GridCitySpec,
    composite_weights,
    densify,
    gen_city,
    gen_trajectories,
    jitter_points,
)


def test_two_by_two_grid():
    net = gen_city(GridCitySpec(rows=2, cols=2, arterial_every=0))
    assert net.num_nodes == 4 and net.num_edges == 8
    assert all(e.attrs.highway == "residential" for e in net.edges)


def test_five_by_five_lts_histogram():
    # rows and columns 0, 2, 4 are arterial: 3 x 4 street segments each way
    net = gen_city(GridCitySpec(rows=5, cols=5, arterial_every=2))
    assert net.num_edges == 2 * (5 * 4 + 5 * 4)
    hist = classify_network(net).histogram()
    assert hist == {1: 2 * 16, 2: 0, 3: 0, 4: 2 * 24}


def test_arterials_are_straight():
    spec = GridCitySpec(rows=5, cols=5, arterial_every=2, jitter_m=30)
    net = gen_city(spec)
    row0 = {net.lats[c] for c in range(5)}
    assert len(row0) == 1


def test_city_is_deterministic_and_seed_sensitive():
    a = gen_city(GridCitySpec(seed=3))
    b = gen_city(GridCitySpec(seed=3))
    c = gen_city(GridCitySpec(seed=4))
    assert a.lats == b.lats and a.lons == b.lons
    assert a.lats != c.lats


def test_spec_validation():
    with pytest.raises(ValueError):
        GridCitySpec(rows=1)
    with pytest.raises(ValueError):
        GridCitySpec(block_m=100, jitter_m=30)
    with pytest.raises(ValueError):
        AgentSpec(safety_weight=-1)


def test_densify_spacing():
    pts = [(44.8, 11.6), (44.8, 11.603), (44.802, 11.603)]
    out = densify(pts, 20.0)
    steps = [haversine_m(a[0], a[1], b[0], b[1]) for a, b in zip(out, out[1:])]
    assert max(steps) <= 20.0 + 1e-6
    assert out[0] == pts[0] and out[-1] == pts[-1]


def test_zero_noise_is_identity():
    pts = [(44.8, 11.6), (44.81, 11.61)]
    assert jitter_points(pts, 0.0, np.random.default_rng(0)) == pts


@pytest.fixture(scope="module")
def city():
    net = gen_city(GridCitySpec(rows=8, cols=8, arterial_every=3, seed=1))
    return net, classify_network(net).scores


def test_trajectories_deterministic(city):
    net, lts = city
    a = gen_trajectories(net, AgentSpec(n_agents=10, gps_noise_sigma_m=5), seed=9)
    b = gen_trajectories(net, AgentSpec(n_agents=10, gps_noise_sigma_m=5), seed=9)
    assert a.ground_truth == b.ground_truth
    assert [t.points for t in a.trajectories] == [t.points for t in b.trajectories]


def test_zero_safety_weight_is_shortest_path(city):
    net, lts = city
    trips = gen_trajectories(net, AgentSpec(n_agents=30), seed=2, lts_map=lts)
    router = Router(net, WeightScheme.length())
    for tid, edges in trips.ground_truth.items():
        o, d = trips.od_nodes[tid]
        assert edges == router.shortest_path(o, d).edges


def test_safety_weight_lowers_stress_monotonically(city):
    net, lts = city
    rng = np.random.default_rng(0)
    pairs = [tuple(int(v) for v in rng.choice(net.num_nodes, 2, replace=False)) for _ in range(40)]
    prev_score, prev_len = math.inf, 0.0
    for lam in (0, 1, 2, 5):
        trips = gen_trajectories(net, AgentSpec(safety_weight=lam), od_pairs=pairs, lts_map=lts)
        edges = [e for p in trips.ground_truth.values() for e in p]
        score = lts_score(edges, lts, lengths=[e.length_m for e in net.edges])
        length = sum(net.edges[e].length_m for e in edges)
        assert score <= prev_score + 1e-12
        assert length >= prev_len - 1e-6
        prev_score, prev_len = score, length


def test_high_safety_weight_avoids_stressful_edges(city):
    net, lts = city
    # every residential node pair is connected through residential streets here
    trips = gen_trajectories(net, AgentSpec(n_agents=30, safety_weight=5), seed=4, lts_map=lts)
    for tid, edges in trips.ground_truth.items():
        o, d = trips.od_nodes[tid]
        ends_on_arterial = {o, d} & {n for e in net.edges if e.attrs.highway == "primary" for n in (e.source, e.target)}
        if not ends_on_arterial:
            assert all(lts[e] == 1 for e in edges)


def test_noise_is_honest(city):
    net, lts = city
    sigma = 5.0
    clean = gen_trajectories(net, AgentSpec(n_agents=20), seed=8, lts_map=lts)
    noisy = gen_trajectories(net, AgentSpec(n_agents=20, gps_noise_sigma_m=sigma), seed=8, lts_map=lts)
    offsets = []
    for a, b in zip(clean.trajectories, noisy.trajectories):
        for p, q in zip(a.points, b.points):
            offsets.append(haversine_m(p.loc.lat, p.loc.lon, q.loc.lat, q.loc.lon))
    # radial offset of a 2D isotropic normal has mean sigma * sqrt(pi / 2)
    assert np.mean(offsets) == pytest.approx(sigma * math.sqrt(math.pi / 2), rel=0.1)
    assert np.mean(offsets) <= 2 * sigma


def test_composite_weights_formula(city):
    net, lts = city
    w = composite_weights(net, lts, 3.0)
    for i, e in enumerate(net.edges):
        assert w[i] == e.length_m * (1 + 3.0 * (lts[i] - 1))
