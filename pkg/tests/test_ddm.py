import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_ddm import ddm, operators, problems
from constrained_ddm.autodiff import evaluate
from constrained_ddm.geometry import Box, GeometryError
from constrained_ddm.network import ConfigurationError, MLPConfig

UNIT = Box(0.0, 1.0, 0.0, 1.0)
SMALL_NET = MLPConfig(hidden_layers=1, units_per_layer=5)


def _quick(**kw):
    base = dict(inner_cap=3, epoch_min=2, lbfgs_max_iter=2, lbfgs_max_evals=4, lbfgs_lr=1.0)
    base.update(kw)
    return ddm.TrainSettings(**base)


def test_reference_allocation_five_by_five():
    dec = ddm.partition(Box(-1, 1, -1, 1), 5, 5, (160 * 160, 160))
    assert len(dec) == 25
    for s in dec.subdomains:
        assert s.n_interior == 1024
        counts = [c for _, c in s.boundary] + [link.count for link in s.interfaces]
        assert len(counts) == 4 and set(counts) == {32}


def test_single_subdomain_has_no_interfaces():
    dec = ddm.partition(UNIT, 1, 1, (400, 20))
    (s,) = dec.subdomains
    assert s.interfaces == [] and len(s.boundary) == 4
    assert ddm.expected_message_count(dec) == 0


def test_two_strips_share_identical_interface_points():
    dec = ddm.partition(UNIT, 1, 2, (400, 20))
    left, right = dec.subdomains
    assert len(left.interfaces) == len(right.interfaces) == 1
    pl = ddm.sample_collocation(left, 7).interfaces[0]
    pr = ddm.sample_collocation(right, 7).interfaces[0]
    np.testing.assert_array_equal(pl[0], pr[0])
    np.testing.assert_array_equal(pl[1], -pr[1])
    np.testing.assert_allclose(pl[0][:, 0], 0.5)
    np.testing.assert_array_equal(pl[1], np.tile([1.0, 0.0], (len(pl[1]), 1)))


@settings(max_examples=25, deadline=None)
@given(rows=st.integers(1, 4), cols=st.integers(1, 4))
def test_partition_tiles_box_with_symmetric_neighbours(rows, cols):
    box = Box(-1.0, 2.0, 0.0, 1.5)
    dec = ddm.partition(box, rows, cols, (rows * cols * 10, 12))
    area = sum(s.region.bounds.area for s in dec.subdomains)
    assert area == pytest.approx(box.area)
    x = box.sample(300, np.random.default_rng(rows * 10 + cols))
    inside = np.array([[s.region.contains(p[None])[0] for s in dec.subdomains] for p in x])
    # interior points of the box belong to exactly one open subdomain almost surely
    assert np.all(inside.sum(axis=1) == 1)
    for s in dec.subdomains:
        for link in s.interfaces:
            other = dec.subdomains[link.neighbor]
            back = [m for m in other.interfaces if m.neighbor == s.index]
            assert len(back) == 1 and back[0].key == link.key and back[0].count == link.count


def test_row_zero_is_the_top_strip():
    dec = ddm.partition(UNIT, 2, 1, (10, 4))
    assert dec.by_label((0, 0)).region.bounds.y0 == pytest.approx(0.5)
    assert dec.owner(np.array([[0.3, 0.9], [0.3, 0.1]])).tolist() == [0, 1]


def test_collocation_is_deterministic_and_categorised():
    dec = ddm.partition(UNIT, 2, 2, (400, 40))
    s = dec.subdomains[3]
    a, b = ddm.sample_collocation(s, 3), ddm.sample_collocation(s, 3)
    np.testing.assert_array_equal(a.interior, b.interior)
    np.testing.assert_array_equal(a.boundary, b.boundary)
    c = ddm.sample_collocation(s, 4)
    assert not np.array_equal(a.interior, c.interior)
    box = s.region.bounds
    assert np.all(box.contains(a.interior, closed=False))
    counts = a.counts()
    assert counts == {"interior": 100, "boundary": 40, "interface": [20, 20], "measurements": 0}


def test_measurement_points_only_for_inverse_problems():
    pr = problems.inverse_multilayer()
    dec = ddm.partition(pr.box, 1, 2, (100, 20))
    pts = [ddm.sample_collocation(s, 0, pr).measurements for s in dec.subdomains]
    assert [len(p) for p in pts] == [5, 5]
    assert np.all(pts[0][:, 0] == 0.45) and np.all(pts[1][:, 0] == 0.55)


def test_degenerate_subdomain_geometry_raises():
    with pytest.raises(GeometryError):
        ddm.partition(Box(0.0, 1.0, 0.0, 0.0), 1, 1, (10, 4))
    with pytest.raises(ConfigurationError):
        ddm.partition(UNIT, 0, 2, (10, 4))


def test_frame_and_butterfly_layouts():
    inner = Box(0.25, 0.75, 0.25, 0.75)
    fr = ddm.frame_layout(UNIT, inner)
    sq, frame = fr.subdomains
    assert len(sq.interfaces) == len(frame.interfaces) == 4 and not sq.boundary
    p_sq = ddm.sample_collocation(sq, 1).interfaces
    p_fr = ddm.sample_collocation(frame, 1).interfaces
    for (a, na), (b, nb) in zip(p_sq, p_fr):
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(na, -nb)
    bf = ddm.butterfly_layout(interior=50, interface=8, measurements=4, boundary=4)
    assert len(bf) == 4 and all(len(s.interfaces) == 2 for s in bf.subdomains)
    pts = ddm.sample_collocation(bf.subdomains[1], 0, problems.inverse_fgm_butterfly())
    assert np.all(pts.interior >= 0.0)


# ---------------------------------------------------------------- messages
def test_message_round_trip():
    rng = np.random.default_rng(0)
    msg = ddm.InterfaceMessage((2, 3), 1, [rng.normal(size=(5, 2)) for _ in range(3)])
    raw = msg.encode()
    assert len(raw) == 4 + 4 + 1 + 4 + 3 * 5 * 2 * 8
    back = ddm.InterfaceMessage.decode(raw, n_fields=3, components=2)
    assert back.sender == (2, 3) and back.edge == 1 and back.count == 5
    for a, b in zip(msg.fields, back.fields):
        np.testing.assert_array_equal(a, b)
    assert back.signature() == msg.signature()
    with pytest.raises(ValueError):
        ddm.InterfaceMessage.decode(raw[:-8], n_fields=3, components=2)


def test_route_conserves_messages():
    dec = ddm.partition(UNIT, 2, 2, (40, 8))
    outboxes = [[(link.neighbor, bytes([s.index, link.edge])) for link in s.interfaces] for s in dec.subdomains]
    inbox, sent, received = ddm.route(dec, outboxes)
    assert sent == received and sum(sent.values()) == ddm.expected_message_count(dec) == 8
    assert [len(m) for m in inbox] == [2, 2, 2, 2]


# ---------------------------------------------------------------- workers
def _workers(rows=1, cols=2, problem=None, n=(200, 20), seed=0, **kw):
    pr = problem or problems.poisson_low()
    dec = ddm.partition(pr.box, rows, cols, n)
    return dec, pr, ddm.build_workers(dec, pr, SMALL_NET, _quick(**kw), seed)


def test_initial_interface_targets_are_zero():
    _, _, ws = _workers()
    for w in ws:
        assert all(np.all(t == 0.0) for group in w.targets for t in group)
        np.testing.assert_array_equal(w.q, 1.0)


def test_identical_models_give_zero_interface_residuals_after_exchange():
    dec, pr, ws = _workers(rows=2, cols=2)
    for w in ws[1:]:
        w.theta = ws[0].theta.copy()
    runner = ddm.SequentialBackend(ws)
    inbox, _, _ = ddm.route(dec, runner.outgoing())
    runner.deliver(inbox)
    for w in ws:
        for k, (xp, nrm) in enumerate(w.points.interfaces):
            b = evaluate(w.model, w.theta, xp, order=1)
            fields = pr.interface_fields(b, xp, nrm, operators.rotate_normal(nrm))
            for f, t in zip(fields, w.targets[k]):
                assert np.abs(f.value - t).max() < 1e-14
        _, objective, _, _, _ = w.graph(w.theta, w.q)
        assert float(objective.value) < 1e-26


def test_received_flux_uses_receiver_normal():
    dec, pr, ws = _workers()
    left, right = ws
    # the message from the left worker carries derivatives along the right worker's outward normal (-x)
    (dst, msg), = left.outgoing()
    xp, nrm = right.points.interfaces[0]
    b = evaluate(left.model, left.theta, xp, order=1)
    np.testing.assert_allclose(msg.fields[1], -b.partial(0).value, atol=1e-15)
    np.testing.assert_allclose(nrm, np.tile([-1.0, 0.0], (len(nrm), 1)))
    assert dst == 1


def test_single_subdomain_reduces_to_plain_training():
    dec, pr, (w,) = _workers(rows=1, cols=1)
    assert w.alm.names == ("B",) and not w.coupled
    _, objective, _, _, _ = w.graph(w.theta, w.q)
    res = operators.pde_residual(w.model, w.theta, w.points.interior, pr)
    assert float(objective.value) == pytest.approx(float(operators.mse(res).value), rel=1e-13)
    q0 = w.q.copy()
    w.inner_loop()
    np.testing.assert_array_equal(w.q, q0)


def test_interior_subdomain_omits_boundary_constraint():
    _, _, ws = _workers(rows=3, cols=3, n=(900, 30))
    assert ws[4].alm.names == ("P",)
    assert ws[0].alm.names == ("B", "P")


def test_interface_parameters_stay_at_or_above_one():
    _, _, ws = _workers(lr_interface=0.5, inner_cap=6, epoch_min=6)
    for w in ws:
        w.inner_loop()
        assert np.all(w.q >= 1.0)


def test_worker_failure_names_the_subdomain():
    dec, pr, ws = _workers()
    ws[1].theta[:] = np.nan
    with pytest.raises(ddm.WorkerFailure) as info:
        ddm.train(dec, pr, SMALL_NET, _quick(), outer=1, workers=ws)
    assert info.value.label == (0, 1)


def test_unknown_backend():
    dec, pr, ws = _workers()
    with pytest.raises(ConfigurationError):
        ddm.make_backend("mpi", ws)


def _history_key(result):
    return [[{k: v for k, v in d.items()} for d in step] for step in result.history]


def test_sequential_and_threaded_runs_are_identical():
    pr = problems.poisson_low()
    dec = ddm.partition(pr.box, 2, 2, (200, 20))
    out = {}
    for backend in ("sequential", "threads"):
        out[backend] = ddm.train(dec, pr, SMALL_NET, _quick(), outer=3, seed=5, backend=backend)
    a, b = out["sequential"], out["threads"]
    assert _history_key(a) == _history_key(b)
    for wa, wb in zip(a.workers, b.workers):
        np.testing.assert_array_equal(wa.theta, wb.theta)
    assert a.traffic == b.traffic == [(8, 8)] * 3


def test_process_backend_matches_sequential():
    pr = problems.poisson_low()
    dec = ddm.partition(pr.box, 1, 2, (100, 10))
    seq = ddm.train(dec, pr, SMALL_NET, _quick(), outer=2, seed=1)
    prc = ddm.train(dec, pr, SMALL_NET, _quick(), outer=2, seed=1, backend="processes")
    assert _history_key(seq) == _history_key(prc)
    for wa, wb in zip(seq.workers, prc.workers):
        np.testing.assert_array_equal(wa.theta, wb.theta)


def test_diagnostics_fields():
    pr = problems.inverse_multilayer()
    dec = ddm.partition(pr.box, 1, 2, (100, 10))
    res = ddm.train(dec, pr, MLPConfig(hidden_layers=1, units_per_layer=5, extras=("kappa",)), _quick(), outer=1)
    d = res.history[0][0]
    for key in ("objective", "C_B", "C_P", "C_M", "lambda_B", "mu_P", "q", "ratios", "kappa", "inner_epochs"):
        assert key in d
    assert all(r > 0 and np.isfinite(r) for r in d["ratios"])
