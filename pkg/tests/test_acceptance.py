"""Acceptance gate: one test and one PASS/FAIL line per criterion.

Criterion 6 trains the default Q8 configuration end to end and takes up to
half an hour of CPU time; criteria 6 and 8 share that run.
"""
import json
import time

import numpy as np
import pytest

from neural_group_actions import cli, quantum
from neural_group_actions.action import (NeuralGroupAction, build_action, verify_group_laws,
                                         verify_volume)
from neural_group_actions.groups import builtin_group, left_multiplication_action
from neural_group_actions.invertible import InvertibleNet, LinearLayer
from neural_group_actions.training import Batch, Sample, loss, loss_and_grad

CPU_BUDGET_S = 30 * 60


def test_criterion_1_group_laws(acceptance):
    t0 = time.process_time()
    worst_comp = worst_id = 0.0
    for k, group in enumerate(["Z2", "K4", "Q8"]):
        for p in (2, 4, 16):
            A = build_action(group, p, seed=100 + 10 * k + p, zero_last=False)
            rep = verify_group_laws(A, num_samples=100, tol=1e-9, seed=k * 31 + p)
            X = np.random.default_rng(k * 31 + p).standard_normal((100, A.dim))
            scale = 1 + np.abs(X).max(axis=1)
            id_scaled = (np.abs(A.apply(A.group.identity, X) - X).max(axis=1) / scale).max()
            worst_id = max(worst_id, id_scaled)
            worst_comp = max(worst_comp, rep.max_scaled)
    elapsed = time.process_time() - t0
    ok = worst_comp <= 1e-9 and worst_id <= 1e-10 and elapsed <= 60
    acceptance.record(1, ok, f"composition {worst_comp:.2e} <= 1e-9, identity {worst_id:.2e} "
                             f"<= 1e-10 (both scaled by 1+|x|), {elapsed:.1f}s <= 60s")
    assert ok


def test_criterion_2_worked_examples(acceptance):
    action = left_multiplication_action(builtin_group("Z2"))
    T = [InvertibleNet(1, [LinearLayer([[2.0]])]), InvertibleNet.identity(1)]
    plain = NeuralGroupAction(action, 1, T)
    conj = NeuralGroupAction(action, 1, T, InvertibleNet(2, [LinearLayer([[1.0, 1.0], [1.0, -1.0]])]))
    exact, err = True, 0.0
    for x, y in np.random.default_rng(2).standard_normal((100, 2)):
        exact &= bool(np.array_equal(plain.apply(1, [x, y]), [2 * y, x / 2]))
        err = max(err, np.abs(conj.apply(1, [x, y]) - [(5 * x - 3 * y) / 4, (3 * x - 5 * y) / 4]).max())
    ok = exact and err <= 1e-12
    acceptance.record(2, ok, f"(2y, x/2) exact={exact}, conjugated max error {err:.1e} <= 1e-12")
    assert ok


def test_criterion_3_slot_structure(acceptance):
    A = build_action("K4", 4, seed=3, h_layers=0, zero_last=False)
    G, p = A.group, A.p
    rng = np.random.default_rng(3)
    x = rng.standard_normal(A.dim)
    structure_ok = True
    for g in range(4):
        base = A.apply_raw(g, x).reshape(4, p)
        for s in range(4):
            src = G.mul(G.inv(g), s)
            for t in range(4):
                bumped = x.copy()
                bumped[t * p:(t + 1) * p] += rng.standard_normal(p)
                moved = not np.array_equal(A.apply_raw(g, bumped).reshape(4, p)[s], base[s])
                structure_ok &= moved == (t == src)
    a = G.index("a")
    X = rng.standard_normal((50, A.dim))
    inv_err = np.abs(A.apply_raw(a, A.apply_raw(a, X)) - X).max()
    ok = structure_ok and inv_err <= 1e-10
    acceptance.record(3, ok, f"slot dependence on g^-1 s only: {structure_ok}, |a(a x) - x| {inv_err:.1e} <= 1e-10")
    assert ok


def test_criterion_4_volume(acceptance):
    t0 = time.process_time()
    worst = 0.0
    for k, (group, p) in enumerate([("Z2", 16), ("K4", 8), ("Q8", 4), ("Z3", 8)]):
        A = build_action(group, p, seed=40 + k, zero_last=False)
        rep = verify_volume(A, num_samples=20, fd_step=1e-5, tol=1e-6, seed=k)
        worst = max(worst, rep.max_deviation)
    elapsed = time.process_time() - t0
    ok = worst <= 1e-6 and elapsed <= 120
    acceptance.record(4, ok, f"max ||det J| - 1| {worst:.1e} <= 1e-6, {elapsed:.1f}s <= 120s")
    assert ok


def test_criterion_5_gradients(acceptance):
    A = build_action("K4", 4, seed=5, hidden=(8, 8), zero_last=False)
    assert A.num_params <= 10_000
    rng = np.random.default_rng(5)
    samples = [Sample(int(rng.integers(4)), x, rng.standard_normal(4)) for x in rng.standard_normal((8, A.dim))]
    batch = Batch.from_samples(samples)
    mask = (0, 1, 2, 3)
    _, grads = loss_and_grad(A, batch, mask)
    analytic = np.concatenate([g.ravel() for g in grads])
    numeric = []
    for P in A.params:
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + 1e-6
            up = loss(A, batch, mask).total
            P[idx] = old - 1e-6
            down = loss(A, batch, mask).total
            P[idx] = old
            numeric.append((up - down) / 2e-6)
    numeric = np.array(numeric)
    # per-parameter relative error; entries far below the gradient scale are
    # compared against that scale, since their own size is finite-difference noise
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3 * np.abs(numeric).max())
    rel = (np.abs(analytic - numeric) / denom).max()
    ok = rel <= 1e-5
    acceptance.record(5, ok, f"max relative error {rel:.1e} <= 1e-5 over {A.num_params} parameters")
    assert ok


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("q8")
    code = cli.main(["train", "--out", str(out)])
    (run,) = list(out.iterdir())
    return code, run


def test_criterion_6_q8_experiment(acceptance, default_run):
    code, run = default_run
    summary = json.loads((run / "summary.json").read_text())
    verify_code = cli.main(["verify", "--model", str(run / "model.json"), "--samples", "100",
                            "--tol", "1e-9"])
    test_loss, cpu = summary["final_test_loss"], summary["cpu_time_s"]
    ok = test_loss <= 1e-8 and cpu <= CPU_BUDGET_S and verify_code == 0
    acceptance.record(6, ok, f"held-out summed L2 {test_loss:.2e} <= 1e-8, {cpu / 60:.1f} CPU-min "
                             f"<= 30, train exit {code}, verify exit {verify_code} (law residual "
                             f"{summary['max_law_residual']:.1e})")
    assert ok


def test_criterion_7_gate_group(acceptance):
    Rx, Ry, Rz = (quantum.pi_rotation(a) for a in "xyz")
    gg = quantum.generate_gate_group([Rx, Ry, Rz])
    mats = [g.matrix for g in gg.gates]
    distinct = all(np.abs(mats[a] - mats[b]).max() > 1e-9 for a in range(len(mats)) for b in range(a))
    Q8, phi = builtin_group("Q8"), gg.isomorphism
    iso = all(phi[gg.group.mul(a, b)] == Q8.mul(phi[a], phi[b]) for a in range(8) for b in range(8))
    sq = Rx.matrix @ Rx.matrix
    prod = Rx.matrix @ Ry.matrix @ Rz.matrix
    rel = max(np.abs(Ry.matrix @ Ry.matrix - sq).max(), np.abs(Rz.matrix @ Rz.matrix - sq).max(),
              np.abs(prod - sq).max(), np.abs(prod @ prod - np.eye(2)).max())
    ok = len(mats) == 8 and distinct and iso and rel <= 1e-12
    acceptance.record(7, ok, f"{len(mats)} distinct gates, isomorphic on 64 pairs: {iso}, "
                             f"relation error {rel:.1e} <= 1e-12")
    assert ok


def test_criterion_8_physical_distinctness(acceptance, default_run):
    gg = quantum.generate_gate_group([quantum.pi_rotation(a) for a in "xyz"])
    psi = quantum.random_state(8)
    reps = []
    for U in gg.gates:
        img = U(psi)
        if all(quantum.phase_invariant_distance(img, r) >= 1e-9 for r in reps):
            reps.append(img)
    _, run = default_run
    A, task = cli.load_model(run / "model.json")
    _, elements = cli.evaluate(A, task, state_seed=8)
    err = max(e["linf_error"] for e in elements)
    ok = len(reps) == 4 and err <= 1e-3
    acceptance.record(8, ok, f"{len(reps)} physical classes (need 4), trained L-inf error {err:.1e} <= 1e-3")
    assert ok


def test_criterion_9_determinism(acceptance, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"p": 4, "hidden": [16, 16], "num_states": 16, "max_epochs": 20}))
    for _ in range(2):
        cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "runs")])
    a, b = sorted((tmp_path / "runs").iterdir())
    same = {name: (a / name).read_bytes() == (b / name).read_bytes() for name in ("model.json", "loss.csv")}
    ok = all(same.values())
    acceptance.record(9, ok, f"byte-identical across reruns: {same}")
    assert ok
