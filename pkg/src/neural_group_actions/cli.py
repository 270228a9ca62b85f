"""Command-line entry point: ``nga train|verify|eval|gen-dataset``.

Exit codes: 0 success, 1 usage/config/IO error, 2 training stopped at
``max_epochs`` without reaching ``target_loss`` (or a failed check).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import quantum
from .action import NeuralGroupAction, build_action, verify_group_laws, verify_volume, MAX_VOLUME_DIM
from .errors import NeuralGroupActionError, NonFiniteLoss
from .groups import FiniteGroup, builtin_group, left_multiplication_action
from .training import Batch, TrainConfig, loss, split_dataset, train

log = logging.getLogger("neural_group_actions")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2

DEFAULT_CONFIG = {
    "group": "Q8",
    "cayley_file": None,
    "generators": ["x", "y", "z"],
    "p": 16,
    "t_layers": 1,
    "h_layers": 3,
    "hidden": [64, 64],
    "seed": 0,
    "num_states": 1024,
    "test_fraction": 0.1,
    "readout": [0, 1, 2, 3],
    "learning_rate": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "batch_size": None,
    "max_epochs": 5000,
    "target_loss": 1e-8,
    "law_check_samples": 10,
    "law_tol": 1e-9,
    "checkpoint_every": 0,
    "log_every": 100,
}

_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "group": {"type": "string"},
        "cayley_file": {"type": ["string", "null"]},
        "generators": {"type": "array", "minItems": 1, "items": {"enum": ["x", "y", "z"]}},
        "p": {"type": "integer", "minimum": 2, "multipleOf": 2},
        "t_layers": _POS_INT,
        "h_layers": _NONNEG_INT,
        "hidden": {"type": "array", "items": _POS_INT},
        "seed": _NONNEG_INT,
        "num_states": _POS_INT,
        "test_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "readout": {"type": "array", "minItems": 4, "maxItems": 4, "items": _NONNEG_INT},
        "learning_rate": _POS_NUM,
        "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "epsilon": _POS_NUM,
        "batch_size": {"oneOf": [_POS_INT, {"type": "null"}]},
        "max_epochs": _POS_INT,
        "target_loss": {"type": "number", "minimum": 0},
        "law_check_samples": _NONNEG_INT,
        "law_tol": _POS_NUM,
        "checkpoint_every": _NONNEG_INT,
        "log_every": _POS_INT,
    },
}


class UsageError(Exception):
    pass


def load_config(path: str | None, seed: int | None = None) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except OSError as e:
            raise UsageError(f"cannot read config {path}: {e.strerror}") from e
        except json.JSONDecodeError as e:
            raise UsageError(f"config {path} is not valid JSON: {e}") from e
        try:
            jsonschema.validate(user, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            where = "/".join(str(k) for k in e.absolute_path) or "<root>"
            hint = ""
            if e.absolute_path and e.absolute_path[0] == "p":
                hint = " (p must be even: each coupling layer splits a slot into two halves)"
            raise UsageError(f"config {path}: {where}: {e.message}{hint}") from e
        cfg.update(user)
    if seed is not None:
        cfg["seed"] = seed
    if cfg["cayley_file"] is not None and not Path(cfg["cayley_file"]).is_file():
        raise UsageError(f"cayley_file {cfg['cayley_file']} does not exist")
    return cfg


def resolve_group(cfg) -> FiniteGroup:
    if cfg["cayley_file"]:
        try:
            with open(cfg["cayley_file"]) as f:
                return FiniteGroup.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError, KeyError) as e:
            raise UsageError(f"cannot load Cayley table {cfg['cayley_file']}: {e}") from e
    return builtin_group(cfg["group"])


def config_hash(cfg) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:12]


def _seeds(cfg):
    base = cfg["seed"]
    return {"model": base, "data": base + 1, "split": base + 2, "train": base + 3}


def build_task(cfg):
    group = resolve_group(cfg)
    gates = quantum.generate_gate_group([quantum.pi_rotation(a) for a in cfg["generators"]],
                                        target=group)
    dim = cfg["p"] * group.order
    if max(cfg["readout"]) >= dim:
        raise UsageError(f"readout coordinates {cfg['readout']} exceed p*|G| = {dim}")
    return group, gates, dim


def task_metadata(cfg, gates) -> dict:
    return {"readout": list(cfg["readout"]),
            "gates": [{"element": gates.isomorphism[k], "label": g.label, "matrix": g.reals.tolist()}
                      for k, g in enumerate(gates.gates)]}


def dump_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=None)
        f.write("\n")


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_loss_csv(path, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "test_loss", "max_law_residual"])
        for r in records:
            w.writerow([r.epoch, _fmt(r.train_loss), _fmt(r.test_loss), _fmt(r.max_law_residual)])


def make_run_dir(out_dir, cfg) -> Path:
    """``<out>/<config hash>-<timestamp>``, suffixed if a run already took that name."""
    base = Path(out_dir) / f"{config_hash(cfg)}-{time.strftime('%Y%m%dT%H%M%S')}"
    base.parent.mkdir(parents=True, exist_ok=True)
    run_dir, k = base, 0
    while True:
        try:
            run_dir.mkdir()
            return run_dir
        except FileExistsError:
            k += 1
            run_dir = base.with_name(f"{base.name}-{k}")


def cmd_train(config_path, out_dir, seed=None) -> int:
    t0 = time.process_time()
    wall0 = time.time()
    cfg = load_config(config_path, seed)
    group, gates, dim = build_task(cfg)
    seeds = _seeds(cfg)
    run_dir = make_run_dir(out_dir, cfg)
    dump_json(cfg, run_dir / "config.json")

    A = build_action(left_multiplication_action(group), cfg["p"], seed=seeds["model"],
                     t_layers=cfg["t_layers"], h_layers=cfg["h_layers"], hidden=cfg["hidden"])
    samples = quantum.make_dataset(gates, cfg["num_states"], seeds["data"], dim, cfg["readout"])
    train_set, test_set = split_dataset(samples, cfg["test_fraction"], seeds["split"])
    tc = TrainConfig(learning_rate=cfg["learning_rate"], beta1=cfg["beta1"], beta2=cfg["beta2"],
                     epsilon=cfg["epsilon"], batch_size=cfg["batch_size"],
                     max_epochs=cfg["max_epochs"], target_loss=cfg["target_loss"],
                     seed=seeds["train"], readout=tuple(cfg["readout"]),
                     law_check_samples=cfg["law_check_samples"], law_tol=cfg["law_tol"])
    meta = task_metadata(cfg, gates)
    log.info("run %s: %d params, %d train / %d test samples", run_dir, A.num_params,
             len(train_set), len(test_set))

    def save_model(action, path):
        d = action.to_dict()
        d["task"] = meta
        dump_json(d, path)

    def callback(epoch, action, state, rec):
        if epoch % cfg["log_every"] == 0:
            log.info("epoch %d train %.3e test %s law %.1e", epoch, rec.train_loss,
                     "-" if rec.test_loss is None else f"{rec.test_loss:.3e}",
                     rec.max_law_residual or 0.0)
        k = cfg["checkpoint_every"]
        if k and epoch and epoch % k == 0:
            ck = run_dir / "checkpoints"
            ck.mkdir(exist_ok=True)
            save_model(action, ck / f"model_epoch{epoch}.json")
            dump_json(state.to_dict(), ck / f"optimizer_epoch{epoch}.json")

    try:
        result = train(A, train_set, tc, test=test_set or None, callback=callback)
    except NonFiniteLoss as e:
        log.error("%s", e)
        return EXIT_NOT_CONVERGED

    trained = result.action
    save_model(trained, run_dir / "model.json")
    write_loss_csv(run_dir / "loss.csv", result.records)
    mask = cfg["readout"]
    final_train = loss(trained, train_set, mask)
    final_test = loss(trained, test_set, mask) if test_set else None
    laws = verify_group_laws(trained, max(cfg["law_check_samples"], 1), cfg["law_tol"], seed=seeds["model"])
    summary = {
        "run_dir": str(run_dir),
        "converged": result.converged,
        "epochs": len(result.history),
        "final_train_loss": final_train.total,
        "final_train_rms": final_train.rms,
        "final_test_loss": None if final_test is None else final_test.total,
        "final_test_rms": None if final_test is None else final_test.rms,
        "max_law_residual": laws.max_scaled,
        "laws_passed": laws.passed,
        "num_params": trained.num_params,
        "cpu_time_s": time.process_time() - t0,
        "wall_time_s": time.time() - wall0,
    }
    dump_json(summary, run_dir / "summary.json")
    print(run_dir)
    log.info("final train %.3e test %.3e; converged=%s", final_train.total,
             final_test.total if final_test else float("nan"), result.converged)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def load_model(path):
    try:
        with open(path) as f:
            d = json.load(f)
        return NeuralGroupAction.from_dict(d), d.get("task")
    except OSError as e:
        raise UsageError(f"cannot read model {path}: {e.strerror}") from e
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, NeuralGroupActionError) as e:
        raise UsageError(f"model {path} is malformed: {e}") from e


def _out_path(out, model_path, name):
    d = Path(out) if out else Path(model_path).parent
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def cmd_verify(model_path, samples=100, tol=1e-9, out=None, seed=0) -> int:
    A, _ = load_model(model_path)
    rep = verify_group_laws(A, samples, tol, seed=seed)
    report = rep.to_dict()
    ok = rep.passed
    if A.dim <= MAX_VOLUME_DIM:
        vol = verify_volume(A, min(samples, 20), seed=seed)
        report["volume"] = vol.to_dict()
        ok = ok and vol.passed
    path = _out_path(out, model_path, "law_report.json")
    dump_json(report, path)
    print(f"laws {'pass' if rep.passed else 'FAIL'}: max residual {rep.max_residual:.3e} "
          f"(scaled {rep.max_scaled:.3e}, tol {tol:g}) -> {path}")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _distance(true_reals, learned_reals):
    a = np.asarray(true_reals)
    b = np.asarray(learned_reals)
    nb = np.linalg.norm(b)
    if nb == 0:
        return 1.0
    return quantum.phase_invariant_distance(quantum.QubitState.from_reals(a / np.linalg.norm(a)),
                                            quantum.QubitState.from_reals(b / nb))


def evaluate(A, task, state_seed):
    """Learned vs. true images of one random state under every group element."""
    readout = (task or {}).get("readout", [0, 1, 2, 3])
    gates = (task or {}).get("gates")
    if gates is None:
        gg = quantum.generate_gate_group([quantum.pi_rotation(a) for a in "xyz"], target=A.group)
        gates = [{"element": gg.isomorphism[k], "label": g.label, "matrix": g.reals.tolist()}
                 for k, g in enumerate(gg.gates)]
    psi = quantum.random_state(state_seed)
    x = quantum.embed(psi.reals, A.dim, readout)
    rows, elements = [("input", psi.reals)], []
    learned_rows, true_rows = [], []
    for entry in sorted(gates, key=lambda e: e["element"]):
        g = entry["element"]
        m = np.asarray(entry["matrix"]).reshape(2, 2, 2)
        U = quantum.Gate(m[..., 0] + 1j * m[..., 1], entry["label"])
        true = U(psi).reals
        learned = A.apply(g, x)[readout]
        label = A.group.labels[g]
        learned_rows.append((f"learned_{label}", learned))
        true_rows.append((f"true_{label}", true))
        elements.append({"element": g, "label": label, "gate": entry["label"],
                         "linf_error": float(np.abs(learned - true).max()),
                         "phase_invariant_distance": _distance(true, learned)})
    return rows + learned_rows + true_rows, elements


def cmd_eval(model_path, state_seed=0, out=None) -> int:
    A, task = load_model(model_path)
    rows, elements = evaluate(A, task, state_seed)
    csv_path = _out_path(out, model_path, "bloch.csv")
    quantum.write_bloch_csv(csv_path, rows)
    report = {"state_seed": state_seed, "elements": elements,
              "max_linf_error": max(e["linf_error"] for e in elements)}
    dump_json(report, csv_path.with_name("eval.json"))
    print(f"max per-component error {report['max_linf_error']:.3e} -> {csv_path}")
    return EXIT_OK


def cmd_gen_dataset(config_path, out, seed=None) -> int:
    cfg = load_config(config_path, seed)
    group, gates, dim = build_task(cfg)
    seeds = _seeds(cfg)
    path = Path(out or ".")
    path.mkdir(parents=True, exist_ok=True)
    path = path / "dataset.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["state", "element", "label", "re0", "im0", "re1", "im1",
                    "target_re0", "target_im0", "target_re1", "target_im1"])
        for i, ss in enumerate(quantum.state_seeds(seeds["data"], cfg["num_states"])):
            psi = quantum.random_state(ss)
            for k, U in enumerate(gates.gates):
                g = gates.isomorphism[k]
                w.writerow([i, g, group.labels[g], *map(repr, psi.reals.tolist()),
                            *map(repr, U(psi).reals.tolist())])
    print(path)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="nga", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="build, train and save a Q8 neural group action")
    p.add_argument("--config", help="JSON config; defaults reproduce the Q8 experiment")
    p.add_argument("--out", default="runs", help="parent directory for the run directory")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("verify", help="check group laws (and volume when small) of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="compare learned and true gate images of a random state")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("gen-dataset", help="write the supervised dataset as CSV")
    p.add_argument("--config")
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "train":
            return cmd_train(args.config, args.out, args.seed)
        if args.command == "verify":
            if args.samples < 1 or args.tol <= 0:
                raise UsageError("--samples must be >= 1 and --tol > 0")
            return cmd_verify(args.model, args.samples, args.tol, args.out, args.seed)
        if args.command == "eval":
            return cmd_eval(args.model, args.seed, args.out)
        return cmd_gen_dataset(args.config, args.out, args.seed)
    except (UsageError, NeuralGroupActionError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
