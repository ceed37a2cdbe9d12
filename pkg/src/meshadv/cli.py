"""``meshadv`` command line: gen-data, train, attack, eval, curvature.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .attack import AttackError, AttackResult, next_class_targets, run_batch
from .classifier import ModelFormatError, forward, load_model, save_model, train
from .config import ConfigError, RunConfig
from .geometry import gaussian_curvature
from .maxot import SurrogateError
from .mesh import SHAPE_KINDS, MeshError, build_topology, load_mesh, make_dataset, read_dataset, save_off, write_dataset
from .metrics import evaluate
from .sampling import sample_points

logger = logging.getLogger("meshadv")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


# --------------------------------------------------------------------------
# path helpers


def _out(cfg: RunConfig, sub: str) -> Path:
    return Path(cfg["out"]) / sub


def _data_dir(cfg) -> Path:
    return Path(cfg["data.dir"]) if cfg["data.dir"] else _out(cfg, "data")


def _model_path(cfg) -> Path:
    return Path(cfg["model.path"]) if cfg["model.path"] else _out(cfg, "model") / "model.bin"


def _results_path(cfg) -> Path:
    return Path(cfg["eval.results"]) if cfg["eval.results"] else _out(cfg, "attack") / "results.json"


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig, args) -> int:
    specs, names = cfg.templates()
    for i, s in enumerate(specs):
        if s.kind not in SHAPE_KINDS:
            raise ConfigError(f"data.templates[{i}].kind: unknown shape kind {s.kind!r} "
                              f"(expected one of {', '.join(SHAPE_KINDS)})")
    ds = make_dataset(specs, int(cfg["data.per_class"]), float(cfg["data.split"]), int(cfg["seed"]), names)
    out = _data_dir(cfg)
    manifest = write_dataset(ds, out)
    cfg.snapshot(out)
    print(f"wrote {len(ds.train) + len(ds.test)} meshes to {out}")
    print(f"manifest {manifest} checksum {ds.checksum()}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    ds = read_dataset(_data_dir(cfg) / "manifest.json")
    n_classes = cfg["train.num_classes"]
    tcfg = cfg.train_config()
    model, history = train(ds.train, ds.test, tcfg, None if n_classes is None else int(n_classes))
    path = _model_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    (path.parent / "history.csv").write_text(history.to_csv())
    cfg.snapshot(path.parent)
    final = history.test_acc[-1] if history.test_acc else float("nan")
    print(f"model saved to {path}")
    print(f"final test accuracy {final:.4f}")
    return EXIT_OK


def _select_instances(cfg, ds, model):
    split = cfg["attack.split"]
    if split not in ("train", "test"):
        raise ConfigError(f"attack.split: expected 'train' or 'test', got {split!r}")
    meshes = ds.test if split == "test" else ds.train
    paths = [r["path"] for r in ds.records if r["split"] == split]
    idx = np.arange(len(meshes))
    if cfg["attack.correct_only"]:
        seeds = np.random.SeedSequence(int(cfg["seed"])).spawn(len(meshes))
        clouds = np.stack([sample_points(m, int(cfg["attack.points"]), s) for m, s in zip(meshes, seeds)])
        pred = np.argmax(_logits(model, clouds), axis=1)
        idx = idx[pred == np.array([m.label for m in meshes])]
    limit = cfg["attack.instances"]
    if limit is not None:
        idx = idx[: int(limit)]
    return [meshes[i] for i in idx], [paths[i] for i in idx]


def _logits(model, clouds):
    return np.concatenate([forward(model, clouds[i:i + 32]) for i in range(0, len(clouds), 32)])


def _targets(cfg, meshes, num_classes):
    policy = cfg["attack.target_policy"]
    labels = [m.label for m in meshes]
    if policy == "next":
        return next_class_targets(labels, num_classes)
    if policy == "explicit":
        targets = cfg["attack.targets"]
        if targets is None or len(targets) != len(meshes):
            raise ConfigError(f"attack.targets: need one target per instance ({len(meshes)})")
        targets = np.asarray(targets, dtype=np.int64)
        if targets.min() < 0 or targets.max() >= num_classes:
            raise ConfigError("attack.targets: target class out of range")
        return targets
    raise ConfigError("attack.target_policy: set 'next' (cyclic next class) or 'explicit' with attack.targets")


def cmd_attack(cfg: RunConfig, args) -> int:
    acfg = cfg.attack_config()
    model = load_model(_model_path(cfg))
    data_dir = _data_dir(cfg)
    ds = read_dataset(data_dir / "manifest.json")
    meshes, paths = _select_instances(cfg, ds, model)
    targets = _targets(cfg, meshes, model.num_classes)
    if not meshes:
        raise ConfigError("no instances selected for attack")
    out = _out(cfg, "attack")
    for sub in ("adv", "traces", "observations"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out)
    t0 = time.perf_counter()
    results = run_batch(meshes, targets, model, acfg, int(cfg["jobs"]))
    entries = []
    for i, (res, mesh, path) in enumerate(zip(results, meshes, paths)):
        adv_path = out / "adv" / f"{i:04d}.off"
        save_off(res.mesh(), adv_path)
        trace_path = out / "traces" / f"{i:04d}.csv"
        trace_path.write_text(res.trace_csv())
        entry = {"id": i, "mesh_path": str(data_dir / path), "original_label": int(mesh.label),
                 "target_label": int(res.target), "target_policy": cfg["attack.target_policy"],
                 "mode": acfg.mode, "adv_path": str(adv_path), "trace_path": str(trace_path)}
        if res.observations:
            obs_path = out / "observations" / f"{i:04d}.csv"
            chunks = ["iteration," + res.observations[0][1].to_csv().splitlines()[0] + "\n"]
            chunks += [log.to_csv(header=False, prefix=f"{it},") for it, log in res.observations]
            obs_path.write_text("".join(chunks))
            entry["observations_path"] = str(obs_path)
        entry.update(res.summary())
        entries.append(entry)
    (out / "results.json").write_text(json.dumps(entries, indent=2))
    asr = np.mean([e["success"] for e in entries])
    print(f"attacked {len(entries)} instances in {time.perf_counter() - t0:.1f}s ({acfg.mode} mode)")
    print(f"ASR {asr:.4f}")
    return EXIT_OK


def load_results(path) -> list[AttackResult]:
    """Rebuild attack results from a results manifest written by ``attack``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"results manifest not found: {path}")
    out = []
    for e in json.loads(path.read_text()):
        adv = load_mesh(e["adv_path"])
        res = AttackResult(adv.vertices, adv.faces, int(e["target_label"]), bool(e["success"]),
                           float(e["target_rate"]), e.get("transform_rate"), float(e["beta"]), float(e["d_c"]),
                           float(e["d_g"]), float(e["wall_clock"]), beta_trace=e.get("beta_trace", []),
                           iteration=int(e.get("success_iteration", 0)))
        if e.get("trace_path") and Path(e["trace_path"]).exists():
            res.trace = _read_trace(e["trace_path"])
        out.append(res)
    return out


def _read_trace(path) -> list:
    rows = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    return [{"iteration": int(r["iteration"]), "total": float(r["total"]), "attack_loss": float(r["attack_loss"]),
             "regularizer": float(r["regularizer"]), "beta": float(r["beta"])} for r in rows]


def success_vs_iteration(results, iterations: int | None = None) -> str:
    """Per-iteration rates recomputed from loss traces.

    ``target_prob_rate`` is the fraction of instances whose attack loss at
    that iteration is below ln 2, i.e. the target probability on the
    optimisation sample exceeds one half.  ``checked_rate`` is the fraction
    whose held-out success check had passed by that iteration.
    """
    traced = [r for r in results if r.trace]
    n_iter = iterations or max((len(r.trace) for r in traced), default=0)
    rows = ["iteration,target_prob_rate,checked_rate"]
    for it in range(n_iter):
        below = [r.trace[min(it, len(r.trace) - 1)]["attack_loss"] < math.log(2) for r in traced]
        checked = [r.success and r.iteration <= it + 1 for r in results]
        rows.append(f"{it},{np.mean(below) if below else 0.0:.6g},{np.mean(checked) if checked else 0.0:.6g}")
    return "\n".join(rows) + "\n"


COMPARISON_KEYS = ("instances", "asr", "mean_d_c", "mean_d_g")


def comparison_table(label_a, report_a, label_b, report_b) -> str:
    agg_a, agg_b = report_a.aggregates(), report_b.aggregates()
    keys = list(COMPARISON_KEYS) + [k for k in agg_a if k.startswith("asr_")]
    rows = [f"metric,{label_a},{label_b}"]
    rows += [f"{k},{agg_a.get(k, float('nan')):.6g},{agg_b.get(k, float('nan')):.6g}" for k in keys]
    return "\n".join(rows) + "\n"


def cmd_eval(cfg: RunConfig, args) -> int:
    model = load_model(_model_path(cfg))
    results = load_results(_results_path(cfg))
    space = cfg.space() if cfg["eval.transforms"] else None
    kw = dict(defenses=cfg.defenses(), n_points=int(cfg["attack.points"]),
              resamples=int(cfg["eval.resamples"]), threshold=float(cfg["eval.threshold"]), space=space)
    seed = int(cfg["seed"])
    report = evaluate(model, results, rng=seed, **kw)
    out = _out(cfg, "eval")
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(report.to_json())
    (out / "success_vs_iteration.csv").write_text(success_vs_iteration(results))
    agg = report.aggregates()
    print(" ".join(f"{k}={v:.4g}" for k, v in agg.items()))
    if cfg["eval.compare"]:
        other = load_results(cfg["eval.compare"])
        report_b = evaluate(model, other, rng=seed, **kw)
        label_a, label_b = _manifest_label(_results_path(cfg)), _manifest_label(cfg["eval.compare"])
        if label_a == label_b:
            label_a, label_b = label_a + "_a", label_b + "_b"
        (out / "compare_report.csv").write_text(report_b.to_csv())
        table = comparison_table(label_a, report, label_b, report_b)
        (out / "comparison.csv").write_text(table)
        print(table, end="")
    return EXIT_OK


def _manifest_label(path) -> str:
    entries = json.loads(Path(path).read_text())
    return entries[0]["mode"] if entries else Path(path).stem


def cmd_curvature(cfg: RunConfig, args) -> int:
    mesh = load_mesh(args.mesh)
    topo = build_topology(mesh)
    field = gaussian_curvature(mesh, topo, cfg["curvature.area"])
    out = _out(cfg, "curvature")
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out)
    csv_path = out / (Path(args.mesh).stem + "_curvature.csv")
    csv_path.write_text(field.to_csv())
    total = field.total()
    expected = 2 * math.pi * topo.euler_characteristic
    print(f"curvature written to {csv_path}")
    print(f"total curvature {total:.12f} (2*pi*chi = {expected:.12f}, chi = {topo.euler_characteristic})")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "attack": cmd_attack, "eval": cmd_eval,
            "curvature": cmd_curvature}


def _common(top: bool) -> argparse.ArgumentParser:
    # the subcommand copies use SUPPRESS so they never overwrite options given
    # before the subcommand name; their --set entries are collected separately
    d = {} if top else {"default": argparse.SUPPRESS}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of flat key-value settings", **d)
    common.add_argument("--seed", type=int, help="override the 'seed' key", **d)
    common.add_argument("--out", help="output root directory (override the 'out' key)", **d)
    common.add_argument("--jobs", type=int, help="worker processes for batch attacks", **d)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="set" if top else "set_late",
                        help="override one config key; VALUE is parsed as JSON when possible")
    common.add_argument("-v", "--verbose", action="store_true", **d)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshadv", description=__doc__.splitlines()[0], parents=[_common(True)])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train", "attack", "eval"):
        sub.add_parser(name, parents=[_common(False)])
    curv = sub.add_parser("curvature", parents=[_common(False)])
    curv.add_argument("mesh", help="OFF or OBJ mesh file")
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set + getattr(args, "set_late", []):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    for key in ("seed", "out", "jobs"):
        val = getattr(args, key)
        if val is not None:
            out[key] = val
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    except (AttackError, SurrogateError, FloatingPointError, OSError) as exc:
        logger.error("runtime failure: %s", exc)
        return EXIT_RUNTIME
    except (ConfigError, MeshError, ModelFormatError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
