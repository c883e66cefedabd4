"""``branchlab`` command line: generate, collect, train, solve, bench, report.

Every subcommand reads an optional ``key = value`` config file (``--config``)
and accepts the same keys as ``--flags``; flags win over the file, the file
wins over defaults. The resolved config is written next to the outputs.

Exit codes: 0 ok, 2 config error, 3 limit reached on all instances,
4 data-format error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from . import milp as milpio
from .bnb import solve as bnb_solve
from .generators import FAMILIES, GenSpec, generate
from .gnn import ARCHS, ArchitectureMismatch, OOMGuard, build_model
from .imitation import LOSSES, EmptyDataset, TrainConfig, collect_samples, eval_accuracy, load_samples, save_samples, train
from .milp import DataFormatError, InvalidInstance
from .policies import PolicyConfig, make_policy
from .report import MANIFEST_FORMAT, MANIFEST_VERSION, report_manifest

log = logging.getLogger("branchlab")

EXIT_OK, EXIT_CONFIG, EXIT_LIMIT, EXIT_DATA = 0, 2, 3, 4
DEFAULT_TIME_LIMIT = 300.0


class ConfigError(ValueError):
    """Bad or missing configuration; exit code 2."""


# -- config values -------------------------------------------------------------------

def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _dims(text: str) -> tuple:
    return tuple(int(p) for p in text.lower().replace("x", ",").split(",") if p.strip())


def _pair(text: str) -> tuple:
    lo, hi = (float(p) for p in text.split(","))
    return lo, hi


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Key:
    name: str
    parse: object
    default: object = None
    help: str = ""
    path: bool = False  # path-valued keys are left out of the config hash


_POLICY_KEYS = [
    Key("f_kind", str, "product_eps", "strong-branching score combiner: product_eps or linear_mu"),
    Key("mu", float, 1.0 / 6.0, "weight for linear_mu"),
    Key("eps", float, 1e-6, "floor for product_eps"),
    Key("cap_factor", float, 1e6, "infeasible-child gain cap factor"),
]
_SOLVE_KEYS = _POLICY_KEYS + [
    Key("reliability_k", int, 4, "pseudocost reliability threshold"),
    Key("max_nodes", int, None, "node limit (empty = none)"),
    Key("time_limit", float, DEFAULT_TIME_LIMIT, "time limit per instance in seconds"),
    Key("clock", str, "wall", "wall or work (deterministic work units)"),
]

COMMAND_KEYS: dict[str, list[Key]] = {
    "generate": [
        Key("family", str, "setcover", f"one of {', '.join(FAMILIES)}"),
        Key("size", str, "small", "preset name or custom"),
        Key("dims", _dims, (), "custom dimensions, e.g. 60x30"),
        Key("count", int, 10, "number of instances"),
        Key("seed", int, 0, "base seed; instance k uses a seed derived from (seed, k)"),
        Key("out", str, "instances", "output directory", path=True),
        Key("density", float, None, "setcover matrix density (family default 0.05)"),
        Key("cost_range", _pair, None, "setcover integer cost range lo,hi (family default 1,100)"),
        Key("mean_bundle", float, None, "cauction mean bundle size (family default 4)"),
        Key("value_range", _pair, None, "cauction item value range lo,hi (family default 1,100)"),
        Key("markup", float, None, "cauction price markup (family default 0.2)"),
        Key("fixed_range", _pair, None, "facilities fixed cost range lo,hi (family default 100,110)"),
        Key("fixed_scale", float, None, "facilities fixed cost scale (family default 1)"),
        Key("cost_scale", float, None, "facilities assignment cost scale (family default 10)"),
        Key("capacity_ratio", float, None, "facilities total capacity / total demand (family default 5)"),
        Key("affinity", int, None, "indset Barabasi-Albert affinity (family default 4)"),
    ],
    "collect": [
        Key("instances", str, None, "directory of MILP-JSON files", path=True),
        Key("out", str, "samples.jsonl", "SAMPLES-JSONL output", path=True),
        Key("node_cap", int, 50, "expanded nodes recorded per instance"),
        Key("seed", int, 0, "seed"),
    ] + _POLICY_KEYS,
    "train": [
        Key("samples", str, None, "SAMPLES-JSONL training data", path=True),
        Key("test_samples", str, None, "optional SAMPLES-JSONL for test accuracy", path=True),
        Key("out", str, "model.json", "CKPT-JSON output", path=True),
        Key("arch", str, "mpnn", f"one of {', '.join(ARCHS)}"),
        Key("loss", str, "rank", f"one of {', '.join(LOSSES)}"),
        Key("layers", int, None, "message-passing layers (empty = architecture default)"),
        Key("hidden", int, 64, "hidden width"),
        Key("global_agg", _bool, False, "subgraph global aggregation"),
        Key("epochs", int, None, "epoch budget (empty = 200 for subgraph, else 500)"),
        Key("batch_size", int, 16, "minibatch size"),
        Key("lr", float, 1e-3, "Adam learning rate"),
        Key("val_fraction", float, 0.2, "fraction of instances held out for validation"),
        Key("patience", int, 50, "early-stopping patience in epochs (0 = off)"),
        Key("clip_norm", float, None, "gradient norm clip (empty = off)"),
        Key("seed", int, 0, "seed"),
    ],
    "solve": [
        Key("instance", str, None, "MILP-JSON file", path=True),
        Key("policy", str, "pseudocost", "strong, mostfrac, pseudocost or gnn:<ckpt>"),
        Key("out", str, None, "SolveStats JSON output (empty = stdout)", path=True),
    ] + _SOLVE_KEYS,
    "bench": [
        Key("instances", str, None, "directory of MILP-JSON files", path=True),
        Key("policies", _list, [], "comma-separated policies"),
        Key("baseline", str, "pseudocost", "policy co-run with every bench (empty = none)"),
        Key("accuracy_from", _list, [], "extra checkpoints whose test accuracy goes in the manifest", path=True),
        Key("out", str, "manifest.jsonl", "RUN-MANIFEST-JSONL output", path=True),
        Key("threads", int, 1, "worker pool width (BRANCHLAB_THREADS overrides)"),
        Key("seed", int, 0, "seed recorded in the manifest"),
    ] + _SOLVE_KEYS,
    "report": [
        Key("manifest", str, None, "RUN-MANIFEST-JSONL input", path=True),
        Key("out", str, None, "write the report here as well as stdout", path=True),
    ],
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def resolve_config(command: str, file_values: dict[str, str], flag_values: dict[str, str]) -> dict:
    keys = {k.name: k for k in COMMAND_KEYS[command]}
    raw = {**file_values, **{k: v for k, v in flag_values.items() if v is not None}}
    unknown = sorted(set(raw) - set(keys))
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    cfg = {}
    for name, key in keys.items():
        if name in raw and raw[name].strip() != "":
            try:
                cfg[name] = key.parse(raw[name])
            except ValueError as exc:
                raise ConfigError(f"bad value for {name}: {raw[name]!r} ({exc})") from None
        else:
            cfg[name] = key.default
    return cfg


def config_text(command: str, cfg: dict) -> str:
    lines = [f"# branchlab {command}"]
    lines += [f"{k.name} = {_fmt(cfg[k.name])}" for k in COMMAND_KEYS[command]]
    return "\n".join(lines) + "\n"


def config_hash(command: str, cfg: dict) -> str:
    keep = {k.name: _fmt(cfg[k.name]) for k in COMMAND_KEYS[command] if not k.path}
    for name in ("policies", "baseline", "policy"):
        if name in keep:  # checkpoint paths reduce to their file stem
            v = cfg[name]
            keep[name] = _fmt([_policy_label(x) for x in v] if isinstance(v, list) else _policy_label(v or ""))
    return hashlib.sha256(json.dumps([command, keep], sort_keys=True).encode()).hexdigest()


def write_config(command: str, cfg: dict, target: Path) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(config_text(command, cfg))


def _beside(out: str) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".config")


def derive_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base), int(index)]).generate_state(1)[0])


def _require(cfg: dict, *names) -> None:
    for n in names:
        if cfg[n] in (None, "", [], ()):
            raise ConfigError(f"missing required key {n!r}")


def _policy_cfg(cfg: dict) -> PolicyConfig:
    try:
        return PolicyConfig(f_kind=cfg["f_kind"], mu=cfg["mu"], eps=cfg["eps"], cap_factor=cfg["cap_factor"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _instance_files(directory: str) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise ConfigError(f"instance directory not found: {directory}")
    files = sorted(d.glob("*.json"))
    if not files:
        raise ConfigError(f"no *.json instances in {directory}")
    return files


# -- subcommands ------------------------------------------------------------------

_GEN_PARAMS = ("density", "cost_range", "mean_bundle", "value_range", "markup",
               "fixed_range", "fixed_scale", "cost_scale", "capacity_ratio", "affinity")


def cmd_generate(cfg: dict) -> int:
    if cfg["count"] < 1:
        raise ConfigError("count must be positive")
    params = {k: cfg[k] for k in _GEN_PARAMS if cfg[k] is not None}
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for k in range(cfg["count"]):
        try:
            spec = GenSpec(cfg["family"], cfg["size"], derive_seed(cfg["seed"], k), tuple(cfg["dims"]), params)
            inst = generate(spec)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        milpio.save(inst, out / f"{cfg['family']}-{k:04d}.json")
    write_config("generate", cfg, out / "generate.config")
    print(f"wrote {cfg['count']} instances to {out}")
    return EXIT_OK


def cmd_collect(cfg: dict) -> int:
    _require(cfg, "instances")
    files = _instance_files(cfg["instances"])
    pcfg = _policy_cfg(cfg)
    instances = [milpio.load(f) for f in files]
    samples = collect_samples(instances, node_cap=cfg["node_cap"], seed=cfg["seed"], cfg=pcfg,
                              instance_ids=[f.stem for f in files])
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    save_samples(samples, cfg["out"])
    write_config("collect", cfg, _beside(cfg["out"]))
    print(f"wrote {len(samples)} samples from {len(files)} instances to {cfg['out']}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    _require(cfg, "samples")
    if cfg["arch"] not in ARCHS:
        raise ConfigError(f"arch must be one of {ARCHS}")
    try:
        tcfg = TrainConfig(loss=cfg["loss"], max_epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                           seed=cfg["seed"], val_fraction=cfg["val_fraction"],
                           patience=cfg["patience"] or None, clip_norm=cfg["clip_norm"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    samples = load_samples(cfg["samples"])
    model = build_model(cfg["arch"], cfg["layers"], cfg["hidden"], seed=cfg["seed"], global_agg=cfg["global_agg"])
    result = train(model, samples, tcfg)
    ckpt = result.checkpoint
    ckpt["meta"]["arch"] = cfg["arch"]
    if cfg["test_samples"]:
        test = load_samples(cfg["test_samples"])
        ckpt["meta"]["test_accuracy"] = eval_accuracy(model, test) if test else None
        ckpt["meta"]["test_samples"] = len(test)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(ckpt) + "\n")
    with open(out.with_name(out.stem + ".loss.csv"), "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for epoch, tl, vl in result.history:
            fh.write(f"{epoch},{tl!r},{vl!r}\n")
    write_config("train", cfg, _beside(cfg["out"]))
    print(f"trained {cfg['arch']}/{cfg['loss']} for {len(result.history)} epochs "
          f"(best epoch {result.best_epoch}); wrote {out}")
    return EXIT_OK


def _build_policy(spec: str, cfg: dict):
    # gnn policies load a fresh model each call, so workers never share counters
    if spec.startswith("gnn:") and not Path(spec[4:]).is_file():
        raise ConfigError(f"checkpoint not found: {spec[4:]}")
    try:
        return make_policy(spec, _policy_cfg(cfg), cfg["reliability_k"])
    except ValueError as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise ConfigError(str(exc)) from None


def _check_clock(cfg: dict) -> None:
    if cfg["clock"] not in ("wall", "work"):
        raise ConfigError("clock must be wall or work")


def cmd_solve(cfg: dict) -> int:
    _require(cfg, "instance")
    _check_clock(cfg)
    if not Path(cfg["instance"]).is_file():
        raise ConfigError(f"instance not found: {cfg['instance']}")
    inst = milpio.load(cfg["instance"])
    policy = _build_policy(cfg["policy"], cfg)
    stats, x = bnb_solve(inst, policy, cfg["max_nodes"], cfg["time_limit"], clock=cfg["clock"])
    doc = {"instance_id": Path(cfg["instance"]).stem, "policy": cfg["policy"], **stats.as_dict(),
           "x": None if x is None else [float(v) for v in x]}
    text = json.dumps(doc, indent=2) + "\n"
    if cfg["out"]:
        Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg["out"]).write_text(text)
        write_config("solve", cfg, _beside(cfg["out"]))
    else:
        sys.stdout.write(text)
    return EXIT_LIMIT if stats.status == "limit" else EXIT_OK


def _policy_label(spec: str) -> str:
    return f"gnn:{Path(spec[4:]).stem}" if spec.startswith("gnn:") else spec


def _file_digest(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _accuracy_entries(paths) -> list[dict]:
    out, seen = [], set()
    for p in paths:
        if p in seen:
            continue
        seen.add(p)
        with open(p) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{p}: {exc}") from exc
        meta = obj.get("meta", {})
        if meta.get("test_accuracy") is not None:
            out.append({"arch": obj.get("arch"), "loss": meta.get("loss"), "accuracy": meta["test_accuracy"],
                        "checkpoint": Path(p).stem})
    return out


def bench_rows(files, specs, cfg: dict, threads: int = 1) -> list[dict]:
    """Solve every instance with every policy; rows in (instance, policy) order."""
    local = threading.local()

    def policies():
        if not hasattr(local, "policies"):
            local.policies = [_build_policy(s, cfg) for s in specs]
        return local.policies

    def run_instance(path: Path) -> list[dict]:
        inst = milpio.load(path)
        rows = []
        for spec, policy in zip(specs, policies()):
            row = {"instance_id": path.stem, "policy": _policy_label(spec)}
            try:
                stats, _ = bnb_solve(inst, policy, cfg["max_nodes"], cfg["time_limit"], clock=cfg["clock"])
            except OOMGuard:
                row.update(status="model_oom_guard", node_count=0, solve_time_s=0.0, objective=None)
            else:
                row.update(status="limit" if stats.status == "limit" else "ok", node_count=stats.node_count,
                           solve_time_s=stats.solve_time, objective=stats.as_dict()["incumbent_objective"])
            rows.append(row)
        return rows

    if threads <= 1:
        per_instance = [run_instance(f) for f in files]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_instance = list(pool.map(run_instance, files))
    return [r for rows in per_instance for r in rows]


def cmd_bench(cfg: dict) -> int:
    _check_clock(cfg)
    specs = list(dict.fromkeys(cfg["policies"]))
    if not specs:
        raise ConfigError("empty policy set")
    _require(cfg, "instances")
    baseline = cfg["baseline"] or None
    if baseline and baseline not in specs:
        specs.append(baseline)
    files = _instance_files(cfg["instances"])
    threads = cfg["threads"]
    if os.environ.get("BRANCHLAB_THREADS"):
        try:
            threads = int(os.environ["BRANCHLAB_THREADS"])
        except ValueError:
            raise ConfigError("BRANCHLAB_THREADS must be an integer") from None
    if threads < 1:
        raise ConfigError("threads must be positive")
    for s in specs:
        _build_policy(s, cfg)  # fail fast on bad names or checkpoints

    ckpts = [s[4:] for s in specs if s.startswith("gnn:")] + list(cfg["accuracy_from"])
    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "config_hash": config_hash("bench", cfg),
        "inputs_hash": _file_digest(files + [Path(p) for p in ckpts]),
        "seeds": {"base": cfg["seed"]},
        "policies": [_policy_label(s) for s in specs],
        "baseline": _policy_label(baseline) if baseline else None,
        "clock": cfg["clock"],
        "instances": [f.stem for f in files],
        "accuracy": _accuracy_entries(ckpts),
        "environment": {"python": platform.python_version(), "numpy": np.__version__, "backend": kernels.backend()},
    }
    rows = bench_rows(files, specs, cfg, threads)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    write_config("bench", cfg, _beside(cfg["out"]))
    print(f"wrote {len(rows)} rows to {out}")
    solved = [r for r in rows if r["status"] != "model_oom_guard"]
    return EXIT_LIMIT if solved and all(r["status"] == "limit" for r in solved) else EXIT_OK


def cmd_report(cfg: dict) -> int:
    _require(cfg, "manifest")
    if not Path(cfg["manifest"]).is_file():
        raise ConfigError(f"manifest not found: {cfg['manifest']}")
    text = report_manifest(cfg["manifest"])
    sys.stdout.write(text)
    if cfg["out"]:
        Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg["out"]).write_text(text)
        write_config("report", cfg, _beside(cfg["out"]))
    return EXIT_OK


_HELP = {
    "generate": "write random instances as MILP-JSON",
    "collect": "record strong-branching samples as SAMPLES-JSONL",
    "train": "train a GNN policy, writing CKPT-JSON and a loss CSV",
    "solve": "solve one instance and print SolveStats JSON",
    "bench": "solve an instance set with a policy set, writing a run manifest",
    "report": "print accuracy and Time/Node tables from a manifest",
}

COMMANDS = {"generate": cmd_generate, "collect": cmd_collect, "train": cmd_train,
            "solve": cmd_solve, "bench": cmd_bench, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="branchlab", description="Learning-to-branch experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", help="key = value config file")
        for k in keys:
            p.add_argument(f"--{k.name.replace('_', '-')}", dest=k.name, default=None, metavar="VALUE",
                           help=f"{k.help} [default: {_fmt(k.default) or 'none'}]")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_values = {}
        if args.config:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            file_values = parse_config_text(text, args.config)
        flags = {k.name: getattr(args, k.name) for k in COMMAND_KEYS[args.command]}
        cfg = resolve_config(args.command, file_values, flags)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, InvalidInstance, ArchitectureMismatch, EmptyDataset, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
