"""Command-line interface: train / evaluate / verify / export-latents.

Configuration comes from flat key=value config files overridden by CLI
flags; every run writes curves.csv, latents.csv, checkpoint.npz, and
runlog.json into --out.
"""

from __future__ import annotations

import os

# Tiny active sets make BLAS thread fan-out pure overhead; cap it before
# numpy loads unless the user has chosen a setting.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS"):
    os.environ.setdefault(_var, "2")

import argparse
import json
import sys
from dataclasses import fields

from . import train as trainmod
from .data import Dataset, load_csv, load_idx, subset
from .train import RunConfig, evaluate, run_ablation, verify


def _parse_config_file(path: str) -> dict:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name: str, value, default):
    """Turn a config-file string into the type of the field's default."""
    if not isinstance(value, str):
        return value
    if name == "jitter":
        return value if value == "auto" else float(value)
    if name == "n" and value.lower() in ("none", ""):
        return None
    if isinstance(default, bool):
        return _BOOL[value.lower()]
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def build_run_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(_parse_config_file(args.config))
    known = {f.name for f in fields(RunConfig)}
    for key in values:
        if key not in known:
            raise SystemExit(f"unknown config key {key!r}")
    for name in known:
        cli_val = getattr(args, name, None)
        if cli_val is not None:
            values[name] = cli_val
    defaults = RunConfig()
    cfg = RunConfig(**{k: _coerce(k, v, getattr(defaults, k)) for k, v in values.items()})
    cfg.validate()
    return cfg


def _add_run_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="flat key=value config file; flags override")
    sp.add_argument("--mode", choices=trainmod.MODES)
    sp.add_argument("--amortized", dest="amortized", action="store_const", const=True, default=None)
    sp.add_argument("--non-amortized", dest="amortized", action="store_const", const=False)
    sp.add_argument("--data", help="'synth', a CSV path, or idx:IMAGES[,LABELS]")
    sp.add_argument("--n", type=int, help="training subset size")
    sp.add_argument("--d", type=int, help="synthetic output dimension")
    sp.add_argument("--q", type=int, help="latent dimension")
    sp.add_argument("--active-set", dest="active_set", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jitter")
    sp.add_argument("--num-mc", dest="num_mc", type=int)
    sp.add_argument("--ablation", choices=trainmod.ABLATIONS)
    sp.add_argument("--precision", type=int, choices=(32, 64))
    sp.add_argument("--out")
    sp.add_argument("--csv-labels", dest="csv_labels", action="store_const", const=True, default=None)


def _load_eval_data(source: str | None, n: int | None, seed: int, csv_labels: bool) -> Dataset | None:
    if source is None:
        return None
    if source.startswith("idx:"):
        parts = source[4:].split(",")
        ds = load_idx(parts[0], parts[1] if len(parts) > 1 else None)
    else:
        ds = load_csv(source, has_labels=csv_labels)
    if n is not None and n < ds.n:
        ds = subset(ds, n, seed)
    return ds


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="sasgp", description="GP decoder training with stochastic active sets")
    sub = parser.add_subparsers(dest="command", required=True)

    sp_train = sub.add_parser("train", help="run a training loop")
    _add_run_flags(sp_train)

    sp_eval = sub.add_parser("evaluate", help="metrics for a checkpoint")
    sp_eval.add_argument("--checkpoint", required=True)
    sp_eval.add_argument("--data", help="test data: CSV path or idx:IMAGES[,LABELS]")
    sp_eval.add_argument("--n", type=int, help="test subset size")
    sp_eval.add_argument("--seed", type=int, default=0)
    sp_eval.add_argument("--active-draws", dest="active_draws", type=int, default=1)
    sp_eval.add_argument("--csv-labels", dest="csv_labels", action="store_true")
    sp_eval.add_argument("--x10", dest="report_x10", action="store_true",
                         help="additionally report each metric scaled by 10")
    sp_eval.add_argument("--out")

    sp_verify = sub.add_parser("verify", help="run the oracle suites")
    sp_verify.add_argument("--suite", default="all",
                           help="one of %s or 'all'" % ", ".join(sorted(trainmod._SUITES)))
    sp_verify.add_argument("--precision", type=int, choices=(32, 64), default=64)
    sp_verify.add_argument("--seed", type=int, default=0)

    sp_export = sub.add_parser("export-latents", help="write latents.csv for a checkpoint")
    sp_export.add_argument("--checkpoint", required=True)
    sp_export.add_argument("--data", help="rows to encode; defaults to the checkpoint's training data")
    sp_export.add_argument("--n", type=int)
    sp_export.add_argument("--seed", type=int, default=0)
    sp_export.add_argument("--csv-labels", dest="csv_labels", action="store_true")
    sp_export.add_argument("--out", required=True)

    args = parser.parse_args(argv)

    if args.command == "train":
        cfg = build_run_config(args)
        log = run_ablation(cfg) if cfg.ablation != "none" else trainmod.train(cfg)
        last = log.records[-1]
        print(json.dumps({
            "config_hash": log.config_hash,
            "epochs": len(log.records),
            "final_objective": last.objective,
            "out": cfg.out,
        }))
        return 0

    if args.command == "evaluate":
        test = _load_eval_data(args.data, args.n, args.seed, args.csv_labels)
        block = evaluate(args.checkpoint, test, active_draws=args.active_draws,
                         seed=args.seed, out=args.out, report_x10=args.report_x10)
        print(json.dumps(block, indent=2, sort_keys=True))
        return 0

    if args.command == "verify":
        results = verify(args.suite, precision=args.precision, seed=args.seed)
        ok = True
        for r in results:
            status = "PASS" if r.passed else "FAIL"
            note = " [relaxed tolerance]" if r.relaxed else ""
            print(f"{status}: {r.name}: {r.detail}{note}")
            ok = ok and r.passed
        return 0 if ok else 1

    if args.command == "export-latents":
        params, meta = trainmod.load_checkpoint(args.checkpoint)
        ds = _load_eval_data(args.data, args.n, args.seed, args.csv_labels)
        if ds is None:
            ds = trainmod.load_dataset(RunConfig(**meta["config"]))
        z, var = trainmod.encode_all(params, meta, ds.x)
        header = ["index"] + (["label"] if ds.labels is not None else [])
        header += [f"z_{j+1}" for j in range(z.shape[1])]
        if var is not None:
            header += [f"var_{j+1}" for j in range(var.shape[1])]
        lines = [",".join(header)]
        for i in range(z.shape[0]):
            cells = [str(i)]
            if ds.labels is not None:
                cells.append(str(int(ds.labels[i])))
            cells += [format(v, ".17g") for v in z[i]]
            if var is not None:
                cells += [format(v, ".17g") for v in var[i]]
            lines.append(",".join(cells))
        trainmod._atomic_write(args.out, "\n".join(lines) + "\n")
        print(json.dumps({"rows": z.shape[0], "out": args.out}))
        return 0

    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
