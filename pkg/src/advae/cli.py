"""Command-line entry point: advae {train,verify,grad-check,eval,export}.

Exit codes: 0 success, 1 verification or gradient-check failure,
2 usage or validation error, 3 numeric abort during training.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import autodiff as ad
from . import kernels, verify
from .data import DATASET_IDS, Dataset, write_samples_csv
from .errors import AdvaeError, ConfigError
from .models import VARIANTS
from .nn import read_checkpoint
from .training import (TrainConfig, TrainingAborted, evaluate_elbo, held_out_eval, init_state,
                       load_variant, provenance, run)

OUT_ENV = "ADVAE_OUT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def default_out(*parts):
    return os.path.join(os.environ.get(OUT_ENV, "runs"), *parts)


def _error(msg, code):
    print(f"advae: error: {msg}", file=sys.stderr)
    return code


def _write_json(path, obj):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _tool_provenance(seed, **extra):
    return {"artifact": "advae", "version": __version__, "seed": seed, **extra}


# ---------------------------------------------------------------------------
# train


def _load_config(args):
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a JSON object")
    raw.setdefault("schema_version", TrainConfig.schema_version)
    overrides = {"seed": args.seed, "variant": args.variant, "total_steps": args.steps,
                 "dataset": args.dataset}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if args.out:
        raw["out_dir"] = args.out
    elif "out_dir" not in raw:
        raw["out_dir"] = default_out(f"{raw.get('variant', 'full')}-seed{raw.get('seed', 0)}")
    config = TrainConfig.from_dict(raw)
    config.validate()
    return config


def cmd_train(args):
    try:
        config = _load_config(args)
    except (OSError, json.JSONDecodeError) as exc:
        return _error(f"cannot read config: {exc}", EXIT_USAGE)
    except ConfigError as exc:
        return _error(f"invalid config: {exc}", EXIT_USAGE)
    initial = init_state(config).variant
    try:
        state = run(config, resume_from=args.resume)
    except TrainingAborted as exc:
        return _error(f"numeric abort at step {exc.step}: {exc.cause}", EXIT_NUMERIC)
    except OSError as exc:
        return _error(str(exc), EXIT_USAGE)

    dataset = Dataset(config.dataset, dict(config.dataset_params))
    prov = provenance(config)
    out = config.out_dir
    before, _, ref = held_out_eval(initial, dataset, config.eval_samples, config.seed)
    sample_path = os.path.join(out, "samples.csv")
    after, samples, _ = held_out_eval(state.variant, dataset, config.eval_samples, config.seed,
                                      sample_path, prov)
    write_samples_csv(sample_path, samples, dataset.id, config.seed,
                      f"config_sha256={prov['config_sha256']}")
    _write_json(os.path.join(out, "eval_report.json"), json.loads(after.to_json()))
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(config.to_json() + "\n")
    summary = {"provenance": prov, "steps": state.step, "mmd_initial": before.mmd_raw,
               "mmd_final": after.mmd_raw, "modes_initial": before.modes_covered,
               "modes_final": after.modes_covered}
    if state.variant.kind == "gaussian":
        summary["elbo_initial"] = evaluate_elbo(initial, ref, config.seed)
        summary["elbo_final"] = evaluate_elbo(state.variant, ref, config.seed)
    _write_json(os.path.join(out, "summary.json"), summary)
    line = f"trained {state.step} steps; mmd2 {before.mmd_raw:.6g} -> {after.mmd_raw:.6g}"
    if "elbo_final" in summary:
        line += f"; elbo {summary['elbo_initial']:.6g} -> {summary['elbo_final']:.6g}"
    print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify / grad-check


def cmd_verify(args):
    if args.samples < 2:
        return _error("--samples must be at least 2", EXIT_USAGE)
    cases = verify.run_suite(args.suite, args.samples, args.seed)
    failed = [c for c in cases if not c.passed]
    report = {"suite": args.suite, "samples": args.samples,
              "provenance": _tool_provenance(args.seed),
              "summary": {"total": len(cases), "passed": len(cases) - len(failed),
                          "failed": len(failed)},
              "cases": [c.to_dict() for c in cases]}
    path = args.out or default_out(f"verify_{args.suite}.json")
    _write_json(path, report)
    print(f"{len(cases) - len(failed)}/{len(cases)} cases pass; report {path}")
    if failed:
        for c in failed[:10]:
            print(f"FAIL {c.case_id}: estimate={c.estimate!r} oracle={c.oracle!r} "
                  f"stderr={c.stderr!r} z={c.zscore!r}", file=sys.stderr)
        print(f"{len(failed)} failing case(s)", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_grad_check(args):
    if args.corrupt_rule and args.corrupt_rule not in ad.RULES:
        return _error(f"unknown rule {args.corrupt_rule!r}", EXIT_USAGE)
    if args.corrupt_rule:
        with ad.corrupted_rule(args.corrupt_rule):
            cases = verify.grad_check_suite(args.scope, args.seed, args.tol)
    else:
        cases = verify.grad_check_suite(args.scope, args.seed, args.tol)
    failed = [c for c in cases if not c.passed]
    report = {"scope": args.scope, "tol": args.tol, "corrupt_rule": args.corrupt_rule,
              "provenance": _tool_provenance(args.seed),
              "summary": {"total": len(cases), "failed": len(failed)},
              "cases": [c.to_dict() for c in cases]}
    path = args.out or default_out(f"grad_check_{args.scope}.json")
    _write_json(path, report)
    worst = max(cases, key=lambda c: c.report.max_rel_error)
    print(f"{len(cases) - len(failed)}/{len(cases)} gradient checks pass "
          f"(max rel error {worst.report.max_rel_error:.3g}); report {path}")
    for c in failed:
        w = c.report.worst
        print(f"FAIL {c.case_id}: {w.name}{list(w.worst_index)} analytic={w.analytic!r} "
              f"numeric={w.numeric!r} rel_error={w.max_rel_error:.3g}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# eval / export


def _load_checkpoint(path):
    if not os.path.isfile(path):
        raise AdvaeError(f"checkpoint {path!r} not found")
    manifest, _ = read_checkpoint(path)
    return manifest, load_variant(path)


def cmd_eval(args):
    try:
        manifest, v = _load_checkpoint(args.checkpoint)
        dataset = Dataset(args.dataset)
    except (AdvaeError, OSError, ValueError) as exc:
        return _error(str(exc), EXIT_USAGE)
    if dataset.data_dim != v.data_dim:
        return _error(f"checkpoint data dimension {v.data_dim} does not match "
                      f"{dataset.id} (dimension {dataset.data_dim})", EXIT_USAGE)
    if args.n < 2:
        return _error("--n must be at least 2", EXIT_USAGE)
    out = args.out or default_out("eval")
    os.makedirs(out, exist_ok=True)
    src = manifest.get("meta", {}).get("provenance", {})
    prov = _tool_provenance(args.seed, checkpoint_step=manifest["step"],
                            config_sha256=src.get("config_sha256"))
    sample_path = os.path.join(out, "samples.csv")
    report, samples, _ = held_out_eval(v, dataset, args.n, args.seed, sample_path, prov)
    write_samples_csv(sample_path, samples, dataset.id, args.seed,
                      f"checkpoint_step={manifest['step']}")
    _write_json(os.path.join(out, "eval_report.json"), json.loads(report.to_json()))
    cover = "" if report.modes_covered is None else f"; modes {report.modes_covered}"
    print(f"mmd2 {report.mmd_raw:.6g}{cover}; report {out}")
    return EXIT_OK


def cmd_export(args):
    try:
        if not os.path.isfile(args.checkpoint):
            raise AdvaeError(f"checkpoint {args.checkpoint!r} not found")
        manifest, sections = read_checkpoint(args.checkpoint)
    except (AdvaeError, OSError, ValueError) as exc:
        return _error(str(exc), EXIT_USAGE)
    arrays = {f"{sec}/{name}": arr for sec, s in sections.items() for name, arr in s.arrays}
    out = args.out
    if out.endswith(".npz"):
        np.savez(out, **arrays)
    elif out.endswith(".json"):
        _write_json(out, {"manifest": manifest,
                          "arrays": {k: a.tolist() for k, a in arrays.items()}})
    else:
        return _error("--out must end in .npz or .json", EXIT_USAGE)
    print(f"exported {len(arrays)} arrays to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="advae", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"advae {__version__}")
    p.add_argument("--backend", choices=kernels.available_backends(),
                   help="kernel backend (default: compiled when available)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model variant")
    t.add_argument("--config", help="TrainConfig JSON file")
    t.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<variant>-seed<seed>)")
    t.add_argument("--seed", type=int)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--steps", type=int, help="override total_steps")
    t.add_argument("--dataset", choices=DATASET_IDS)
    t.add_argument("--resume", help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="check closed forms against numerical oracles")
    v.add_argument("--suite", choices=verify.SUITES + ("all",), default="all")
    v.add_argument("--samples", type=int, default=1_000_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="report JSON path")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("grad-check", help="compare backward rules with central differences")
    g.add_argument("--scope", choices=verify.GRAD_SCOPES + ("all",), default="all")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--corrupt-rule", metavar="OP",
                   help="negative control: scale the backward rule of OP by 1.5")
    g.add_argument("--out", help="report JSON path")
    g.set_defaults(func=cmd_grad_check)

    e = sub.add_parser("eval", help="sample a checkpoint and score it against held-out data")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True, choices=DATASET_IDS)
    e.add_argument("--n", type=int, default=2000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="output directory")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="dump checkpoint arrays to .npz or .json")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.backend:
        kernels.use_backend(args.backend)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
