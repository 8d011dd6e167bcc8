"""Command-line surface: pretrain | distill | dpsgd | account | sweep.

Configuration is a flat JSON document; command-line flags override file
values, and the merged result is echoed into the output directory so
every run is auditable. Exit codes: 0 ok, 2 validation, 3 infeasible
budget, 4 numerical failure.
"""

import argparse
import json
import os
import sys

from . import __version__
from .accountant import (
    AccountingParams,
    calibrate_sigma,
    max_iterations,
    optimal_epsilon,
)
from .datasets import make_blobs, pretrain_teacher
from .distill import (
    DpConfig,
    EnsembleSpec,
    direct_dp_train,
    dpdfd_train,
    multi_model_train,
)
from .dpmech import MechanismConfig, NoiseSource
from .errors import (
    DpdfdError,
    InfeasibleBudgetError,
    NumericalError,
    ValidationError,
)
from .nnkit import init_mlp, load_model, save_model

SEED_ENV = "DPDFD_SEED"

DEFAULTS = {
    "seed": None,
    "epsilon": None,
    "delta": 1e-5,
    "sigma": 100.0,
    "clip_bound": 5e-3,
    "stability": 1e-4,
    "batch": 256,
    "iters": 500,
    "mode": "normalize",
    "accounting": "paper",
    "gamma": 0.05,
    "gamma_s": 0.05,
    "gamma_g": 0.05,
    "alpha": 1.0,
    "beta": 1.0,
    "tau": 1.0,
    "temperature": 4.0,
    "noise_dim": 16,
    "include_generator_ce": True,
    "feature_norm_sign": -1.0,
    "data_classes": 3,
    "data_per_class": 500,
    "data_dim": 8,
    "data_spread": 0.15,
    "data_seed": 4,
    "data_center_range": 0.4,
    "data_min_separation": 0.85,
    "teacher_hidden": [64, 64],
    "student_hidden": [32],
    "generator_hidden": [64, 64],
    "pretrain_steps": 2000,
    "pretrain_lr": 0.1,
    "pretrain_batch": 64,
    "teachers": [],
    "out": "runs/out",
}

_FLAG_KEYS = [
    ("seed", "seed"),
    ("epsilon", "epsilon"),
    ("delta", "delta"),
    ("sigma", "sigma"),
    ("clip_bound", "clip_bound"),
    ("stability", "stability"),
    ("batch", "batch"),
    ("iters", "iters"),
    ("mode", "mode"),
    ("accounting", "accounting"),
    ("teachers", "teachers"),
    ("out", "out"),
]


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError("config document must be a JSON object")
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return doc


def merge_config(args):
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for flag, key in _FLAG_KEYS:
        value = getattr(args, flag, None)
        if value is not None and value != []:
            cfg[key] = value
    if cfg["seed"] is None and os.environ.get(SEED_ENV):
        cfg["seed"] = int(os.environ[SEED_ENV])
    if cfg["seed"] is None:
        raise ValidationError(
            f"a seed is required (flag --seed, config key, or {SEED_ENV})"
        )
    cfg["seed"] = int(cfg["seed"])
    return cfg


def _echo_config(cfg, outdir):
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "effective_config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _blobs(cfg):
    return make_blobs(
        classes=cfg["data_classes"],
        per_class=cfg["data_per_class"],
        dim=cfg["data_dim"],
        spread=cfg["data_spread"],
        seed=cfg["data_seed"],
        center_range=cfg["data_center_range"],
        min_separation=cfg["data_min_separation"],
    )


def _mechanism(cfg):
    return MechanismConfig(
        norm_bound=cfg["clip_bound"],
        noise_scale=cfg["sigma"],
        stability=cfg["stability"],
        mode=cfg["mode"],
    )


def _dp_config(cfg):
    return DpConfig(
        mechanism=_mechanism(cfg),
        gamma=cfg["gamma"],
        gamma_s=cfg["gamma_s"],
        gamma_g=cfg["gamma_g"],
        batch_size=cfg["batch"],
        iterations=cfg["iters"],
        delta=cfg["delta"],
        alpha=cfg["alpha"],
        beta=cfg["beta"],
        tau=cfg["tau"],
        temperature=cfg["temperature"],
        epsilon_budget=cfg["epsilon"],
        accounting=cfg["accounting"],
        include_generator_ce=cfg["include_generator_ce"],
        feature_norm_sign=cfg["feature_norm_sign"],
        noise_dim=cfg["noise_dim"],
    )


def _write_report(report, outdir):
    with open(os.path.join(outdir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")


def cmd_pretrain(cfg):
    outdir = cfg["out"]
    _echo_config(cfg, outdir)
    train, test = _blobs(cfg)
    model, metrics = pretrain_teacher(
        train,
        hidden=tuple(cfg["teacher_hidden"]),
        steps=cfg["pretrain_steps"],
        lr=cfg["pretrain_lr"],
        batch_size=cfg["pretrain_batch"],
        seed=cfg["seed"],
        eval_set=test,
    )
    save_model(model, os.path.join(outdir, "teacher.json"))
    metrics["seed"] = cfg["seed"]
    metrics["dataset"] = train.manifest()
    with open(os.path.join(outdir, "pretrain_metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True)
        fh.write("\n")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _run_distill(cfg, eval_set):
    teachers = [load_model(path) for path in cfg["teachers"]]
    if not teachers:
        raise ValidationError("distill needs at least one --teachers checkpoint")
    dims_in = teachers[0].input_dim
    k = teachers[0].output_dim
    student = init_mlp(
        [dims_in, *cfg["student_hidden"], k],
        ["relu"] * len(cfg["student_hidden"]) + ["identity"],
        cfg["seed"] + 1,
    )
    generator = init_mlp(
        [cfg["noise_dim"], *cfg["generator_hidden"], dims_in],
        ["relu"] * len(cfg["generator_hidden"]) + ["tanh"],
        cfg["seed"] + 2,
    )
    rng = NoiseSource(cfg["seed"])
    dp_cfg = _dp_config(cfg)
    if len(teachers) == 1:
        return dpdfd_train(teachers[0], student, generator, dp_cfg, rng, eval_set)
    ensemble = EnsembleSpec(tuple(teachers))
    return multi_model_train(ensemble, student, generator, dp_cfg, rng, eval_set)


def cmd_distill(cfg):
    outdir = cfg["out"]
    _echo_config(cfg, outdir)
    _, test = _blobs(cfg)
    report = _run_distill(cfg, test)
    _write_report(report, outdir)
    save_model(report.student, os.path.join(outdir, "student.json"))
    save_model(report.generator, os.path.join(outdir, "generator.json"))
    summary = {
        "accuracy": report.final_accuracy,
        "epsilon": report.final_epsilon,
        "delta": cfg["delta"],
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_dpsgd(cfg):
    outdir = cfg["out"]
    _echo_config(cfg, outdir)
    train, test = _blobs(cfg)
    model = init_mlp(
        [train.inputs.shape[1], *cfg["student_hidden"], train.class_count],
        ["relu"] * len(cfg["student_hidden"]) + ["identity"],
        cfg["seed"] + 1,
    )
    report = direct_dp_train(train, model, _dp_config(cfg), NoiseSource(cfg["seed"]), test)
    _write_report(report, outdir)
    save_model(report.student, os.path.join(outdir, "model.json"))
    summary = {
        "accuracy": report.final_accuracy,
        "epsilon": report.final_epsilon,
        "delta": cfg["delta"],
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_account(cfg, query, classes):
    k = classes if classes is not None else cfg["data_classes"]
    base = {
        "C": cfg["clip_bound"],
        "n": k,
        "B": cfg["batch"],
        "delta": cfg["delta"],
        "mode": cfg["accounting"],
    }
    if query == "epsilon":
        params = AccountingParams(
            C=cfg["clip_bound"], n=k, B=cfg["batch"], T=cfg["iters"],
            sigma=cfg["sigma"], delta=cfg["delta"],
        )
        rep = optimal_epsilon(params, mode=cfg["accounting"])
        out = {
            "epsilon": rep.epsilon,
            "lambda_star": rep.lambda_star,
            "mode": rep.mode,
            "clamped": rep.clamped,
            "params": {**base, "T": cfg["iters"], "sigma": cfg["sigma"]},
        }
    elif query == "sigma":
        if cfg["epsilon"] is None:
            raise ValidationError("sigma calibration needs --epsilon (the target)")
        sigma = calibrate_sigma(
            cfg["epsilon"], cfg["clip_bound"], k, cfg["batch"], cfg["iters"],
            cfg["delta"], mode=cfg["accounting"],
        )
        out = {
            "sigma": sigma,
            "target_epsilon": cfg["epsilon"],
            "mode": cfg["accounting"],
            "params": {**base, "T": cfg["iters"]},
        }
    else:  # max-iters
        if cfg["epsilon"] is None:
            raise ValidationError("max-iters needs --epsilon (the budget)")
        iters = max_iterations(
            cfg["epsilon"], cfg["delta"], cfg["sigma"], cfg["clip_bound"], k,
            cfg["batch"], mode=cfg["accounting"],
        )
        out = {
            "max_iterations": iters,
            "budget_epsilon": cfg["epsilon"],
            "mode": cfg["accounting"],
            "params": {**base, "sigma": cfg["sigma"]},
        }
    print(json.dumps(out, sort_keys=True))
    return 0


_LOSS_TERM_VARIANTS = {
    "full": {},
    "no-ce": {"include_generator_ce": False},
    "no-ie": {"alpha": 0.0},
    "no-norm": {"beta": 0.0},
}


def _sweep_points(cfg, axis, values):
    if axis == "C":
        for v in values:
            for mode in ("normalize", "clip"):
                yield {"clip_bound": float(v), "mode": mode}, {"value": float(v), "mode": mode}
    elif axis == "sigma":
        for v in values:
            yield {"sigma": float(v)}, {"value": float(v), "mode": cfg["mode"]}
    else:  # loss-terms
        for v in values:
            if v not in _LOSS_TERM_VARIANTS:
                raise ValidationError(
                    f"loss-terms values must come from {sorted(_LOSS_TERM_VARIANTS)}"
                )
            yield dict(_LOSS_TERM_VARIANTS[v]), {"value": v, "mode": cfg["mode"]}


def cmd_sweep(cfg, axis, values, seeds):
    if not values:
        raise ValidationError("sweep needs at least one --values entry")
    outdir = cfg["out"]
    _echo_config(cfg, outdir)
    _, test = _blobs(cfg)
    rows = []
    run_index = 0
    for overrides, ident in _sweep_points(cfg, axis, values):
        for s in range(seeds):
            run_cfg = {**cfg, **overrides, "seed": cfg["seed"] ^ run_index}
            row = {
                "axis": axis,
                "value": ident["value"],
                "mode": ident["mode"],
                "seed": run_cfg["seed"],
                "status": "ok",
                "accuracy": "",
                "eps_spent": "",
                "entropy": "",
                "error": "",
            }
            try:
                report = _run_distill(run_cfg, test)
                tail = report.records[-max(1, len(report.records) // 5):]
                row["accuracy"] = report.final_accuracy
                row["eps_spent"] = report.final_epsilon
                row["entropy"] = sum(r.mean_softmax_entropy for r in tail) / len(tail)
            except DpdfdError as exc:
                row["status"] = "error"
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            run_index += 1

    header = ["axis", "value", "mode", "seed", "status", "accuracy", "eps_spent", "entropy", "error"]
    with open(os.path.join(outdir, "runs.csv"), "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(row[h]) for h in header) + "\n")

    groups = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        groups.setdefault((row["value"], row["mode"]), []).append(float(row["accuracy"]))
    with open(os.path.join(outdir, "aggregate.csv"), "w", encoding="utf-8") as fh:
        fh.write("axis,value,mode,n,mean_acc,std_acc\n")
        for (value, mode), accs in sorted(groups.items(), key=lambda kv: str(kv[0])):
            n = len(accs)
            mean = sum(accs) / n
            std = (sum((a - mean) ** 2 for a in accs) / n) ** 0.5
            fh.write(f"{axis},{value},{mode},{n},{mean!r},{std!r}\n")
    ok = sum(1 for r in rows if r["status"] == "ok")
    print(json.dumps({"runs": len(rows), "ok": ok, "out": outdir}, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dpdfd",
        description="Convert a sensitive classifier into a private student via "
        "sanitized-gradient distillation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--epsilon", type=float, help="privacy budget / target")
        p.add_argument("--delta", type=float)
        p.add_argument("--sigma", type=float, help="noise scale")
        p.add_argument("--clip-bound", dest="clip_bound", type=float, help="norm bound C")
        p.add_argument("--stability", type=float, help="stability constant e")
        p.add_argument("--batch", type=int, help="sample size B")
        p.add_argument("--iters", type=int, help="iteration count T")
        p.add_argument("--mode", choices=["normalize", "clip"])
        p.add_argument("--accounting", choices=["paper", "consistent"])
        p.add_argument("--teachers", nargs="+", help="teacher checkpoint path(s)")
        p.add_argument("--out", help="output directory")

    add_common(sub.add_parser("pretrain", help="train a sensitive teacher on blobs"))
    add_common(sub.add_parser("distill", help="distill teacher(s) into a private student"))
    add_common(sub.add_parser("dpsgd", help="train directly on private data"))

    account = sub.add_parser("account", help="privacy accounting queries")
    add_common(account)
    account.add_argument("query", choices=["epsilon", "sigma", "max-iters"])
    account.add_argument("--classes", type=int, help="gradient length n (class count)")

    sweep = sub.add_parser("sweep", help="ablation sweeps over C, sigma, or loss terms")
    add_common(sweep)
    sweep.add_argument("--axis", required=True, choices=["C", "sigma", "loss-terms"])
    sweep.add_argument("--values", required=True,
                       help="comma-separated axis values (loss-terms: full,no-ce,no-ie,no-norm)")
    sweep.add_argument("--seeds", type=int, default=1, help="seeds per axis point")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = merge_config(args)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "distill":
            return cmd_distill(cfg)
        if args.command == "dpsgd":
            return cmd_dpsgd(cfg)
        if args.command == "account":
            return cmd_account(cfg, args.query, args.classes)
        if args.command == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            return cmd_sweep(cfg, args.axis, values, args.seeds)
        raise ValidationError(f"unknown command {args.command!r}")
    except InfeasibleBudgetError as exc:
        print(json.dumps({"error": "infeasible_budget", "detail": str(exc)}), file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(json.dumps({"error": "validation", "detail": str(exc)}), file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(json.dumps({"error": "numerical", "detail": str(exc)}), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
