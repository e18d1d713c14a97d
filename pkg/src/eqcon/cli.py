"""Command-line surface: sample, verify, bench, and train subcommands.

Configs are strict JSON: unknown keys are rejected with the offending key
named. Exit codes: 0 success, 1 validation error, 2 numeric failure; errors
are emitted as a single JSON line on stderr. Every tabular output is
RFC-4180-style CSV with a mandatory header row, a trailing newline, and '.'
as the decimal separator regardless of locale.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import discrete as discrete_mod
from . import gaussian as gaussian_mod
from . import train as train_mod
from . import verify as verify_mod
from .bench import BenchConfig, Family
from .constraints import constraint_from_json
from .errors import ConfigError, EqconError, NumericFailure
from .estimators import EstimatorKind
from .gaussian import GaussianParams
from .losses import LossKind


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqcon",
        description="Exact sampling, closed-form losses, and gradient "
        "estimators under hard linear equality constraints.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_sample = sub.add_parser("sample", help="draw exact constrained samples to CSV")
    p_sample.add_argument("--config", required=True, metavar="PATH")
    p_sample.add_argument("--out", required=True, metavar="PATH")
    p_sample.add_argument("--seed", type=int, default=None, metavar="U64")
    p_sample.add_argument(
        "--discrete", action="store_true", help="sample the exactly-k law instead"
    )

    p_verify = sub.add_parser("verify", help="run the closed-form oracle suites")
    p_verify.add_argument("--config", default=None, metavar="PATH")
    p_verify.add_argument("--out", default=None, metavar="PATH")
    p_verify.add_argument("--seed", type=int, default=None, metavar="U64")

    p_bench = sub.add_parser("bench", help="benchmark the gradient estimators")
    p_bench.add_argument("--config", required=True, metavar="PATH")
    p_bench.add_argument("--out", required=True, metavar="PATH")
    p_bench.add_argument("--seed", type=int, default=None, metavar="U64")
    p_bench.add_argument("--threads", type=int, default=1, metavar="N")

    p_train = sub.add_parser("train", help="train the constrained regressor")
    p_train.add_argument("--config", required=True, metavar="PATH")
    p_train.add_argument("--out", required=True, metavar="PATH")
    p_train.add_argument("--seed", type=int, default=None, metavar="U64")
    return parser


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    return obj


def _check_keys(obj: dict, required: set[str], optional: set[str], where: str) -> None:
    for key in obj:
        if key not in required and key not in optional:
            raise ConfigError(f"unknown config key {key!r} in {where}")
    for key in required:
        if key not in obj:
            raise ConfigError(f"missing required config key {key!r} in {where}")


def _resolve_seed(config_seed, override) -> int:
    seed = override if override is not None else config_seed
    if seed is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    if int(seed) != seed or not 0 <= int(seed) < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def _write_csv(path, header: tuple[str, ...], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(repr(float(v)) for v in row) for row in rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\r\n".join(lines) + "\r\n")


def _write_int_csv(path, header: tuple[str, ...], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(str(int(v)) for v in row) for row in rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\r\n".join(lines) + "\r\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_sample(args) -> int:
    cfg = _load_json(args.config)
    if args.discrete:
        _check_keys(cfg, {"rates", "total", "count"}, {"seed"}, "discrete sample config")
        ek = discrete_mod.exactly_k(cfg["rates"], cfg["total"])
        seed = _resolve_seed(cfg.get("seed"), args.seed)
        count = _as_positive_int(cfg["count"], "count")
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        draws = discrete_mod.sample(ek, rng, count)
        header = tuple(f"z{i}" for i in range(ek.n))
        _write_int_csv(args.out, header, draws)
    else:
        _check_keys(
            cfg,
            {"constraint", "mean", "count"},
            {"cov_diag", "cov", "seed"},
            "sample config",
        )
        cs = constraint_from_json(cfg["constraint"])
        if ("cov_diag" in cfg) == ("cov" in cfg):
            raise ConfigError("provide exactly one of 'cov_diag' or 'cov'")
        if "cov_diag" in cfg:
            params = GaussianParams.diagonal(cfg["mean"], cfg["cov_diag"])
        else:
            params = GaussianParams.full(cfg["mean"], cfg["cov"])
        seed = _resolve_seed(cfg.get("seed"), args.seed)
        count = _as_positive_int(cfg["count"], "count")
        law = gaussian_mod.condition(params, cs)
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        draws = gaussian_mod.sample(law, rng, count)
        header = tuple(f"z{i}" for i in range(params.n))
        _write_csv(args.out, header, draws)
    print(f"wrote {count} samples to {args.out} (seed {seed})")
    return 0


def _as_positive_int(value, name: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return value


def _cmd_verify(args) -> int:
    seed, n_instances, mc_count = 0, 5, 200_000
    if args.config is not None:
        cfg = _load_json(args.config)
        _check_keys(cfg, set(), {"seed", "n_instances", "mc_count"}, "verify config")
        seed = cfg.get("seed", seed)
        n_instances = cfg.get("n_instances", n_instances)
        mc_count = cfg.get("mc_count", mc_count)
    if args.seed is not None:
        seed = args.seed
    results = verify_mod.run_verify(seed=seed, n_instances=n_instances, mc_count=mc_count)
    width = max(len(r.name) for r in results)
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status}  {result.name:<{width}}  {result.detail}")
    all_passed = all(r.passed for r in results)
    print(f"{'all checks passed' if all_passed else 'CHECKS FAILED'} (seed {seed})")
    if args.out is not None:
        payload = {
            "seed": seed,
            "n_instances": n_instances,
            "mc_count": mc_count,
            "checks": [
                {"name": r.name, "passed": r.passed, "detail": r.detail} for r in results
            ],
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return 0 if all_passed else 2


_BENCH_KEYS = {
    "n_vars",
    "n_constraints",
    "n_param_sets",
    "n_grad_samples",
    "loss_kind",
    "family",
    "seed",
}


def _parse_enum(enum_cls, value, name: str):
    try:
        return enum_cls(value)
    except ValueError:
        valid = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"{name} must be one of: {valid}; got {value!r}") from None


def _cmd_bench(args) -> int:
    raw = _load_json(args.config)
    _check_keys(raw, _BENCH_KEYS - {"seed"}, {"seed"}, "bench config")
    seed = _resolve_seed(raw.get("seed"), args.seed)
    cfg = BenchConfig(
        n_vars=_as_positive_int(raw["n_vars"], "n_vars"),
        n_constraints=_as_positive_int(raw["n_constraints"], "n_constraints"),
        n_param_sets=_as_positive_int(raw["n_param_sets"], "n_param_sets"),
        n_grad_samples=_as_positive_int(raw["n_grad_samples"], "n_grad_samples"),
        loss_kind=_parse_enum(LossKind, raw["loss_kind"], "loss_kind"),
        family=_parse_enum(Family, raw["family"], "family"),
        seed=seed,
    )
    cfg.validate()
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    reports = bench_mod.run_bench(cfg, threads=args.threads)
    out = Path(args.out)
    bench_mod.write_bench_csv(out, cfg, reports)
    bench_mod.write_bench_json(out.with_suffix(".json"), cfg, reports)
    from .report import render_bench_figure

    render_bench_figure(out.with_suffix(".png"), cfg, reports)
    print(
        f"wrote {out}, {out.with_suffix('.json').name}, "
        f"{out.with_suffix('.png').name} (seed {seed})"
    )
    return 0


_TRAIN_KEYS_REQ = {"task", "method", "epochs", "learning_rate", "batch_size"}
_TRAIN_KEYS_OPT = {
    "seed",
    "sigma_floor",
    "estimator",
    "estimator_loss",
    "n_estimator_samples",
    "encoder",
    "data",
}


def _cmd_train(args) -> int:
    raw = _load_json(args.config)
    _check_keys(raw, _TRAIN_KEYS_REQ, _TRAIN_KEYS_OPT, "train config")
    seed = _resolve_seed(raw.get("seed"), args.seed)
    cfg = train_mod.TrainConfig(
        task=raw["task"],
        method=_parse_enum(train_mod.TrainMethod, raw["method"], "method"),
        epochs=_as_positive_int(raw["epochs"], "epochs"),
        learning_rate=float(raw["learning_rate"]),
        batch_size=_as_positive_int(raw["batch_size"], "batch_size"),
        sigma_floor=float(raw.get("sigma_floor", 1e-3)),
        seed=seed,
        estimator=_parse_enum(
            EstimatorKind, raw.get("estimator", "marginal_expectation"), "estimator"
        ),
        estimator_loss=_parse_enum(
            LossKind, raw.get("estimator_loss", "l2"), "estimator_loss"
        ),
        n_estimator_samples=_as_positive_int(
            raw.get("n_estimator_samples", 1), "n_estimator_samples"
        ),
    )
    cfg.validate()

    data_cfg = raw.get("data", {})
    if not isinstance(data_cfg, dict):
        raise ConfigError("'data' must be an object")
    _check_keys(data_cfg, set(), {"n_train", "n_val", "n_test", "noise_scale"}, "data config")
    # 70/10/20 split proportions by default
    data = train_mod.make_cstr_task(
        n_train=_as_positive_int(data_cfg.get("n_train", 1400), "n_train"),
        n_val=_as_positive_int(data_cfg.get("n_val", 200), "n_val"),
        n_test=_as_positive_int(data_cfg.get("n_test", 400), "n_test"),
        noise_scale=float(data_cfg.get("noise_scale", 0.02)),
        seed=seed,
    )

    enc_cfg = raw.get("encoder", {})
    if not isinstance(enc_cfg, dict):
        raise ConfigError("'encoder' must be an object")
    _check_keys(enc_cfg, set(), {"layer_widths", "activation", "init_seed"}, "encoder config")
    spec = train_mod.EncoderSpec(
        layer_widths=tuple(enc_cfg.get("layer_widths", (3, 32, 32, 6))),
        activation=enc_cfg.get("activation", "tanh"),
        init_seed=int(enc_cfg.get("init_seed", seed)),
    )

    report = train_mod.train_model(spec, cfg, data)
    out = Path(args.out)
    train_mod.write_train_json(out, report, cfg, spec)
    from .report import render_train_figure

    render_train_figure(out.with_suffix(".png"), cfg, spec, report)
    print(
        f"test MSE {report.test_mse:.6e}, violation rate {report.violation_rate:.4f} "
        f"-> {out} (seed {seed})"
    )
    return 0


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "sample": _cmd_sample,
        "verify": _cmd_verify,
        "bench": _cmd_bench,
        "train": _cmd_train,
    }
    try:
        return handlers[args.subcommand](args)
    except NumericFailure as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 2
    except EqconError as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 1


def main() -> None:
    sys.exit(run_cli())
