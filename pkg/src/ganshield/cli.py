"""Command-line driver.

Exit codes: 0 success, 2 configuration problem, 3 numeric failure,
4 evaluation gate violation.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import load_config
from .errors import CalibrationError, ConfigurationError, NumericError, SynthesisError
from .harness import (
    gate_report,
    run_calibrate,
    run_eval,
    run_scenario,
    run_train,
    write_report,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_GATE = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ganshield",
        description="Train, calibrate, and evaluate the attack-resilient control loop.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory override")

    p_train = sub.add_parser("train", help="generate data and train the model")
    common(p_train)

    p_cal = sub.add_parser("calibrate", help="compute per-generator thresholds")
    common(p_cal)

    p_sim = sub.add_parser("simulate", help="run one configured scenario")
    common(p_sim)
    p_sim.add_argument("--scenario", required=True, help="scenario id from the config")
    p_sim.add_argument("--defense", choices=["on", "off"], required=True)

    p_eval = sub.add_parser("evaluate", help="aggregate scenario runs into a report")
    common(p_eval)
    p_eval.add_argument(
        "--gate",
        action="store_true",
        help="exit 4 if the report misses any built-in target",
    )

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of both objectives")
    p_grad.add_argument("--seed", type=int, default=0)

    return parser


def _load(args):
    config = load_config(args.config)
    if args.seed is not None:
        raw = dict(config.data)
        raw["seed"] = args.seed
        from .config import parse_config

        config = parse_config(raw)
    return config


def _cmd_train(args) -> int:
    config = _load(args)
    paths = run_train(config, out_dir=args.out)
    print(f"checkpoint written to {paths['checkpoint']}")
    print(f"history written to {paths['history']}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    config = _load(args)
    paths = run_calibrate(config, out_dir=args.out)
    payload = json.loads(paths["thresholds"].read_text())
    print(
        f"thresholds written to {paths['thresholds']} "
        f"({payload['n_windows']} healthy windows)"
    )
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = _load(args)
    paths = run_scenario(
        config, args.scenario, defense_on=args.defense == "on", out_dir=args.out
    )
    result = paths["result"]
    note = " (diverged)" if result.trajectory.diverged else ""
    print(f"scenario {args.scenario} defense={args.defense} -> {paths['run_dir']}{note}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    config = _load(args)
    report = run_eval(config, out_dir=args.out)
    out = args.out if args.out is not None else config["out_dir"]
    paths = write_report(report, out)
    print(report.table())
    print(f"report written to {paths['json']}")
    if args.gate:
        failures = gate_report(report, config)
        if failures:
            for f in failures:
                print(f"GATE: {f}", file=sys.stderr)
            return EXIT_GATE
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gan import (
        GanHyper,
        discriminator_loss_and_grads,
        generator_loss_and_grads,
        init_gan,
    )
    from .nn import grad_check

    hyper = GanHyper(w=3, hidden_g=5, hidden_d=5)
    rng = np.random.default_rng(args.seed + 100)
    model = init_gan(n_x=4, hyper=hyper, seed=args.seed)
    for t in model.parameters():
        t.value[...] = 0.5 * rng.standard_normal(t.value.shape)
    Z = rng.standard_normal((2, 4, 3))
    X = rng.standard_normal((2, 4, 3))
    omegas = np.ones((2, 4, 3))

    def gen_loss_and_grads(_ps):
        loss, (ge, gd, gp), _ = generator_loss_and_grads(model, Z, X, omegas)
        return loss, [ge.W, ge.U, ge.b, gd.W, gd.U, gd.b, gp.W, gp.b]

    def disc_loss_and_grads(_ps):
        loss, (gd, gh), _ = discriminator_loss_and_grads(model, X, Z)
        return loss, [gd.W, gd.U, gd.b, gh.W, gh.b]

    err_g = grad_check(gen_loss_and_grads, model.generator_parameters(), h=1e-6)
    err_d = grad_check(disc_loss_and_grads, model.discriminator_parameters(), h=1e-6)
    print(f"generator objective max relative error:     {err_g:.3e}")
    print(f"discriminator objective max relative error: {err_d:.3e}")
    if err_g >= 1e-4 or err_d >= 1e-4:
        print("gradient check FAILED (threshold 1e-4)", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "calibrate": _cmd_calibrate,
        "simulate": _cmd_simulate,
        "evaluate": _cmd_evaluate,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (ConfigurationError, CalibrationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, SynthesisError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
