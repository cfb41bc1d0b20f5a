"""Command-line front end.

Subcommands ``validate``, ``synthesize``, ``simulate`` and ``report``.
Exit status is 0 on success, 2 when a modelling hypothesis fails and 1 on
any other error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, HypothesisViolation, QNDError
from . import ensemble, photonbox
from .lyapunov import connectivity_graph, epsilon_max, gap_vector, laplacian, solve_sigma

EXIT_OK, EXIT_ERROR, EXIT_HYPOTHESIS = 0, 1, 2



def _model_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--preset", choices=["photonbox", "none"], help="built-in model (default photonbox)")
    p.add_argument("--hamiltonian", help="JSON matrix for H (used with --preset none)")
    p.add_argument("--kraus", help='JSON {"dim": d, "operators": [...]} (used with --preset none)')
    p.add_argument("--target", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--lambda", dest="lambda_gaps", type=float, help="common gap for every non-target state")
    p.add_argument("--u-bound", dest="u_bound", type=float)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def _run_flags(p: argparse.ArgumentParser):
    p.add_argument("--mode", choices=["open", "closed"])
    p.add_argument("--controller", choices=["exact", "quadratic"])
    p.add_argument("--trajectories", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=lambda s: int(s, 0))
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--diagnostics", action="store_true", default=None, help="add Q1, Q2, W_eps columns")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qndfeedback", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check every modelling hypothesis")
    _model_flags(p)
    _run_flags(p)

    p = sub.add_parser("synthesize", help="solve for Lyapunov weights and write them as JSON")
    _model_flags(p)
    p.add_argument("--out", dest="weights_out", help="output path (default: stdout)")

    p = sub.add_parser("simulate", help="run a seeded ensemble and write CSV/JSON artifacts")
    _model_flags(p)
    _run_flags(p)

    p = sub.add_parser("report", help="summarize a finished run and regenerate plot data")
    p.add_argument("--out", dest="output_dir", required=True)
    return parser


def config_from_args(args) -> ensemble.SimulationConfig:
    layers = []
    if getattr(args, "config", None):
        layers.append(ensemble.read_config_file(args.config))
    flags = {}
    for key in ("preset", "hamiltonian", "kraus", "target", "epsilon", "lambda_gaps", "u_bound",
                "mode", "controller", "trajectories", "steps", "seed", "output_dir", "workers", "diagnostics"):
        v = getattr(args, key, None)
        if v is not None:
            flags[key] = None if (key == "preset" and v == "none") else v
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flags[k.strip()] = v.strip()
    layers.append(flags)
    merged = {}
    for layer in layers:
        merged.update(layer)
    # model files imply no preset unless one was named explicitly
    explicit = any("preset" in layer or "model" in layer for layer in layers)
    if not explicit and (merged.get("hamiltonian") or merged.get("kraus")):
        merged["preset"] = None
    return ensemble.make_config(merged)


def cmd_validate(args) -> int:
    cfg = config_from_args(args)
    checks = ensemble.validate_model(cfg)
    print(json.dumps(checks, indent=2))
    return EXIT_OK if all(c["ok"] for c in checks.values()) else EXIT_HYPOTHESIS


def cmd_synthesize(args) -> int:
    cfg = config_from_args(args)
    if cfg.preset == "photonbox":
        params = ensemble._photonbox_params(cfg)
        H = photonbox.displacement_hamiltonian(params.n_max)
        target, gaps, eps = params.target, params.lambda_gaps, params.epsilon
    else:
        if cfg.hamiltonian is None:
            raise ConfigError("synthesize needs --hamiltonian or --preset photonbox")
        H = ensemble.load_hamiltonian(cfg.hamiltonian)
        target = cfg.target if cfg.target is not None else 0
        gaps = cfg.lambda_gaps if cfg.lambda_gaps is not None else 1.0
        eps = cfg.epsilon
    g = connectivity_graph(H)
    lam = gap_vector(gaps, target, H.dim)
    eps_sup = epsilon_max(H, lam, target)
    if eps is None:
        eps = eps_sup / 2 if math.isfinite(eps_sup) else 1.0
    doc = {"target": target, "lambda": lam.tolist(), "sigma": None, "epsilon": eps,
           "epsilon_max": None if math.isinf(eps_sup) else eps_sup, "residual": None, "connected": g.connected}
    status = EXIT_OK
    if g.connected:
        R = laplacian(H)
        sigma = solve_sigma(R, lam, target)
        doc["sigma"] = sigma.tolist()
        doc["residual"] = float(np.max(np.abs(R @ sigma + lam)))
    else:
        status = EXIT_HYPOTHESIS
    if not 0 < eps < eps_sup:
        status = EXIT_HYPOTHESIS
    text = json.dumps(doc, indent=2)
    if args.weights_out:
        Path(args.weights_out).write_text(text)
    else:
        print(text)
    return status


def cmd_simulate(args) -> int:
    cfg = config_from_args(args)
    summary = ensemble.run_ensemble(cfg)
    doc = summary.to_json()
    print(f"wrote {cfg.output_dir}: {doc['n_trajectories']} trajectories, "
          f"mean final fidelity {doc['mean_final_fidelity']:.4f}, "
          f"{len(doc['failures'])} failures")
    return EXIT_OK


def cmd_report(args) -> int:
    print(ensemble.report(args.output_dir))
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "synthesize": cmd_synthesize, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except HypothesisViolation as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (QNDError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
