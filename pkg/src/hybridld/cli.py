"""Command-line front end.

Every subcommand is a pure function of (config bytes, flags, seed): output
is CSV/JSON on stdout (or --out PATH) with numbers at 17 significant
digits, LF line endings, UTF-8, and a header row.  Exit codes are a
stable contract: 0 success, 1 validation error (bad flags, bad config,
domain violations), 2 numeric failure (non-convergence, degenerate
roots), 3 I/O error.

Subcommands: validate, perron, flow, quasipotential, action, lagrangian,
simulate, occupancy, mfpt, oracle.  Commands touching randomness take a
single --seed flag (default 0); nothing reads entropy from the
environment.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace

import numpy as np

from . import analytic, hamilton, ldp, sim
from .config import ConfigError, analytic_params, load_config, model_from_config
from .expr import ExprError
from .model import HybridModel, ModelError
from .perron import dlambda_dp, hamiltonian, hamiltonian_sde

__all__ = ["main"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # map argparse usage failures to exit 1
        raise _UsageError(message)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _emit(rows: list[list], header: list[str], out_path: str | None) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([c if isinstance(c, str) else _fmt(c) for c in row])
    data = buf.getvalue()
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
    else:
        sys.stdout.write(data)


def _load(args) -> tuple[HybridModel, dict]:
    cfg = load_config(args.config)
    model = model_from_config(cfg, epsilon=args.epsilon)
    return model, cfg


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    spec = {
        "config": (("--config",), {"required": True, "help": "model config JSON"}),
        "x": (("--x",), {"type": float, "help": "continuous state"}),
        "p": (("--p",), {"type": float, "help": "conjugate momentum"}),
        "v": (("--v",), {"type": float, "help": "velocity"}),
        "epsilon": (("--epsilon",), {"type": float, "default": None,
                                     "help": "override model epsilon"}),
        "T": (("--T",), {"type": float, "help": "time horizon"}),
        "dt": (("--dt",), {"type": float, "default": 0.01, "help": "integrator step"}),
        "reps": (("--reps",), {"type": int, "default": 100, "help": "replica count"}),
        "seed": (("--seed",), {"type": int, "default": 0, "help": "RNG seed"}),
        "grid": (("--grid",), {"type": int, "default": 257, "help": "grid size"}),
        "from": (("--from",), {"type": float, "dest": "from_", "help": "interval start"}),
        "to": (("--to",), {"type": float, "help": "interval end"}),
        "out": (("--out",), {"default": None, "help": "write CSV here instead of stdout"}),
    }
    for name in names:
        flags, kw = spec[name]
        p.add_argument(*flags, **kw)


def _state_columns(tag: str, k: int) -> list[str]:
    return [f"{tag}_{i + 1}" for i in range(k)]


def cmd_validate(args) -> int:
    model, _ = _load(args)
    model.validate()
    fps = model.fixed_points()
    a, b = model.domain
    mid = 0.5 * (a + b)
    rho = model.invariant_measure(mid)
    lines = [
        f"states: {model.k}",
        f"domain: [{_fmt(a)}, {_fmt(b)}]",
        f"epsilon: {_fmt(model.epsilon)}",
        f"fixed_points: {len(fps)}",
    ]
    for x, kind in fps:
        lines.append(f"  {_fmt(x)} {kind}")
    lines.append(f"rho_at_midpoint x={_fmt(mid)}: "
                 + " ".join(_fmt(r) for r in rho))
    lines.append("valid")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_perron(args) -> int:
    model, _ = _load(args)
    sol = (hamiltonian_sde if args.sde else hamiltonian)(model, args.x, args.p)
    header = (["lambda"] + _state_columns("R", model.k)
              + _state_columns("z", model.k) + _state_columns("psi", model.k))
    _emit([[sol.lam, *sol.R, *sol.z, *sol.psi]], header, args.out)
    return EXIT_OK


def cmd_flow(args) -> int:
    model, _ = _load(args)
    res = hamilton.flow(model, args.x, args.p, args.T, args.dt)
    rows = [[pt.t, pt.x, pt.p, pt.energy] for pt in res.points]
    _emit(rows, ["t", "x", "p", "energy"], args.out)
    return EXIT_OK


def cmd_quasipotential(args) -> int:
    model, _ = _load(args)
    if args.from_ is None or args.to is None:
        esc = hamilton.escape_exponent(model, n_grid=args.grid)
        x_from = args.from_ if args.from_ is not None else esc.x_minus
        x_to = args.to if args.to is not None else esc.x0
    else:
        x_from, x_to = args.from_, args.to
    prof = hamilton.quasipotential(model, x_from, x_to, args.grid)
    rows = [[x, p, phi] for x, p, phi in zip(prof.x, prof.p_star, prof.phi)]
    _emit(rows, ["x", "p_star", "phi"], args.out)
    return EXIT_OK


def cmd_action(args) -> int:
    model, _ = _load(args)
    ts, xs = [], []
    with open(args.path, encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                t, x = float(row[0]), float(row[1])
            except ValueError:
                continue  # header row
            ts.append(t)
            xs.append(x)
    if len(ts) < 2:
        raise ConfigError(f"{args.path}: need at least two (t,x) samples")
    t0 = ts[0]
    path = ldp.PathSample(np.array(ts) - t0, np.array(xs))
    value = ldp.action(model, path)
    _emit([[value]], ["action"], args.out)
    return EXIT_OK


def cmd_lagrangian(args) -> int:
    model, _ = _load(args)
    if args.sde:
        res = ldp.lagrangian_sde(model, args.x, args.v)
        _emit([[res.L, res.p, res.mu, res.sigma_sq]],
              ["L", "p", "mu", "sigma_sq"], args.out)
    else:
        L, mu = ldp.lagrangian(model, args.x, args.v)
        _emit([[L, mu]], ["L", "mu"], args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    model, _ = _load(args)
    n0 = args.n - 1
    if args.sde:
        traj = sim.simulate_sde(model, args.x, n0, args.T, args.seed, args.dt)
    else:
        traj = sim.simulate(model, args.x, n0, args.T, args.seed, args.dt)
    rows = [[t, x, int(n) + 1] for t, x, n in zip(traj.t, traj.x, traj.n)]
    _emit(rows, ["t", "x", "n"], args.out)
    return EXIT_OK


def cmd_occupancy(args) -> int:
    model, _ = _load(args)
    res = sim.occupancy(model, args.x, args.T, args.seed)
    rows = [[i + 1, res.fractions[i], res.rho[i], res.stderr[i]]
            for i in range(model.k)]
    _emit(rows, ["state", "empirical", "rho", "stderr"], args.out)
    return EXIT_OK


def cmd_mfpt(args) -> int:
    model, _ = _load(args)
    ens = sim.first_passage_ensemble(
        model, args.from_, args.n - 1, args.to, args.T, args.reps, args.seed,
        ode_dt=args.dt,
    )
    header = ["epsilon", "n_rep", "mean", "stderr", "cv", "timeouts", "exits"]
    _emit([[model.epsilon, args.reps, ens.mean, ens.stderr, ens.cv,
            ens.n_timeout, ens.n_exited]], header, args.out)
    if args.samples:
        _emit([[tau] for tau in ens.taus], ["tau"], args.samples)
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.q1 is not None or args.q2 is not None:
        if args.q1 is None or args.q2 is None:
            raise _UsageError("need both --q1 and --q2")
        lam = analytic.appendix_lambda(args.q1, args.q2)
        psi1, psi2 = analytic.appendix_psi(args.q1, args.q2)
        _emit([[lam, psi1, psi2]], ["lambda", "psi_1", "psi_2"], args.out)
        return EXIT_OK
    if args.config is None:
        raise _UsageError("need --config (or --q1/--q2 for the two-state example)")
    cfg = load_config(args.config)
    params = analytic_params(cfg)
    if isinstance(params, analytic.BinaryParams):
        lam = analytic.binary_lambda(params, args.x, args.p)
        psi0, psi1 = analytic.binary_psi(params, args.x, args.p)
        _emit([[lam, psi0, psi1]], ["lambda", "psi_1", "psi_2"], args.out)
    else:
        lam = analytic.ionchannel_lambda(params, args.x, args.p)
        phip = analytic.ionchannel_phi_prime(params, args.x)
        _emit([[lam, phip]], ["lambda", "phi_prime"], args.out)
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="hybridld", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model config")
    _add_common(p, "config", "epsilon", "out")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("perron", help="spectral solution at (x, p)")
    _add_common(p, "config", "x", "p", "epsilon", "out")
    p.add_argument("--sde", action="store_true", help="use the sigma-augmented weight")
    p.set_defaults(fn=cmd_perron, x_required=("x", "p"))

    p = sub.add_parser("flow", help="Hamiltonian flow from (x, p)")
    _add_common(p, "config", "x", "p", "T", "dt", "epsilon", "out")
    p.set_defaults(fn=cmd_flow, x_required=("x", "p", "T"))

    p = sub.add_parser("quasipotential", help="zero-energy profile and Phi")
    _add_common(p, "config", "from", "to", "grid", "epsilon", "out")
    p.set_defaults(fn=cmd_quasipotential)

    p = sub.add_parser("action", help="path action from a (t,x) CSV file")
    _add_common(p, "config", "epsilon", "out")
    p.add_argument("--path", required=True, help="CSV file with t,x rows")
    p.set_defaults(fn=cmd_action)

    p = sub.add_parser("lagrangian", help="Lagrangian L(x, v) and momentum")
    _add_common(p, "config", "x", "v", "epsilon", "out")
    p.add_argument("--sde", action="store_true", help="sigma-augmented variant")
    p.set_defaults(fn=cmd_lagrangian, x_required=("x", "v"))

    p = sub.add_parser("simulate", help="simulate one trajectory")
    _add_common(p, "config", "x", "T", "dt", "seed", "epsilon", "out")
    p.add_argument("--n", type=int, default=1, help="initial discrete state (1-based)")
    p.add_argument("--sde", action="store_true", help="piecewise SDE variant")
    p.set_defaults(fn=cmd_simulate, x_required=("x", "T"))

    p = sub.add_parser("occupancy", help="frozen-x occupancy statistics")
    _add_common(p, "config", "x", "T", "seed", "epsilon", "out")
    p.set_defaults(fn=cmd_occupancy, x_required=("x", "T"))

    p = sub.add_parser("mfpt", help="first-passage ensemble from --from to --to")
    _add_common(p, "config", "from", "to", "T", "dt", "reps", "seed", "epsilon", "out")
    p.add_argument("--n", type=int, default=1, help="initial discrete state (1-based)")
    p.add_argument("--samples", default=None, help="write per-sample CSV here")
    p.set_defaults(fn=cmd_mfpt, x_required=("from_", "to", "T"))

    p = sub.add_parser("oracle", help="closed-form oracle values")
    p.add_argument("--config", default=None)
    _add_common(p, "x", "p", "out")
    p.add_argument("--q1", type=float, default=None)
    p.add_argument("--q2", type=float, default=None)
    p.set_defaults(fn=cmd_oracle)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        for attr in getattr(args, "x_required", ()):
            if getattr(args, attr) is None:
                flag = "--" + attr.rstrip("_").replace("_", "-")
                raise _UsageError(f"{args.command}: {flag} is required")
        return args.fn(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigError, ModelError, ExprError, ValueError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except RuntimeError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
