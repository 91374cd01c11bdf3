"""JSON model configs.

Schema (all expression values are strings in the expression language, with
1-based state indices at this boundary only):

    {
      "states":  K,
      "domain":  [a, b],
      "epsilon": 0.1,
      "params":  {"name": value, ...},            # optional
      "drift":   ["expr", ... K entries ...],
      "rates":   {"n,m": "expr", ...},            # n != m, 1-based
      "sigma":   ["expr", ... K entries ...],     # optional
      "analytic": {...}                           # optional oracle metadata
    }

Two configs ship with the package: ``binary`` (a bistable two-state model)
and ``sodium_channel`` (N = 10 channel population, stimulus current I in
its params).
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .analytic import BinaryParams, IonChannelParams
from .expr import ExprAst, ExprSyntaxError, parse, variables
from .model import HybridModel

__all__ = [
    "ConfigError",
    "load_config",
    "model_from_config",
    "load_model",
    "builtin_config_path",
    "load_builtin",
    "analytic_params",
]


class ConfigError(ValueError):
    """Malformed model config; the message names the offending key."""


def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return cfg


def _parse_expr(src, where: str) -> ExprAst:
    if not isinstance(src, str):
        raise ConfigError(f"{where}: expected an expression string, got {type(src).__name__}")
    try:
        return parse(src)
    except ExprSyntaxError as e:
        raise ConfigError(f"{where}: {e}") from None


def model_from_config(cfg: dict, epsilon: float | None = None) -> HybridModel:
    """Build a HybridModel; raises ConfigError naming the key (and, for
    expressions, the byte offset) of the first problem found."""
    for key in ("states", "domain", "epsilon", "drift", "rates"):
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}")
    k = cfg["states"]
    if not isinstance(k, int) or k < 2:
        raise ConfigError(f"states: need an integer >= 2, got {k!r}")
    dom = cfg["domain"]
    if not (isinstance(dom, list) and len(dom) == 2):
        raise ConfigError(f"domain: need [a, b], got {dom!r}")
    eps = float(cfg["epsilon"]) if epsilon is None else float(epsilon)
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params: need an object of named reals")
    params = {str(name): float(v) for name, v in params.items()}

    drift_src = cfg["drift"]
    if not (isinstance(drift_src, list) and len(drift_src) == k):
        raise ConfigError(f"drift: need {k} expression strings")
    drift = tuple(_parse_expr(s, f"drift[{i}]") for i, s in enumerate(drift_src))

    rates_src = cfg["rates"]
    if not isinstance(rates_src, dict):
        raise ConfigError("rates: need an object mapping 'n,m' to expressions")
    rates: dict[tuple[int, int], ExprAst] = {}
    for key, src in rates_src.items():
        try:
            n_s, m_s = key.split(",")
            n, m = int(n_s), int(m_s)
        except (ValueError, AttributeError):
            raise ConfigError(f"rates key {key!r}: expected 'n,m' with integers") from None
        if not (1 <= n <= k and 1 <= m <= k):
            raise ConfigError(f"rates key {key!r}: index out of range 1..{k}")
        if n == m:
            raise ConfigError(f"rates key {key!r}: diagonal entries are not allowed")
        rates[(n - 1, m - 1)] = _parse_expr(src, f"rates[{key}]")

    sigma = None
    if cfg.get("sigma") is not None:
        sigma_src = cfg["sigma"]
        if not (isinstance(sigma_src, list) and len(sigma_src) == k):
            raise ConfigError(f"sigma: need {k} expression strings")
        sigma = tuple(_parse_expr(s, f"sigma[{i}]") for i, s in enumerate(sigma_src))

    known = {"x"} | set(params)
    for where, exprs in (("drift", drift), ("sigma", sigma or ())):
        for i, e in enumerate(exprs):
            bad = variables(e) - known
            if bad:
                raise ConfigError(f"{where}[{i}]: undeclared parameter(s) {sorted(bad)}")
    for (n, m), e in rates.items():
        bad = variables(e) - known
        if bad:
            raise ConfigError(f"rates[{n + 1},{m + 1}]: undeclared parameter(s) {sorted(bad)}")

    return HybridModel(
        k=k, domain=(float(dom[0]), float(dom[1])), epsilon=eps,
        drift=drift, rates=rates, params=params, sigma=sigma,
    )


def load_model(path, epsilon: float | None = None) -> HybridModel:
    return model_from_config(load_config(path), epsilon=epsilon)


def builtin_config_path(name: str) -> Path:
    p = resources.files("hybridld") / "configs" / f"{name}.json"
    with resources.as_file(p) as concrete:
        return Path(concrete)


def load_builtin(name: str, epsilon: float | None = None) -> HybridModel:
    """Load a bundled config by bare name ('binary' or 'sodium_channel')."""
    return load_model(builtin_config_path(name), epsilon=epsilon)


def analytic_params(cfg: dict):
    """Closed-form oracle parameters from a config's optional 'analytic'
    block: BinaryParams for family 'binary' (expressions taken from the
    model itself), IonChannelParams for family 'ionchannel'."""
    block = cfg.get("analytic")
    if block is None:
        raise ConfigError("config carries no 'analytic' oracle metadata")
    family = block.get("family")
    if family == "binary":
        if cfg["states"] != 2:
            raise ConfigError("binary oracle requires states = 2")
        params = {str(k): float(v) for k, v in cfg.get("params", {}).items()}
        return BinaryParams(
            omega_plus=_parse_expr(cfg["rates"]["1,2"], "rates[1,2]"),
            omega_minus=_parse_expr(cfg["rates"]["2,1"], "rates[2,1]"),
            f0=_parse_expr(cfg["drift"][0], "drift[0]"),
            f1=_parse_expr(cfg["drift"][1], "drift[1]"),
            params=params,
        )
    if family == "ionchannel":
        params = {str(k): float(v) for k, v in cfg.get("params", {}).items()}
        return IonChannelParams(
            n_channels=int(block["N"]),
            alpha=_parse_expr(block["alpha"], "analytic.alpha"),
            beta=_parse_expr(block["beta"], "analytic.beta"),
            f=_parse_expr(block["f"], "analytic.f"),
            g=_parse_expr(block["g"], "analytic.g"),
            params=params,
        )
    raise ConfigError(f"unknown analytic family {family!r}")
