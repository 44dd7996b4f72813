"""Flat key=value experiment configuration.

One ``key = value`` pair per line, ``#`` starts a comment, dotted keys
group sections (e.g. ``coupling.S = 2.0``).  Every key has a documented
default; unknown keys are a hard error so typos cannot silently fall
back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

from ..errors import ConfigError

__all__ = ["CONFIG_SCHEMA", "Config", "parse_config", "load_config", "config_help"]


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class _Key:
    default: Any
    parse: Callable[[str], Any]
    help: str


METHODS = ("mc", "mlmc", "qamlmc_model", "unbiased_osl", "unbiased_dissipative", "transformed_ula")

CONFIG_SCHEMA: dict[str, _Key] = {
    "method": _Key("mc", str, f"experiment method, one of {'|'.join(METHODS)}"),
    "seed": _Key(1, int, "master seed; --seed overrides"),
    "n_replications": _Key(1, int, "independent estimator replications"),
    "parallel.workers": _Key(0, int, "compiled-kernel thread cap (0 = library default); never affects results"),
    # potential
    "potential.name": _Key("quadratic", str, "builtin potential name"),
    "potential.d": _Key(1, int, "dimension (quadratic, oscillatory, radial_gauss, student_t, cosine_well)"),
    "potential.a": _Key(2.0, float, "radial_gauss well depth (> e/2)"),
    "potential.kappa": _Key(3.0, float, "student_t tail index"),
    "potential.lambda0": _Key(0.5, float, "welsch ridge weight / cosine_well modulation"),
    "potential.sigma": _Key(1.0, float, "welsch loss scale"),
    "potential.precision": _Key(1.0, float, "logistic / mixture prior precision (scalar)"),
    # observable
    "observable.name": _Key("cos", str, "observable: cos | tanh | const"),
    "observable.index": _Key(0, int, "coordinate index for cos/tanh"),
    "observable.value": _Key(1.0, float, "constant value for const"),
    # plain simulation
    "sim.T": _Key(8.0, float, "horizon for mc / mlmc"),
    "sim.h": _Key(0.01, float, "step size for mc"),
    "sim.n_samples": _Key(10000, int, "path count for mc / transformed_ula"),
    "sim.x0": _Key(0.0, float, "initial point (broadcast over coordinates)"),
    # coupled / multilevel
    "coupling.S": _Key(-1.0, float, "spring coefficient; negative = auto max(lambda, 1)"),
    "coupling.h0": _Key(0.1, float, "base (level-0) step size"),
    "coupling.levels": _Key(4, int, "deepest level L"),
    "target.eps": _Key(0.01, float, "classical accuracy target"),
    "target.sigma_hat": _Key(0.02, float, "quantum-model deviation target"),
    "pilot.n": _Key(1000, int, "pilot draws per level"),
    # unbiased estimators
    "schedule.T0": _Key(2.0, float, "base horizon of the time-shifted schedule"),
    "schedule.slope": _Key(0.0, float, "horizon increment per level; 0 = auto 4 ln2 / osl_m"),
    "debias.rho": _Key(0.75, float, "geometric accuracy decay exponent, in (1/2, 1)"),
    "debias.M": _Key(8.0, float, "accuracy headroom; M^2 > 2 + 16/(1 - 2^{1-2 rho})"),
    "debias.sigma_tilde": _Key(0.02, float, "target standard deviation of the unbiased estimator"),
    "debias.j_cap": _Key(64, int, "geometric index cap (exceeding it is an error)"),
    "dissipative.T_base": _Key(2.0, float, "horizon offset of T(sigma) = T_base + c_T ln(1/sigma)"),
    "dissipative.c_T": _Key(1.0, float, "horizon growth constant"),
    # heavy-tail transform
    "transform.alpha": _Key(0.0, float, "radial map power"),
    "transform.b": _Key(1.0, float, "radial map exponential weight"),
    "transform.beta": _Key(2.0, float, "radial map exponential power, in (1, 2]"),
    "transform.R1": _Key(1.0, float, "identity radius"),
    "transform.R2": _Key(2.0, float, "blend end radius"),
    "transform.h": _Key(0.005, float, "transformed-ULA step size"),
    "transform.n_steps": _Key(4000, int, "transformed-ULA steps per chain"),
    "transform.ks": _Key(True, _bool, "run the KS sampling check in transform-check"),
    "transform.spring_S": _Key(1.0, float, "spring coefficient for the f_h spring sampler"),
}


class Config:
    def __init__(self, values: dict[str, Any]):
        self._values = values

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def get(self, key: str) -> Any:
        return self._values[key]

    def override(self, key: str, value: Any) -> None:
        if key not in CONFIG_SCHEMA:
            raise ConfigError(key, "unknown key")
        self._values[key] = value

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)


def parse_config(text: str) -> Config:
    values = {k: spec.default for k, spec in CONFIG_SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(key, "unknown key")
        try:
            values[key] = CONFIG_SCHEMA[key].parse(val)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    cfg = Config(values)
    if cfg["method"] not in METHODS:
        raise ConfigError("method", f"must be one of {'|'.join(METHODS)}, got {cfg['method']!r}")
    return cfg


def load_config(path: str) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_help() -> str:
    lines = ["Configuration keys (key = default  # description):"]
    for key, spec in CONFIG_SCHEMA.items():
        lines.append(f"  {key} = {spec.default}  # {spec.help}")
    return "\n".join(lines)
