"""Exception hierarchy shared across the library.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures (divergence, weight overflow) with 3, and a geometric
truncation-cap hit with 4.
"""


class GibbsMlmcError(Exception):
    """Base class for all library errors."""


class ParameterError(GibbsMlmcError, ValueError):
    """A parameter lies outside its mathematical domain."""


class ConfigError(GibbsMlmcError, ValueError):
    """Bad experiment configuration (unknown key, unparsable value)."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


class DivergenceError(GibbsMlmcError, ArithmeticError):
    """A simulated state left the admissible region (|x_i| > threshold)."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"state diverged at step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class WeightOverflowError(GibbsMlmcError, ArithmeticError):
    """A Radon-Nikodym log-weight left the representable range."""

    def __init__(self, step: int, log_weight: float):
        self.step = step
        self.log_weight = log_weight
        super().__init__(
            f"log weight {log_weight:.6g} exceeds safe range at step {step}"
        )


class JCapExceededError(GibbsMlmcError, RuntimeError):
    """The geometric truncation index exceeded the configured cap.

    Raised instead of silently truncating, since truncation would
    reintroduce the bias the randomization removes.
    """

    def __init__(self, j: int, j_cap: int):
        self.j = j
        self.j_cap = j_cap
        super().__init__(f"geometric index j={j} exceeds cap {j_cap}")


class RegimeError(GibbsMlmcError, ValueError):
    """A method was requested for a potential lacking the required regularity."""


class IsotropyError(GibbsMlmcError, ValueError):
    """A radial construction was given a non-isotropic base potential."""


class NumericError(GibbsMlmcError, ArithmeticError):
    """Non-finite values encountered in a numeric routine."""
