"""
Custom exception hierarchy for the cooperative output regulation toolkit.

Every error raised by the coorp_adp package inherits from CoorpError, so callers
can catch the whole family at the CLI boundary and specific subclasses elsewhere.

Guidelines:
- Never raise a generic Exception - always use a specific subclass
- Convert numpy/scipy/pydantic/IO failures into this hierarchy with ``raise ... from e``
- Carry the numbers needed to act on the failure as attributes
"""

from typing import Optional


class CoorpError(Exception):
    """
    Base exception for all coorp_adp errors.

    All custom exceptions in this project inherit from this class.
    """
    pass


class ConfigurationError(CoorpError):
    """
    Raised when an experiment configuration is invalid or incomplete.

    This includes:
    - Malformed TOML or .env values
    - Matrices whose dimensions disagree with each other
    - Nonpositive tolerances, steps or windows
    """
    pass


class DimensionError(CoorpError, ValueError):
    """
    Raised when vectors or matrices have inconsistent shapes.

    Subclasses ValueError so numerical call sites can treat it as bad input.
    """
    pass


class TopologyError(CoorpError):
    """
    Raised when the communication graph violates its requirements.

    Examples:
    - Self-loops or nonpositive edge weights
    - Empty target set (no follower hears the leader)
    - Directed or disconnected follower graph
    """
    pass


class AssumptionError(CoorpError):
    """
    Raised when an agent model fails a structural assumption.

    This covers:
    - (A, B) not stabilizable or (C, A) not observable
    - Transmission-zero condition failing at an exosystem eigenvalue
    - Rank-deficient output matrix C
    """
    pass


class DivergenceError(CoorpError):
    """
    Raised when a simulated state becomes non-finite or exceeds the norm guard.

    Attributes:
        time: Simulation time of the offending sample
        agent: 1-based follower index, or None for the exosystem/observers
    """

    def __init__(self, message: str, time: float, agent: Optional[int] = None):
        super().__init__(message)
        self.time = time
        self.agent = agent


class ExcitationError(CoorpError):
    """
    Raised when collected data is not rich enough for the least-squares solve.

    Attributes:
        required_rank: Rank demanded by the rank condition
        achieved_rank: Numerical rank of the data matrices (None if unknown)
    """

    def __init__(self, message: str, required_rank: int, achieved_rank: Optional[int] = None):
        super().__init__(message)
        self.required_rank = required_rank
        self.achieved_rank = achieved_rank


class InstabilityError(CoorpError):
    """
    Raised when a gain is not stabilizing or a value matrix loses definiteness.

    This happens when:
    - A - B K is not Hurwitz in a Lyapunov solve (source "gain")
    - A P_k learned from data is not positive definite (source "data")

    Attributes:
        source: "gain" when a supplied or computed gain is at fault, "data"
            when the least-squares fit on collected data produced it
    """

    def __init__(self, message: str, source: str = "gain"):
        super().__init__(message)
        self.source = source


class ConvergenceError(CoorpError):
    """
    Raised when an iteration exceeds its cap without meeting the tolerance.
    """

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


class RegulatorError(CoorpError):
    """
    Raised when the regulator equations cannot be solved from learned quantities.

    Causes:
    - Recovered input matrix is rank deficient
    - Residual of S(X) = B U + D above tolerance
    - Exact regulator equations have no solution
    """
    pass


class ReportError(CoorpError):
    """
    Raised when a results document cannot be written, read or verified.
    """
    pass


class ExperimentError(CoorpError):
    """
    Raised by the experiment runner when any phase fails.

    Wraps the original error (available as ``__cause__``) with the agent,
    the phase and a remediation hint.
    """

    def __init__(self, message: str, phase: str, agent: Optional[int] = None, hint: str = ""):
        super().__init__(message)
        self.phase = phase
        self.agent = agent
        self.hint = hint

    def __str__(self) -> str:
        where = f"agent {self.agent}, " if self.agent is not None else ""
        text = f"[{where}phase {self.phase}] {self.args[0]}"
        if self.hint:
            text += f" (hint: {self.hint})"
        return text

    def to_dict(self) -> dict:
        """Machine-readable form for CLI failure lists"""
        return {
            'error': type(self.__cause__).__name__ if self.__cause__ else type(self).__name__,
            'message': self.args[0],
            'phase': self.phase,
            'agent': self.agent,
            'hint': self.hint,
        }


_HINTS = {
    ExcitationError: "rank condition failed: increase noise amplitude, frequency spread or the learning window",
    InstabilityError: "gain is not stabilizing: supply a different K0 or use pole placement",
    DivergenceError: "state diverged: check that K0 stabilizes every follower and that dt is small enough",
    ConvergenceError: "iteration cap reached: raise max_iterations or loosen the tolerance",
    RegulatorError: "learned quantities are inconsistent: lengthen the window or let the observer settle first",
    AssumptionError: "agent model violates a structural assumption: run `coorp-adp check` on the config",
    TopologyError: "fix the graph section: followers must form a connected undirected graph with a target",
    ConfigurationError: "fix the configuration file or environment overrides",
}


_DATA_INSTABILITY_HINT = (
    "value matrix fitted from data is indefinite: widen the excitation band or amplitude, "
    "or raise learning.observer_warmup so the exostate estimates settle before sampling"
)


def remediation_hint(error: BaseException) -> str:
    """Suggested next step for an error from this hierarchy (empty if none)"""
    if isinstance(error, InstabilityError) and error.source == "data":
        return _DATA_INSTABILITY_HINT
    for cls in type(error).__mro__:
        if cls in _HINTS:
            return _HINTS[cls]
    return ""
