"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class KarmanError(Exception):
    exit_code = 1


class ConfigError(KarmanError, ValueError):
    exit_code = 2


class GridMismatch(KarmanError, ValueError):
    exit_code = 2


class NotShort(KarmanError):
    exit_code = 3

    def __init__(self, margin):
        super().__init__(f"input pair is not short: shortness margin {margin:.6g} <= 0")
        self.margin = margin


class Infeasible(KarmanError):
    exit_code = 4

    def __init__(self, stage, detail=""):
        msg = f"schedule infeasible at stage {stage}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.stage = stage


class ScheduleTooAggressive(KarmanError):
    exit_code = 4

    def __init__(self, stage, measured, allowed):
        super().__init__(
            f"stage {stage} missed its budget: |D' - delta^2 I| = {measured:.6g} > {allowed:.6g}"
        )
        self.stage = stage
        self.measured = measured
        self.allowed = allowed


class ConeViolation(KarmanError):
    exit_code = 4

    def __init__(self, node, margin):
        super().__init__(f"deficit leaves the admissible cone at node {node} (margin {margin:.6g})")
        self.node = node
        self.margin = margin


class ResolutionError(KarmanError, ValueError):
    """Corrugation frequency not resolvable on the grid (lambda*h > 1/4)."""

    exit_code = 4


class NonOrientation(KarmanError):
    exit_code = 5


class DegenerateDeficit(KarmanError):
    exit_code = 5


class VerificationMismatch(KarmanError):
    exit_code = 6

    def __init__(self, failures):
        super().__init__("verification failed: " + "; ".join(failures))
        self.failures = list(failures)
