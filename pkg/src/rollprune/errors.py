class DomainError(ValueError):
    """An argument lies outside the domain the operation is defined on."""


class DegenerateGroupError(ValueError):
    """Too few surviving rollouts in a group for the requested statistic."""


class UndefinedLikelihoodError(ValueError):
    """A class-conditional likelihood is 0/0 (no smoothing, empty histogram)."""


class ShortTraceError(ValueError):
    """A confidence trace is shorter than the sliding window."""


class UnreachableTargetError(ValueError):
    """The requested keep rate cannot be met inside the clip bounds."""

    def __init__(self, kappa, nearest):
        self.kappa = kappa
        self.nearest = nearest
        super().__init__(
            f"keep rate {kappa} outside clip bounds; nearest achievable is {nearest}"
        )


class ConfigError(ValueError):
    """Invalid experiment or workload configuration.

    ``problems`` maps a dotted field path to a message.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = {"": problems}
        self.problems = dict(problems)
        lines = [f"{k}: {v}" if k else v for k, v in self.problems.items()]
        super().__init__("; ".join(lines))
