"""Exception hierarchy shared by every module.

All domain failures derive from :class:`ScmError` so callers (and the CLI)
can catch one type and report ``type(err).__name__`` as a machine-readable
code.
"""

from __future__ import annotations


class ScmError(Exception):
    """Base class for domain errors."""

    def details(self) -> dict:
        return {}


class MalformedRow(ScmError):
    def __init__(self, path, line: int, reason: str):
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{self.path}:{line}: {reason}")

    def details(self) -> dict:
        return {"path": self.path, "line": self.line, "reason": self.reason}


class DuplicateObservation(ScmError):
    def __init__(self, key, line: int | None = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate observation {key!r}{where}")

    def details(self) -> dict:
        return {"key": list(self.key) if isinstance(self.key, tuple) else self.key,
                "line": self.line}


class NonNumericCell(MalformedRow):
    pass


class EmptyPanel(ScmError):
    pass


class AllMissing(ScmError):
    def __init__(self, key: str, units):
        self.key = key
        self.units = list(units)
        super().__init__(f"covariate {key!r} has no observed cells in window for units {self.units}")

    def details(self) -> dict:
        return {"key": self.key, "units": self.units}


class EmptyWindow(ScmError):
    pass


class UnknownKey(ScmError):
    def __init__(self, kind: str, key: str):
        self.kind = kind
        self.key = key
        super().__init__(f"unknown {kind} {key!r}")

    def details(self) -> dict:
        return {"kind": self.kind, "key": self.key}


class UnknownCovariate(UnknownKey):
    def __init__(self, key: str):
        super().__init__("covariate", key)


class UnknownOutcome(UnknownKey):
    def __init__(self, key: str):
        super().__init__("outcome", key)


class UnknownUnit(UnknownKey):
    def __init__(self, key: str):
        super().__init__("unit", key)


class NoDonors(ScmError):
    pass


class MissingOutcome(ScmError):
    def __init__(self, outcome: str, cells):
        self.outcome = outcome
        self.cells = [(str(u), int(y)) for u, y in cells]
        shown = ", ".join(f"({u}, {y})" for u, y in self.cells[:10])
        more = "" if len(self.cells) <= 10 else f" and {len(self.cells) - 10} more"
        super().__init__(f"missing {outcome!r} outcome at {shown}{more}")

    def details(self) -> dict:
        return {"outcome": self.outcome, "cells": [list(c) for c in self.cells]}


class EmptyPrePeriod(ScmError):
    pass


class NonFiniteInput(ScmError):
    pass


class UnderdeterminedSystem(ScmError):
    def __init__(self, n_obs: int, n_params: int):
        self.n_obs = n_obs
        self.n_params = n_params
        super().__init__(
            f"{n_obs} observations cannot identify {n_params} parameters "
            "(need strictly more observations than parameters)"
        )

    def details(self) -> dict:
        return {"observations": self.n_obs, "parameters": self.n_params}


class ZeroPreFit(ScmError):
    pass


class InferenceImpossible(ScmError):
    pass


class ConfigError(ScmError):
    pass


class NoCovariates(ScmError):
    pass
