"""Learning-rate decay schedules."""

import math

from .sim import InvalidInput


def episodic_rate(j, power=0.51):
    """l(j) = j^(-power), j counted from 1."""
    if not j >= 1:
        raise InvalidInput("episode index must be >= 1")
    return float(j) ** -power


def ergodic_rate(t):
    """l(t) = 1 / max(1, log t), t > 0."""
    if not t > 0:
        raise InvalidInput("time must be positive")
    return 1.0 / max(1.0, math.log(t))


def schedule_eval(kind, arg, power=0.51):
    if kind == "episodic":
        return episodic_rate(arg, power)
    if kind == "ergodic":
        return ergodic_rate(arg)
    raise InvalidInput(f"unknown schedule {kind!r}")
