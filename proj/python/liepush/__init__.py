"""Pushforward densities and locally invertible flows on Lie groups."""

from ._liepush import (
    BoundaryError,
    Flow,
    InvalidArgument,
    InvalidElement,
    LiepushError,
    OutOfSupport,
    Pushforward,
    SingularElement,
    SingularShell,
    exp_map,
    jacobian,
    killing_form,
    log_map,
    preimages,
)

__all__ = [
    "BoundaryError",
    "Flow",
    "InvalidArgument",
    "InvalidElement",
    "LiepushError",
    "OutOfSupport",
    "Pushforward",
    "SingularElement",
    "SingularShell",
    "exp_map",
    "jacobian",
    "killing_form",
    "log_map",
    "preimages",
]
