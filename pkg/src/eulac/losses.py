"""Binary surrogate losses usable inside the augmented-class risk.

Every loss offered here satisfies the identity psi(z) - psi(-z) = -z, which
is what makes the labeled-data term of the LAC risk collapse to a linear
function of the scores.  The plain hinge loss violates the identity and is
rejected on construction.
"""

from __future__ import annotations

import numpy as np

SQUARE = "square"
LOGISTIC = "logistic"
DOUBLE_HINGE = "double-hinge"

LOSS_KINDS = (SQUARE, LOGISTIC, DOUBLE_HINGE)

_ALIASES = {"double_hinge": DOUBLE_HINGE}


def canonical_loss_kind(kind: str) -> str:
    """Validate a loss-kind name, normalising the double-hinge spelling."""
    kind = _ALIASES.get(kind, kind)
    if kind == "hinge":
        raise ValueError(
            "hinge loss does not satisfy psi(z) - psi(-z) = -z and cannot "
            "be used; choose one of " + ", ".join(LOSS_KINDS)
        )
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; choose one of {LOSS_KINDS}")
    return kind


def _check_finite(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("loss input must be finite")
    return z


def loss_value(kind: str, z) -> np.ndarray | float:
    """Evaluate psi(z) elementwise.  Accepts scalars or arrays."""
    kind = canonical_loss_kind(kind)
    z = _check_finite(z)
    if kind == SQUARE:
        out = 0.25 * (1.0 - z) ** 2
    elif kind == LOGISTIC:
        # log(1 + exp(-z)) without overflow for large |z|
        out = np.logaddexp(0.0, -z)
    else:
        out = np.maximum(-z, np.maximum(0.0, 0.5 - 0.5 * z))
    return out if out.ndim else float(out)


def loss_derivative(kind: str, z) -> np.ndarray | float:
    """Derivative (or a fixed subgradient at kinks) of psi."""
    kind = canonical_loss_kind(kind)
    z = _check_finite(z)
    if kind == SQUARE:
        out = 0.5 * (z - 1.0)
    elif kind == LOGISTIC:
        # -sigmoid(-z), evaluated stably on both tails
        out = -1.0 / (1.0 + np.exp(np.minimum(z, 500.0)))
    else:
        # pieces: -1 below z=-1, -1/2 inside (-1, 1), 0 above z=1;
        # kinks take the midpoint subgradient so the value is deterministic
        out = np.where(z < -1.0, -1.0, np.where(z < 1.0, -0.5, 0.0))
        out = np.where(z == -1.0, -0.75, out)
        out = np.where(z == 1.0, -0.25, out)
    return out if out.ndim else float(out)


def check_lac_condition(kind: str, grid) -> float:
    """Max violation of psi(z) - psi(-z) + z = 0 over the given grid."""
    grid = _check_finite(grid)
    return float(np.max(np.abs(loss_value(kind, grid) - loss_value(kind, -grid) + grid)))
