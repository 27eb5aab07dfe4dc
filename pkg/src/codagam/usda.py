"""USDA soil-texture classification from sand/silt/clay percentages.

The twelve textural classes are encoded as an explicit decision table
over percentages summing to 100.  Rules are evaluated in a fixed order
with clay-dominant classes first; boundary conventions (strict vs
inclusive) are chosen so that the rules are mutually exclusive and cover
the whole texture triangle, which the test suite verifies by exhaustive
enumeration on a one-percent grid.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidComposition

#: Class name -> predicate over (sand, silt, clay) percentages.
#: Evaluation order matters only for documentation; the table is disjoint.
_RULES = (
    ("clay", lambda sa, si, cl: cl >= 40 and sa <= 45 and si < 40),
    ("silty clay", lambda sa, si, cl: cl >= 40 and si >= 40),
    ("sandy clay", lambda sa, si, cl: cl >= 35 and sa > 45),
    ("clay loam", lambda sa, si, cl: 27 <= cl < 40 and 20 < sa <= 45),
    ("silty clay loam", lambda sa, si, cl: 27 <= cl < 40 and sa <= 20),
    ("sandy clay loam", lambda sa, si, cl: 20 <= cl < 35 and si < 28 and sa > 45),
    ("loam", lambda sa, si, cl: 7 <= cl < 27 and 28 <= si < 50 and sa <= 52),
    (
        "silt loam",
        lambda sa, si, cl: (si >= 50 and 12 <= cl < 27)
        or (50 <= si < 80 and cl < 12),
    ),
    ("silt", lambda sa, si, cl: si >= 80 and cl < 12),
    (
        "sandy loam",
        lambda sa, si, cl: (7 <= cl < 20 and sa > 52 and si + 2 * cl >= 30)
        or (cl < 7 and si < 50 and si + 2 * cl >= 30),
    ),
    ("loamy sand", lambda sa, si, cl: si + 1.5 * cl >= 15 and si + 2 * cl < 30),
    ("sand", lambda sa, si, cl: si + 1.5 * cl < 15),
)

CLASS_NAMES = tuple(name for name, _ in _RULES)


def classify_usda(sand: float, silt: float, clay: float) -> str:
    """Return the USDA textural class of a sand/silt/clay percentage triple.

    The three shares must be nonnegative and sum to 100 within 0.5; they
    are renormalized to exactly 100 before the table lookup.
    """
    values = np.array([sand, silt, clay], dtype=float)
    if np.any(~np.isfinite(values)) or np.any(values < 0):
        raise InvalidComposition("shares must be finite and nonnegative")
    total = values.sum()
    if abs(total - 100.0) > 0.5:
        raise InvalidComposition(
            f"shares sum to {total:.3f}; expected 100 within 0.5"
        )
    sand, silt, clay = values * (100.0 / total)
    for name, rule in _RULES:
        if rule(sand, silt, clay):
            return name
    raise InvalidComposition(
        f"no class matched sand={sand}, silt={silt}, clay={clay}"
    )  # pragma: no cover - the table is exhaustive


def classify_usda_many(sand, silt, clay) -> list[str]:
    """Vectorized convenience wrapper around :func:`classify_usda`."""
    sand = np.atleast_1d(np.asarray(sand, dtype=float))
    silt = np.atleast_1d(np.asarray(silt, dtype=float))
    clay = np.atleast_1d(np.asarray(clay, dtype=float))
    return [classify_usda(sa, si, cl) for sa, si, cl in zip(sand, silt, clay)]


def matching_classes(sand: float, silt: float, clay: float) -> list[str]:
    """All classes whose predicate accepts the triple (for overlap tests)."""
    return [name for name, rule in _RULES if rule(sand, silt, clay)]
