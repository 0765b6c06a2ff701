"""Agreement criteria between predicted and listener scores."""

from __future__ import annotations

import json
import math
import operator
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

# Two-sided 95 % Student-t quantiles t(0.975, df); linear interpolation in
# between, normal quantile beyond the last entry.
_T_TABLE = {
    1: 12.7062, 2: 4.3027, 3: 3.1824, 4: 2.7764, 5: 2.5706, 6: 2.4469, 7: 2.3646,
    8: 2.3060, 9: 2.2622, 10: 2.2281, 11: 2.2010, 12: 2.1788, 13: 2.1604, 14: 2.1448,
    15: 2.1314, 16: 2.1199, 17: 2.1098, 18: 2.1009, 19: 2.0930, 20: 2.0860, 21: 2.0796,
    22: 2.0739, 23: 2.0687, 24: 2.0639, 25: 2.0595, 26: 2.0555, 27: 2.0518, 28: 2.0484,
    29: 2.0452, 30: 2.0423, 35: 2.0301, 40: 2.0211, 45: 2.0141, 50: 2.0086, 60: 2.0003,
    70: 1.9944, 80: 1.9901, 90: 1.9867, 100: 1.9840, 120: 1.9799, 150: 1.9759, 200: 1.9719,
}
_T_DF = np.array(sorted(_T_TABLE))
_T_VAL = np.array([_T_TABLE[d] for d in _T_DF])
Z_975 = 1.96


def t_quantile_975(df: int) -> float:
    if df < 1:
        raise DataError("degrees of freedom must be >= 1")
    if df > _T_DF[-1]:
        return Z_975
    return float(np.interp(df, _T_DF, _T_VAL))


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("inputs must be 1-D sequences of equal length")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    if x.size < 2:
        raise DataError("undefined correlation: fewer than two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0.0 or syy == 0.0:
        raise DataError("undefined correlation: constant input")
    r = np.dot(dx, dy) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def spearman(x, y) -> float:
    """Pearson correlation of average-tie ranks."""
    x, y = _pair(x, y)
    return pearson(rankdata(x), rankdata(y))


def rmse(s, s_hat) -> float:
    s, s_hat = _pair(s, s_hat)
    if s.size < 1:
        raise DataError("rmse of an empty set")
    return float(np.sqrt(np.mean(np.square(s - s_hat))))


def rmse_star(s, s_hat, ci95, normalized: bool = True) -> float:
    """Error beyond each point's 95 % confidence half-width, RMS-aggregated.

    ``normalized=False`` gives the plain square root of the sum, without the
    1/N factor.
    """
    s, s_hat = _pair(s, s_hat)
    ci95 = np.asarray(ci95, dtype=np.float64)
    if ci95.shape != s.shape:
        raise DataError("ci95 length differs from the scores")
    if s.size < 1:
        raise DataError("rmse_star of an empty set")
    if np.any(ci95 < 0):
        raise DataError("negative ci95")
    excess = np.maximum(0.0, np.abs(s - s_hat) - ci95) ** 2
    return float(np.sqrt(np.mean(excess) if normalized else np.sum(excess)))


def ci95_of_ratings(ratings) -> float:
    r = np.asarray(ratings, dtype=np.float64)
    n = r.size
    if n < 2:
        raise DataError("need at least two ratings")
    return t_quantile_975(n - 1) * float(np.std(r, ddof=1)) / math.sqrt(n)


# -- subset reports ----------------------------------------------------------

Row = Mapping[str, object]
_OPS = {"==": operator.eq, "!=": operator.ne}


def parse_subset(expr: str) -> Callable[[Row], bool]:
    """Build a row filter from ``field==value`` / ``field!=value`` terms joined by ``&``.

    ``*`` matches every row.
    """
    expr = expr.strip()
    if expr in ("", "*"):
        return lambda row: True
    terms = []
    for term in expr.split("&"):
        for sym, op in _OPS.items():
            if sym in term:
                key, value = (t.strip() for t in term.split(sym, 1))
                terms.append((key, op, value))
                break
        else:
            raise DataError(f"cannot parse subset term {term!r}")

    def accept(row: Row) -> bool:
        return all(op(str(row.get(key, "")), value) for key, op, value in terms)

    return accept


def criteria(s, s_hat, ci95) -> dict[str, float | int | None]:
    out: dict[str, float | int | None] = {"n": len(s)}
    for name, fn in (("pearson", pearson), ("spearman", spearman)):
        try:
            out[name] = fn(s, s_hat)
        except DataError:
            out[name] = None
    if len(s):
        out["rmse"] = rmse(s, s_hat)
        out["rmse_star"] = rmse_star(s, s_hat, ci95)
    else:
        out["rmse"] = out["rmse_star"] = None
    return {k: out[k] for k in ("pearson", "spearman", "rmse", "rmse_star", "n")}


def report(rows: Sequence[Row], subsets: Mapping[str, Callable[[Row], bool]]) -> dict[str, dict]:
    """Criteria per named subset.

    Rows need ``mos``, ``pred`` and ``ci95``; filters may look at any other
    key. A criterion that cannot be computed is ``None``, never zero.
    """
    out = {}
    for name, accept in subsets.items():
        chosen = [r for r in rows if accept(r)]
        out[name] = criteria(
            [float(r["mos"]) for r in chosen],
            [float(r["pred"]) for r in chosen],
            [float(r["ci95"]) for r in chosen],
        )
    return out


def format_report(table: Mapping[str, Mapping], as_json: bool = False) -> str:
    if as_json:
        return json.dumps(table, indent=2, sort_keys=True)
    cols = ("pearson", "spearman", "rmse", "rmse_star", "n")
    width = max([6] + [len(k) for k in table])
    lines = [f"{'subset':<{width}}  " + "  ".join(f"{c:>9}" for c in cols)]
    for name, vals in table.items():
        cells = []
        for c in cols:
            v = vals[c]
            cells.append(f"{'-':>9}" if v is None else f"{v:>9d}" if c == "n" else f"{v:>9.3f}")
        lines.append(f"{name:<{width}}  " + "  ".join(cells))
    return "\n".join(lines)
