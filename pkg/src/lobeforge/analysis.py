"""Statistics over indentation results: normality, two-factor ANOVA, Tukey HSD.

Observations are rows of (actuator, direction, metric, value). The ANOVA
uses sequential (Type I) sums of squares in the order actuator, direction,
interaction, which coincides with the classical decomposition on balanced
designs.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.stats import studentized_range

from .errors import DegenerateDesign, EmptyData, FormatError, NonMonotoneStroke, SampleTooSmall
from .protocol import compute_work, detect_transition_points

ACTUATORS = ("SG-const", "SG-taper", "ATL-const", "ATL-taper")
DIRECTIONS = ("Loading", "Snapping")
MAX_FORCE = "MaxForce"
WORK = "Work"
METRICS = (MAX_FORCE, WORK)
METRIC_UNITS = {MAX_FORCE: "N", WORK: "mJ"}
ALPHA = 0.005
TRACE_HEADER = ["time_s", "stroke_mm", "force_n"]
OBS_HEADER = ["actuator", "direction", "metric", "value"]


# ---------------------------------------------------------------------------
# input
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MeasuredTrace:
    time: np.ndarray
    stroke: np.ndarray
    force: np.ndarray
    source: str = ""

    def __len__(self):
        return len(self.stroke)

    @property
    def samples(self) -> np.ndarray:
        return np.column_stack([self.stroke, self.force])

    def transition_points(self, **kw):
        return detect_transition_points(self.samples, **kw)

    def work(self, **kw) -> float:
        x1, x2 = self.transition_points(**kw)
        return compute_work(self.samples, x1, x2)


def parse_trace_csv(path) -> MeasuredTrace:
    """Read a time_s,stroke_mm,force_n export; rows are ordered by time."""
    path = str(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty file", path, 1) from None
        if [h.strip() for h in header] != TRACE_HEADER:
            raise FormatError(f"header must be {','.join(TRACE_HEADER)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise FormatError(f"expected 3 columns, found {len(row)}", path, lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise FormatError("non-numeric value", path, lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise FormatError("non-finite value", path, lineno)
            rows.append((vals[0], vals[1], vals[2], lineno))
    rows.sort(key=lambda r: r[0])
    for prev, cur in zip(rows, rows[1:]):
        if cur[1] < prev[1]:
            raise NonMonotoneStroke("stroke decreases over time", path, cur[3])
    arr = np.array([r[:3] for r in rows], dtype=float).reshape(-1, 3)
    return MeasuredTrace(arr[:, 0], arr[:, 1], arr[:, 2], path)


@dataclass(frozen=True, eq=False)
class ObservationTable:
    actuator: tuple
    direction: tuple
    metric: tuple
    value: np.ndarray

    def __post_init__(self):
        n = len(self.value)
        if not (len(self.actuator) == len(self.direction) == len(self.metric) == n):
            raise ValueError("observation columns differ in length")
        v = np.asarray(self.value, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("observation values must be finite")
        object.__setattr__(self, "value", v)
        for name in ("actuator", "direction", "metric"):
            object.__setattr__(self, name, tuple(str(s) for s in getattr(self, name)))

    @classmethod
    def from_rows(cls, rows) -> "ObservationTable":
        rows = list(rows)
        if not rows:
            return cls((), (), (), np.zeros(0))
        a, d, m, v = zip(*rows)
        return cls(a, d, m, np.array(v, dtype=float))

    def __len__(self):
        return len(self.value)

    def rows(self):
        return zip(self.actuator, self.direction, self.metric, self.value)

    def select(self, metric: str):
        """(actuator labels, direction labels, values) for one metric."""
        idx = [i for i, m in enumerate(self.metric) if m == metric]
        return (
            [self.actuator[i] for i in idx],
            [self.direction[i] for i in idx],
            self.value[idx],
        )

    def metrics(self) -> list[str]:
        return [m for m in dict.fromkeys(self.metric)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(OBS_HEADER)
            for a, d, m, v in self.rows():
                w.writerow([a, d, m, f"{v:.10g}"])


def read_observations(path) -> ObservationTable:
    path = str(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty file", path, 1) from None
        if [h.strip() for h in header] != OBS_HEADER:
            raise FormatError(f"header must be {','.join(OBS_HEADER)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"expected 4 columns, found {len(row)}", path, lineno)
            try:
                v = float(row[3])
            except ValueError:
                raise FormatError("non-numeric value", path, lineno) from None
            if not math.isfinite(v):
                raise FormatError("non-finite value", path, lineno)
            rows.append((row[0].strip(), row[1].strip(), row[2].strip(), v))
    return ObservationTable.from_rows(rows)


def _level_order(labels, preferred):
    seen = list(dict.fromkeys(labels))
    known = [p for p in preferred if p in seen]
    return known + sorted(s for s in seen if s not in preferred)


# ---------------------------------------------------------------------------
# Shapiro-Wilk (Royston 1995 approximation)
# ---------------------------------------------------------------------------

_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(c, x):
    return sum(ci * x**i for i, ci in enumerate(c))


@dataclass(frozen=True)
class ShapiroResult:
    W: float
    p: float
    n: int


def shapiro_wilk_coefficients(n: int) -> np.ndarray:
    """Royston's approximate coefficients for the upper half of the order statistics."""
    if n == 3:
        return np.array([math.sqrt(0.5)])
    half = n // 2
    i = np.arange(1, half + 1)
    m = special.ndtri((i - 0.375) / (n + 0.25))
    summ2 = 2.0 * np.sum(m**2)
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a = np.empty(half)
    a1 = _poly(_C1, rsn) - m[0] / ssumm2
    if n > 5:
        a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1**2 - 2 * a2**2))
        a[1] = a2
        start = 2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1**2))
        start = 1
    a[0] = a1
    a[start:] = -m[start:] / fac
    return a


def shapiro_wilk(samples) -> ShapiroResult:
    """W statistic and p-value for normality, valid for 3 <= n <= 2000."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 3:
        raise SampleTooSmall("Shapiro-Wilk needs at least 3 observations")
    if n > 2000:
        raise SampleTooSmall("Shapiro-Wilk is limited to 2000 observations here")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    rng = x[-1] - x[0]
    if rng <= 0:
        raise ValueError("all observations are identical")
    x = (x - x[0]) / rng
    a = shapiro_wilk_coefficients(n)
    half = n // 2
    num = np.sum(a * (x[::-1][:half] - x[:half])) ** 2
    ss = np.sum((x - x.mean()) ** 2)
    w = min(float(num / ss), 1.0)
    return ShapiroResult(w, _shapiro_p(w, n), n)


def _shapiro_p(w: float, n: int) -> float:
    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.pi / 3.0)
        return min(max(p, 0.0), 1.0)
    y = math.log1p(-w) if w < 1 else -math.inf
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return 1e-99
        y = -math.log(gamma - y)
        mu = _poly(_C3, n)
        sigma = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mu = _poly(_C5, ln)
        sigma = math.exp(_poly(_C6, ln))
    if not math.isfinite(y):
        return 1.0
    return float(special.ndtr(-(y - mu) / sigma))


# ---------------------------------------------------------------------------
# two-factor ANOVA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnovaRow:
    effect: str
    df: int
    ss: float
    ms: float
    F: float | None
    p: float | None


@dataclass(frozen=True)
class AnovaTable:
    rows: tuple
    balanced: bool
    ss_type: str = "I (sequential: actuator, direction, interaction)"

    def __getitem__(self, effect: str) -> AnovaRow:
        for r in self.rows:
            if r.effect == effect:
                return r
        raise KeyError(effect)

    @property
    def total_ss(self) -> float:
        return float(sum(r.ss for r in self.rows))

    def to_dict(self) -> dict:
        return {
            "ss_type": self.ss_type,
            "balanced": self.balanced,
            "effects": [r.__dict__ for r in self.rows],
        }


def _dummies(labels, levels):
    """Treatment-coded indicator columns (first level is the baseline)."""
    lab = np.asarray(labels)
    return np.column_stack([(lab == lv).astype(float) for lv in levels[1:]]) if len(levels) > 1 else np.zeros((len(lab), 0))


def _rss(X, y) -> float:
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    return float(r @ r)


def _f_pvalue(F: float, d1: int, d2: int) -> float:
    return float(special.fdtrc(d1, d2, F))


def anova_two_factor(table: ObservationTable, metric: str, factor_a=ACTUATORS, factor_b=DIRECTIONS) -> AnovaTable:
    """Actuator x direction ANOVA with interaction for one metric."""
    a_lab, b_lab, y = table.select(metric)
    if len(y) == 0:
        raise EmptyData(f"no observations for metric {metric!r}")
    la = _level_order(a_lab, factor_a)
    lb = _level_order(b_lab, factor_b)
    if len(la) < 2 or len(lb) < 2:
        raise DegenerateDesign("both factors need at least two levels")
    counts = {}
    for a, b in zip(a_lab, b_lab):
        counts[(a, b)] = counts.get((a, b), 0) + 1
    if min(counts.values()) < 2:
        raise DegenerateDesign("every occupied cell needs at least two observations")
    balanced = len(set(counts.values())) == 1 and len(counts) == len(la) * len(lb)
    y = np.asarray(y, dtype=float)
    n = len(y)
    # centre the response: sums of squares are location invariant and the fit is better conditioned
    y = y - y.mean()
    one = np.ones((n, 1))
    A = _dummies(a_lab, la)
    B = _dummies(b_lab, lb)
    AB = np.column_stack([A[:, i] * B[:, j] for i in range(A.shape[1]) for j in range(B.shape[1])])
    rss0 = float(y @ y)
    rss_a = _rss(np.hstack([one, A]), y)
    rss_ab = _rss(np.hstack([one, A, B]), y)
    rss_full = _rss(np.hstack([one, A, B, AB]), y)
    df_a, df_b = len(la) - 1, len(lb) - 1
    # empty cells reduce the interaction rank
    df_ab = len(counts) - 1 - df_a - df_b
    df_res = n - len(counts)
    if df_res < 1:
        raise DegenerateDesign("no residual degrees of freedom")
    ss = [max(rss0 - rss_a, 0.0), max(rss_a - rss_ab, 0.0), max(rss_ab - rss_full, 0.0), max(rss_full, 0.0)]
    ms_res = ss[3] / df_res
    rows = []
    for name, df, s in (("actuator", df_a, ss[0]), ("direction", df_b, ss[1]), ("actuator:direction", df_ab, ss[2])):
        ms = s / df if df > 0 else 0.0
        F, p = _f_stat(ms, ms_res, df, df_res)
        rows.append(AnovaRow(name, df, s, ms, F, p))
    rows.append(AnovaRow("residual", df_res, ss[3], ms_res, None, None))
    return AnovaTable(tuple(rows), balanced)


def _f_stat(ms, ms_res, df, df_res):
    tiny = 1e-12 * max(ms, ms_res, 1e-300)
    if ms <= tiny and ms_res <= tiny:
        return 0.0, 1.0
    if ms_res <= tiny:
        return math.inf, 0.0
    F = ms / ms_res
    return F, _f_pvalue(F, df, df_res)


# ---------------------------------------------------------------------------
# Tukey HSD (Tukey-Kramer for unequal cell sizes)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TukeyPair:
    group_a: str
    group_b: str
    mean_diff: float
    q: float
    p_adj: float

    def significant(self, alpha: float = ALPHA) -> bool:
        return self.p_adj < alpha


@dataclass(frozen=True)
class TukeyMatrix:
    groups: tuple
    pairs: tuple
    df: int

    def p(self, g1: str, g2: str) -> float:
        if g1 == g2:
            return 1.0
        for pr in self.pairs:
            if {pr.group_a, pr.group_b} == {g1, g2}:
                return pr.p_adj
        raise KeyError((g1, g2))

    def matrix(self) -> np.ndarray:
        k = len(self.groups)
        out = np.ones((k, k))
        pos = {g: i for i, g in enumerate(self.groups)}
        for pr in self.pairs:
            i, j = pos[pr.group_a], pos[pr.group_b]
            out[i, j] = out[j, i] = pr.p_adj
        return out

    def non_significant(self, alpha: float = ALPHA):
        return [pr for pr in self.pairs if not pr.significant(alpha)]

    def to_dict(self, alpha: float = ALPHA) -> dict:
        return {
            "groups": list(self.groups),
            "residual_df": self.df,
            "alpha": alpha,
            "pairs": [dict(pr.__dict__, significant=pr.significant(alpha)) for pr in self.pairs],
            "non_significant": [[pr.group_a, pr.group_b] for pr in self.non_significant(alpha)],
        }


def group_label(actuator: str, direction: str) -> str:
    return f"{actuator}/{direction}"


def studentized_range_sf(q: float, k: int, df: int) -> float:
    if q <= 0:
        return 1.0
    if not math.isfinite(q):
        return 0.0
    return float(min(max(studentized_range.sf(q, k, df), 0.0), 1.0))


def tukey_hsd(table: ObservationTable, metric: str, factor_a=ACTUATORS, factor_b=DIRECTIONS) -> TukeyMatrix:
    """All pairwise comparisons between actuator x direction groups."""
    a_lab, b_lab, y = table.select(metric)
    if len(y) == 0:
        raise EmptyData(f"no observations for metric {metric!r}")
    la = _level_order(a_lab, factor_a)
    lb = _level_order(b_lab, factor_b)
    labels = [group_label(a, b) for a, b in zip(a_lab, b_lab)]
    groups = [group_label(a, b) for a in la for b in lb if group_label(a, b) in labels]
    data = {g: np.array([v for l, v in zip(labels, y) if l == g]) for g in groups}
    if len(groups) < 2:
        raise DegenerateDesign("need at least two groups")
    if min(len(v) for v in data.values()) < 2:
        raise DegenerateDesign("every group needs at least two observations")
    df = len(y) - len(groups)
    if df < 1:
        raise DegenerateDesign("no residual degrees of freedom")
    mse = sum(float(np.sum((v - v.mean()) ** 2)) for v in data.values()) / df
    k = len(groups)
    pairs = []
    for g1, g2 in itertools.combinations(groups, 2):
        v1, v2 = data[g1], data[g2]
        diff = float(v1.mean() - v2.mean())
        se = math.sqrt(mse / 2.0 * (1.0 / len(v1) + 1.0 / len(v2)))
        if se == 0:
            q = 0.0 if diff == 0 else math.inf
        else:
            q = abs(diff) / se
        pairs.append(TukeyPair(g1, g2, diff, q, studentized_range_sf(q, k, df)))
    return TukeyMatrix(tuple(groups), tuple(pairs), df)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def direction_ordering(table: ObservationTable) -> dict:
    """Loading versus Snapping mean per actuator and metric."""
    out = {}
    for metric in table.metrics():
        a_lab, b_lab, y = table.select(metric)
        res = {}
        for act in _level_order(a_lab, ACTUATORS):
            lv = [v for a, b, v in zip(a_lab, b_lab, y) if a == act and b == "Loading"]
            sv = [v for a, b, v in zip(a_lab, b_lab, y) if a == act and b == "Snapping"]
            if lv and sv:
                lm, sm = float(np.mean(lv)), float(np.mean(sv))
                res[act] = {"loading_mean": lm, "snapping_mean": sm, "loading_exceeds_snapping": lm > sm}
        out[metric] = res
    return out


def build_report(table: ObservationTable, alpha: float = ALPHA) -> dict:
    if len(table) == 0:
        raise EmptyData("observation table is empty")
    report = {"alpha": alpha, "units": METRIC_UNITS, "metrics": {}}
    for metric in table.metrics():
        a_lab, b_lab, y = table.select(metric)
        shapiro = {}
        for a in _level_order(a_lab, ACTUATORS):
            for b in _level_order(b_lab, DIRECTIONS):
                vals = [v for aa, bb, v in zip(a_lab, b_lab, y) if aa == a and bb == b]
                if len(vals) >= 3 and np.ptp(vals) > 0:
                    r = shapiro_wilk(vals)
                    shapiro[group_label(a, b)] = {"W": r.W, "p": r.p, "n": r.n}
                elif vals:
                    shapiro[group_label(a, b)] = {"W": None, "p": None, "n": len(vals)}
        entry = {"shapiro_wilk": shapiro}
        try:
            entry["anova"] = anova_two_factor(table, metric).to_dict()
            entry["tukey"] = tukey_hsd(table, metric).to_dict(alpha)
        except DegenerateDesign as exc:
            entry["anova"] = None
            entry["tukey"] = None
            entry["error"] = str(exc)
        report["metrics"][metric] = entry
    report["direction_ordering"] = direction_ordering(table)
    return report


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return None
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

BOXPLOT = "boxplot"
CURVE = "curve"
_DIR_SHORT = {"Loading": "L", "Snapping": "S"}


def _box_groups(data, metric):
    """Ordered {label: values} from a table or a mapping."""
    if isinstance(data, ObservationTable):
        if metric is None:
            ms = data.metrics()
            metric = ms[0] if ms else None
        a_lab, b_lab, y = data.select(metric) if metric is not None else ([], [], [])
        out = {}
        for a in _level_order(a_lab, ACTUATORS):
            for b in _level_order(b_lab, DIRECTIONS):
                vals = [v for aa, bb, v in zip(a_lab, b_lab, y) if aa == a and bb == b]
                if vals:
                    out[(a, b)] = np.asarray(vals, dtype=float)
        return out, metric
    return {k: np.asarray(v, dtype=float) for k, v in dict(data).items() if len(v)}, metric


def _box_stats(v):
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    lo, hi = float(inside.min()), float(inside.max())
    outliers = np.sort(v[(v < lo) | (v > hi)])
    return float(q1), float(med), float(q3), lo, hi, outliers


def _curve_samples(trace):
    if isinstance(trace, MeasuredTrace):
        return trace.stroke, trace.force, None
    if hasattr(trace, "stroke") and hasattr(trace, "force"):
        return np.asarray(trace.stroke), np.asarray(trace.force), getattr(trace, "direction", None)
    arr = np.asarray(trace, dtype=float)
    return arr[:, 0], arr[:, 1], None


def emit_plots(data, kind: str, path, metric: str | None = None, title: str | None = None) -> str:
    """Write an SVG boxplot (observations) or force-stroke curve(s) (traces).

    Boxes show the median, the interquartile box, whiskers to the furthest
    points within 1.5 IQR and the remaining points as outliers. Curves carry
    vertical X1/X2 markers when transition points can be detected. The
    output is byte-identical for identical input.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if kind not in (BOXPLOT, CURVE):
        raise ValueError(f"unknown plot kind {kind!r}")
    with matplotlib.rc_context({"svg.hashsalt": "lobeforge", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4))
        try:
            if kind == BOXPLOT:
                _draw_boxplot(ax, data, metric, title)
            else:
                _draw_curves(ax, data, title)
            fig.tight_layout()
            fig.savefig(str(path), format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return str(path)


def _draw_boxplot(ax, data, metric, title):
    from matplotlib.patches import Rectangle

    groups, metric = _box_groups(data, metric)
    if not groups:
        raise EmptyData("nothing to plot")
    ticks, labels = [], []
    for i, (key, v) in enumerate(groups.items()):
        x = i + 1
        q1, med, q3, lo, hi, out = _box_stats(v)
        box = ax.add_patch(
            Rectangle((x - 0.3, q1), 0.6, q3 - q1, facecolor="#d9e6f2", edgecolor="black", linewidth=1.0)
        )
        box.set_gid(f"box-{i}")
        ax.plot([x - 0.3, x + 0.3], [med, med], color="black", linewidth=2.0, gid=f"median-{i}")
        ax.plot([x, x], [hi, q3], [x, x], [q1, lo], color="black", linewidth=1.0)
        ax.plot([x - 0.15, x + 0.15], [hi, hi], [x - 0.15, x + 0.15], [lo, lo], color="black", linewidth=1.0)
        if out.size:
            ax.plot(np.full(out.size, x), out, "o", markerfacecolor="none", markeredgecolor="black", gid=f"outliers-{i}")
        ticks.append(x)
        if isinstance(key, tuple):
            labels.append(f"{key[0]}\n{_DIR_SHORT.get(key[1], key[1])}")
        else:
            labels.append(str(key))
    ax.set_xticks(ticks)
    ax.set_xticklabels(labels)
    ax.set_xlim(0.3, len(groups) + 0.7)
    ax.autoscale(axis="y")
    if metric is not None:
        unit = METRIC_UNITS.get(metric)
        ax.set_ylabel(f"{metric} ({unit})" if unit else metric)
    if title:
        ax.set_title(title)


def _draw_curves(ax, data, title):
    traces = [data] if isinstance(data, MeasuredTrace) or hasattr(data, "stroke") or (
        isinstance(data, np.ndarray) and data.ndim == 2
    ) else list(data)
    if not traces or any(len(_curve_samples(t)[0]) == 0 for t in traces):
        raise EmptyData("nothing to plot")
    for i, tr in enumerate(traces):
        s, f, direction = _curve_samples(tr)
        ax.plot(s, f, linewidth=1.2, gid=f"curve-{i}", label=direction or None)
        try:
            x1, x2 = detect_transition_points(tr if not isinstance(tr, MeasuredTrace) else tr.samples)
        except Exception:  # too short or never loaded: plot without markers
            continue
        ax.axvline(x1, color="tab:green", linestyle="--", linewidth=1.0, gid=f"x1-{i}")
        ax.axvline(x2, color="tab:red", linestyle="--", linewidth=1.0, gid=f"x2-{i}")
    ax.set_xlabel("stroke (mm)")
    ax.set_ylabel("force (N)")
    if any(_curve_samples(t)[2] for t in traces):
        ax.legend()
    if title:
        ax.set_title(title)
