"""Model-agnostic Shapley-value attribution: exact coalition enumeration,
permutation Monte Carlo sampling, global importance aggregation, and
per-instance force reports.

A coalition is evaluated by baseline imputation: features outside the
coalition take their reference value across the whole lookback window.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import FEATURE_COLUMNS, METEO_COLUMNS
from .errors import ConfigError

EXACT_CAP_DEFAULT = 12


@dataclass
class ValueFunction:
    """Wraps a frozen scalar predictor together with the explained instance
    and the per-feature baseline (training means, typically)."""
    predict: object               # callable: full feature matrix -> float
    instance: np.ndarray          # lookback x n_features (or 1 x n for flat models)
    baseline: np.ndarray          # n_features reference values

    def __post_init__(self):
        self.instance = np.atleast_2d(np.asarray(self.instance, dtype=np.float64))
        self.baseline = np.asarray(self.baseline, dtype=np.float64)
        if self.baseline.shape != (self.instance.shape[1],):
            raise ValueError(f"baseline shape {self.baseline.shape} != "
                             f"({self.instance.shape[1]},) features")

    @property
    def n_features(self) -> int:
        return self.instance.shape[1]


def coalition_value(vf: ValueFunction, subset) -> float:
    """Evaluate the model on a hybrid input: features in `subset` take the
    instance's values, the rest take baseline values (imputed across every
    time step of the window uniformly)."""
    mask = np.zeros(vf.n_features, dtype=bool)
    mask[list(subset)] = True
    hybrid = np.where(mask, vf.instance, vf.baseline)
    return float(vf.predict(hybrid))


def _masked_value(vf, bitmask, cache):
    val = cache.get(bitmask)
    if val is None:
        keep = np.array([(bitmask >> j) & 1 for j in range(vf.n_features)], dtype=bool)
        hybrid = np.where(keep, vf.instance, vf.baseline)
        val = float(vf.predict(hybrid))
        cache[bitmask] = val
    return val


@dataclass
class Explanation:
    phi0: float                       # value of the empty coalition
    phis: np.ndarray                  # one contribution per feature
    fx: float                         # model output at the instance
    estimator: str                    # "exact" or "sampled"
    n_permutations: int | None = None
    std_errors: np.ndarray | None = None
    feature_names: tuple = FEATURE_COLUMNS


def exact_shapley(vf: ValueFunction, cap: int = EXACT_CAP_DEFAULT,
                  allow_large: bool = False) -> Explanation:
    """Exact Shapley values by full coalition enumeration (memoized, 2^n
    model evaluations). Guarded by a feature-count cap: n=19 costs ~5e5
    evaluations and is opt-in via allow_large."""
    n = vf.n_features
    if n > cap and not allow_large:
        raise ConfigError(f"exact enumeration over {n} features exceeds cap {cap}; "
                          f"pass allow_large=True (or use sampled_shapley)")
    cache = {}
    full = (1 << n) - 1
    weights = [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
               for s in range(n)]
    phis = np.zeros(n)
    for subset in range(1 << n):
        if subset == full:
            continue
        size = bin(subset).count("1")
        v_s = _masked_value(vf, subset, cache)
        w = weights[size]
        for i in range(n):
            bit = 1 << i
            if subset & bit:
                continue
            phis[i] += w * (_masked_value(vf, subset | bit, cache) - v_s)
    return Explanation(phi0=_masked_value(vf, 0, cache), phis=phis,
                       fx=_masked_value(vf, full, cache), estimator="exact",
                       feature_names=tuple(f"f{i}" for i in range(n)) if n != 19
                       else FEATURE_COLUMNS)


def sampled_shapley(vf: ValueFunction, m: int, seed: int = 0) -> Explanation:
    """Permutation Monte Carlo estimator: walk m seeded random feature
    orderings, crediting each feature its marginal contribution when added to
    the prefix. Unbiased; per-feature standard errors reported. The marginals
    of one permutation telescope, so local accuracy holds exactly."""
    if m < 2:
        raise ConfigError(f"sampled_shapley needs m >= 2 permutations, got {m}")
    n = vf.n_features
    rng = np.random.default_rng(seed)
    cache = {}
    marginals = np.zeros((m, n))
    for p in range(m):
        order = rng.permutation(n)
        bitmask = 0
        prev = _masked_value(vf, bitmask, cache)
        for i in order:
            bitmask |= 1 << int(i)
            cur = _masked_value(vf, bitmask, cache)
            marginals[p, i] = cur - prev
            prev = cur
    phis = marginals.mean(axis=0)
    se = marginals.std(axis=0, ddof=1) / math.sqrt(m)
    return Explanation(phi0=_masked_value(vf, 0, cache), phis=phis,
                       fx=_masked_value(vf, (1 << n) - 1, cache),
                       estimator="sampled", n_permutations=m, std_errors=se,
                       feature_names=tuple(f"f{i}" for i in range(n)) if n != 19
                       else FEATURE_COLUMNS)


def model_value_function(model, normalizer, window_normalized: np.ndarray,
                         lead: int = 1) -> ValueFunction:
    """Value function for a trained forecaster: the explained scalar is the
    denormalized prediction at the given lead time. Works in normalized
    space, where the training-mean baseline is exactly zero."""
    if lead < 1 or lead > model.config.horizon:
        raise ConfigError(f"lead {lead} outside [1, horizon={model.config.horizon}]")

    def predict(hybrid_window):
        pred = model.predict(hybrid_window, lead)[lead - 1, 0]
        return float(normalizer.invert_target(np.array(pred)))

    return ValueFunction(predict=predict,
                         instance=np.asarray(window_normalized, dtype=np.float64),
                         baseline=np.zeros(window_normalized.shape[1]))


FEATURE_GROUPS = {
    "meteorological": tuple(METEO_COLUMNS),
    "hydrological": tuple(c for c in FEATURE_COLUMNS if c not in METEO_COLUMNS),
}


@dataclass
class GlobalImportance:
    feature_names: tuple
    mean_abs_phi: np.ndarray
    percentages: np.ndarray           # shares of 100
    group_shares: dict = field(default_factory=dict)

    def ranked(self):
        order = np.argsort(-self.mean_abs_phi)
        return [(self.feature_names[i], float(self.mean_abs_phi[i]),
                 float(self.percentages[i])) for i in order]

    def to_text(self) -> str:
        lines = ["feature\tmean_abs_phi\tpercent"]
        for name, imp, pct in self.ranked():
            lines.append(f"{name}\t{imp!r}\t{pct!r}")
        for group, share in self.group_shares.items():
            lines.append(f"group:{group}\t\t{share!r}")
        return "\n".join(lines) + "\n"


def global_importance(explanations) -> GlobalImportance:
    """Mean |phi| per feature over a sample of explained instances,
    normalized to percentage shares, with Table-1 group roll-ups."""
    explanations = list(explanations)
    if not explanations:
        raise ValueError("global_importance requires at least one explanation")
    names = explanations[0].feature_names
    mat = np.abs(np.stack([e.phis for e in explanations]))
    mean_abs = mat.mean(axis=0)
    total = mean_abs.sum()
    pct = mean_abs / total * 100.0 if total > 0 else np.zeros_like(mean_abs)
    groups = {}
    if set(names) == set(FEATURE_COLUMNS):
        for group, members in FEATURE_GROUPS.items():
            groups[group] = float(sum(pct[names.index(mname)] for mname in members))
    return GlobalImportance(feature_names=names, mean_abs_phi=mean_abs,
                            percentages=pct, group_shares=groups)


def beeswarm_export(explanations, raw_rows) -> list:
    """Rows (feature, instance id, raw feature value, phi), feature blocks
    ordered by descending mean |phi|; enough to render a beeswarm plot."""
    explanations = list(explanations)
    raw_rows = np.atleast_2d(np.asarray(raw_rows, dtype=np.float64))
    if len(explanations) != raw_rows.shape[0]:
        raise ValueError(f"{len(explanations)} explanations vs {raw_rows.shape[0]} value rows")
    names = explanations[0].feature_names
    mean_abs = np.abs(np.stack([e.phis for e in explanations])).mean(axis=0)
    rows = []
    for j in np.argsort(-mean_abs):
        for i, e in enumerate(explanations):
            rows.append((names[j], i, float(raw_rows[i, j]), float(e.phis[j])))
    return rows


def beeswarm_to_text(rows) -> str:
    lines = ["feature\tinstance\traw_value\tphi"]
    for feat, inst, raw, phi in rows:
        lines.append(f"{feat}\t{inst}\t{raw!r}\t{phi!r}")
    return "\n".join(lines) + "\n"


@dataclass
class ForceEntry:
    feature: str
    phi: float
    cumulative: float
    positive: bool


def force_report(explanation: Explanation) -> list:
    """Ordered walk from the base value to the prediction: features sorted by
    |phi| descending, each entry tagged by sign with the running total."""
    order = np.argsort(-np.abs(explanation.phis))
    entries = []
    cum = explanation.phi0
    for j in order:
        phi = float(explanation.phis[j])
        cum += phi
        entries.append(ForceEntry(feature=explanation.feature_names[j], phi=phi,
                                  cumulative=cum, positive=phi >= 0))
    return entries


def force_report_to_text(explanation: Explanation) -> str:
    lines = [f"base_value\t{explanation.phi0!r}",
             f"prediction\t{explanation.fx!r}",
             f"estimator\t{explanation.estimator}",
             "feature\tphi\tcumulative\tsign"]
    for e in force_report(explanation):
        lines.append(f"{e.feature}\t{e.phi!r}\t{e.cumulative!r}"
                     f"\t{'+' if e.positive else '-'}")
    return "\n".join(lines) + "\n"
