"""User-study analysis: questionnaire randomization, z-adjustment,
inter-observer reliability, method comparison with rank scores and t-tests,
sampling adequacy (KMO), and the PCA general preferability factor.

Response tables are pandas DataFrames with columns
`rater_id,item_id,method,criterion,score,variant`; scores are integers in
[-4, 4] and criteria one of intuitivity/semantics/quality.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

CRITERIA = ("intuitivity", "semantics", "quality")
COLUMNS = ["rater_id", "item_id", "method", "criterion", "score", "variant"]


class StudyError(ValueError):
    pass


def load_responses(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise StudyError(f"responses file not found: {path}")
    df = pd.read_csv(path)
    if df.empty:
        raise StudyError(f"{path}: no response rows")
    return validate_responses(df)


def validate_responses(df: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in COLUMNS if c not in df.columns]
    if missing:
        raise StudyError(f"missing response columns: {missing}")
    bad = df[~df["score"].between(-4, 4) | (df["score"] % 1 != 0)]
    if not bad.empty:
        raise StudyError(
            f"scores must be integers in [-4,4]; offending rows: "
            f"{(bad.index + 2).tolist()[:5]}")
    dup = df.duplicated(subset=["rater_id", "item_id", "method", "criterion"])
    if dup.any():
        raise StudyError(
            f"duplicate (rater,item,method,criterion) rows: "
            f"{(df.index[dup] + 2).tolist()[:5]}")
    return df


@dataclass
class QuestionnairePlan:
    # variant -> item -> ordered method list as shown to the rater
    orders: dict
    methods: list
    seed: int

    def randomize(self, variant: str, item) -> list:
        return list(self.orders[variant][item])

    def derandomize(self, variant: str, item, shown_values: list) -> dict:
        """Map values recorded in presentation order back to their methods."""
        order = self.orders[variant][item]
        return {method: shown_values[pos] for pos, method in enumerate(order)}

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "methods": self.methods,
             "orders": {v: {str(i): o for i, o in items.items()}
                        for v, items in self.orders.items()}},
            sort_keys=True, indent=2)


def make_questionnaire_plan(items, methods, n_variants: int = 2,
                            seed: int = 0) -> QuestionnairePlan:
    """Per-item method-order randomization across questionnaire variants."""
    items = list(items)
    methods = list(methods)
    if len(set(items)) != len(items):
        raise StudyError("duplicate items in questionnaire plan")
    if len(methods) < 2:
        raise StudyError("need at least two methods")
    rng = np.random.default_rng(seed)
    variants = [chr(ord("A") + k) for k in range(n_variants)]
    orders = {
        v: {item: [methods[j] for j in rng.permutation(len(methods))]
            for item in items}
        for v in variants
    }
    return QuestionnairePlan(orders=orders, methods=methods, seed=seed)


def z_adjust(table: pd.DataFrame) -> pd.DataFrame:
    """Standardize scores within each (item, criterion) group (population SD).

    Zero-variance groups are flagged with a warning and left unadjusted.
    """
    validate_responses(table)
    out = table.copy()
    out["score"] = out["score"].astype(float)
    for (item, criterion), idx in out.groupby(["item_id", "criterion"]).groups.items():
        vals = out.loc[idx, "score"].to_numpy(dtype=float)
        sd = vals.std()
        if sd == 0:
            warnings.warn(
                f"zero-variance group (item={item}, criterion={criterion}); "
                "left unadjusted")
            continue
        out.loc[idx, "score"] = (vals - vals.mean()) / sd
    return out


def _rater_vectors(table: pd.DataFrame, criterion: str) -> pd.DataFrame:
    sub = table[table["criterion"] == criterion]
    if sub.empty:
        raise StudyError(f"no responses for criterion {criterion!r}")
    wide = sub.pivot_table(index=["item_id", "method"], columns="rater_id",
                           values="score")
    return wide.dropna()


def interobserver_rho(table: pd.DataFrame, criterion: str) -> float:
    """Mean pairwise Pearson correlation between raters for one criterion."""
    wide = _rater_vectors(table, criterion)
    raters = list(wide.columns)
    if len(raters) < 2:
        raise StudyError("need at least two raters")
    rs = []
    for i in range(len(raters) - 1):
        for j in range(i + 1, len(raters)):
            a = wide[raters[i]].to_numpy()
            b = wide[raters[j]].to_numpy()
            if a.std() == 0 or b.std() == 0:
                warnings.warn(
                    f"constant answers for pair ({raters[i]}, {raters[j]}); "
                    "pair excluded")
                continue
            rs.append(stats.pearsonr(a, b)[0])
    if not rs:
        raise StudyError("all rater pairs degenerate")
    return float(np.mean(rs))


def _midranks(values: np.ndarray) -> np.ndarray:
    # rank 1 = best (highest score)
    return stats.rankdata(-values, method="average")


def method_comparison(table: pd.DataFrame) -> dict:
    """Per-criterion method means, 95% CIs, average ranks, and t-tests.

    Ranks are midranks per (item, criterion) over method mean scores
    (rank 1 best). t statistics compare the best-ranked method against each
    other method on per-rater mean scores, two-tailed with df = N - 2 where
    N is the number of raters.
    """
    validate_responses(table)
    methods = sorted(table["method"].unique())
    raters = sorted(table["rater_id"].unique())
    if len(methods) < 2 and len(methods) != 1:
        raise StudyError("no methods present")
    n_raters = len(raters)
    adjusted = z_adjust(table)

    complete = table.dropna(subset=["score"])
    n_excluded = len(table) - len(complete)

    result = {"methods": methods, "n_raters": n_raters,
              "n_excluded_rows": n_excluded, "criteria": {}}
    for criterion in sorted(table["criterion"].unique()):
        crit_raw = complete[complete["criterion"] == criterion]
        crit_adj = adjusted[adjusted["criterion"] == criterion]

        per_item = crit_raw.pivot_table(index="item_id", columns="method",
                                        values="score")
        ranks = per_item.apply(
            lambda row: pd.Series(_midranks(row.to_numpy()), index=row.index),
            axis=1)

        block = {}
        for method in methods:
            raw_scores = crit_raw[crit_raw["method"] == method]["score"]
            adj_scores = crit_adj[crit_adj["method"] == method]["score"]
            block[method] = {
                "raw_mean": float(raw_scores.mean()),
                "raw_ci": _mean_ci(raw_scores.to_numpy(dtype=float)),
                "adjusted_mean": float(adj_scores.mean()),
                "adjusted_ci": _mean_ci(adj_scores.to_numpy(dtype=float)),
                "average_rank": float(ranks[method].mean()),
            }
        best = min(block, key=lambda m: block[m]["average_rank"])
        tests = {}
        if len(methods) > 1:
            by_rater_best = _per_rater_means(crit_adj, best, raters)
            for method in methods:
                if method == best:
                    continue
                other = _per_rater_means(crit_adj, method, raters)
                t, p = _t_df(by_rater_best, other, df=n_raters - 2)
                tests[method] = {"t": t, "p": p}
        block_out = {"per_method": block, "best": best, "tests": tests}
        result["criteria"][criterion] = block_out
    return result


def _per_rater_means(crit_table, method, raters):
    sub = crit_table[crit_table["method"] == method]
    return np.array([sub[sub["rater_id"] == r]["score"].mean() for r in raters])


def _mean_ci(values: np.ndarray, level: float = 0.95) -> list:
    n = len(values)
    if n < 2:
        return [float(values.mean())] * 2
    se = values.std(ddof=1) / np.sqrt(n)
    q = stats.t.ppf(0.5 + level / 2, n - 1)
    m = values.mean()
    return [float(m - q * se), float(m + q * se)]


def _t_df(a, b, df):
    diff = a - b
    sd = diff.std(ddof=1)
    if sd == 0:
        return 0.0, 1.0
    t = diff.mean() / (sd / np.sqrt(len(diff)))
    return float(t), float(2 * stats.t.sf(abs(t), df))


def kmo(criterion_matrix) -> float:
    """Kaiser-Meyer-Olkin sampling adequacy over simple and partial correlations."""
    x = np.asarray(criterion_matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 3:
        raise StudyError("need an (observations x >=3 variables) matrix")
    corr = np.corrcoef(x, rowvar=False)
    try:
        inv = np.linalg.inv(corr)
    except np.linalg.LinAlgError as exc:
        raise StudyError(f"singular correlation matrix: {exc}") from exc
    d = np.sqrt(np.outer(np.diag(inv), np.diag(inv)))
    partial = -inv / d
    off = ~np.eye(corr.shape[0], dtype=bool)
    r2 = (corr[off] ** 2).sum()
    p2 = (partial[off] ** 2).sum()
    return float(r2 / (r2 + p2))


def general_factor(criterion_matrix) -> dict:
    """First principal component of the standardized criterion scores.

    Returns the explained variance fraction, the (sign-fixed) loading
    vector, and its L1 normalization.
    """
    x = np.asarray(criterion_matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2 or x.shape[0] < 3:
        raise StudyError("need >=2 variables and >=3 observations")
    sd = x.std(axis=0)
    if np.any(sd == 0):
        raise StudyError("rank-deficient input: constant variable "
                         f"(columns {np.where(sd == 0)[0].tolist()})")
    corr = np.corrcoef(x, rowvar=False)
    eigvals, eigvecs = np.linalg.eigh(corr)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    if not np.all(np.isfinite(eigvals)) or eigvals[0] <= 0:
        raise StudyError("degenerate correlation spectrum")
    loadings = eigvecs[:, 0]
    if loadings.mean() < 0:
        loadings = -loadings
    explained = float(eigvals[0] / eigvals.sum())
    l1 = loadings / np.abs(loadings).sum()
    return {
        "explained_variance_fraction": explained,
        "loadings": loadings.tolist(),
        "l1_loadings": l1.tolist(),
        "all_explained_fractions": (eigvals / eigvals.sum()).tolist(),
    }


def criterion_matrix(table: pd.DataFrame) -> np.ndarray:
    """(rater x item x method) observations by criterion, z-adjusted scores."""
    adjusted = z_adjust(table)
    wide = adjusted.pivot_table(index=["rater_id", "item_id", "method"],
                                columns="criterion", values="score")
    wide = wide.reindex(columns=[c for c in CRITERIA if c in wide.columns])
    return wide.dropna().to_numpy()


def order_effect_test(table: pd.DataFrame) -> dict:
    """Two-tailed t-tests between variants A and B per (method, criterion)."""
    validate_responses(table)
    variants = sorted(table["variant"].unique())
    if len(variants) < 2:
        raise StudyError(f"need both variants, found {variants}")
    n_raters = table["rater_id"].nunique()
    out = {}
    for (method, criterion), grp in table.groupby(["method", "criterion"]):
        a = grp[grp["variant"] == variants[0]]["score"].to_numpy(dtype=float)
        b = grp[grp["variant"] == variants[1]]["score"].to_numpy(dtype=float)
        if len(a) == 0 or len(b) == 0:
            raise StudyError(
                f"variant missing for (method={method}, criterion={criterion})")
        t, p = _welch_t(a, b, df=n_raters - 2)
        out[f"{method}/{criterion}"] = {"t": t, "p": p}
    return out


def _welch_t(a, b, df):
    va, vb = a.var(ddof=1), b.var(ddof=1)
    se = np.sqrt(va / len(a) + vb / len(b))
    if se == 0:
        return 0.0, 1.0
    t = (a.mean() - b.mean()) / se
    return float(t), float(2 * stats.t.sf(abs(t), df))
