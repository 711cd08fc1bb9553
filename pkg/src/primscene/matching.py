"""Bipartite matching and the layout loss terms, evaluated as plain numbers.

The assignment solver is a shortest-augmenting-path Hungarian method with
dual potentials. Among all optimal assignments it returns the
lexicographically smallest one, found by searching the subgraph of tight
(zero reduced cost) edges.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .categories import CATEGORIES
from .exceptions import (
    ConfigError,
    InvalidCostError,
    InvalidProbabilityError,
    InvalidVarianceError,
)
from .scene import is_padded

BCE_EPS = 1e-7


@dataclass(frozen=True)
class MatchWeights:
    prob: float
    center: float
    chol: float

    def __post_init__(self):
        if min(self.prob, self.center, self.chol) < 0:
            raise ConfigError("loss weights must be non-negative")


MATCH_WEIGHTS = MatchWeights(6.0, 3.0, 3.0)
GROUP_WEIGHTS = {
    "low": MatchWeights(1.0, 3.0, 2.0),
    "medium": MatchWeights(3.0, 9.0, 7.0),
    "high": MatchWeights(5.0, 15.0, 12.0),
}


@dataclass(frozen=True)
class LossWeightTable:
    groups: dict = field(default_factory=lambda: dict(GROUP_WEIGHTS))
    match: MatchWeights = MATCH_WEIGHTS
    occupancy: float = 1.0
    height: float = 9.0
    kl: float = 1e-6

    def __post_init__(self):
        missing = {"low", "medium", "high"} - set(self.groups)
        if missing:
            raise ConfigError(f"weight table lacks groups {sorted(missing)}")
        if min(self.occupancy, self.height, self.kl) < 0:
            raise ConfigError("loss weights must be non-negative")

    def for_category(self, code):
        return self.groups[next(c.group for c in CATEGORIES if c.code == code)]

    @classmethod
    def from_dict(cls, doc):
        base = cls()
        try:
            groups = dict(base.groups)
            for name, w in doc.get("groups", {}).items():
                groups[name] = MatchWeights(*map(float, w))
            match = MatchWeights(*map(float, doc["match"])) if "match" in doc else base.match
            ground = doc.get("ground", {})
            return cls(groups, match, float(ground.get("occupancy", base.occupancy)),
                       float(ground.get("height", base.height)), float(doc.get("kl", base.kl)))
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid weight table: {exc}") from exc

    def to_dict(self):
        return {
            "groups": {k: [w.prob, w.center, w.chol] for k, w in self.groups.items()},
            "match": [self.match.prob, self.match.center, self.match.chol],
            "ground": {"occupancy": self.occupancy, "height": self.height},
            "kl": self.kl,
        }


def load_weight_table(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    return LossWeightTable.from_dict(doc)


# -- assignment ----------------------------------------------------------------

class Assignment(NamedTuple):
    """``sigma[i]`` is the (0-based) column assigned to row ``i``."""

    sigma: np.ndarray
    cost: float


def _check_cost(cost):
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ConfigError(f"cost matrix must be square, got shape {cost.shape}")
    if np.isnan(cost).any():
        raise InvalidCostError("cost matrix contains NaN")
    if not np.isfinite(cost).all():
        raise InvalidCostError("cost matrix contains infinite entries")
    return cost


def _total(cost, sigma):
    return float(sum(cost[i, j] for i, j in enumerate(sigma)))


def _solve(cost):
    """Hungarian method; returns ``(sigma, u, v)`` with dual potentials."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j] = row (1-based) holding column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            delta = cand.min()
            # among equally cheap columns prefer an unowned one: ends the search early
            ties = cand == delta
            open_ties = ties & (owner[1:] == 0)
            j1 = int(np.argmax(open_ties if open_ties.any() else ties)) + 1
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    sigma = np.empty(n, dtype=np.int64)
    sigma[owner[1:] - 1] = np.arange(n)
    return sigma, u[1:], v[1:]


def _reroute(tight, row_of, fixed, start_row, target_col):
    """Alternating path in the tight graph from ``start_row`` to ``target_col``.

    Rows in ``fixed`` are excluded. Returns the list of ``(row, col)`` moves,
    or ``None`` when no path exists.
    """
    n = tight.shape[0]
    parent = np.full(n, -1, dtype=np.int64)  # column -> row that reached it
    seen_rows = fixed.copy()
    seen_rows[start_row] = True
    frontier = [start_row]
    seen_cols = np.zeros(n, dtype=bool)
    while frontier:
        nxt = []
        for r in frontier:
            cols = np.nonzero(tight[r] & ~seen_cols)[0]
            seen_cols[cols] = True
            parent[cols] = r
            if seen_cols[target_col]:
                moves, col = [], target_col
                while True:
                    r2 = parent[col]
                    moves.append((r2, col))
                    if r2 == start_row:
                        return moves
                    col = np.nonzero(row_of == r2)[0][0]
            for c in cols:
                owner = row_of[c]
                if not seen_rows[owner]:
                    seen_rows[owner] = True
                    nxt.append(owner)
        frontier = nxt
    return None


def _lexicographic(cost, sigma, u, v):
    n = cost.shape[0]
    scale = max(1.0, float(np.abs(cost).max()))
    tight = cost - u[:, None] - v[None, :] <= 1e-12 * scale * n
    tight[np.arange(n), sigma] = True
    row_of = np.empty(n, dtype=np.int64)
    row_of[sigma] = np.arange(n)
    fixed = np.zeros(n, dtype=bool)
    for i in range(n):
        for j in np.nonzero(tight[i])[0]:
            if j >= sigma[i]:
                break
            r = row_of[j]
            if fixed[r]:
                continue
            blocked = fixed.copy()
            blocked[i] = True
            moves = _reroute(tight, row_of, blocked, r, sigma[i])
            if moves is None:
                continue
            for mr, mc in moves:
                sigma[mr] = mc
                row_of[mc] = mr
            sigma[i] = j
            row_of[j] = i
            break
        fixed[i] = True
    return sigma


def hungarian(cost):
    """Minimum-cost perfect assignment of a square cost matrix."""
    cost = _check_cost(cost)
    n = cost.shape[0]
    if n == 0:
        return Assignment(np.zeros(0, dtype=np.int64), 0.0)
    sigma, u, v = _solve(cost)
    best = _total(cost, sigma)
    lex = _lexicographic(cost, sigma.copy(), u, v)
    lex_cost = _total(cost, lex)
    if lex_cost <= best:
        return Assignment(lex, lex_cost)
    return Assignment(sigma, best)


# -- loss terms --------------------------------------------------------------------

def bce(p, q, eps=BCE_EPS):
    """Binary cross-entropy of targets ``p`` against probabilities ``q`` (clamped)."""
    q = np.asarray(q, dtype=np.float64)
    if np.any((q < 0) | (q > 1)) or np.isnan(q).any():
        raise InvalidProbabilityError("predicted probabilities must lie in [0, 1]")
    q = np.clip(q, eps, 1.0 - eps)
    p = np.asarray(p, dtype=np.float64)
    return -(p * np.log(q) + (1.0 - p) * np.log1p(-q))


def _arrays(prims):
    geo = np.array([p.center + p.cholesky for p in prims], dtype=np.float64).reshape(-1, 9)
    exists = np.array([p.exists for p in prims], dtype=np.float64)
    conf = np.array([p.exists if p.confidence is None else p.confidence for p in prims],
                    dtype=np.float64)
    return geo, exists, conf


def _pair_terms(gt, pred):
    """BCE, centre L1 and Cholesky L1 matrices, each ``(len(gt), len(pred))``."""
    g_geo, g_p, _ = _arrays(gt)
    p_geo, _, p_conf = _arrays(pred)
    prob = bce(g_p[:, None], p_conf[None, :])
    diff = np.abs(g_geo[:, None, :] - p_geo[None, :, :])
    gate = (g_p > 0)[:, None]
    return prob, gate * diff[..., :3].sum(-1), gate * diff[..., 3:].sum(-1)


def match_cost(gt, pred, w=MATCH_WEIGHTS):
    """Pairwise matching cost of one ground-truth and one predicted primitive."""
    if gt.category != pred.category:
        raise ConfigError("matching cost needs primitives of the same category")
    prob, center, chol = _pair_terms([gt], [pred])
    return float(w.prob * prob[0, 0] + w.center * center[0, 0] + w.chol * chol[0, 0])


def cost_matrix(gt, pred, w=MATCH_WEIGHTS):
    prob, center, chol = _pair_terms(gt, pred)
    return w.prob * prob + w.center * center + w.chol * chol


def match_category(gt, pred, w=MATCH_WEIGHTS):
    """Optimal assignment of predictions to ground-truth slots of one category."""
    if len(gt) != len(pred):
        raise ConfigError(f"cannot match {len(gt)} ground-truth slots to {len(pred)} predictions")
    return hungarian(cost_matrix(gt, pred, w))


class ObjectLoss(NamedTuple):
    total: float
    per_category: dict


def object_loss(gt_layout, pred_layout, table=None):
    """Matched object loss of one sample, summed over categories.

    Each category's term is normalized by its number of real ground-truth
    primitives and skipped when there are none.
    """
    table = LossWeightTable() if table is None else table
    if not (is_padded(gt_layout) and is_padded(pred_layout)):
        raise ConfigError("object_loss needs layouts padded to the fixed slot counts")
    gts, preds = gt_layout.by_category(), pred_layout.by_category()
    per_cat = {}
    for spec in CATEGORIES:
        g, p = gts[spec.code], preds[spec.code]
        n_real = sum(x.is_real for x in g)
        if n_real == 0:
            continue
        prob, center, chol = _pair_terms(g, p)
        m = table.match
        sigma = hungarian(m.prob * prob + m.center * center + m.chol * chol).sigma
        w = table.groups[spec.group]
        rows = np.arange(len(g))
        value = (w.prob * prob[rows, sigma] + w.center * center[rows, sigma]
                 + w.chol * chol[rows, sigma]).sum() / n_real
        per_cat[spec.code] = float(value)
    return ObjectLoss(float(sum(per_cat.values())), per_cat)


def object_loss_batch(gt_layouts, pred_layouts, table=None):
    """Unweighted mean of per-sample object losses."""
    losses = [object_loss(g, p, table).total for g, p in zip(gt_layouts, pred_layouts, strict=True)]
    if not losses:
        raise ConfigError("empty batch")
    return float(np.mean(losses))


def ground_loss(H, B, H_hat, B_hat, table=None):
    """Occupancy BCE plus height L1 averaged over occupied pixels."""
    table = LossWeightTable() if table is None else table
    arrays = [np.asarray(a, dtype=np.float64) for a in (H, B, H_hat, B_hat)]
    if len({a.shape for a in arrays}) != 1:
        raise ConfigError("ground loss inputs must share one shape")
    H, B, H_hat, B_hat = arrays
    occ = table.occupancy * float(bce(B, B_hat).mean()) if B.size else 0.0
    n_occ = B.sum()
    height = float((np.abs(H_hat - H) * B).sum() / n_occ) if n_occ > 0 else 0.0
    return occ + table.height * height


def kl_loss(mu, var, weight=1e-6):
    """Weighted Gaussian KL to N(0, I), summed over channels and averaged over cells."""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if mu.shape != var.shape:
        raise ConfigError("mean and variance must share one shape")
    if np.any(~(var > 0)):
        raise InvalidVarianceError("variances must be strictly positive")
    per_cell = -0.5 * (1.0 + np.log(var) - mu * mu - var).sum(axis=-1)
    return float(weight * per_cell.mean())
