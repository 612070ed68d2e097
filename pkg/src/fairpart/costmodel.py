"""Assignment costs ``c(x, k)`` between locations and facilities."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigError, DimensionMismatch, ParseError, UnknownSite

__all__ = [
    "FacilitySet",
    "CostModel",
    "cost",
    "load_facilities",
    "save_facilities",
    "load_cost_matrix",
    "save_cost_matrix",
]

log = logging.getLogger(__name__)

KINDS = ("euclidean", "squared_euclidean", "matrix")


@dataclass(frozen=True, eq=False)
class FacilitySet:
    """Facility locations. Facilities may lie outside the population box."""

    locations: np.ndarray
    labels: list | None = None

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        if loc.shape[0] < 1:
            raise ValueError("need at least one facility")
        object.__setattr__(self, "locations", loc)
        labels = self.labels or [str(k + 1) for k in range(loc.shape[0])]
        if len(labels) != loc.shape[0]:
            raise ValueError("one label per facility")
        object.__setattr__(self, "labels", [str(s) for s in labels])
        if loc.shape[0] > 1 and np.any(pdist(loc) == 0):
            log.warning("coincident facilities; ties resolve to the lowest index")

    @property
    def K(self):
        return self.locations.shape[0]


@dataclass(frozen=True, eq=False)
class CostModel:
    """Cost of serving a location from each facility.

    ``kind`` is ``"euclidean"``, ``"squared_euclidean"`` or ``"matrix"``. A
    matrix model carries a ``(S, K)`` table keyed by ``site_ids`` and only
    works with discrete populations.
    """

    kind: str
    facilities: FacilitySet
    table: np.ndarray | None = None
    site_ids: list | None = None
    units: str = ""
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "matrix":
            if self.table is None or self.site_ids is None:
                raise ValueError("matrix cost model needs table and site_ids")
            tab = np.asarray(self.table, dtype=float)
            if tab.shape != (len(self.site_ids), self.K):
                raise DimensionMismatch(f"table shape {tab.shape} != ({len(self.site_ids)}, {self.K})")
            if np.any(tab < 0) or not np.all(np.isfinite(tab)):
                raise ParseError("matrix costs must be finite and nonnegative")
            object.__setattr__(self, "table", tab)
            object.__setattr__(self, "site_ids", [str(s) for s in self.site_ids])

    @property
    def K(self):
        return self.facilities.K

    def raw(self):
        """Model used for reporting: squared distances are reported unsquared."""
        if self.kind == "squared_euclidean":
            return CostModel("euclidean", self.facilities, units=self.units)
        return self

    def check_population(self, pop):
        if self.kind == "matrix" and not pop.is_discrete:
            raise ConfigError("matrix costs require a discrete (CSV) population")
        if self.kind != "matrix" and pop.dim != self.facilities.locations.shape[1]:
            raise DimensionMismatch("population and facility coordinates differ in dimension")

    def _geometric(self, pts):
        if self.kind == "euclidean":
            return cdist(pts, self.facilities.locations)
        return cdist(pts, self.facilities.locations, "sqeuclidean")

    def site_costs(self, pop):
        """Cost table aligned with the sites of a discrete population, (S, K)."""
        key = id(pop)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is pop:
            return hit[1]
        self.check_population(pop)
        if self.kind == "matrix":
            row = {sid: i for i, sid in enumerate(self.site_ids)}
            missing = [s for s in pop.site_ids if s not in row]
            if missing:
                raise UnknownSite(f"sites missing from cost table: {missing[:5]}")
            tab = self.table[[row[s] for s in pop.site_ids]]
        else:
            tab = self._geometric(pop.coords)
        self._cache.clear()
        self._cache[key] = (pop, tab)
        return tab

    def costs(self, pop, xs):
        """Costs for a batch of population draws, shape ``(n, K)``."""
        if pop.is_discrete:
            return self.site_costs(pop)[np.asarray(xs, dtype=np.int64)]
        self.check_population(pop)
        return self._geometric(np.atleast_2d(np.asarray(xs, dtype=float)))

    def median_pairwise(self):
        """Median facility-to-facility cost (median table entry for matrices)."""
        if self.kind == "matrix":
            return float(np.median(self.table))
        if self.K < 2:
            return 1.0
        d = pdist(self.facilities.locations)
        if self.kind == "squared_euclidean":
            d = d**2
        return float(np.median(d))


def cost(model, x, k, pop=None):
    """Cost of serving ``x`` from facility ``k`` (0-based).

    ``x`` is a point for geometric models or a site id for matrix models.
    """
    if not 0 <= k < model.K:
        raise IndexError(f"facility index {k} out of range 0..{model.K - 1}")
    if model.kind == "matrix":
        try:
            i = model.site_ids.index(str(x))
        except ValueError:
            raise UnknownSite(x) from None
        return float(model.table[i, k])
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    return float(model._geometric(pt)[0, k])


def _read_rows(path, expected_header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if expected_header is not None and header != expected_header:
            raise ParseError(f"{path}: bad header {header!r}, expected {expected_header!r}")
        rows = [(i, r) for i, r in enumerate(reader, start=2) if r and any(c.strip() for c in r)]
    return header, rows


def _num(text, path, row_no):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{path}: row {row_no}: cannot parse {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"{path}: row {row_no}: non-finite value")
    return v


def load_facilities(path):
    """Read a facility CSV with header ``facility_id,x,y``."""
    _, rows = _read_rows(path, ["facility_id", "x", "y"])
    if not rows:
        raise ParseError(f"{path}: no facilities")
    labels, locs = [], []
    for row_no, r in rows:
        if len(r) != 3:
            raise ParseError(f"{path}: row {row_no} must have 3 fields")
        labels.append(r[0].strip())
        locs.append([_num(r[1], path, row_no), _num(r[2], path, row_no)])
    return FacilitySet(np.array(locs), labels)


def save_facilities(facilities, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["facility_id", "x", "y"])
        for lab, loc in zip(facilities.labels, facilities.locations):
            y = loc[1] if loc.size > 1 else 0.0
            w.writerow([lab, repr(float(loc[0])), repr(float(y))])


def load_cost_matrix(path, facilities, units=""):
    """Read a cost table with header ``site_id,c_1,...,c_K``.

    Raises
    ------
    DimensionMismatch
        If the header or a row does not carry exactly K costs.
    ParseError
        On malformed or negative values.
    """
    header, rows = _read_rows(path, None)
    k = facilities.K
    if header != ["site_id"] + [f"c_{j}" for j in range(1, k + 1)]:
        if header and header[0] == "site_id":
            raise DimensionMismatch(f"{path}: header has {len(header) - 1} cost columns, expected {k}")
        raise ParseError(f"{path}: bad header {header!r}")
    ids, table = [], []
    for row_no, r in rows:
        if len(r) != k + 1:
            raise DimensionMismatch(f"{path}: row {row_no} has {len(r) - 1} costs, expected {k}")
        vals = [_num(c, path, row_no) for c in r[1:]]
        if any(v < 0 for v in vals):
            raise ParseError(f"{path}: row {row_no} has a negative cost")
        ids.append(r[0].strip())
        table.append(vals)
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate site ids")
    return CostModel("matrix", facilities, np.array(table).reshape(len(ids), k), ids, units)


def save_cost_matrix(model, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id"] + [f"c_{j}" for j in range(1, model.K + 1)])
        for sid, row in zip(model.site_ids, model.table):
            w.writerow([sid] + [repr(float(c)) for c in row])
