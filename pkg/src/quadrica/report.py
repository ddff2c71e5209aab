"""Residual bookkeeping shared by all verification suites.

A ResidualReport collects named residual populations and keeps only their
max, mean and sample count.  Reports serialize to JSON and compare across
grid refinements through `refinement_ratio`.
"""

import json

import numpy as np


class ResidualReport:
    """Named max/mean residual magnitudes plus grid metadata."""

    def __init__(self, grid_h=None, meta=None):
        self.grid_h = grid_h
        self.meta = dict(meta) if meta else {}
        self.entries = {}

    def add(self, name, values):
        """Record a residual population under `name`.

        `values` may be a scalar, an array of magnitudes, or a complex
        array (absolute values are taken).  Empty input records a zero.
        """
        vals = np.atleast_1d(np.asarray(values))
        if np.iscomplexobj(vals):
            vals = np.abs(vals)
        vals = vals.astype(float).ravel()
        if vals.size == 0:
            vals = np.zeros(1)
        if not np.all(np.isfinite(vals)):
            vals = np.where(np.isfinite(vals), vals, np.inf)
        self.entries[name] = {
            "max": float(np.max(vals)),
            "mean": float(np.mean(vals)),
            "samples": int(vals.size),
        }
        return self

    def __getitem__(self, name):
        return self.entries[name]["max"]

    def __contains__(self, name):
        return name in self.entries

    def names(self):
        return list(self.entries)

    def worst(self):
        return max((e["max"] for e in self.entries.values()), default=0.0)

    def passed(self, thresholds):
        """True when every entry is below its threshold.

        `thresholds` is either a scalar applied to all entries or a dict
        mapping entry names to tolerances (missing names are ignored).
        """
        if np.isscalar(thresholds):
            return all(e["max"] < thresholds for e in self.entries.values())
        return all(self.entries[k]["max"] < tol
                   for k, tol in thresholds.items() if k in self.entries)

    def breaches(self, thresholds):
        """Names of entries at or above their threshold."""
        if np.isscalar(thresholds):
            return [k for k, e in self.entries.items()
                    if not e["max"] < thresholds]
        return [k for k, tol in thresholds.items()
                if k in self.entries and not self.entries[k]["max"] < tol]

    def merge(self, other, prefix=""):
        for k, e in other.entries.items():
            self.entries[prefix + k] = dict(e)
        return self

    def to_dict(self):
        return {
            "grid_h": self.grid_h,
            "meta": self.meta,
            "entries": [{"name": k, **v} for k, v in self.entries.items()],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        rep = cls(grid_h=d.get("grid_h"), meta=d.get("meta"))
        for e in d.get("entries", []):
            rep.entries[e["name"]] = {"max": e["max"], "mean": e["mean"],
                                      "samples": e["samples"]}
        return rep

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        rows = ", ".join(f"{k}={e['max']:.3e}" for k, e in self.entries.items())
        return f"ResidualReport(h={self.grid_h}, {rows})"


def refinement_ratio(coarse, fine, names=None):
    """Per-entry max-residual ratios coarse/fine.

    For an order-2 discretization under h-halving the ratio sits near 4.
    Entries that vanish on the fine grid give inf (already converged).
    """
    if names is None:
        names = [k for k in coarse.entries if k in fine.entries]
    out = {}
    for k in names:
        num = coarse.entries[k]["max"]
        den = fine.entries[k]["max"]
        out[k] = num / den if den > 0 else np.inf
    return out
