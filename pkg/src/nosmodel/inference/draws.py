"""Container and on-disk format for posterior draws."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .._version import __version__
from ..io import read_csv

STAT_COLUMNS = ("lp__", "accept_stat__", "step_size__", "tree_depth__", "n_leapfrog__", "divergent__", "energy__")
_STAT_KEYS = {
    "accept_stat__": "accept_stat",
    "step_size__": "step_size",
    "tree_depth__": "tree_depth",
    "n_leapfrog__": "n_leapfrog",
    "divergent__": "divergent",
    "energy__": "energy",
}


@dataclass
class PosteriorDraws:
    """Post-warmup draws of every constrained parameter, per chain.

    ``values`` has shape ``(chains, draws, columns)``; ``logp`` and each
    entry of ``stats`` have shape ``(chains, draws)``.
    """

    columns: list
    values: np.ndarray
    logp: np.ndarray
    stats: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = list(self.columns)
        self.values = np.asarray(self.values, dtype=float)
        self.logp = np.asarray(self.logp, dtype=float)
        if self.values.ndim != 3 or self.values.shape[2] != len(self.columns):
            raise ValueError("values must have shape (chains, draws, len(columns))")
        if self.logp.shape != self.values.shape[:2]:
            raise ValueError("logp must have shape (chains, draws)")
        self._index = {c: i for i, c in enumerate(self.columns)}

    @property
    def n_chains(self):
        return self.values.shape[0]

    @property
    def n_draws(self):
        return self.values.shape[1]

    def __contains__(self, name):
        return name in self._index

    def get(self, name):
        """Draws of one scalar column, shape ``(chains, draws)``."""
        try:
            return self.values[:, :, self._index[name]]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def flat(self, name):
        """Draws of one scalar column pooled over chains (chain-major)."""
        return self.get(name).reshape(-1)

    def matching(self, prefix):
        """Column names of a vector parameter, e.g. ``matching("eta")``."""
        return [c for c in self.columns if c == prefix or c.startswith(prefix + "[")]

    def eta(self):
        """Latent draws as ``(chains, draws, populations, years)``."""
        pops = self.metadata["populations"]
        years = self.metadata["years"]
        idx = [self._index[f"eta[{p},{y}]"] for p in pops for y in years]
        return self.values[:, :, idx].reshape(self.n_chains, self.n_draws, len(pops), len(years))

    # -- persistence ----------------------------------------------------------

    def to_csv(self, directory, header=""):
        """Write ``chain_<k>.csv`` per chain plus ``draws.json`` metadata."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for k in range(self.n_chains):
            frame = {"lp__": self.logp[k]}
            for col, key in _STAT_KEYS.items():
                if key in self.stats:
                    frame[col] = self.stats[key][k]
            stats = pd.DataFrame(frame)
            params = pd.DataFrame(self.values[k], columns=self.columns)
            table = pd.concat([stats, params], axis=1)
            with open(directory / f"chain_{k + 1}.csv", "w", newline="") as fh:
                if header:
                    fh.write(header)
                table.to_csv(fh, index=False, float_format="%.17g")
        meta = dict(self.metadata)
        meta["chains"] = self.n_chains
        meta["draws"] = self.n_draws
        meta["artifact_version"] = __version__
        with open(directory / "draws.json", "w") as fh:
            json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, directory):
        directory = Path(directory)
        with open(directory / "draws.json") as fh:
            meta = json.load(fh)
        files = sorted(directory.glob("chain_*.csv"), key=lambda p: int(re.findall(r"\d+", p.stem)[-1]))
        if not files:
            raise FileNotFoundError(f"no chain_*.csv files in {directory}")
        tables = [read_csv(f)[0] for f in files]
        columns = [c for c in tables[0].columns if c not in STAT_COLUMNS]
        values = np.stack([t[columns].to_numpy(dtype=float) for t in tables])
        logp = np.stack([t["lp__"].to_numpy(dtype=float) for t in tables])
        stats = {}
        for col, key in _STAT_KEYS.items():
            if col in tables[0]:
                stats[key] = np.stack([t[col].to_numpy(dtype=float) for t in tables])
        return cls(columns, values, logp, stats, meta)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj
