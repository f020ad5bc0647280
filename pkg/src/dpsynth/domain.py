"""Discrete data domains, datasets, and distributions over domain cells.

A domain is an ordered list of categorical attributes with finite sizes.
Records are integer value tuples; the full contingency table flattens to a
vector indexed by row-major cell index over the given attribute order.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

# Mass below this is treated as exactly zero before renormalization, so
# distributions never carry denormal dust around.
MASS_FLOOR = 1e-300

# Histogram-based synthesizers refuse domains with more cells than this
# (overridable per run).
DEFAULT_CELL_CAP = 1 << 22


class DomainError(ValueError):
    """Malformed domain description."""


class DataError(ValueError):
    """Malformed dataset or value out of range."""


class CapacityError(ValueError):
    """Domain too large for a dense-histogram method."""


@dataclass(frozen=True)
class Domain:
    """Ordered categorical schema: attribute names and sizes."""

    names: tuple[str, ...]
    sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.sizes) or not self.names:
            raise DomainError("need one size per attribute name, at least one attribute")
        if len(set(self.names)) != len(self.names):
            raise DomainError("duplicate attribute names")
        if any(int(s) < 2 for s in self.sizes):
            raise DomainError("every attribute needs size >= 2")
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        # row-major strides: last attribute varies fastest
        strides = [1] * len(self.sizes)
        for i in range(len(self.sizes) - 2, -1, -1):
            strides[i] = strides[i + 1] * self.sizes[i + 1]
        object.__setattr__(self, "_strides", tuple(strides))
        offs = np.concatenate([[0], np.cumsum(self.sizes)])
        object.__setattr__(self, "_offsets", tuple(int(o) for o in offs))

    @property
    def num_attrs(self) -> int:
        return len(self.sizes)

    @property
    def total_cells(self) -> int:
        out = 1
        for s in self.sizes:
            out *= s
        return out

    @property
    def onehot_width(self) -> int:
        """Total width of the concatenated per-attribute one-hot blocks."""
        return self._offsets[-1]

    def offset(self, attr: int) -> int:
        """Start of attribute `attr`'s block in the one-hot layout."""
        return self._offsets[attr]

    def stride(self, attr: int) -> int:
        return self._strides[attr]

    def encode(self, records: np.ndarray) -> np.ndarray:
        """Map records (n x d int array) to flat cell indices."""
        records = np.asarray(records, dtype=np.int64)
        if records.ndim == 1:
            records = records[None, :]
        if records.shape[1] != self.num_attrs:
            raise DataError("record width does not match domain")
        cells = np.zeros(records.shape[0], dtype=np.int64)
        for i, (sz, st) in enumerate(zip(self.sizes, self._strides)):
            col = records[:, i]
            if col.min(initial=0) < 0 or col.max(initial=0) >= sz:
                raise DataError(f"value out of range for attribute {self.names[i]!r}")
            cells += col * st
        return cells

    def decode(self, cells: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`encode`; returns an n x d int array."""
        cells = np.asarray(cells, dtype=np.int64)
        out = np.empty((cells.shape[0], self.num_attrs), dtype=np.int64)
        for i, (sz, st) in enumerate(zip(self.sizes, self._strides)):
            out[:, i] = (cells // st) % sz
        return out

    def attr_values(self, cells: np.ndarray, attr: int) -> np.ndarray:
        """Values of one attribute for an array of cell indices."""
        return (np.asarray(cells, dtype=np.int64) // self._strides[attr]) % self.sizes[attr]

    def onehot(self, record) -> np.ndarray:
        """Concatenated one-hot encoding of a single record.

        The output has exactly `num_attrs` ones, one inside each attribute's
        block of the `onehot_width`-long layout.
        """
        record = np.asarray(record, dtype=np.int64).ravel()
        if record.shape[0] != self.num_attrs:
            raise DataError("record width does not match domain")
        v = np.zeros(self.onehot_width)
        for i, val in enumerate(record):
            if not (0 <= val < self.sizes[i]):
                raise DataError(f"value out of range for attribute {self.names[i]!r}")
            v[self._offsets[i] + val] = 1.0
        return v

    def project_names(self, names) -> tuple[int, ...]:
        """Attribute indices for a list of names (KeyError style on miss)."""
        idx = []
        for nm in names:
            if nm not in self.names:
                raise DomainError(f"unknown attribute {nm!r}")
            idx.append(self.names.index(nm))
        return tuple(idx)

    def to_json(self) -> str:
        return json.dumps(
            {"attributes": [{"name": n, "size": s} for n, s in zip(self.names, self.sizes)]}
        )

    @classmethod
    def from_json(cls, text: str) -> "Domain":
        try:
            obj = json.loads(text)
            attrs = obj["attributes"]
            return cls(
                names=tuple(a["name"] for a in attrs),
                sizes=tuple(int(a["size"]) for a in attrs),
            )
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise DomainError(f"bad domain description: {e}") from e

    @classmethod
    def load(cls, path) -> "Domain":
        with open(path) as f:
            return cls.from_json(f.read())

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json() + "\n")


@dataclass
class Dataset:
    """Integer-coded records over a domain."""

    domain: Domain
    records: np.ndarray  # n x d int64

    def __post_init__(self):
        rec = np.asarray(self.records, dtype=np.int64)
        if rec.ndim != 2 or rec.shape[1] != self.domain.num_attrs:
            raise DataError("records must be an n x d integer array")
        for i, sz in enumerate(self.domain.sizes):
            if rec.shape[0] and (rec[:, i].min() < 0 or rec[:, i].max() >= sz):
                raise DataError(f"value out of range for attribute {self.domain.names[i]!r}")
        self.records = rec

    @property
    def n(self) -> int:
        return self.records.shape[0]

    def cells(self) -> np.ndarray:
        return self.domain.encode(self.records)

    @classmethod
    def from_csv(cls, path, domain: Domain) -> "Dataset":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            if set(header) != set(domain.names):
                raise DataError(f"{path}: header {header} does not match domain attributes")
            order = [header.index(n) for n in domain.names]
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    rows.append([int(row[j]) for j in order])
                except (ValueError, IndexError):
                    raise DataError(f"{path}:{lineno}: non-integer or short row") from None
        rec = np.asarray(rows, dtype=np.int64).reshape(len(rows), domain.num_attrs)
        return cls(domain, rec)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.domain.names)
            w.writerows(self.records.tolist())


def normalize_mass(mass: np.ndarray) -> np.ndarray:
    """Flush sub-floor values to zero and rescale to total mass 1."""
    mass = np.asarray(mass, dtype=np.float64).copy()
    if mass.size == 0:
        raise DataError("empty mass vector")
    if not np.all(np.isfinite(mass)) or mass.min() < 0:
        raise DataError("mass must be finite and nonnegative")
    mass[mass < MASS_FLOOR] = 0.0
    total = mass.sum()
    if total <= 0:
        raise DataError("mass sums to zero")
    return mass / total


@dataclass
class Histogram:
    """Dense probability vector over all domain cells.

    When built from records, the exact integer counts (and the record count
    n) are kept alongside the mass so query answers on such histograms can be
    computed in integer arithmetic.
    """

    domain: Domain
    mass: np.ndarray
    counts: np.ndarray | None = None
    n: int | None = None

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        if m.shape != (self.domain.total_cells,):
            raise DataError("mass length does not match domain size")
        if not np.all(np.isfinite(m)) or m.min() < 0:
            raise DataError("mass must be finite and nonnegative")
        self.mass = m

    def normalized(self) -> "Histogram":
        return Histogram(self.domain, normalize_mass(self.mass))


def from_records(data: Dataset) -> Histogram:
    """Empirical distribution of a dataset (counts / n, exact counting)."""
    if data.n == 0:
        raise DataError("empty dataset")
    counts = np.bincount(data.cells(), minlength=data.domain.total_cells).astype(np.int64)
    return Histogram(data.domain, counts / data.n, counts=counts, n=data.n)


def uniform(domain: Domain) -> Histogram:
    return Histogram(domain, np.full(domain.total_cells, 1.0 / domain.total_cells))


def _sample_cells(cum: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(count)
    return np.minimum(np.searchsorted(cum, u, side="right"), cum.shape[0] - 1)


def sample_records(hist: Histogram, count: int, rng: np.random.Generator) -> Dataset:
    """Draw `count` i.i.d. records from the histogram."""
    if count <= 0:
        raise DataError("count must be positive")
    cum = np.cumsum(hist.mass)
    if not np.isclose(cum[-1], 1.0, atol=1e-6):
        raise DataError("histogram is not normalized")
    cells = _sample_cells(cum / cum[-1], count, rng)
    return Dataset(hist.domain, hist.domain.decode(cells))


@dataclass
class SupportDistribution:
    """Probability vector over an explicit subset of domain cells.

    Histogram-style synthesizers use this both for full domains
    (cells = 0..total_cells-1) and for distributions restricted to the
    support of an auxiliary dataset.
    """

    domain: Domain
    cells: np.ndarray  # int64, distinct
    probs: np.ndarray  # float64, sums to 1

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.cells.ndim != 1 or self.cells.shape != self.probs.shape:
            raise DataError("cells/probs shape mismatch")
        if self.cells.size == 0:
            raise DataError("empty support")

    def renormalize(self) -> None:
        self.probs = normalize_mass(self.probs)

    def answers(self, queries) -> np.ndarray:
        return queries.answers_support(self.cells, self.probs)

    def sample_dataset(self, count: int, rng: np.random.Generator) -> Dataset:
        if count <= 0:
            raise DataError("count must be positive")
        cum = np.cumsum(self.probs)
        cells = self.cells[_sample_cells(cum / cum[-1], count, rng)]
        return Dataset(self.domain, self.domain.decode(cells))

    def to_histogram(self, cap: int = DEFAULT_CELL_CAP) -> Histogram:
        if self.domain.total_cells > cap:
            raise CapacityError("domain too large to densify")
        mass = np.zeros(self.domain.total_cells)
        np.add.at(mass, self.cells, self.probs)
        return Histogram(self.domain, mass)

    @classmethod
    def full(cls, domain: Domain, cap: int = DEFAULT_CELL_CAP) -> "SupportDistribution":
        if domain.total_cells > cap:
            raise CapacityError(
                f"domain has {domain.total_cells} cells, over the cap {cap}"
            )
        t = domain.total_cells
        return cls(domain, np.arange(t, dtype=np.int64), np.full(t, 1.0 / t))

    @classmethod
    def from_dataset(cls, data: Dataset) -> "SupportDistribution":
        """Empirical distribution restricted to the distinct records present."""
        if data.n == 0:
            raise DataError("empty dataset")
        cells, counts = np.unique(data.cells(), return_counts=True)
        return cls(data.domain, cells, counts / data.n)

    def save_npz(self, path) -> None:
        np.savez(path, cells=self.cells, probs=self.probs, domain=self.domain.to_json())

    @classmethod
    def load_npz(cls, path) -> "SupportDistribution":
        with np.load(path, allow_pickle=False) as z:
            dom = Domain.from_json(str(z["domain"]))
            return cls(dom, z["cells"], z["probs"])
