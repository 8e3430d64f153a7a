"""Internal-resonance bookkeeping.

A frequency combination ``sigma = e_i w_i + e_j w_j (+ e_k w_k)`` with signs
``e = +-1`` is resonant with mode ``s`` when ``sigma^2 = w_s^2``.  Three kinds
are distinguished:

* *trivial*: the signed index combination reduces identically to ``+-s``
  (e.g. ``+w_i - w_i + w_s``); always present at third order;
* *declared*: the combination equals ``+-s`` up to one of the integer
  relations the user declared (e.g. ``w_3 = 3 w_1``), whatever the numbers;
* *detected*: ``|sigma^2 - w_s^2| <= tol * w_s^2`` numerically.

The mapping row of mode ``s`` is removed for an index multiset as soon as
any sign pattern of that multiset is resonant with ``s``; the matching
monomials are then kept in the reduced dynamics.

Modes are identified by their 0-based index in the spectrum.
"""

from collections import Counter
from dataclasses import dataclass, field
import itertools
import re
import warnings

import numpy as np

from .errors import ValidationError

__all__ = [
    "DEFAULT_TOL",
    "SECOND_ORDER_PATTERNS",
    "THIRD_ORDER_PATTERNS",
    "ResonanceEntry",
    "ResonanceSet",
    "Relation",
    "parse_relation",
    "detect_resonances",
]

DEFAULT_TOL = 1e-3

# sign of each frequency in sigma, in the order of the index tuple
SECOND_ORDER_PATTERNS = {"sum": (1, 1), "difference": (-1, 1)}
THIRD_ORDER_PATTERNS = {0: (1, 1, 1), 1: (-1, 1, 1), 2: (1, -1, 1), 3: (1, 1, -1)}


def _canonical(vec):
    """Counter without zeros, sign-normalized so the smallest mode has a positive coefficient."""
    items = sorted((m, c) for m, c in vec.items() if c != 0)
    if items and items[0][1] < 0:
        items = [(m, -c) for m, c in items]
    return tuple(items)


@dataclass(frozen=True)
class Relation:
    """Integer relation ``w_s = sum_m c_m w_m`` between mode frequencies.

    Stored as the canonical coefficient tuple of ``sum_m c_m w_m - w_s = 0``.
    """

    s: int
    terms: tuple          # ((mode, sign), ...)

    @property
    def key(self):
        vec = Counter()
        for m, e in self.terms:
            vec[m] += e
        vec[self.s] -= 1
        return _canonical(vec)

    def mismatch(self, omegas):
        sigma = sum(e * omegas[m] for m, e in self.terms)
        return abs(sigma**2 - omegas[self.s] ** 2) / omegas[self.s] ** 2

    def __str__(self):
        rhs = "".join(f"{'+' if e > 0 else '-'}{m}" for m, e in self.terms)
        return f"{self.s}={rhs.lstrip('+')}"


_REL_RE = re.compile(r"^\s*(\d+)\s*=\s*([+-]?\s*\d+(?:\s*[+-]\s*\d+){0,2})\s*$")


def parse_relation(spec, omegas=None, offset=0):
    """Parse a resonance declaration.

    Accepted forms are ``"s=i"`` (1:1), ``"s=i+j"``, ``"s=i+j-k"`` (explicit
    signs) and tuples ``(s, i)``, ``(s, i, j)``, ``(s, i, j, k)`` or
    ``"s,i,j,k"`` (signs chosen so that the combination is closest to
    ``w_s``; requires ``omegas``).

    Parameters
    ----------
    spec : str or tuple
    omegas : array_like, optional
        Angular frequencies indexed by mode.
    offset : int
        Subtracted from every parsed index (1 for 1-based user input).

    Returns
    -------
    Relation
    """
    if isinstance(spec, Relation):
        return spec
    if isinstance(spec, str) and "=" in spec:
        m = _REL_RE.match(spec)
        if not m:
            raise ValidationError(f"cannot parse resonance declaration {spec!r}")
        s = int(m.group(1)) - offset
        terms = []
        for sign, idx in re.findall(r"([+-]?)\s*(\d+)", m.group(2)):
            terms.append((int(idx) - offset, -1 if sign == "-" else 1))
        rel = Relation(s, tuple(terms))
    else:
        if isinstance(spec, str):
            spec = [p for p in re.split(r"[,\s]+", spec.strip()) if p]
        try:
            idx = [int(v) - offset for v in spec]
        except (TypeError, ValueError):
            raise ValidationError(f"cannot parse resonance declaration {spec!r}") from None
        if len(idx) not in (2, 3, 4):
            raise ValidationError("resonance tuples are (s, i), (s, i, j) or (s, i, j, k)")
        if omegas is None:
            raise ValidationError("frequencies are needed to infer the signs of a resonance tuple")
        s, rest = idx[0], idx[1:]
        best = None
        for signs in itertools.product((1, -1), repeat=len(rest)):
            cand = Relation(s, tuple(zip(rest, signs)))
            if best is None or cand.mismatch(omegas) < best.mismatch(omegas) - 1e-15:
                best = cand
        rel = best
    if any(m < 0 for m, _ in rel.terms) or rel.s < 0:
        raise ValidationError(f"negative mode index in resonance declaration {spec!r}")
    if len(rel.terms) not in (1, 2, 3):
        raise ValidationError("a resonance relation has one to three frequencies on its right side")
    if not rel.key:
        raise ValidationError(f"resonance declaration {spec!r} is trivially satisfied")
    return rel


@dataclass(frozen=True)
class ResonanceEntry:
    """One resonant (mode, index combination, sign pattern)."""

    s: int
    indices: tuple
    pattern: object
    sigma: float
    kind: str             # "trivial" | "declared" | "detected"
    mismatch: float

    @property
    def order(self):
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class ResonanceSet:
    """Flagged resonances for a master selection.

    Attributes
    ----------
    second_order, third_order : tuple of ResonanceEntry
    tolerance : float
        Relative detection threshold on ``sigma^2`` vs ``w_s^2``.
    declared : tuple of Relation
    warnings : tuple of str
        Near misses within ``(tol, 10 tol]``.
    """

    second_order: tuple
    third_order: tuple
    tolerance: float
    masters: tuple
    declared: tuple = ()
    warnings: tuple = ()
    _blocked: dict = field(default_factory=dict, repr=False)

    def blocked_modes(self, indices):
        """Modes whose mapping row is removed for this index multiset."""
        return self._blocked.get(tuple(sorted(indices)), ())

    def is_resonant_monomial(self, r, indices):
        """True if the multiset ``indices`` has a sign pattern resonant with mode ``r``."""
        return r in self.blocked_modes(indices)

    @property
    def has_second_order(self):
        return bool(self.second_order)

    def summary(self):
        lines = [f"resonance tolerance: {self.tolerance:g}"]
        for e in self.second_order + self.third_order:
            if e.kind == "trivial":
                continue
            lines.append(f"  order {e.order} {e.kind}: mode {e.s} ~ pattern {e.pattern} "
                         f"of {e.indices} (mismatch {e.mismatch:.3e})")
        n_triv = sum(e.kind == "trivial" for e in self.third_order)
        lines.append(f"  trivial third-order entries: {n_triv}")
        lines.extend("  warning: " + w for w in self.warnings)
        return "\n".join(lines)


def _signed_vector(indices, signs, s, s_sign):
    vec = Counter()
    for m, e in zip(indices, signs):
        vec[m] += e
    vec[s] -= s_sign
    return vec


def _classify(indices, signs, s, omegas, tol, declared_keys):
    sigma = float(sum(e * omegas[m] for m, e in zip(indices, signs)))
    mismatch = abs(sigma**2 - omegas[s] ** 2) / omegas[s] ** 2
    kinds = []
    for s_sign in (1, -1):
        key = _canonical(_signed_vector(indices, signs, s, s_sign))
        if not key:
            return "trivial", sigma, mismatch
        if key in declared_keys:
            kinds.append("declared")
    if kinds:
        return "declared", sigma, mismatch
    if mismatch <= tol:
        return "detected", sigma, mismatch
    return None, sigma, mismatch


def detect_resonances(spectrum, masters=None, tol=DEFAULT_TOL, declared=(), orders=(2, 3)):
    """Flag resonant frequency combinations over master pairs and triples.

    Parameters
    ----------
    spectrum : Spectrum
    masters : sequence of int, optional
        Defaults to ``spectrum.master_indices``.
    tol : float
        Relative threshold on ``|sigma^2 - w_s^2| / w_s^2``.
    declared : sequence
        Relations (see :func:`parse_relation`), 0-based mode indices.
    orders : tuple
        Orders to scan.

    Returns
    -------
    ResonanceSet
    """
    if not tol > 0:
        raise ValidationError(f"resonance tolerance must be positive, got {tol!r}")
    omegas = np.asarray(spectrum.omegas)
    masters = tuple(spectrum.master_indices if masters is None else masters)
    rels = tuple(parse_relation(d, omegas) for d in declared)
    for rel in rels:
        for m in (rel.s,) + tuple(m for m, _ in rel.terms):
            if m >= omegas.size:
                raise ValidationError(f"declared resonance {rel} refers to uncomputed mode {m}")
    declared_keys = {rel.key for rel in rels}
    entries = {2: [], 3: []}
    notes = []
    blocked = {}
    for order in orders:
        patterns = SECOND_ORDER_PATTERNS if order == 2 else THIRD_ORDER_PATTERNS
        for idx in itertools.combinations_with_replacement(masters, order):
            for name, signs in patterns.items():
                for s in range(omegas.size):
                    kind, sigma, mis = _classify(idx, signs, s, omegas, tol, declared_keys)
                    if kind is None:
                        if mis <= 10 * tol:
                            notes.append(f"near resonance: mode {s} vs pattern {name} of {idx} "
                                         f"(relative mismatch {mis:.2e})")
                        continue
                    entries[order].append(ResonanceEntry(s, idx, name, sigma, kind, mis))
                    blocked.setdefault(idx, set()).add(s)
    for w in notes:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
    for e in entries[2] + entries[3]:
        if e.kind == "detected":
            warnings.warn(f"internal resonance detected: mode {e.s} vs {e.indices} "
                          f"pattern {e.pattern} (mismatch {e.mismatch:.2e})",
                          RuntimeWarning, stacklevel=2)
    return ResonanceSet(
        second_order=tuple(entries[2]),
        third_order=tuple(entries[3]),
        tolerance=float(tol),
        masters=masters,
        declared=rels,
        warnings=tuple(notes),
        _blocked={k: tuple(sorted(v)) for k, v in blocked.items()},
    )
