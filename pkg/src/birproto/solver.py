"""Satisfiability of 1-bit symbolic constraints by bounded enumeration.

The built-in backend is a backtracking search over the primitive symbols
the constraint depends on.  Symbols are discovered lazily: evaluation of
a conjunct that reaches an unbound symbol picks that symbol next, which
also covers defined symbols and per-iteration family members whose index
only becomes concrete once a loop counter has a value.  The total width
of enumerated symbols is capped; exceeding the cap yields ``UNKNOWN``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Protocol

from .bits import Bits
from .symexp import (
    FALSE, TRUE, Interpretation, SBin, SymExp, Undefined, Unbound, families,
    interpret, primitive_symbols, symbols,
)

DEFAULT_WIDTH_BUDGET = 20


class SolverUnknown(Exception):
    """The backend could not decide the query within its budget."""


@dataclass
class SolveResult:
    status: str  # sat | unsat | unknown
    model: Optional[Dict[str, Bits]] = None
    reason: str = ""

    @property
    def sat(self) -> bool:
        return self.status == "sat"


class Solver(Protocol):
    def check(self, constraint: SymExp, h: Optional[Interpretation] = None) -> SolveResult: ...


def conjuncts(e: SymExp) -> List[SymExp]:
    out, stack = [], [e]
    while stack:
        x = stack.pop()
        if isinstance(x, SBin) and x.op == "AND" and x.width == 1:
            stack.append(x.right)
            stack.append(x.left)
        else:
            out.append(x)
    return out


class EnumerationSolver:
    """Exhaustive backtracking over free symbols, bounded by total width."""

    def __init__(self, width_budget: int = DEFAULT_WIDTH_BUDGET):
        self.width_budget = width_budget
        self.queries = 0

    def check(self, constraint: SymExp, h: Optional[Interpretation] = None) -> SolveResult:
        self.queries += 1
        if constraint == TRUE:
            return SolveResult("sat", {})
        if constraint == FALSE:
            return SolveResult("unsat")
        h = h or Interpretation()
        widths = self._widths(constraint, h)
        model: Dict[str, Bits] = {}
        try:
            # conjuncts over disjoint symbols are solved one group at a time
            for group in self._groups(conjuncts(constraint), h):
                found = self._search(group, h.copy(), widths, 0, {})
                if found is None:
                    return SolveResult("unsat")
                model.update(found)
        except SolverUnknown as exc:
            return SolveResult("unknown", reason=str(exc))
        return SolveResult("sat", model)

    def _groups(self, parts: List[SymExp], h: Interpretation) -> List[List[SymExp]]:
        owner: Dict[str, int] = {}
        groups: List[List[SymExp]] = []
        names: List[set] = []
        for c in parts:
            free = {n for n in self._widths(c, h) if n not in h.values}
            hit = sorted({owner[n] for n in free if n in owner})
            if not hit:
                groups.append([c])
                names.append(set(free))
                i = len(groups) - 1
            else:
                i = hit[0]
                groups[i].append(c)
                names[i] |= free
                for j in hit[1:]:
                    groups[i].extend(groups[j])
                    names[i] |= names[j]
                    groups[j], names[j] = [], set()
            for n in names[i]:
                owner[n] = i
        return [g for g in groups if g]

    def _widths(self, e: SymExp, h: Interpretation) -> Dict[str, Optional[int]]:
        """Widths of every symbol and family reachable from ``e``."""
        out: Dict[str, Optional[int]] = {}
        fams: Dict[str, Optional[int]] = {}
        stack, seen = [e], set()
        while stack:
            x = stack.pop()
            for name, w in symbols(x).items():
                out.setdefault(name, w)
                if name in h.defs and name not in seen:
                    seen.add(name)
                    stack.append(h.defs[name])
            for fam, w in families(x):
                fams[fam] = w
        for fam, w in fams.items():
            out[f"{fam}@"] = w
        return out

    def _width_of(self, name: str, widths: Mapping[str, Optional[int]]) -> int:
        if name in widths and widths[name] is not None:
            return widths[name]
        if "@" in name:
            w = widths.get(name.split("@", 1)[0] + "@")
            if w is not None:
                return w
        raise SolverUnknown(f"width of {name} unknown")

    def _search(self, parts: List[SymExp], h: Interpretation, widths, used: int,
                assigned: Dict[str, Bits]) -> Optional[Dict[str, Bits]]:
        pending = None
        for c in parts:
            try:
                v = interpret(h, c)
            except Unbound as exc:
                if pending is None:
                    pending = exc.args[0]
                continue
            except Undefined:
                return None
            if not v.value:
                return None
        if pending is None:
            return dict(assigned)
        w = self._width_of(pending, widths)
        if used + w > self.width_budget:
            raise SolverUnknown(f"width budget {self.width_budget} exceeded at {pending}")
        for value in range(1 << w):
            b = Bits(value, w)
            h.values[pending] = b
            assigned[pending] = b
            found = self._search(parts, h, widths, used + w, assigned)
            if found is not None:
                del h.values[pending]
                del assigned[pending]
                return found
        del h.values[pending]
        del assigned[pending]
        return None

    def models(self, constraint: SymExp, over: Iterable[str], widths: Mapping[str, int],
               h: Optional[Interpretation] = None) -> Iterable[Dict[str, Bits]]:
        """All assignments to ``over`` that satisfy ``constraint``.

        Symbols outside ``over`` are existentially quantified.
        """
        names = list(over)
        total = sum(widths[n] for n in names)
        if total > self.width_budget:
            raise SolverUnknown(f"width budget {self.width_budget} exceeded")
        h = h or Interpretation()

        def rec(i: int, hh: Interpretation):
            if i == len(names):
                r = self.check(constraint, hh)
                if r.status == "unknown":
                    raise SolverUnknown(r.reason)
                if r.sat:
                    yield {n: hh.values[n] for n in names}
                return
            for v in range(1 << widths[names[i]]):
                h2 = hh.copy()
                h2.values[names[i]] = Bits(v, widths[names[i]])
                yield from rec(i + 1, h2)
        yield from rec(0, h)


_default = EnumerationSolver()


def solve(constraint: SymExp, h: Optional[Interpretation] = None,
          solver: Optional[Solver] = None) -> Optional[Dict[str, Bits]]:
    """A model of ``constraint`` or ``None`` when unsatisfiable.

    Raises ``SolverUnknown`` rather than guessing when the search budget is
    exceeded.
    """
    r = (solver or _default).check(constraint, h)
    if r.status == "unknown":
        raise SolverUnknown(r.reason)
    return r.model if r.sat else None


def complete_model(model: Mapping[str, Bits], exprs: Iterable[SymExp],
                   defs: Mapping[str, SymExp], skip: Iterable[str] = ()) -> Dict[str, Bits]:
    """``model`` plus zero for every unconstrained primitive symbol of ``exprs``."""
    out = dict(model)
    skip = set(skip)
    for e in exprs:
        for name, w in primitive_symbols(e, defs).items():
            if name not in out and name not in skip and w is not None:
                out[name] = Bits(0, w)
    return out
