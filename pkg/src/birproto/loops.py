"""Summaries of bounded loops by an iteration counter.

One iteration is executed symbolically from the loop entry with every
register replaced by a placeholder ``pre.<name>``.  The single path that
returns to the entry determines how each variable evolves:

* unchanged variables keep their value;
* ``v := v + d`` (constant ``d``) becomes ``v0 + d * t``;
* a variable whose new value only depends on unchanged or affine
  variables and on symbols created in the iteration becomes the value of
  iteration ``t``, with each iteration's fresh symbols kept apart as an
  indexed family.

The looping condition says that iterations ``1..t`` all followed the
back path and that an exit path is taken after ``t`` iterations.  Loops
that do not fit fall back to bounded unrolling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Tuple

from .bir import CTR, HEAP, HEAP_A, HEAP_OP, LR, MEM, MEM_A, MEM_OP, RM, BirProgram
from .events import Ev, Fresh, In, Loop, Out, Tau
from .solver import conjuncts
from .symexp import (
    TRUE, SBin, SConst, SVar, SymExp, const, mk_and, mk_bin, mk_forall, mk_indexed, mk_ite,
    mk_un, substitute, symbols,
)

RESERVED = {RM, CTR, LR, MEM, MEM_OP, MEM_A, HEAP, HEAP_OP, HEAP_A}
CURSORS = (HEAP, HEAP_OP, HEAP_A)
MAX_PATHS = 16
MAX_NEST = 2
PROBE_BASE = 10_000


class NotSummarizable(Exception):
    pass


@dataclass
class ExitCase:
    cond: SymExp  # exit condition after t iterations
    env: Dict[str, Any]
    defs: Dict[str, SymExp]


@dataclass
class LoopSummary:
    entry: Any
    exit: Any
    counter: SVar
    iterated_env: Dict[str, SymExp]
    looping_cond: SymExp  # forall part over iterations 1..t
    exits: List[ExitCase]
    kinds: Dict[str, str]
    count: Optional[SymExp] = None  # closed-form iteration count
    body: Any = None  # execution tree of one iteration
    has_calls: bool = False

    def info(self) -> Dict[str, Any]:
        return {"counter": self.counter.name, "count": self.count, "has_calls": self.has_calls,
                "kinds": dict(self.kinds)}


def _placeholder(name: str) -> str:
    return f"pre.{name}"


def _is_register(name: str, v: Any) -> bool:
    return name not in RESERVED and not name.startswith("__") and isinstance(v, SymExp) \
        and v.width is not None


def _iteration_paths(p: BirProgram, s, cfg, entry, exit_label):
    """All acyclic paths of one iteration, as (final state, events)."""
    from .symexec import exec_block_sym, sym_step
    done: List[Tuple[Any, List[Any], str]] = []
    first = exec_block_sym(p, s, cfg)
    work = [(st, [ev]) for st, ev in first]
    steps = 0
    while work:
        st, evs = work.pop(0)
        steps += 1
        if steps > 4 * cfg.max_depth or len(done) > MAX_PATHS:
            raise NotSummarizable("too many iteration paths")
        if st.status != "run":
            raise NotSummarizable(f"iteration path ends in {st.status}")
        if st.pc == entry:
            done.append((st, evs, "back"))
            continue
        if st.pc == exit_label:
            done.append((st, evs, "exit"))
            continue
        if len(evs) > cfg.max_depth:
            raise NotSummarizable("iteration path too long")
        for st2, ev in sym_step(p, replace(st, decisions=()), cfg):
            work.append((st2, evs + [ev]))
    return done


def _inline_defs(e: SymExp, defs: Dict[str, SymExp], local: set) -> SymExp:
    sub = {}
    for name in symbols(e):
        if name in local and name in defs:
            sub[name] = _inline_defs(defs[name], defs, local)
    return substitute(e, sub) if sub else e


def summarize_loop(s, p: BirProgram, cfg) -> LoopSummary:
    """Summarize the loop entered at ``s.pc``; raises ``NotSummarizable``."""
    entry = s.pc
    exit_label = p.partition.exits[entry]
    regs = {k: v for k, v in s.env.items() if _is_register(k, v)}
    probe_env = dict(s.env)
    for k, v in regs.items():
        probe_env[k] = SVar(_placeholder(k), v.width)
    nest = getattr(cfg, "_nest", 0)
    if nest >= MAX_NEST:
        cfg_diag(cfg, f"loop {entry}: nesting deeper than {MAX_NEST}")
    # probe symbols get their own counter range so they never clash with the path
    probe = replace(s, env=probe_env, phi=TRUE, decisions=(), defs=dict(s.defs),
                    counter=PROBE_BASE + s.counter)
    cfg._nest = nest + 1
    try:
        paths = _iteration_paths(p, probe, cfg, entry, exit_label)
    finally:
        cfg._nest = nest
    back = [x for x in paths if x[2] == "back"]
    exits = [x for x in paths if x[2] == "exit"]
    if len(back) != 1:
        raise NotSummarizable(f"{len(back)} back paths (exactly one is supported)")
    if not exits:
        raise NotSummarizable("no exit path")
    bst, bevs, _ = back[0]
    has_calls = any(not isinstance(e, Tau) for e in bevs)
    if any(isinstance(e, Fresh) for e in bevs):
        raise NotSummarizable("random numbers inside the loop body")
    if bst.env.get(CTR) != s.env.get(CTR):
        raise NotSummarizable("random tape consumed inside the loop body")

    # symbols created in the iteration
    local = set(bst.defs) - set(s.defs)
    fresh_prims = set()
    for ev in bevs:
        if isinstance(ev, In):
            fresh_prims.add(ev.payload.name)
        if isinstance(ev, Loop):
            fresh_prims.add(ev.counter.name)

    name_t, s1 = s.fresh("t_loop", cfg.suffix)
    tw = cfg.counter_width
    t = SVar(name_t, tw)
    pre_names = {_placeholder(k): k for k in regs}

    fam = {f: f"{f}_fam" for f in fresh_prims}
    fam_width = {f: symbols_width(bevs, f) for f in fresh_prims}

    kinds: Dict[str, str] = {}
    post: Dict[str, SymExp] = {}
    for k in regs:
        v = _inline_defs(bst.env[k], bst.defs, local)
        post[k] = v
        ph = SVar(_placeholder(k), regs[k].width)
        if v == ph:
            kinds[k] = "unchanged"
        elif isinstance(v, SBin) and v.op in ("PLUS", "MINUS") and v.left == ph and isinstance(v.right, SConst):
            kinds[k] = "affine"
        elif isinstance(v, SVar) and v.name in fresh_prims:
            kinds[k] = "family"
        else:
            kinds[k] = "recurrent"
    # temporaries first assigned inside the loop
    for k, v in bst.env.items():
        if k not in regs and _is_register(k, v):
            post[k] = _inline_defs(v, bst.defs, local)
            kinds[k] = "temp"
    closed = ("unchanged", "affine", "family")
    for k, kind in kinds.items():
        if kind in ("recurrent", "temp"):
            for n in symbols(post[k]):
                if n in pre_names and kinds[pre_names[n]] not in closed:
                    raise NotSummarizable(f"{k} depends on recurrent {pre_names[n]}")
    for region in (MEM, MEM_OP, MEM_A):
        if not has_calls and bst.env.get(region) != s.env.get(region):
            raise NotSummarizable(f"{region} written inside the loop")

    def at(k: str, idx: SymExp) -> SymExp:
        """Closed form of register k after ``idx`` iterations."""
        kind = kinds[k]
        v0 = regs[k]
        if kind == "unchanged":
            return v0
        if kind == "affine":
            step = mk_bin("MULT", mk_un("CAST", idx, v0.width), post[k].right)
            return mk_bin(post[k].op, v0, step)
        if kind == "family":
            return mk_indexed(fam[post[k].name], idx, v0, v0.width)
        return mk_ite(mk_bin("EQ", idx, const(0, tw)), v0, one_iter(post[k], idx))

    def one_iter(e: SymExp, idx: SymExp) -> SymExp:
        """``e`` as computed by iteration ``idx`` (counting from 1)."""
        prev = mk_bin("MINUS", idx, const(1, tw))
        sub: Dict[str, SymExp] = {}
        for name in symbols(e):
            if name in pre_names:
                sub[name] = at(pre_names[name], prev)
            elif name in fresh_prims:
                sub[name] = mk_indexed(fam[name], idx, SVar(name, fam_width[name]), fam_width[name])
        return substitute(e, sub)

    iterated: Dict[str, SymExp] = {}
    for k, kind in kinds.items():
        if kind == "temp":
            iterated[k] = one_iter(post[k], t)
        elif kind != "unchanged":
            iterated[k] = at(k, t)

    # looping condition over iterations 1..t
    tp_name = f"{name_t}.i"
    tp = SVar(tp_name, tw)
    body_cond = one_iter(_inline_defs(bst.phi, bst.defs, local), tp)
    # families index by the bound iteration, so rebind the family init
    looping = mk_forall(tp_name, 1, t, body_cond, tw)

    exit_cases = []
    for est, eevs, _ in exits:
        if any(isinstance(e, (In, Out, Ev, Fresh, Loop)) for e in eevs):
            raise NotSummarizable("observable events on the exit path")
        elocal = set(est.defs) - set(s.defs)
        sub = {}
        for name in set().union(*[symbols(x) for x in _exp_values(est.env)], symbols(est.phi)):
            if name in pre_names:
                sub[name] = _current(pre_names[name], iterated, regs)
        cond = substitute(_inline_defs(est.phi, est.defs, elocal), sub)
        env = dict(s.env)
        for k, v in est.env.items():
            if k in RESERVED and k != LR:
                continue
            if isinstance(v, SymExp):
                env[k] = substitute(_inline_defs(v, est.defs, elocal), sub)
            else:
                env[k] = v
        for c in CURSORS:
            if est.env.get(c) != s.env.get(c) or bst.env.get(c) != s.env.get(c):
                # allocations of unknown iterations: move past anything they wrote
                env[c] = const(_cursor(s.env[c]) + (1 << tw) * (1 + _cursor(bst.env[c]) - _cursor(s.env[c])),
                               s.env[c].width)
        exit_cases.append(ExitCase(cond, env, {}))

    summary = LoopSummary(entry, exit_label, t, iterated, looping, exit_cases, kinds,
                          has_calls=has_calls)
    summary.count = closed_count(summary, regs, post, t)
    return summary


def _exp_values(env):
    return [v for v in env.values() if isinstance(v, SymExp)]


def _cursor(v) -> int:
    return v.value.value


def _current(k: str, iterated: Dict[str, SymExp], regs) -> SymExp:
    return iterated.get(k, regs[k])


def symbols_width(evs, name: str) -> Optional[int]:
    for ev in evs:
        if isinstance(ev, In) and ev.payload.name == name:
            return ev.payload.width
        if isinstance(ev, Loop) and ev.counter.name == name:
            return ev.counter.width
    return None


def closed_count(summary: LoopSummary, regs, post, t: SVar) -> Optional[SymExp]:
    """Iteration count for ``i < b`` / ``i != b`` guards with ``i += 1``."""
    if len(summary.exits) != 1:
        return None
    tw = t.width
    for k, kind in summary.kinds.items():
        if kind != "affine" or post[k].op != "PLUS" or post[k].right.value.value != 1:
            continue
        cur = summary.iterated_env[k]
        cond = summary.exits[0].cond
        for bound in _bounds_against(cond, cur):
            if _mentions(bound, t.name):
                continue
            i0 = regs[k]
            if bound[0] == "LT":
                c = mk_ite(mk_bin("LT", i0, bound[1]), mk_bin("MINUS", bound[1], i0), const(0, i0.width))
            else:
                c = mk_bin("MINUS", bound[1], i0)
            return mk_un("CAST", c, tw)
    return None


def _mentions(bound, name) -> bool:
    return name in symbols(bound[1])


def _bounds_against(cond: SymExp, cur: SymExp):
    """Patterns ``~(cur < b)`` and ``cur == b`` in the exit condition."""
    out = []
    for c in conjuncts(cond):
        if isinstance(c, SBin) and c.op == "EQ" and c.left == cur:
            out.append(("NEQ", c.right))
        if hasattr(c, "op") and c.op == "NOT" and isinstance(c.arg, SBin) and c.arg.op == "LT" \
                and c.arg.left == cur:
            out.append(("LT", c.arg.right))
        if hasattr(c, "op") and c.op == "NOT" and isinstance(c.arg, SBin) and c.arg.op == "NEQ" \
                and c.arg.left == cur:
            out.append(("NEQ", c.arg.right))
        if isinstance(c, SBin) and c.op == "LE" and c.right == cur:
            out.append(("LT", c.left))
    return out


def cfg_diag(cfg, msg: str) -> None:
    diags = getattr(cfg, "diagnostics", None)
    if diags is None:
        diags = []
        cfg.diagnostics = diags
    diags.append(msg)


def loop_step(p: BirProgram, s, cfg, guide=None):
    """Symbolic step at a loop entry: summarize or fall back to unrolling."""
    from .symexec import SymExecError, exec_block_sym
    unrolled = s.env.get("__unroll__", {})
    if s.pc not in unrolled:
        try:
            summary = summarize_loop(s, p, cfg)
        except NotSummarizable as exc:
            cfg_diag(cfg, f"loop {s.pc}: {exc}; unrolling")
        else:
            _, s1 = s.fresh("t_loop", cfg.suffix)
            body = _body_tree(p, s, cfg, summary)
            summary.body = body
            out = []
            for case in summary.exits:
                phi = mk_and(s.phi, summary.looping_cond, case.cond)
                st = replace(s1, phi=phi, env=case.env, pc=summary.exit, decisions=())
                out.append((st, Loop(summary.counter, None, summary)))
            if len(out) > 1:
                # exits are told apart by a chain of their conditions
                chained, prefix = [], ()
                for i, ((st, ev), case) in enumerate(zip(out, summary.exits)):
                    last = i == len(out) - 1
                    dec = prefix if last else prefix + ((case.cond, True),)
                    chained.append((replace(st, decisions=dec), ev))
                    prefix = prefix + ((case.cond, False),)
                out = chained
            return out
    count = unrolled.get(s.pc, 0)
    if count >= cfg.unroll_bound:
        raise SymExecError(f"loop {s.pc} unrolled {count} times")
    succs = exec_block_sym(p, s, cfg, guide)
    out = []
    for st, ev in succs:
        env = dict(st.env)
        u = dict(env.get("__unroll__", {}))
        u[s.pc] = count + 1
        env["__unroll__"] = u
        out.append((replace(st, env=env), ev))
    return out


def _body_tree(p: BirProgram, s, cfg, summary: LoopSummary):
    """One generic iteration as a tree, stopping at the back edge and the exit."""
    from .symexec import build_body_tree
    regs = {k: v for k, v in s.env.items() if _is_register(k, v)}
    env = dict(s.env)
    for k in summary.iterated_env:
        if k in regs:
            env[k] = summary.iterated_env[k]
    st = replace(s, env=env, phi=TRUE, decisions=())
    return build_body_tree(p, st, cfg, {summary.entry: "back", summary.exit: "exit"})
