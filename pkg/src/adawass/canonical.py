"""Information process, canonical representatives, and equivalence testing.

Every node at level t of a scenario tree determines an information state:
its value at time t together with the conditional law of the next-step
information state.  Two trees describe the same filtered process exactly
when their level-1 information laws coincide, and merging siblings with
equal states yields the minimal representative of the equivalence class.
"""

from __future__ import annotations

from dataclasses import dataclass

from .trees import ShapeMismatchError, TreeNode, TreeProcess

__all__ = ["InfoState", "information_process", "level_one_law", "canonicalize", "equivalent"]


@dataclass(frozen=True)
class InfoState:
    """Value at the current step plus the conditional law of the next state.

    ``law`` is None at the terminal level, otherwise a tuple of
    ``(InfoState, probability)`` pairs with distinct states, positive masses
    summing to one, sorted canonically.
    """

    value: tuple[float, ...]
    law: tuple[tuple["InfoState", float], ...] | None = None


def _sort_key(state: InfoState, memo: dict[int, tuple]) -> tuple:
    key = memo.get(id(state))
    if key is None:
        if state.law is None:
            key = (state.value,)
        else:
            key = (state.value, tuple((_sort_key(s, memo), q) for s, q in state.law))
        memo[id(state)] = key
    return key


def _merge(entries: list[tuple[InfoState, float]], memo: dict[int, tuple]) -> tuple[tuple[InfoState, float], ...]:
    """Group equal states and sum their masses; order-independent result."""
    groups: dict[InfoState, list[float]] = {}
    reps: dict[InfoState, InfoState] = {}
    for s, q in entries:
        if s in groups:
            groups[s].append(q)
        else:
            groups[s] = [q]
            reps[s] = s
    merged = [(reps[s], sum(sorted(qs))) for s, qs in groups.items()]
    merged.sort(key=lambda e: _sort_key(e[0], memo))
    return tuple(merged)


def information_process(proc: TreeProcess) -> dict[int, InfoState]:
    """Backward recursion assigning an information state to every node at level >= 1.

    Terminal nodes carry their value; an interior node carries its value and
    the edge-probability mixture of its children's states, with identical
    children merged by summing mass.
    """
    memo: dict[int, tuple] = {}
    states: dict[int, InfoState] = {}
    for t in range(proc.depth, 0, -1):
        for nid in proc.level(t):
            node = proc.node(nid)
            if t == proc.depth:
                states[nid] = InfoState(value=node.value)
            else:
                entries = [(states[c], proc.node(c).prob) for c in proc.children(nid)]
                states[nid] = InfoState(value=node.value, law=_merge(entries, memo))
    return states


def level_one_law(proc: TreeProcess) -> tuple[tuple[InfoState, float], ...]:
    """The law of the time-1 information state; a complete invariant."""
    memo: dict[int, tuple] = {}
    states = information_process(proc)
    entries = [(states[c], proc.node(c).prob) for c in proc.children(proc.root_id)]
    return _merge(entries, memo)


def _rebuild(depth: int, value_dims: tuple[int, ...],
             law: tuple[tuple[InfoState, float], ...]) -> TreeProcess:
    """Materialize the tree whose level-1 information law is ``law``."""
    nodes = [TreeNode(id=0, parent=None, time=0, value=None, prob=1.0)]
    counter = [1]

    def emit(parent_id: int, t: int, entries: tuple[tuple[InfoState, float], ...]) -> None:
        for state, prob in entries:
            nid = counter[0]
            counter[0] += 1
            nodes.append(TreeNode(id=nid, parent=parent_id, time=t, value=state.value, prob=prob))
            if state.law is not None:
                emit(nid, t + 1, state.law)

    emit(0, 1, law)
    return TreeProcess(depth=depth, value_dims=value_dims, nodes=tuple(nodes))


# approximate variant: nested (value, law-or-None) descriptions


def _approx_equal(a, b, tol: float) -> bool:
    va, la = a
    vb, lb = b
    if len(va) != len(vb) or any(abs(x - y) > tol for x, y in zip(va, vb)):
        return False
    if (la is None) != (lb is None):
        return False
    if la is None:
        return True
    if len(la) != len(lb):
        return False
    return all(
        abs(qa - qb) <= tol and _approx_equal(sa, sb, tol)
        for (sa, qa), (sb, qb) in zip(la, lb)
    )


def _canon_desc(proc: TreeProcess, nid: int, tol: float):
    node = proc.node(nid)
    kids = proc.children(nid)
    if not kids:
        return (node.value, None)
    return (node.value, _merge_descs([( _canon_desc(proc, c, tol), proc.node(c).prob) for c in kids], tol))


def _merge_descs(entries, tol: float):
    """Greedy pairwise merging in construction (node-id) order; first one wins."""
    reps: list[list] = []
    for desc, prob in entries:
        for rep in reps:
            if _approx_equal(rep[0], desc, tol):
                rep[1] += prob
                break
        else:
            reps.append([desc, prob])
    reps.sort(key=lambda r: _desc_key(r[0]))
    return tuple((d, q) for d, q in reps)


def _desc_key(desc):
    value, law = desc
    if law is None:
        return (value,)
    return (value, tuple((_desc_key(d), q) for d, q in law))


def _rebuild_desc(depth: int, value_dims: tuple[int, ...], law) -> TreeProcess:
    nodes = [TreeNode(id=0, parent=None, time=0, value=None, prob=1.0)]
    counter = [1]

    def emit(parent_id: int, t: int, entries) -> None:
        for (value, sub), prob in entries:
            nid = counter[0]
            counter[0] += 1
            nodes.append(TreeNode(id=nid, parent=parent_id, time=t, value=value, prob=prob))
            if sub is not None:
                emit(nid, t + 1, sub)

    emit(0, 1, law)
    return TreeProcess(depth=depth, value_dims=value_dims, nodes=tuple(nodes))


def canonicalize(proc: TreeProcess, tol: float = 0.0) -> TreeProcess:
    """Minimal representative: siblings with equal information states merged.

    With ``tol`` zero the merge uses exact equality of states and the result
    is idempotent node-for-node.  A positive ``tol`` merges states whose
    values and probabilities agree componentwise within ``tol``, greedily in
    node-id order with the lowest id winning.
    """
    if tol <= 0.0:
        return _rebuild(proc.depth, proc.value_dims, level_one_law(proc))
    root = proc.root_id
    law = _merge_descs(
        [(_canon_desc(proc, c, tol), proc.node(c).prob) for c in proc.children(root)], tol
    )
    return _rebuild_desc(proc.depth, proc.value_dims, law)


def equivalent(a: TreeProcess, b: TreeProcess, tol: float = 0.0) -> bool:
    """True iff the two processes have adapted distance zero for every order.

    Tested as equality of the laws of the time-1 information states, i.e.
    isomorphism of canonical forms (values within ``tol`` when positive).
    """
    if a.depth != b.depth or a.value_dims != b.value_dims:
        raise ShapeMismatchError(
            f"shape mismatch: depth {a.depth}/{b.depth}, dims {a.value_dims}/{b.value_dims}"
        )
    if tol <= 0.0:
        return level_one_law(a) == level_one_law(b)
    ca, cb = canonicalize(a, tol), canonicalize(b, tol)

    def walk(na: int, nb: int) -> bool:
        ka, kb = ca.children(na), cb.children(nb)
        if len(ka) != len(kb):
            return False
        for ia, ib in zip(ka, kb):
            xa, xb = ca.node(ia), cb.node(ib)
            if abs(xa.prob - xb.prob) > tol:
                return False
            if any(abs(u - v) > tol for u, v in zip(xa.value, xb.value)):
                return False
            if not walk(ia, ib):
                return False
        return True

    return walk(ca.root_id, cb.root_id)
