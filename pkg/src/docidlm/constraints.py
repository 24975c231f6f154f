"""Dynamic activation of DocID constraints during decoding.

Whether the next token is trie-constrained depends on the generated history:
scanning backward from the end, a close symbol means constraints are off, an
open symbol means they are on for the tokens that follow it. ``scan_state``
implements that backward scan literally; ``step_state`` is the incremental
equivalent with O(1) per-token cost, and the two are kept interchangeable by
a randomized equivalence suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .tokens import DOCID_CLOSE, DOCID_OPEN, EOS
from .trie import DocIdTrie, ExclusionSet, allowed_continuations, remaining_docids


class MalformedSequenceError(RuntimeError):
    """A structural token arrived in a state where the mask forbids it."""


class DeadEndError(RuntimeError):
    """Inside a DocID span with nothing allowed; signals an exclusion bug."""


class Mode(Enum):
    UNCONSTRAINED = "unconstrained"
    INSIDE_DOCID = "inside_docid"


class DecodePhase(Enum):
    DOCID_LIST = "docid_list"
    FREE_TEXT = "free_text"


@dataclass(frozen=True)
class ConstraintState:
    mode: Mode
    inner_prefix: tuple[int, ...] = ()

    @property
    def inside_docid(self) -> bool:
        return self.mode is Mode.INSIDE_DOCID


UNCONSTRAINED = ConstraintState(Mode.UNCONSTRAINED)


def scan_state(generated: list[int] | tuple[int, ...]) -> ConstraintState:
    """Literal backward scan: close exits, open engages, neither means free."""
    for i in range(len(generated) - 1, -1, -1):
        token = generated[i]
        if token == DOCID_CLOSE:
            return UNCONSTRAINED
        if token == DOCID_OPEN:
            return ConstraintState(Mode.INSIDE_DOCID, tuple(generated[i + 1 :]))
    return UNCONSTRAINED


def step_state(prev: ConstraintState, emitted: int) -> ConstraintState:
    """Advance the state by one emitted token.

    Equivalent to rescanning the extended history, at constant cost.
    """
    if prev.inside_docid:
        if emitted == DOCID_OPEN:
            raise MalformedSequenceError("DOCID_OPEN emitted inside a DocID span")
        if emitted == DOCID_CLOSE:
            return UNCONSTRAINED
        return ConstraintState(Mode.INSIDE_DOCID, prev.inner_prefix + (emitted,))
    if emitted == DOCID_CLOSE:
        raise MalformedSequenceError("DOCID_CLOSE emitted outside a DocID span")
    if emitted == DOCID_OPEN:
        return ConstraintState(Mode.INSIDE_DOCID, ())
    return UNCONSTRAINED


def allowed_mask(
    state: ConstraintState,
    trie: DocIdTrie,
    excl: ExclusionSet,
    phase: DecodePhase,
    vocab_size: int,
) -> set[int]:
    """Token ids the decoder may emit next.

    Inside a DocID span the mask comes from the trie (continuations plus the
    close symbol at a non-excluded terminal). Outside, the DocID-list phase
    admits only opening another span or stopping, and the open symbol is
    withheld once every DocID is excluded so no span can dead-end. Free-text
    phases admit the whole vocabulary except the close symbol, which is never
    well-formed unmatched.
    """
    if state.inside_docid:
        cont = allowed_continuations(trie, state.inner_prefix, excl)
        allowed = set(cont.tokens)
        if cont.close_permitted:
            allowed.add(DOCID_CLOSE)
        if not allowed:
            raise DeadEndError(
                f"no continuation from inner prefix {list(state.inner_prefix)}"
            )
        return allowed
    if phase is DecodePhase.DOCID_LIST:
        allowed = {EOS}
        if remaining_docids(trie, excl) > 0:
            allowed.add(DOCID_OPEN)
        return allowed
    return set(range(vocab_size)) - {DOCID_CLOSE}
