"""Token-level prefix tree over all canonical DocID token sequences.

The trie is immutable after build and shared across decoding sessions.
Duplicate prevention is session-local: an :class:`ExclusionSet` logically
removes already-generated DocIDs, which is observationally equivalent to
physical node deletion for a single session but keeps the shared structure
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import Corpus, UnknownDocIdError
from .tokens import SPECIAL_IDS, UNK, Vocabulary, encode


class TrieError(ValueError):
    """Trie construction or query violated an invariant."""


class InvalidPrefixError(TrieError):
    """A queried prefix is not a path in the trie (decoder bug)."""


@dataclass
class TrieNode:
    children: dict[int, "TrieNode"] = field(default_factory=dict)
    terminal_docid: str | None = None
    subtree_count: int = 0

    @property
    def is_terminal(self) -> bool:
        return self.terminal_docid is not None


@dataclass(frozen=True)
class Continuations:
    """Result of a continuation query: next tokens plus the close permission."""

    tokens: frozenset[int]
    close_permitted: bool


class DocIdTrie:
    """Prefix tree whose root-to-terminal paths spell corpus DocIDs."""

    def __init__(self) -> None:
        self.root = TrieNode()
        self.docid_paths: dict[str, tuple[int, ...]] = {}

    def __len__(self) -> int:
        return self.root.subtree_count

    def _insert(self, tokens: tuple[int, ...], doc_id: str) -> None:
        node = self.root
        node.subtree_count += 1
        for token in tokens:
            node = node.children.setdefault(token, TrieNode())
            node.subtree_count += 1
        if node.terminal_docid is not None:
            raise TrieError(
                f"DocIDs {node.terminal_docid!r} and {doc_id!r} share one token path; "
                "paths must be unique"
            )
        node.terminal_docid = doc_id
        self.docid_paths[doc_id] = tokens

    def node_at(self, prefix: list[int] | tuple[int, ...]) -> TrieNode:
        node = self.root
        for token in prefix:
            child = node.children.get(token)
            if child is None:
                raise InvalidPrefixError(f"prefix {list(prefix)} is not a trie path")
            node = child
        return node

    def contains(self, tokens: list[int] | tuple[int, ...]) -> bool:
        try:
            return self.node_at(tokens).is_terminal
        except InvalidPrefixError:
            return False


class ExclusionSet:
    """Session-local set of DocIDs logically removed from the trie."""

    def __init__(self, trie: DocIdTrie) -> None:
        self._trie = trie
        self._paths: dict[str, tuple[int, ...]] = {}

    def __len__(self) -> int:
        return len(self._paths)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._paths

    @property
    def docids(self) -> set[str]:
        return set(self._paths)

    def add(self, doc_id: str) -> None:
        path = self._trie.docid_paths.get(doc_id)
        if path is None:
            raise UnknownDocIdError(f"cannot exclude unknown DocID: {doc_id!r}")
        self._paths[doc_id] = path

    def excluded_under(self, prefix_len: int, path_prefix: tuple[int, ...]) -> int:
        """Count excluded DocIDs whose token path starts with ``path_prefix``."""
        count = 0
        for path in self._paths.values():
            if len(path) >= prefix_len and path[:prefix_len] == path_prefix:
                count += 1
        return count


def build_trie(corpus: Corpus, vocab: Vocabulary) -> DocIdTrie:
    """Insert every corpus DocID's token sequence into a fresh trie."""
    trie = DocIdTrie()
    for doc_id in corpus.documents:
        tokens = tuple(encode(vocab, doc_id))
        if not tokens:
            raise TrieError(f"DocID {doc_id!r} tokenizes to an empty sequence")
        bad = [t for t in tokens if t == UNK or t in SPECIAL_IDS]
        if bad:
            raise TrieError(f"DocID {doc_id!r} tokenizes to reserved ids {bad}")
        trie._insert(tokens, doc_id)
    return trie


def exclude(excl: ExclusionSet, doc_id: str) -> ExclusionSet:
    """Add ``doc_id`` to the session's exclusion set (mutates and returns it)."""
    excl.add(doc_id)
    return excl


def allowed_continuations(
    trie: DocIdTrie, prefix: list[int] | tuple[int, ...], excl: ExclusionSet
) -> Continuations:
    """Tokens extending ``prefix`` toward a non-excluded DocID, plus close permission.

    A child token is allowed iff at least one non-excluded terminal remains in
    its subtree; the close flag is set iff ``prefix`` itself ends at a terminal
    whose DocID is not excluded.
    """
    prefix = tuple(prefix)
    node = trie.node_at(prefix)
    allowed: set[int] = set()
    for token, child in node.children.items():
        child_prefix = prefix + (token,)
        if child.subtree_count > excl.excluded_under(len(child_prefix), child_prefix):
            allowed.add(token)
    close_ok = node.is_terminal and node.terminal_docid not in excl
    return Continuations(tokens=frozenset(allowed), close_permitted=close_ok)


def remaining_docids(trie: DocIdTrie, excl: ExclusionSet) -> int:
    """Number of corpus DocIDs still spellable under the exclusion set."""
    return trie.root.subtree_count - len(excl)


def dump_trie(trie: DocIdTrie, path) -> None:
    """Write a preorder snapshot, one node per line: depth, token id, terminal flag.

    Children are visited in ascending token order so the dump is canonical.
    The root is implicit. DocID identities are not part of the format; use
    :func:`load_trie` with a corpus and vocabulary to rebind them.
    """
    lines: list[str] = []

    def visit(node: TrieNode, depth: int) -> None:
        for token in sorted(node.children):
            child = node.children[token]
            lines.append(f"{depth}\t{token}\t{int(child.is_terminal)}")
            visit(child, depth + 1)

    visit(trie.root, 0)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_trie(path, corpus: Corpus | None = None, vocab: Vocabulary | None = None) -> DocIdTrie:
    """Rebuild a structurally identical trie from a preorder snapshot.

    Terminal DocID identities are recovered when ``corpus`` and ``vocab`` are
    given; otherwise terminals carry placeholder identities derived from the
    path and the trie is suitable for structural audits only.
    """
    path_to_docid: dict[tuple[int, ...], str] = {}
    if corpus is not None and vocab is not None:
        for doc_id in corpus.documents:
            path_to_docid[tuple(encode(vocab, doc_id))] = doc_id

    trie = DocIdTrie()
    stack: list[tuple[TrieNode, tuple[int, ...]]] = [(trie.root, ())]
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                depth_s, token_s, term_s = line.split("\t")
                depth, token, terminal = int(depth_s), int(token_s), bool(int(term_s))
            except ValueError as exc:
                raise TrieError(f"{path}:{lineno}: malformed trie snapshot line") from exc
            if depth + 1 > len(stack):
                raise TrieError(f"{path}:{lineno}: depth {depth} skips a level")
            del stack[depth + 1 :]
            parent, parent_path = stack[depth]
            node = TrieNode()
            parent.children[token] = node
            node_path = parent_path + (token,)
            if terminal:
                node.terminal_docid = path_to_docid.get(node_path, "#".join(map(str, node_path)))
            stack.append((node, node_path))

    def recount(node: TrieNode) -> int:
        total = int(node.is_terminal) + sum(recount(c) for c in node.children.values())
        node.subtree_count = total
        return total

    recount(trie.root)
    for doc_id, node_path in _terminal_paths(trie.root, ()):
        trie.docid_paths[doc_id] = node_path
    return trie


def _terminal_paths(node: TrieNode, prefix: tuple[int, ...]):
    if node.is_terminal:
        yield node.terminal_docid, prefix
    for token, child in node.children.items():
        yield from _terminal_paths(child, prefix + (token,))
