"""Harris's lock-free sorted list in traversal form, and a hash table of them.

The traverse method is the read-only prefix of Harris's search: it returns
``left`` (last unmarked node with a smaller key), the marked nodes after
it, and ``right`` (first unmarked node with key >= k).  Trimming those
marked nodes happens in the critical method.
"""

from __future__ import annotations

from collections.abc import Iterable

from nvtraverse.framework import (
    HEAD_KEY,
    KEY,
    NEXT,
    NODE_WORDS,
    NULL,
    ORIG,
    ROOT_BASE,
    TAIL_KEY,
    Allocator,
    TraversalStructure,
    TraverseResult,
    is_marked,
    unmark,
    with_mark,
)
from nvtraverse.isa import Alloc, Cas, Read, Write
from nvtraverse.pmem import PersistentMemory

SETUP_THREAD = -1


def _fmt_key(k: int) -> str:
    if k == HEAD_KEY:
        return "-inf"
    if k == TAIL_KEY:
        return "+inf"
    return str(k)


class HarrisList(TraversalStructure):
    """Sorted set of non-negative integer keys (one bucket)."""

    kind = "list"

    def __init__(self, heads: list[int], roots: list[int]):
        self.heads = heads
        self.roots = roots

    # -- construction ---------------------------------------------------

    @classmethod
    def create(cls, mem: PersistentMemory, keys: Iterable[int] = (), **kwargs):
        """Build sentinels (and optional initial keys) fully persisted."""
        return cls._build(mem, 1, keys)

    @classmethod
    def _build(cls, mem, buckets: int, keys, **extra):
        alloc = Allocator.after(mem, SETUP_THREAD)
        t = SETUP_THREAD
        heads, roots = [], []
        per_bucket: list[list[int]] = [[] for _ in range(buckets)]
        for k in sorted(set(keys)):
            if k < 0 or k >= TAIL_KEY:
                raise ValueError(f"key {k} outside the user key range")
            per_bucket[k % buckets].append(k)
        for b in range(buckets):
            root = ROOT_BASE + b
            head, tail = alloc.alloc(NODE_WORDS), alloc.alloc(NODE_WORDS)
            chain = [alloc.alloc(NODE_WORDS) for _ in per_bucket[b]]
            mem.write(root, head, t)
            mem.write(head + KEY, HEAD_KEY, t)
            mem.write(head + ORIG, root, t)
            mem.write(tail + KEY, TAIL_KEY, t)
            prev = head
            for node, k in zip(chain, per_bucket[b]):
                mem.write(node + KEY, k, t)
                mem.write(node + ORIG, prev + NEXT, t)
                mem.write(prev + NEXT, node, t)
                prev = node
            mem.write(prev + NEXT, tail, t)
            mem.write(tail + ORIG, prev + NEXT, t)
            for addr in [root] + [n + f for n in [head, tail, *chain] for f in (KEY, NEXT, ORIG)]:
                mem.flush(addr, t)
            heads.append(head)
            roots.append(root)
        mem.fence(t)
        return cls(heads, roots, **extra)

    def fresh(self, mem: PersistentMemory, keys: Iterable[int] = ()):
        """An empty structure of the same shape on another memory."""
        return type(self)._build(mem, len(self.heads), keys)

    # -- TraversalStructure -----------------------------------------------

    def find_entry(self, key) -> int:
        return self.heads[0]

    def entry_nodes(self) -> set[int]:
        return set(self.heads)

    def root_words(self) -> set[int]:
        return set(self.roots)

    def traverse(self, entry: int, key):
        while True:
            visited = [entry]
            reads = set()
            nodes: list[int] = []
            left_index = 0
            curr = entry
            succ = yield Read(curr + NEXT)
            reads.add(curr + NEXT)
            while True:
                if not is_marked(succ):
                    ckey = yield Read(curr + KEY, immutable=True)
                    if ckey >= key:
                        break
                    nodes = [curr]
                    left_index = len(visited) - 1
                else:
                    nodes.append(curr)
                curr = unmark(succ)
                visited.append(curr)
                if curr == NULL:
                    break
                succ = yield Read(curr + NEXT)
                reads.add(curr + NEXT)
            right = curr
            nodes.append(right)
            if right != NULL:
                rnext = yield Read(right + NEXT)
                reads.add(right + NEXT)
                if is_marked(rnext):
                    continue
            parents = visited[:left_index] or [entry]
            return TraverseResult(
                nodes=nodes,
                read_fields=[n + NEXT for n in nodes if n != NULL and n + NEXT in reads],
                parent_path=[p + NEXT for p in parents],
                visited=visited,
            )

    def critical(self, op: str, tr: TraverseResult, key):
        if op == "insert":
            return (yield from self.insert_critical(tr.nodes, key))
        if op == "delete":
            return (yield from self.delete_critical(tr.nodes, key))
        if op == "find":
            return (yield from self.find_critical(tr.nodes, key))
        raise ValueError(f"unknown operation {op!r}")

    def _right_key(self, right: int):
        if right == NULL:
            return TAIL_KEY
        return (yield Read(right + KEY, immutable=True))

    def delete_marked_nodes(self, nodes: list[int]):
        """Trim the marked nodes between left and right with one CAS."""
        if len(nodes) == 2:
            return True
        left, right = nodes[0], nodes[-1]
        if not (yield Cas(left + NEXT, nodes[1], right)):
            return False
        if right != NULL and is_marked((yield Read(right + NEXT))):
            return False
        return True

    def insert_critical(self, nodes: list[int], key):
        if not (yield from self.delete_marked_nodes(nodes)):
            return True, False
        left, right = nodes[0], nodes[-1]
        if (yield from self._right_key(right)) == key:
            return False, False
        node = yield Alloc(NODE_WORDS)
        yield Write(node + KEY, key, local=True)
        yield Write(node + NEXT, right, local=True)
        yield Write(node + ORIG, left + NEXT, local=True)
        if (yield Cas(left + NEXT, right, node)):
            return False, True
        return True, False

    def delete_critical(self, nodes: list[int], key):
        if not (yield from self.delete_marked_nodes(nodes)):
            return True, False
        left, right = nodes[0], nodes[-1]
        if (yield from self._right_key(right)) != key:
            return False, False
        rnext = yield Read(right + NEXT)
        if not is_marked(rnext):
            if (yield Cas(right + NEXT, rnext, with_mark(rnext))):
                # physical removal may fail; recovery or a later traversal trims it
                yield Cas(left + NEXT, right, rnext)
                return False, True
        return True, False

    def find_critical(self, nodes: list[int], key):
        return False, (yield from self._right_key(nodes[-1])) == key

    def disconnect(self):
        """Trim every maximal run of marked nodes, bucket by bucket."""
        for head in self.heads:
            yield from self._disconnect_from(head)

    def _disconnect_from(self, head: int):
        while True:
            pred = head
            pnext = yield Read(pred + NEXT)
            restart = False
            while True:
                curr = unmark(pnext)
                if curr == NULL:
                    break
                cnext = yield Read(curr + NEXT)
                if not is_marked(cnext):
                    pred, pnext = curr, cnext
                    continue
                after = unmark(cnext)
                while after != NULL:
                    anext = yield Read(after + NEXT)
                    if not is_marked(anext):
                        break
                    after = unmark(anext)
                if not (yield Cas(pred + NEXT, curr, after)):
                    restart = True
                    break
                pnext = after
            if not restart:
                return

    # -- inspection (no counted accesses) -----------------------------------

    def chain(self, mem: PersistentMemory, bucket: int = 0) -> list[int]:
        """Reachable nodes of a bucket from head, marked ones included."""
        out, node, seen = [], self.heads[bucket], set()
        while node != NULL and node not in seen:
            seen.add(node)
            out.append(node)
            node = unmark(mem.peek(node + NEXT))
        return out

    def keys(self, mem: PersistentMemory) -> set[int]:
        """Unmarked user keys reachable from the root."""
        out = set()
        for b in range(len(self.heads)):
            for node in self.chain(mem, b):
                k = mem.peek(node + KEY)
                if k not in (HEAD_KEY, TAIL_KEY) and not is_marked(mem.peek(node + NEXT)):
                    out.add(k)
        return out

    def dump(self, mem: PersistentMemory) -> str:
        lines = []
        for b in range(len(self.heads)):
            for node in self.chain(mem, b):
                nxt = mem.peek(node + NEXT)
                lines.append(
                    f"node@{node} {_fmt_key(mem.peek(node + KEY))} {int(is_marked(nxt))} "
                    f"{unmark(nxt)} {mem.peek(node + ORIG)}"
                )
        return "\n".join(lines) + "\n"

    def sorted_invariant(self, mem: PersistentMemory) -> bool:
        """Keys strictly increase along every chain and sentinels stay unmarked."""
        for b, head in enumerate(self.heads):
            chain = self.chain(mem, b)
            keys = [mem.peek(n + KEY) for n in chain]
            if any(a >= c for a, c in zip(keys, keys[1:])):
                return False
            if is_marked(mem.peek(head + NEXT)) or keys[-1] != TAIL_KEY:
                return False
            if is_marked(mem.peek(chain[-1] + NEXT)):
                return False
        return True

    def bucket_of(self, key: int) -> int:
        return 0

    def legal_disconnections(self, mem: PersistentMemory, maximal_only: bool = False):
        """Every CAS that atomically disconnects a connected run of marked nodes.

        For a run m1..mj under unmarked parent P the legal instructions are
        ``P.next: m1 -> succ(mi)`` for each prefix; ``maximal_only`` keeps only
        the one removing the whole run.
        """
        out = []
        for b in range(len(self.heads)):
            chain = self.chain(mem, b)
            i = 0
            while i < len(chain):
                p = chain[i]
                if is_marked(mem.peek(p + NEXT)):
                    i += 1
                    continue
                j = i + 1
                run = []
                while j < len(chain) and is_marked(mem.peek(chain[j] + NEXT)):
                    run.append(chain[j])
                    j += 1
                if run:
                    prefixes = [len(run)] if maximal_only else range(1, len(run) + 1)
                    for n in prefixes:
                        out.append((p + NEXT, run[0], unmark(mem.peek(run[n - 1] + NEXT))))
                i = j if run else i + 1
        return out


class HashTable(HarrisList):
    """Fixed number of buckets, each a Harris list; bucket(k) = k mod buckets."""

    kind = "hash"

    @classmethod
    def create(cls, mem: PersistentMemory, keys: Iterable[int] = (), buckets: int = 2):
        if buckets < 1:
            raise ValueError("bucket_count must be positive")
        return cls._build(mem, buckets, keys)

    @property
    def bucket_count(self) -> int:
        return len(self.heads)

    def bucket_of(self, key: int) -> int:
        return key % len(self.heads)

    def find_entry(self, key) -> int:
        return self.heads[key % len(self.heads)]


def make_structure(kind: str, mem: PersistentMemory, keys: Iterable[int] = (), buckets: int = 2):
    if kind == "list":
        return HarrisList.create(mem, keys)
    if kind == "hash":
        return HashTable.create(mem, keys, buckets=buckets)
    raise ValueError(f"unknown structure {kind!r}")


def sequential_oracle(ops: Iterable[tuple[str, int]]) -> tuple[list[bool], set[int]]:
    """Reference ordered-set semantics for a single-threaded op sequence."""
    keys: set[int] = set()
    results = []
    for op, k in ops:
        if op == "insert":
            results.append(k not in keys)
            keys.add(k)
        elif op == "delete":
            results.append(k in keys)
            keys.discard(k)
        elif op == "find":
            results.append(k in keys)
        else:
            raise ValueError(f"unknown operation {op!r}")
    return results, keys
