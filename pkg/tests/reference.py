"""Exact-arithmetic reference for the LinUCB tag bandit.

Keeps ``A`` itself (not its inverse) as Fractions and solves with Gaussian
elimination, so it shares no code path with the production update.
"""

from __future__ import annotations

import math
from fractions import Fraction


def solve(a: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    n = len(a)
    m = [row[:] + [r] for row, r in zip(a, rhs)]
    for c in range(n):
        p = next(r for r in range(c, n) if m[r][c] != 0)
        m[c], m[p] = m[p], m[c]
        for r in range(n):
            if r != c and m[r][c] != 0:
                k = m[r][c] / m[c][c]
                m[r] = [x - k * y for x, y in zip(m[r], m[c])]
    return [m[i][n] / m[i][i] for i in range(n)]


class ExactLinUcb:
    def __init__(self, dim: int, lam: Fraction | int = 1) -> None:
        self.a = [[Fraction(lam) if i == j else Fraction(0) for j in range(dim)] for i in range(dim)]
        self.b = [Fraction(0)] * dim

    def update(self, v, reward) -> None:
        v = [Fraction(x) for x in v]
        for i in range(len(v)):
            for j in range(len(v)):
                self.a[i][j] += v[i] * v[j]
            self.b[i] += Fraction(reward) * v[i]

    def parts(self, v) -> tuple[Fraction, Fraction]:
        """Exact ``(v . A^-1 b, v . A^-1 v)``."""
        v = [Fraction(x) for x in v]
        theta = solve(self.a, self.b)
        w = solve(self.a, v)
        return sum(x * y for x, y in zip(v, theta)), sum(x * y for x, y in zip(v, w))

    def score(self, v, alpha: float) -> float:
        mean, quad = self.parts(v)
        return float(mean) + alpha * math.sqrt(float(quad))


def exact_trace(corpus, table, budget, alpha, lam=1, single=False, initial=None):
    """Replay the Tiara loop with a FIFO oracle; returns ``(steps, model)``."""
    from tiara.embeddings import embed_tag

    model = ExactLinUcb(table.dim, lam)
    known = list(initial if initial is not None else corpus.tags)
    exhausted: set[str] = set()
    cursor: dict[str, int] = {}
    steps = []
    for _ in range(budget):
        live = [t for t in known if t not in exhausted]
        if not live:
            break
        scored = [(model.score(embed_tag(t, table).vector, alpha), t) for t in live]
        best = max(s for s, _ in scored)
        tag = min(t for s, t in scored if s == best)
        idx = corpus.tag_index.get(tag, ())
        k = cursor.get(tag, 0)
        if k >= len(idx):
            exhausted.add(tag)
            steps.append((tag, None))
            continue
        cursor[tag] = k + 1
        item = corpus.items[idx[k]]
        steps.append((tag, item.id))
        for t in item.tags:
            if t not in known:
                known.append(t)
        trained = [tag] if single else list(dict.fromkeys(item.tags))
        for t in trained:
            model.update(embed_tag(t, table).vector, item.score)
    return steps, model
