import random

from phi3ren.canon import are_isomorphic_bruteforce, canonical_form


def random_multigraph(rng, n, m):
    return [(rng.randrange(n), rng.randrange(n), rng.choice("ab"), rng.random() < 0.5)
            for _ in range(m)]


def relabel(edges, perm):
    return [(perm[u], perm[v], c, d) for u, v, c, d in edges]


def test_certificate_invariant_under_relabelling():
    rng = random.Random(1)
    for _ in range(60):
        n = rng.randint(1, 8)
        edges = random_multigraph(rng, n, rng.randint(0, 12))
        colours = [rng.randint(0, 1) for _ in range(n)]
        perm = list(range(n))
        rng.shuffle(perm)
        colours2 = [None] * n
        for v in range(n):
            colours2[perm[v]] = colours[v]
        assert canonical_form(n, colours, edges)[0] == canonical_form(n, colours2, relabel(edges, perm))[0]


def test_agrees_with_bruteforce_oracle():
    rng = random.Random(2)
    for _ in range(150):
        n = rng.randint(2, 6)
        m = rng.randint(1, 7)
        a = [(u, v, "e", False) for u, v, _, _ in random_multigraph(rng, n, m)]
        b = [(u, v, "e", False) for u, v, _, _ in random_multigraph(rng, n, m)]
        cols = [0] * n
        same = canonical_form(n, cols, a)[0] == canonical_form(n, cols, b)[0]
        assert same == are_isomorphic_bruteforce(n, cols, a, cols, b)


def test_directed_edges_are_oriented():
    a = [(0, 1, "P", True)]
    b = [(1, 0, "P", True)]
    assert canonical_form(2, [0, 1], a)[0] != canonical_form(2, [0, 1], b)[0]
    assert canonical_form(2, [0, 0], a)[0] == canonical_form(2, [0, 0], b)[0]
