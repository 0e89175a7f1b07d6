"""Independent slow reference implementations used by several test modules."""

import numpy as np

from tactigraph.graph import TIE_EPS


def oracle_knn_edges(x, ids, k):
    """Exhaustive scan: sort every other node by (squared distance on the tie grid, taxel id)."""
    ids = sorted(int(i) for i in ids)
    edges = set()
    for i in ids:
        cand = []
        for j in ids:
            if j != i:
                d = x[i] - x[j]
                cand.append((round((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / TIE_EPS), j))
        cand.sort()
        for _, j in cand[:k]:
            edges.add((min(i, j), max(i, j)))
    return edges


def oracle_activated(skin, pressure, theta):
    hot = {i for i, p in enumerate(pressure) if p > theta}
    out = set(hot)
    for patch in skin.patches:
        for a, b, _ in patch.adjacency:
            if a in hot:
                out.add(b)
            if b in hot:
                out.add(a)
    return out


def numeric_gradient_check(model, batch, labels, l2, rng, n_checks, eps=1e-4):
    """Worst relative error between backprop and central differences over random scalars."""
    _, grads, _ = model.loss_and_gradients(batch, labels, l2)
    params = model.params()
    sizes = np.array([p.size for p in params])
    worst = 0.0
    for _ in range(n_checks):
        which = int(rng.choice(len(params), p=sizes / sizes.sum()))
        flat = params[which].reshape(-1)
        i = int(rng.integers(flat.size))
        old = flat[i]
        flat[i] = old + eps
        up = model.loss_and_gradients(batch, labels, l2)[0]
        flat[i] = old - eps
        down = model.loss_and_gradients(batch, labels, l2)[0]
        flat[i] = old
        fd = (up - down) / (2 * eps)
        an = grads[which].reshape(-1)[i]
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-7))
    return worst
