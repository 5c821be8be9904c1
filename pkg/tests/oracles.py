"""Independent reference computations used as test oracles.

Nothing here imports the package under test.
"""

import math
import random

import numpy as np


def floyd_warshall(n, edges):
    INF = float("inf")
    D = [[0 if i == j else INF for j in range(n)] for i in range(n)]
    for i, j in edges:
        D[i][j] = D[j][i] = 1
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if D[i][k] + D[k][j] < D[i][j]:
                    D[i][j] = D[i][k] + D[k][j]
    return np.array(D)


def random_connected_graph(n, rng: random.Random, extra_edge_prob=0.2):
    """Random spanning tree plus optional extra edges."""
    edges = set()
    for v in range(1, n):
        u = rng.randrange(v)
        edges.add((u, v))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < extra_edge_prob:
                edges.add((i, j))
    return sorted(edges)


def random_tree(n, rng: random.Random):
    return random_connected_graph(n, rng, extra_edge_prob=0.0)


def dense_attention(q, k, v, bias):
    """Row-by-row softmax attention in plain Python floats."""
    q, k, v, bias = (np.asarray(x, dtype=np.float64) for x in (q, k, v, bias))
    N, dh = q.shape
    out = np.zeros_like(v)
    W = np.zeros((N, N))
    for i in range(N):
        logits = []
        for j in range(N):
            if bias[i, j] == -math.inf:
                logits.append(None)
            else:
                s = sum(q[i, c] * k[j, c] for c in range(dh)) / math.sqrt(dh) + bias[i, j]
                logits.append(s)
        m = max(x for x in logits if x is not None)
        ex = [0.0 if x is None else math.exp(x - m) for x in logits]
        z = sum(ex)
        for j in range(N):
            W[i, j] = ex[j] / z
            out[i] += W[i, j] * v[j]
    return out, W


def silu(x):
    return x / (1.0 + math.exp(-x))


def affine(W, b, x):
    return [sum(W[r][c] * x[c] for c in range(len(x))) + b[r] for r in range(len(b))]


def swiglu_mlp(params, x):
    """linear -> SwiGLU -> linear, scalar arithmetic."""
    h = affine(params["inp.weight"], params["inp.bias"], x)
    gate = affine(params["gate.weight"], params["gate.bias"], h)
    up = affine(params["up.weight"], params["up.bias"], h)
    mid = [silu(g) * u for g, u in zip(gate, up)]
    return affine(params["out.weight"], params["out.bias"], mid)
