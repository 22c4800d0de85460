"""Reference implementations used only by the tests.

Each one is written from the definition, in the slowest obvious way, and
shares no code with the package.
"""

import math

import numpy as np


# ---------------------------------------------------------------- retrieval

def topk_bruteforce(ids, embeddings, query, k, exclude=()):
    rows = []
    for eid, e in zip(ids, embeddings):
        if eid in exclude:
            continue
        s = 0.0
        for a, b in zip(e.astype(np.float64), query):
            s += float(a) * float(b)
        rows.append((-min(1.0, max(-1.0, s)), eid))
    rows.sort()
    return [eid for _, eid in rows[:k]]


def cosine(a, b):
    dot = sum(float(x) * float(y) for x, y in zip(a, b))
    na = math.sqrt(sum(float(x) ** 2 for x in a))
    nb = math.sqrt(sum(float(y) ** 2 for y in b))
    return dot / (na * nb)


# ------------------------------------------------------------------ metrics

def _grams(toks, n):
    out = {}
    for i in range(len(toks) - n + 1):
        g = tuple(toks[i:i + n])
        out[g] = out.get(g, 0) + 1
    return out


def bleu_oracle(pairs, n):
    num = [0] * n
    den = [0] * n
    c_total = 0
    r_total = 0
    for cand, refs in pairs:
        c_total += len(cand)
        best = None
        for r in refs:
            key = (abs(len(r) - len(cand)), len(r))
            if best is None or key < best:
                best = key
        r_total += best[1]
        for k in range(1, n + 1):
            cg = _grams(cand, k)
            for g, cnt in cg.items():
                mx = 0
                for r in refs:
                    mx = max(mx, _grams(r, k).get(g, 0))
                num[k - 1] += min(cnt, mx)
            den[k - 1] += max(0, len(cand) - k + 1)
    if c_total == 0:
        return 0.0
    for k in range(n):
        if num[k] == 0:
            return 0.0
    s = 0.0
    for k in range(n):
        s += math.log(num[k] / den[k])
    bp = 1.0
    if c_total <= r_total:
        bp = math.exp(1 - r_total / c_total)
    return bp * math.exp(s / n)


def lcs_oracle(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]


def rouge_oracle(pairs, beta=1.2):
    total = 0.0
    for cand, refs in pairs:
        best = 0.0
        for r in refs:
            m = lcs_oracle(cand, r)
            if m == 0:
                continue
            p = m / len(cand)
            rc = m / len(r)
            best = max(best, ((1 + beta * beta) * p * rc) / (rc + beta * beta * p))
        total += best
    return total / len(pairs)


def cider_oracle(pairs, sigma=6.0):
    N = len(pairs)
    df = {}
    for _, refs in pairs:
        grams = set()
        for r in refs:
            for n in range(1, 5):
                grams.update(_grams(r, n).keys())
        for g in grams:
            df[g] = df.get(g, 0) + 1

    def vec(toks, n):
        v = {}
        for g, tf in _grams(toks, n).items():
            v[g] = tf * (math.log(N) - math.log(max(1.0, df.get(g, 0))))
        return v

    def norm(v):
        return math.sqrt(sum(x * x for x in v.values()))

    scores = []
    for cand, refs in pairs:
        per_n = []
        for n in range(1, 5):
            hv = vec(cand, n)
            s = 0.0
            for r in refs:
                rv = vec(r, n)
                if norm(hv) == 0 or norm(rv) == 0:
                    continue
                dot = 0.0
                for g in hv:
                    if g in rv:
                        dot += min(hv[g], rv[g]) * rv[g]
                delta = len(cand) - len(r)
                s += dot / (norm(hv) * norm(rv)) * math.exp(-delta * delta / (2 * sigma * sigma))
            per_n.append(s / len(refs))
        scores.append(10.0 * sum(per_n) / 4)
    return sum(scores) / N


# ------------------------------------------------------------------ decoder

def param_count_oracle(L, D, F, V, E, T):
    """Returns (xattn scalars, all scalars) for the decoder layout."""
    per_block_base = 2 * D + 4 * D * D + 2 * D + D * F + F + F * D + D
    per_block_x = D * D + E * D + E * D + D * D + 1
    base = V * D + T * D + L * per_block_base + 2 * D + D * V
    return L * per_block_x, base + L * per_block_x


def _ln(v, g=None, b=None, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    out = [(x - mu) / math.sqrt(var + eps) for x in v]
    if g is not None:
        out = [o * gi + bi for o, gi, bi in zip(out, g, b)]
    return out


def _matvec(v, W):
    # v (n,) times W (n, m)
    return [sum(v[i] * W[i][j] for i in range(len(v))) for j in range(len(W[0]))]


def _add(a, b):
    return [x + y for x, y in zip(a, b)]


def _gelu(x):
    return 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def _single_head_attn(queries, keys_values, wq, wk, wv, wo, causal):
    qs = [_matvec(x, wq) for x in queries]
    ks = [_matvec(x, wk) for x in keys_values]
    vs = [_matvec(x, wv) for x in keys_values]
    d = len(qs[0])
    out = []
    for t, q in enumerate(qs):
        visible = range(t + 1) if causal else range(len(ks))
        s = [sum(a * b for a, b in zip(q, ks[j])) / math.sqrt(d) for j in visible]
        m = max(s)
        e = [math.exp(x - m) for x in s]
        z = sum(e)
        mix = [0.0] * d
        for w, j in zip(e, visible):
            for i in range(d):
                mix[i] += w / z * vs[j][i]
        out.append(_matvec(mix, wo))
    return out


def one_layer_logits(params, tokens, hidden):
    """Single block, single head, one sequence: logits as nested lists."""
    P = {k: np.asarray(v).tolist() for k, v in params.items()}
    x = [_add(P["tok_emb"][t], P["pos_emb"][i]) for i, t in enumerate(tokens)]
    a = [_ln(v, P["blocks.0.ln1.g"], P["blocks.0.ln1.b"]) for v in x]
    sa = _single_head_attn(a, a, P["blocks.0.attn.wq"], P["blocks.0.attn.wk"],
                           P["blocks.0.attn.wv"], P["blocks.0.attn.wo"], causal=True)
    x = [_add(u, v) for u, v in zip(x, sa)]
    q = [_ln(v) for v in x]
    xa = _single_head_attn(q, hidden, P["blocks.0.xattn.wq"], P["blocks.0.xattn.wk"],
                           P["blocks.0.xattn.wv"], P["blocks.0.xattn.wo"], causal=False)
    g = math.tanh(P["blocks.0.xattn.gate"][0])
    x = [[u + g * v for u, v in zip(r, s)] for r, s in zip(x, xa)]
    out = []
    for v in x:
        f = _ln(v, P["blocks.0.ln2.g"], P["blocks.0.ln2.b"])
        pre = _add(_matvec(f, P["blocks.0.ffn.w1"]), P["blocks.0.ffn.b1"])
        act = [_gelu(p) for p in pre]
        v = _add(v, _add(_matvec(act, P["blocks.0.ffn.w2"]), P["blocks.0.ffn.b2"]))
        out.append(_matvec(_ln(v, P["ln_f.g"], P["ln_f.b"]), P["w_out"]))
    return out


def cross_entropy_oracle(logits_row, target):
    m = max(logits_row)
    lse = m + math.log(sum(math.exp(v - m) for v in logits_row))
    return lse - logits_row[target]


def finite_difference(f, params, name, eps=1e-5):
    """Central differences of scalar ``f(params)`` for every entry of one tensor."""
    arr = params[name]
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + eps
        up = f(params)
        arr[idx] = old - eps
        down = f(params)
        arr[idx] = old
        out[idx] = (up - down) / (2 * eps)
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))
