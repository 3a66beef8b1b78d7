"""Scalar re-derivation of the perplexity-weighted loss for frozen test values."""
import math


def pwce(rows, labels, alpha=0.5, beta=1.5, eps=1e-12, lam=0.09):
    ppl, ce = [], []
    for z, y in zip(rows, labels):
        m = max(z)
        s = sum(math.exp(v - m) for v in z)
        p = [math.exp(v - m) / s for v in z]
        e = -sum(pi * math.log(pi + eps) for pi in p)
        ppl.append(min(math.exp(math.sqrt(e)), beta))
        ce.append(m + math.log(s) - z[y])
    mean_ppl = sum(ppl) / len(ppl)
    raw = [1 + alpha * q / (mean_ppl + eps) for q in ppl]
    norm = sum(raw) / len(raw)
    w = [r / norm for r in raw]
    l_ce = sum(ce) / len(ce)
    l_pw = sum(wi * c for wi, c in zip(w, ce)) / len(ce)
    return w, ppl, l_ce, l_pw, l_ce + lam * l_pw


if __name__ == "__main__":
    print("ln2 fixture:", pwce([[0.0, 0.0]], [0]))
    print("two-token:", pwce([[0.0, 0.0], [8.0, 0.0]], [0, 0]))
    print("1.09*ln2 =", 1.09 * math.log(2))
