"""Loop-based reference implementations written directly from the formulas."""

import math


def cross_entropy(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(z - m) for z in row))
        total += lse - row[y]
    return total / len(labels)


def entropy(logits):
    total = 0.0
    for row in logits:
        m = max(row)
        exps = [math.exp(z - m) for z in row]
        s = sum(exps)
        total += -sum((e / s) * math.log(e / s) for e in exps if e > 0)
    return total / len(logits)


def feature_distance(v, w):
    return [sum((a - b) ** 2 for a, b in zip(r1, r2)) for r1, r2 in zip(v, w)]


def contrastive(u, labels):
    n = len(labels)
    dot = [[sum(a * b for a, b in zip(u[i], u[j])) for j in range(n)] for i in range(n)]
    total = 0.0
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        denom = sum(math.exp(dot[i][a]) for a in range(n) if a != i)
        total += -sum(math.log(math.exp(dot[i][p]) / denom) for p in positives) / len(positives)
    return total
