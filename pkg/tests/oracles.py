"""Independent brute-force oracles used to cross-check the package.

Everything here is written from the definitions, in exact Fraction
arithmetic where possible, and deliberately imports nothing from the code
paths it checks.
"""

from fractions import Fraction
import math


def oracle_recall_precision_f1(ranked, positives, k):
    top = ranked[:k]
    hits = sum(1 for r in top if r in positives)
    recall = Fraction(hits, len(positives))
    precision = Fraction(hits, k)
    if precision + recall == 0:
        f1 = Fraction(0)
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return float(recall), float(precision), float(f1)


def oracle_grade(item, positives, modules):
    if item in positives:
        return 1.0
    mods = {modules[p] for p in positives}
    return 0.3 if modules[item] in mods else 0.0


def oracle_ndcg(ranked, positives, modules, k):
    dcg = 0.0
    for i, item in enumerate(ranked[:k]):
        dcg += oracle_grade(item, positives, modules) / math.log2(i + 2)
    all_grades = sorted(
        (oracle_grade(item, positives, modules) for item in modules),
        reverse=True,
    )
    idcg = 0.0
    for i, g in enumerate(all_grades[:k]):
        idcg += g / math.log2(i + 2)
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def oracle_topk(matrix, vec, k):
    """Exhaustive top-k by dot product, ties by ascending row id."""
    scored = [(float(row @ vec), i) for i, row in enumerate(matrix)]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(i, s) for s, i in scored[:k]]


def central_difference(loss_fn, array, flat_index, h):
    """Two-sided finite difference of loss_fn along one parameter entry."""
    flat = array.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + h
    up = loss_fn()
    flat[flat_index] = orig - h
    down = loss_fn()
    flat[flat_index] = orig
    return (up - down) / (2.0 * h)


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(floor, abs(a) + abs(b))
