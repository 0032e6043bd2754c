"""Regenerates table_361.jsonl and table_361_expected.json.

Expected values are computed independently of the Rust code: pass^k by
enumerating every k-subset of runs with exact fractions, significance with
scipy. Run from this directory: python3 gen_table_fixture.py
"""

import itertools
import json
from decimal import Decimal, ROUND_HALF_EVEN
from fractions import Fraction

from scipy import stats

N = 3
ALPHA = 0.05

# (baseline, perturbed, retry, noisy, shifted, task count) success counts out of N.
GROUPS = [
    (3, 3, 3, 3, 3, 70),
    (3, 2, 3, 3, 3, 18),
    (3, 1, 3, 2, 3, 9),
    (3, 0, 3, 3, 3, 4),
    (2, 2, 3, 2, 3, 30),
    (2, 1, 3, 3, 3, 12),
    (2, 3, 3, 1, 3, 6),
    (1, 1, 2, 1, 0, 40),
    (1, 0, 3, 2, 0, 20),
    (1, 2, 1, 0, 0, 10),
    (0, 0, 0, 0, 0, 95),
    (0, 0, 1, 0, 0, 25),
    (0, 1, 3, 0, 0, 12),
    (2, 0, 2, 2, 3, 10),
]
SETTINGS = ["baseline", "perturbed", "retry", "noisy", "shifted"]


def runs_for(task_index, count):
    hits = {(task_index + j) % N for j in range(count)}
    return [j in hits for j in range(N)]


def pass_hat(runs, k):
    subsets = list(itertools.combinations(range(N), k))
    return Fraction(sum(all(runs[j] for j in s) for s in subsets), len(subsets))


def fmt3(x):
    d = Decimal(x.numerator) / Decimal(x.denominator)
    s = str(d.quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))
    return "0.000" if s == "-0.000" else s


def assert_not_on_boundary(x):
    scaled = x * 1000
    frac = scaled - (scaled.numerator // scaled.denominator)
    assert abs(frac - Fraction(1, 2)) > Fraction(1, 10**6), x


def exact_wilcoxon(d):
    nz = [x for x in d if x != 0]
    a = sorted(abs(x) for x in nz)
    rank = {}
    i = 0
    while i < len(a):
        j = i
        while j < len(a) and a[j] == a[i]:
            j += 1
        rank[a[i]] = Fraction(i + 1 + j, 2)
        i = j
    r = [rank[abs(x)] for x in nz]
    w = sum(ri for ri, x in zip(r, nz) if x > 0)
    mu = sum(r) / 2
    hits = 0
    for signs in itertools.product([0, 1], repeat=len(r)):
        w2 = sum(ri for ri, s in zip(r, signs) if s)
        if abs(w2 - mu) >= abs(w - mu):
            hits += 1
    return hits / 2 ** len(r)


def main():
    counts = {s: [] for s in SETTINGS}
    for group in GROUPS:
        for _ in range(group[-1]):
            for s, c in zip(SETTINGS, group[:-1]):
                counts[s].append(c)
    tasks = [f"os-{i:03d}" for i in range(len(counts["baseline"]))]
    assert len(tasks) == 361

    lines = []
    runs = {}
    for si, s in enumerate(SETTINGS):
        runs[s] = [runs_for(i, c) for i, c in enumerate(counts[s])]
        order = range(len(tasks)) if si % 2 == 0 else reversed(range(len(tasks)))
        for i in order:
            for r, ok in enumerate(runs[s][i]):
                rec = {"task_id": tasks[i], "setting_id": s, "run_index": r}
                if i % 7 == 0:
                    rec["score"] = 1.0 if ok else 0.5
                else:
                    rec["success"] = 1 if ok else 0
                lines.append(json.dumps(rec, separators=(",", ":")))

    with open("table_361.jsonl", "w") as f:
        f.write("\n".join(lines) + "\n")

    expected = {"n": N, "alpha": ALPHA, "settings": {}, "comparisons": []}
    for s in SETTINGS:
        row = {}
        for k in (1, 3):
            v = sum(pass_hat(r, k) for r in runs[s]) / len(runs[s])
            assert_not_on_boundary(v)
            row[f"pass_hat_{k}"] = fmt3(v)
        expected["settings"][s] = row

    base = counts["baseline"]
    for s in SETTINGS[1:]:
        new = counts[s]
        b = sum(1 for x, y in zip(base, new) if x < N and y == N)
        c = sum(1 for x, y in zip(base, new) if x == N and y < N)
        if b + c == 0:
            p_mc = 1.0
        elif b + c < 25:
            p_mc = min(1.0, 2 * stats.binom.sf(max(b, c) - 1, b + c, 0.5))
        else:
            p_mc = stats.chi2.sf((b - c) ** 2 / (b + c), 1)
        d = [y - x for x, y in zip(base, new)]
        m = sum(1 for x in d if x != 0)
        if m == 0:
            p_wx = 1.0
        elif m <= 20:
            p_wx = exact_wilcoxon(d)
        else:
            p_wx = stats.wilcoxon(d, zero_method="wilcox", correction=True, method="approx").pvalue
        for p in (p_mc, p_wx):
            assert abs(p - ALPHA) > 1e-6
        delta = Fraction(sum(d), len(d)) / N
        assert_not_on_boundary(delta)
        expected["comparisons"].append(
            {
                "new": s,
                "b_minus_c": b - c,
                "mcnemar_p": p_mc,
                "mcnemar_star": bool(p_mc < ALPHA),
                "delta_cx": fmt3(delta),
                "wilcoxon_p": float(p_wx),
                "wilcoxon_star": bool(p_wx < ALPHA),
            }
        )

    with open("table_361_expected.json", "w") as f:
        json.dump(expected, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
