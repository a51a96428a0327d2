"""Collects one verdict line per acceptance criterion for the terminal summary."""

RESULTS = {}


def record(number, title, passed, detail):
    RESULTS[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {title}: {detail}"
    print(RESULTS[number])
