"""Numerical invariants on every mesh family.

Runs under pytest, or standalone: ``python3 tests/test_invariants.py``.
"""
import sys

import pytest

from fvheat.analysis import ManufacturedProblem, check_invariants, make_mesh

FAMILIES = [("symmetric", 16), ("almost", 16), ("piecewise", 16), ("stripes", 16),
            ("interface", 4)]


@pytest.mark.parametrize("family,level", FAMILIES)
@pytest.mark.parametrize("operator", ["laplacian", "general"])
def test_invariants(family, level, operator):
    coeffs = ManufacturedProblem().coefficients if operator == "general" else None
    report = check_invariants(make_mesh(family, level, seed=1), coeffs)
    failed = {k: v for k, v in report.items() if not v[2]}
    assert not failed, failed


def main():
    ok = True
    for family, level in FAMILIES:
        for name, (value, threshold, passed) in check_invariants(make_mesh(family, level, seed=1)).items():
            ok &= passed
            print(f"{'PASS' if passed else 'FAIL'}  {family:<10} {name:<22} {value:.3e}  (limit {threshold:g})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
