"""The acceptance suite, quick tier: one pass/fail line per criterion.

Run directly (``python tests/test_acceptance.py [quick|full]``) or through
pytest, where the criterion lines go to the terminal summary.
"""

import sys

import pytest

from hyperbolax.acceptance import TIERS, criterion_summary, run_tier

pytestmark = pytest.mark.slow

CRITERIA = range(1, 11)


def _lines(results):
    summary = criterion_summary(results)
    out = []
    for crit, ok in summary.items():
        checks = [r for r in results if r.criterion == crit]
        secs = sum(r.seconds for r in checks)
        ids = ", ".join(r.id for r in checks if not r.passed)
        out.append(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'} "
                   f"({len(checks)} checks, {secs:.1f}s){' failing ' + ids if ids else ''}")
    return out


@pytest.fixture(scope="module")
def quick_results(request):
    results = run_tier("quick")
    tr = request.config.pluginmanager.getplugin("terminalreporter")
    if tr is not None:
        tr.write_line("")
        for r in results:
            tr.write_line(r.line())
        for line in _lines(results):
            tr.write_line(line)
    return results


def test_quick_tier_covers_every_criterion():
    quick = {int(cid[1:].split(".")[0]) for cid in TIERS["quick"]}
    assert quick == set(CRITERIA)
    assert set(TIERS["quick"]) <= set(TIERS["full"])


@pytest.mark.parametrize("criterion", CRITERIA)
def test_criterion(quick_results, criterion):
    checks = [r for r in quick_results if r.criterion == criterion]
    assert checks, f"no check for criterion {criterion}"
    failed = [r.line() for r in checks if not r.passed]
    assert not failed, "\n".join(failed)


def test_quick_tier_runtime(quick_results):
    assert sum(r.seconds for r in quick_results) <= 300.0


if __name__ == "__main__":
    tier = sys.argv[1] if len(sys.argv) > 1 else "quick"
    res = run_tier(tier, progress=lambda r: print(r.line(), flush=True))
    for line in _lines(res):
        print(line)
    sys.exit(0 if all(r.passed for r in res) else 1)
