"""Prints the acceptance verdict lines outside pytest's capture."""


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    while VERDICTS:
        num, name, ok = VERDICTS.pop(0)
        verdict = "PASS" if ok else "FAIL"
        print(f"[{verdict}] criterion {num:2d}: {name}", flush=True)
