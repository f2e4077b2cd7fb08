import contextlib
import time

# one line per acceptance criterion, printed at the end of the session
CRITERIA: list[str] = []


@contextlib.contextmanager
def criterion(name: str, detail: dict):
    """Record PASS/FAIL for ``name``; ``detail`` is filled in by the body and printed with the verdict."""
    t0 = time.perf_counter()
    ok = False
    try:
        yield detail
        ok = True
    finally:
        detail["runtime_s"] = round(time.perf_counter() - t0, 1)
        info = " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in detail.items())
        line = f"{name} {'PASS' if ok else 'FAIL'} {info}"
        CRITERIA.append(line)
        print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)
