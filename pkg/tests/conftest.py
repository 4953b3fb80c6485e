import pytest

VERDICTS: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion.

    Usage: ``criterion(3, "remote sync oracle")`` at the top of the test;
    the verdict is filled in from the test outcome.
    """
    def mark(num: int, title: str):
        request.node.criterion = (num, title)
    return mark


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    tag = getattr(item, "criterion", None)
    if tag and rep.when == "call":
        VERDICTS[tag[0]] = ("PASS" if rep.passed else "FAIL", tag[1])
        print(f"\ncriterion {tag[0]:2d} {VERDICTS[tag[0]][0]}: {tag[1]}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(VERDICTS):
        verdict, title = VERDICTS[num]
        terminalreporter.write_line(f"criterion {num:2d} {verdict}: {title}")
