import pytest

from seastate.synth import SynthConfig, generate_dataset


@pytest.fixture(scope="session")
def tiny_synth(tmp_path_factory):
    """4 classes x (8 train, 4 val, 4 test) at 240 px; enough to exercise every code path."""
    root = tmp_path_factory.mktemp("tiny_synth")
    manifest = generate_dataset(SynthConfig(num_classes=4, train_per_class=8, val_per_class=4,
                                            test_per_class=4, image_size=240, seed=5), root)
    return manifest, root


# -- acceptance summary ------------------------------------------------------

_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, summary = marker.args
    entry = _criteria.setdefault(number, {"summary": summary, "passed": 0, "failed": [], "skipped": []})
    if rep.failed:
        entry["failed"].append(item.name)
    elif rep.skipped:
        reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
        entry["skipped"].append(reason.removeprefix("Skipped: "))
    elif rep.when == "call":
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        if e["failed"]:
            verdict = f"FAIL ({', '.join(e['failed'])})"
        elif e["skipped"] and not e["passed"]:
            verdict = f"SKIP ({'; '.join(sorted(set(e['skipped'])))})"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {number:2d} {verdict:<6} {e['summary']}")
