import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

_acceptance_results = {}

_CRITERION_TITLES = {
    "01": "exact smoothed K-NN vs Monte-Carlo oracle (50 instances, 1e6 samples)",
    "02": "class-probability normalization within 1e-6",
    "03": "closed-form operations vs arbitrary-precision oracles",
    "04": "worst-case classifier flips just past the certified radius",
    "05": "compact-support patterns never certifiable",
    "06": "spambase smoothed 5-NN benchmark row",
    "07": "MNIST(0,1) smoothed 5-NN spot check",
    "08": "ensemble pipeline property checks",
    "09": "DP-SGD clipping and noise invariants",
    "10": "single-instance certification within 60 s",
}


def pytest_runtest_logreport(report):
    nodeid = report.nodeid
    if "test_acceptance" not in nodeid:
        return
    marker = "criterion_"
    idx = nodeid.find(marker)
    if idx < 0 and "Criterion" in nodeid:
        idx = nodeid.find("Criterion") + len("Criterion") - len(marker) + 1
        number = nodeid[nodeid.find("Criterion") + 9 :][:2]
    elif idx >= 0:
        number = nodeid[idx + len(marker) : idx + len(marker) + 2]
    else:
        return
    key = (number, nodeid)
    if report.when == "call" or (report.when == "setup" and report.skipped):
        outcome = report.outcome.upper()
        if report.skipped and report.longrepr:
            outcome = f"SKIPPED ({report.longrepr[2].split(':', 1)[-1].strip()})"
        _acceptance_results[key] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for (number, nodeid) in sorted(_acceptance_results):
        outcome = _acceptance_results[(number, nodeid)]
        title = _CRITERION_TITLES.get(number, "")
        name = nodeid.split("::")[-1]
        status = "PASS" if outcome == "PASSED" else ("FAIL" if outcome == "FAILED" else outcome)
        terminalreporter.write_line(f"criterion {number} [{status}] {title} :: {name}")
