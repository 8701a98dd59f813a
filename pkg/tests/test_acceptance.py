"""One test per acceptance criterion.

Each test runs the matching check from :mod:`sbmds.evaluation.checks`, prints
a single ``criterion k: PASS/FAIL (...)`` line, records it for the terminal
summary and then asserts on the outcome.  The long-running criteria carry
the ``slow`` marker so ``pytest -m "not slow"`` skips them.
"""

import pytest

from sbmds.evaluation import checks


def run_criterion(number, check, report, **kwargs):
    res = check(**kwargs)
    line = f"criterion {number}: {'PASS' if res.passed else 'FAIL'} [{res.name}] ({res.summary}; {res.seconds:.1f}s)"
    print(line)
    report.append(line)
    assert res.passed, line


def test_criterion_01_worked_example(acceptance_report):
    run_criterion(1, checks.check_worked_example, acceptance_report)


def test_criterion_02_gradient(acceptance_report):
    run_criterion(2, checks.check_gradient, acceptance_report)


def test_criterion_03_complete_schemes_agree(acceptance_report):
    run_criterion(3, checks.check_equivalence, acceptance_report)


def test_criterion_04_rigid_invariance(acceptance_report):
    run_criterion(4, checks.check_invariance, acceptance_report)


@pytest.mark.slow
def test_criterion_05_speedup(acceptance_report):
    run_criterion(5, checks.check_speedup, acceptance_report)


@pytest.mark.slow
def test_criterion_06_scaling(acceptance_report):
    run_criterion(6, checks.check_scaling, acceptance_report)


@pytest.mark.slow
def test_criterion_07_elbow(acceptance_report):
    run_criterion(7, checks.check_elbow, acceptance_report)


@pytest.mark.slow
def test_criterion_08_consistency(acceptance_report):
    run_criterion(8, checks.check_consistency, acceptance_report)


@pytest.mark.slow
def test_criterion_09_sampler_agreement(acceptance_report):
    run_criterion(9, checks.check_samplers, acceptance_report)


def test_criterion_10_diagnostics(acceptance_report):
    run_criterion(10, checks.check_diagnostics, acceptance_report)
