"""Shared fixtures plus a terminal summary for the acceptance criteria."""

from __future__ import annotations

import pytest

# acceptance test name -> printed criterion label, in spec order
ACCEPTANCE_LABELS = {
    "test_criterion1_constants": "constants (c_j recursion, cstar agreement)",
    "test_criterion2_covariance_oracle": "covariance oracle (quadrature vs closed form, RL identity)",
    "test_criterion3_exact_mean": "exact mean (GEM(1) n=1e6 vs Ewens oracle)",
    "test_criterion4_clt_variance": "CLT variance band (GEM(1) n=1e9)",
    "test_criterion4_clt_ks": "CLT KS normality (GEM(1) n=1e9)",
    "test_criterion5_multilevel_covariance": "multilevel covariance (GEM(1) n=1e9, j=1,2)",
    "test_criterion6_consistency": "consistency trend (sup-gap, n=1e3..1e7)",
    "test_criterion7_poisson_kingman_gamma": "Poisson-Kingman gamma instance",
    "test_criterion8_structural_invariants": "structural invariants on every replicate",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "location", (None, None, ""))[2].split("[")[0]
            if name in ACCEPTANCE_LABELS:
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((list(ACCEPTANCE_LABELS).index(name), name, status))
    if not lines:
        return
    tw = terminalreporter
    tw.section("acceptance criteria")
    for _, name, status in sorted(lines):
        tw.write_line(f"{status}  {ACCEPTANCE_LABELS[name]}")
