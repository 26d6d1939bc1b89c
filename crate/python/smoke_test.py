"""Smoke test for the rankfolio extension module.

Build and install first:  pip install maturin && maturin develop -m crates/py/Cargo.toml
"""

import math
import tempfile
from pathlib import Path

import rankfolio as rf


def main():
    assert abs(rf.annualize(6.98, 29) - 0.307) < 1e-3
    assert rf.hedged_return(0.20, 0.01) == 0.19
    assert abs(rf.excess_return(0.167, 0.06) - 0.107) < 1e-12
    assert rf.vl_bin_counts(14) == [1, 3, 6, 3, 1]

    n = 1452
    y = [-0.254 + 0.346 * math.atanh(1 - 0.000689 * r) for r in range(1, n + 1)]
    fit = rf.fit_arctanh(y)
    assert abs(fit.s - 0.000689) < 1e-6, fit
    theta1, theta2, _, _ = rf.decompose_weights(y, fit, rf.fit_arctanh(y[::-1]))
    assert theta1 > 0.99 and abs(theta1 + theta2 - 1) < 1e-12

    assert rf.persistence_measure([1, 1, 0, 0, 1, 1, 0, 0]) == 0.0
    assert rf.mc_pvalue(0.143, 29, trials=20_000, seed=1) < 0.01

    churn = rf.simulate_bin_churn(300, 10, 0.0)
    assert churn["churn_fraction"] == 0.0

    market = rf.generate_market(n_equities=240, n_quarters=16, seed=2)
    with tempfile.TemporaryDirectory() as tmp:
        market.write(tmp)
        report = rf.run_pipeline(str(Path(tmp) / "panel.csv"), ["mgl", "random"], mc_trials=1000)
        assert report.predictors == ["mgl", "random"]
        assert len(report.quarters) == 14
        cd = report.figure("cd-returns").splitlines()
        assert cd[0] == "cd,mgl,random" and len(cd) == 11
        assert len(report.to_dict()["predictors"][0]["summary"]) == 30
        again = rf.run_pipeline(str(Path(tmp) / "panel.csv"), ["mgl", "random"], mc_trials=1000)
        assert again.to_json() == report.to_json()
    print("rankfolio", rf.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
