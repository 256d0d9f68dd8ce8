"""Smoke test for the esoccp_py extension.

Build first: pip install --no-build-isolation -e crates/esoccp-py
"""

import json
import math

import esoccp_py as ep


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok   {what}")


def main():
    lcp = ep.EsocLcp.demo()
    check((lcp.k, lcp.l) == (3, 2), "demo dimensions")
    sol = lcp.solve(solver="lm")
    check(sol["status"] == "Converged" and sol["verified"], "LM converges and verifies")
    expected = [1.5018, 0.2834, 1.0356]
    check(all(abs(a - b) < 1e-4 for a, b in zip(sol["x"], expected)), "solution x")
    check(lcp.classify(sol["x"], sol["u"])["case"] == "IV", "pair falls in case IV")
    again = ep.EsocLcp.from_json(lcp.to_json())
    check(again.solve(solver="newton")["verified"], "JSON round trip, Newton")

    pf = ep.Portfolio.example_item_iii()
    feas = pf.feasibility()
    check(abs(feas["iii_value"] + 0.0294) < 1e-3, "item iii value")
    men = pf.men()
    check(abs(sum(men["w"]) - 1.0) < 1e-12, "MEN weights sum to 1")
    check(abs(sum(pf.mv(identity_cov=True)) - 1.0) < 1e-12, "MV weights sum to 1")
    try:
        ep.Portfolio(pf_rows(), [0.5, 0.5], 1e-4).men()
        check(False, "infeasible MEN raises")
    except RuntimeError as e:
        check("infeasible" in str(e), "infeasible MEN raises")

    v = ep.qc_analyze([[-1, 0, 0], [0, -2, 0], [0, 0, 3]], cone="orthant")
    check(v["verdict"] == "not_quasi_convex" and v["witness"] is not None, "diag(-1,-2,3) refuted")
    h = [[float(a == b) - 2 * a * b / 14 for b in (1, 2, 3)] for a in (1, 2, 3)]
    check(ep.qc_analyze(h)["verdict"] == "quasi_convex", "Householder quasi-convex")
    try:
        ep.qc_analyze([[1, 2], [0, 1]])
        check(False, "non-symmetric rejected")
    except ValueError:
        check(True, "non-symmetric rejected")

    model = ep.ScenarioModel.demo(7)
    root = model.solve_mean_fb(1000)
    check(root["residual"] < 1e-7, "mean FB root")
    rep = model.solve_saa([10, 100], k_max=20)
    check(len(rep["stages"]) >= 1, "SAA stages")

    rows = ep.probability_experiment([3], [5, 500], [2.0], trials=200, seed=3)
    check(rows[-1]["iv_rate"] >= rows[0]["iv_rate"], "hold rate grows with T")

    plus, minus = ep.lorentz_projection([0.0, 3.0, 4.0])
    check(abs(plus[0] - 2.5) < 1e-12 and abs(minus[0] - 2.5) < 1e-12, "Lorentz projection")
    check(math.isclose(ep.fb_scalar(3.0, 4.0), -2.0), "fb_scalar")
    json.dumps(sol)
    print("all smoke checks passed")


def pf_rows():
    return [[0.1, 0.9], [0.5, 0.5]]


if __name__ == "__main__":
    main()
