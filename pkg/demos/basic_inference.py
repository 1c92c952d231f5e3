"""Robust and bootstrap tests on one simulated dataset with many dummy controls."""

from __future__ import annotations

from manyboot import robust_fit, t_test
from manyboot.bootstrap import BootstrapConfig, wild_bootstrap_test
from manyboot.simulation import SimulationDesign, draw_design


def main() -> None:
    # n = 100 observations, 50 sparse dummy controls, true beta = 1
    data = draw_design(SimulationDesign.preset("A", 0.5), rep_index=0)
    fit = robust_fit(data)
    print(f"beta_hat = {fit.beta[0]:.4f}, min leverage = {fit.ctx.min_leverage:.3f}")
    if fit.hck_unavailable:
        print("HCK system is singular here, so HCK reports the HC0 value")

    for method in ("hc0", "hck", "hca"):
        res = t_test(fit, method, beta0=1.0)
        print(f"{method.upper():<4} se {res.variance ** 0.5:.4f}  t {res.t:+.3f}  normal p {res.p_normal:.3f}")

    for weights in ("gaussian", "rademacher"):
        out = wild_bootstrap_test(data, 1.0, BootstrapConfig(B=999, weights=weights, seed=42))
        print(f"wild bootstrap ({weights}): t {out.statistic:+.3f}  p {out.p_value:.3f}  "
              f"a_n {out.adjustment.a_n:.3f}")


if __name__ == "__main__":
    main()
