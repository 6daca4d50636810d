"""Price a strike curve with the fractional-FFT engine and compare it with the
Black-Scholes closed form, then show Kou and VG curves on the same strikes.

    python demos/frft_vs_closed_form.py
"""

import numpy as np

from gatedpricer.baselines import pricing
from gatedpricer.baselines.black_scholes import bs_price
from gatedpricer.baselines.levy import LevyModelParams


def main():
    S, r = 100.0, 0.02
    strikes = S * np.linspace(0.7, 1.3, 7)
    models = {
        "bs": LevyModelParams("bs", sigma=0.2, S=S, r=r),
        "vg": LevyModelParams("vg", sigma=0.2, nu=0.3, theta=-0.15, S=S, r=r),
        "kou": LevyModelParams("kou", sigma=0.1, lam=1.0, p_up=0.4, eta1=10.0, eta2=5.0, S=S, r=r),
    }
    for days in (7, 30, 90):
        tau = days / 365
        closed = bs_price(0.2, S, strikes, r, 0.0, tau)
        curves = {name: pricing.fft_price_curve(p, tau, strikes) for name, p in models.items()}
        print(f"tau = {days} days; max |frft - closed form| for BS = {np.max(np.abs(curves['bs'] - closed)):.2e}")
        print("      K   bs(closed)     bs(frft)           vg          kou")
        for i, K in enumerate(strikes):
            print(f"{K:7.1f} {closed[i]:12.6f} {curves['bs'][i]:12.6f} {curves['vg'][i]:12.6f} {curves['kou'][i]:12.6f}")
        print()


if __name__ == "__main__":
    main()
