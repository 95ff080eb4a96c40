"""Regenerate the bundled approximate 39-bus dataset.

Line reactances, loads, dispatch and inertia constants follow the public
New England 39-bus case (100 MVA base). Line susceptance is 1/x, the slack
generator at bus 31 is rebalanced so total injection is zero, non-generator
buses get a small inertia, and every bus has unit damping. M and E are given
per Hz, bounds in Hz.
"""

import json
from pathlib import Path

LINES = """1 2 .0411; 1 39 .025; 2 3 .0151; 2 25 .0086; 2 30 .0181; 3 4 .0213; 3 18 .0133;
4 5 .0128; 4 14 .0129; 5 6 .0026; 5 8 .0112; 6 7 .0092; 6 11 .0082; 6 31 .025; 7 8 .0046;
8 9 .0363; 9 39 .025; 10 11 .0043; 10 13 .0043; 10 32 .02; 11 12 .0435; 12 13 .0435;
13 14 .0101; 14 15 .0217; 15 16 .0094; 16 17 .0089; 16 19 .0195; 16 21 .0135; 16 24 .0059;
17 18 .0082; 17 27 .0173; 19 20 .0138; 19 33 .0142; 20 34 .018; 21 22 .014; 22 23 .0096;
22 35 .0143; 23 24 .035; 23 36 .0272; 25 26 .0323; 25 37 .0232; 26 27 .0147; 26 28 .0474;
26 29 .0625; 28 29 .0151; 29 38 .0156"""

LOAD_MW = {3: 322, 4: 500, 7: 233.8, 8: 522, 12: 7.5, 15: 320, 16: 329, 18: 158, 20: 628,
           21: 274, 23: 247.5, 24: 308.6, 25: 224, 26: 139, 27: 281, 28: 206, 29: 283.5,
           31: 9.2, 39: 1104}
GEN_MW = {30: 250, 32: 650, 33: 632, 34: 508, 35: 650, 36: 560, 37: 540, 38: 830, 39: 1000}
H = {30: 42, 31: 30.3, 32: 35.8, 33: 28.6, 34: 26, 35: 34.8, 36: 26.4, 37: 24.3, 38: 34.5,
     39: 500}
BASE_MVA = 100.0
F_NOMINAL = 60.0


def build() -> dict:
    gen = dict(GEN_MW)
    gen[31] = sum(LOAD_MW.values()) - sum(GEN_MW.values())
    buses = []
    for i in range(1, 40):
        p = (gen.get(i, 0.0) - LOAD_MW.get(i, 0.0)) / BASE_MVA
        M = 2.0 * H[i] / F_NOMINAL if i in H else 0.1
        buses.append({"id": i, "M": M, "E": 1.0, "p": round(p, 12), "generator": i in H})
    lines = []
    for tok in LINES.replace("\n", " ").split(";"):
        a, b, x = tok.split()
        lines.append({"from": int(a), "to": int(b), "b": 1.0 / float(x)})
    ctrl = [{"id": i, "omega_lo": -0.2, "omega_hi": 0.2, "omega_lo_th": -0.1,
             "omega_hi_th": 0.1, "gamma": 2.0} for i in (30, 31, 32)]
    return {"name": "ieee39-approx", "frequency_unit": "hz", "buses": buses, "lines": lines,
            "controlled": ctrl}


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "freqguard" / "data" / "ieee39.json"
    out.write_text(json.dumps(build(), indent=1) + "\n")
    print(out)
