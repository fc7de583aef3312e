"""Symbolic expansion of the closed-loop characteristic polynomial.

Builds the loop from the raw second-order matrices (mass, damping, stiffness)
and the actuator transfer function, then expands

    det(D(s) * M0(s) + wn^2 * Cf * B k(s)) / D(s),   D(s) = s^2 + 2 zeta wn s + wn^2

without using any pre-expanded closed form. Prints exact rational coefficients
for one fixed parameter set; the values are frozen into the test suite.
"""

import sympy as sp

s = sp.symbols("s")
R = sp.Rational

params = dict(m=R(1750), Iz=R(2875), Cf=R(87000), Cr=R(93000), a=R(117, 100), b=R(169, 100))
act = dict(zeta=R(4056, 10000), wn=R(214813, 10000))
V0 = R(22)
ke, kt, kw = R(6, 100), R(96, 100), R(8, 100)


def main():
    m, Iz, Cf, Cr, a, b = (params[k] for k in ("m", "Iz", "Cf", "Cr", "a", "b"))
    zeta, wn = act["zeta"], act["wn"]
    M = sp.diag(m, Iz)
    C = sp.Matrix([[(Cf + Cr) / V0, (a * Cf - b * Cr) / V0],
                   [(a * Cf - b * Cr) / V0, (a**2 * Cf + b**2 * Cr) / V0]])
    L = sp.Matrix([[0, -(Cf + Cr)], [0, -(a * Cf - b * Cr)]])
    B = sp.Matrix([1, a])
    M0 = M * s**2 + C * s + L
    D = s**2 + 2 * zeta * wn * s + wn**2
    k = sp.Matrix([[ke, kt + kw * s]])
    full = sp.expand((D * M0 + wn**2 * Cf * B * k).det())
    q, r = sp.div(full, D, s)
    assert r == 0
    poly = sp.Poly(q, s)
    print("coefficients (highest power first):")
    for c in poly.all_coeffs():
        print(repr(float(c)), "  # exact", c)
    # constant-coefficient identity
    print("wn^2 ke Cf (a+b) Cr =", float(wn**2 * ke * Cf * (a + b) * Cr))
    # open loop det(M0)/s^2
    print("det(M0)/s^2 =", sp.Poly(sp.cancel(M0.det() / s**2), s).all_coeffs())


if __name__ == "__main__":
    main()
