"""Regenerate the Chebyshev table used by ``fdot._special.erfcx``.

erfcx(x) = t * g(t) for x >= 0 with t = K / (x + K); g is smooth on [0, 1]
and is expanded in Chebyshev polynomials of u = 2 t - 1.

    python tools/erfcx_coefficients.py
"""
import mpmath as mp

mp.mp.dps = 60
K = mp.mpf(4)
N = 64


def g(t):
    if t == 0:
        return 1 / (mp.sqrt(mp.pi) * K)
    x = K * (1 - t) / t
    return mp.erfc(x) * mp.exp(x * x) / t


def main():
    nodes = [mp.cos(mp.pi * (k + mp.mpf(1) / 2) / N) for k in range(N)]
    vals = [g((u + 1) / 2) for u in nodes]
    coef = []
    for j in range(N):
        s = mp.fsum(v * mp.cos(mp.pi * j * (k + mp.mpf(1) / 2) / N) for k, v in enumerate(vals))
        coef.append(2 * s / N)
    coef[0] /= 2
    while abs(coef[-1]) < mp.mpf("1e-18"):
        coef.pop()
    for c in coef:
        print(f"    {mp.nstr(c, 20, min_fixed=-1, max_fixed=0)},")


if __name__ == "__main__":
    main()
