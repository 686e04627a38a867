"""Independent oracle for the NF4 codebook golden values in test_quant.cpp."""
import mpmath as mp

mp.mp.dps = 50
OFFSET = mp.mpf("0.9677083")


def quantile(p):
    return mp.sqrt(2) * mp.erfinv(2 * p - 1)


def linspace(a, b, n):
    return [a + (b - a) * i / (n - 1) for i in range(n)]


pos = [quantile(p) for p in linspace(OFFSET, mp.mpf("0.5"), 9)[:-1]]
neg = [-quantile(p) for p in linspace(OFFSET, mp.mpf("0.5"), 8)[:-1]]
values = sorted(pos + [mp.mpf(0)] + neg)
top = max(abs(v) for v in values)
for v in values:
    print(mp.nstr(v / top, 20))
