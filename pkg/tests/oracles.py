"""Slow per-pixel reference implementations used to check the vectorized code.

Nothing here imports scipy or cv2: every neighbourhood, convolution and
flood fill is written out with plain loops.
"""

from __future__ import annotations

import math
from collections import deque
from fractions import Fraction


def dilate(mask, k):
    """k x k square dilation; a set pixel covers offsets -((k-1)//2) .. k//2 around itself."""
    h, w = len(mask), len(mask[0])
    lo, hi = -((k - 1) // 2), k // 2
    out = [[False] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            if not mask[y][x]:
                continue
            for dy in range(lo, hi + 1):
                for dx in range(lo, hi + 1):
                    if 0 <= y + dy < h and 0 <= x + dx < w:
                        out[y + dy][x + dx] = True
    return out


def boundary_seed(alpha):
    h, w = len(alpha), len(alpha[0])
    frac = [[0.0 < alpha[y][x] < 1.0 for x in range(w)] for y in range(h)]
    if any(any(row) for row in frac):
        return frac
    seed = [[False] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            near = [alpha[j][i] for j in range(y - 1, y + 2) for i in range(x - 1, x + 2)
                    if 0 <= j < h and 0 <= i < w]
            seed[y][x] = 0.0 in near and 1.0 in near
    return seed


def sad(pred, gt, unknown):
    """Per-pixel float differences, summed exactly as rationals and rounded once."""
    total = Fraction(0)
    for p_row, g_row, u_row in zip(pred, gt, unknown):
        for p, g, u in zip(p_row, g_row, u_row):
            if u:
                total += Fraction(abs(float(p) - float(g)))
    return float(total)


def mse(pred, gt, unknown):
    total, count = Fraction(0), 0
    for p_row, g_row, u_row in zip(pred, gt, unknown):
        for p, g, u in zip(p_row, g_row, u_row):
            if u:
                # same float rounding of the square as the vectorized code, then an exact sum
                d = float(p) - float(g)
                total += Fraction(d * d)
                count += 1
    return float(total) / count


def gaussian_derivative_x(sigma):
    radius = math.ceil(3 * sigma)
    taps = range(-radius, radius + 1)
    g = [math.exp(-u * u / (2 * sigma * sigma)) / (sigma * math.sqrt(2 * math.pi)) for u in taps]
    dg = [-u * gv / (sigma * sigma) for u, gv in zip(taps, g)]
    kernel = [[g[r] * dg[c] for c in range(len(taps))] for r in range(len(taps))]
    norm = math.sqrt(sum(v * v for row in kernel for v in row))
    return [[v / norm for v in row] for row in kernel], radius


def _reflect(i, n):
    """Half-sample symmetric index: -1 -> 0, n -> n - 1."""
    while i < 0 or i >= n:
        i = -i - 1 if i < 0 else 2 * n - i - 1
    return i


def convolve(image, kernel, radius):
    """True convolution (kernel flipped) with reflected borders."""
    h, w = len(image), len(image[0])
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for a in range(-radius, radius + 1):
                for b in range(-radius, radius + 1):
                    acc += kernel[a + radius][b + radius] * image[_reflect(y - a, h)][_reflect(x - b, w)]
            out[y][x] = acc
    return out


def gradient_error(pred, gt, unknown, sigma=1.4):
    kx, radius = gaussian_derivative_x(sigma)
    ky = [list(col) for col in zip(*kx)]

    def magnitude(img):
        gx, gy = convolve(img, kx, radius), convolve(img, ky, radius)
        return [[math.hypot(a, b) for a, b in zip(ra, rb)] for ra, rb in zip(gx, gy)]

    mp, mg = magnitude(pred), magnitude(gt)
    total = 0.0
    for y, row in enumerate(unknown):
        for x, u in enumerate(row):
            if u:
                total += (mp[y][x] - mg[y][x]) ** 2
    return total


NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def flood(mask, starts):
    h, w = len(mask), len(mask[0])
    seen = [[False] * w for _ in range(h)]
    queue = deque((y, x) for y, x in starts if mask[y][x])
    for y, x in queue:
        seen[y][x] = True
    while queue:
        y, x = queue.popleft()
        for dy, dx in NEIGHBOURS:
            j, i = y + dy, x + dx
            if 0 <= j < h and 0 <= i < w and mask[j][i] and not seen[j][i]:
                seen[j][i] = True
                queue.append((j, i))
    return seen


def largest_component(mask):
    """Largest 4-connected set; ties go to the component met first in raster order."""
    h, w = len(mask), len(mask[0])
    taken = [[False] * w for _ in range(h)]
    best = []
    for y in range(h):
        for x in range(w):
            if mask[y][x] and not taken[y][x]:
                comp = flood(mask, [(y, x)])
                cells = [(j, i) for j in range(h) for i in range(w) if comp[j][i]]
                for j, i in cells:
                    taken[j][i] = True
                if len(cells) > len(best):
                    best = cells
    return best


def connectivity_error(pred, gt, unknown, theta=0.15, delta=0.1):
    h, w = len(pred), len(pred[0])
    source = largest_component([[pred[y][x] == 1.0 and gt[y][x] == 1.0 for x in range(w)] for y in range(h)])
    if not source:
        return 0.0
    levels = [j * delta for j in range(int(math.floor(1.0 / delta + 1e-9)) + 1)]

    def phi(alpha):
        level = [[0.0] * w for _ in range(h)]
        for t in levels:
            reach = flood([[alpha[y][x] >= t for x in range(w)] for y in range(h)], source)
            for y in range(h):
                for x in range(w):
                    if reach[y][x]:
                        level[y][x] = t
        out = []
        for y in range(h):
            row = []
            for x in range(w):
                d = alpha[y][x] - level[y][x]
                row.append(1.0 - d if d >= theta else 1.0)
            out.append(row)
        return out

    pp, pg = phi(pred), phi(gt)
    total = Fraction(0)
    for y in range(h):
        for x in range(w):
            if unknown[y][x]:
                total += Fraction(abs(pp[y][x] - pg[y][x]))
    return float(total)
