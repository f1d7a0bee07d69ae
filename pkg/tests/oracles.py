"""Independent reference implementations and frozen constants for tests.

Nothing here imports the package's numeric code: each helper is a plain
scalar loop so it can serve as a second opinion.
"""

from __future__ import annotations

import math
import struct

import numpy as np

# 128 * 4096 * 151936 * 2 worked by hand: 524288 * 151936 = 79_658_221_568; doubled.
LARGE_LOGIT_BYTES = 159_316_443_136
LARGE_HIDDEN_BYTES = 128 * 4096 * 4096 * 2  # 4_294_967_296

# KL((0.5, 0.5) || (0.25, 0.75)) = 0.5 ln 2 + 0.5 ln(2/3)
FKL_HALF_QUARTER = 0.14384103622589042

# "KDT1", dtype F32 (0), rank 2, dims 2 and 3
KDT1_HEADER_F32_2x3 = b"KDT1\x00\x02\x02\x00\x00\x00\x03\x00\x00\x00"

# pi truncated to 8 significant mantissa bits: 0x40490FDB -> 0x40490000
PI_BF16E = 3.140625


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-major triple loop, float32 products accumulated left to right."""
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n), np.float32)
    for i in range(m):
        for j in range(n):
            acc = np.float32(0)
            for kk in range(k):
                acc = np.float32(acc + np.float32(a[i, kk] * b[kk, j]))
            out[i, j] = acc
    return out


def bf16_truncate(x: float) -> float:
    (bits,) = struct.unpack("<I", struct.pack("<f", x))
    return struct.unpack("<f", struct.pack("<I", bits & 0xFFFF0000))[0]


def _softmax(row, temperature=1.0):
    z = [v / temperature for v in row]
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def naive_divergence(kind: str, teacher_row, student_row, temperature=1.0) -> float:
    p = _softmax([float(v) for v in teacher_row], temperature)
    q = _softmax([float(v) for v in student_row], temperature)
    floor = 1e-12

    def kl(a, b):
        return sum(x * (math.log(max(x, floor)) - math.log(max(y, floor))) for x, y in zip(a, b))

    if kind == "fkl":
        return kl(p, q)
    if kind == "rkl":
        return kl(q, p)
    if kind == "jsd":
        m = [(x + y) / 2 for x, y in zip(p, q)]
        return 0.5 * kl(p, m) + 0.5 * kl(q, m)
    if kind == "tvd":
        return 0.5 * sum(abs(x - y) for x, y in zip(p, q))
    raise ValueError(kind)


def naive_masked_loss(kind, teacher, student, mask, temperature=1.0) -> float:
    total, count = 0.0, 0
    for idx in np.ndindex(*mask.shape):
        if mask[idx]:
            total += naive_divergence(kind, teacher[idx], student[idx], temperature)
            count += 1
    return total / max(1, count)


def spearman(a, b) -> float:
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    ra -= ra.mean()
    rb -= rb.mean()
    return float((ra * rb).sum() / math.sqrt((ra * ra).sum() * (rb * rb).sum()))
