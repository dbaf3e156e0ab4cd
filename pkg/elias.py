"""Elias omega codes and the global-clock synchronization sequences a(t), a'(t).

Bit strings are plain ``str`` objects over ``"0"``/``"1"``, most significant
bit first. All logarithms here are base 2.
"""
import math

import numpy as np

from errors import InvalidParameterError

# a-values at or above this bound are reported as SATURATION + parity by the
# vectorized decoder; 2**a' is then far outside double range either way.
SATURATION = 1 << 12
_SATURATION_WIDTH = SATURATION.bit_length() - 1

_BITS_IN_T = 62


def _require_positive(name, value):
    if value < 1:
        raise InvalidParameterError(f"{name} must be a positive integer, got {value}")


def bin_bits(N):
    """Bin(N): the (1 + floor(log2 N))-bit binary representation of N."""
    _require_positive("N", N)
    return format(N, "b")


def encode(N):
    """Code(N) = Bin(N_{k-1}) ... Bin(N_1) 0."""
    _require_positive("N", N)
    groups = []
    while N > 1:
        group = format(N, "b")
        groups.append(group)
        N = len(group) - 1
    return "".join(reversed(groups)) + "0"


def code_len(N):
    """Length of Code(N) without building the string."""
    _require_positive("N", N)
    length = 1
    while N > 1:
        length += N.bit_length()
        N = N.bit_length() - 1
    return length


def decode_prefix(stream):
    """Decode the unique N whose code is a prefix of ``stream`` padded with zeros."""
    if any(ch not in "01" for ch in stream):
        raise InvalidParameterError("stream must contain only '0' and '1'")

    def bit(i):
        return stream[i] if i < len(stream) else "0"

    value, pos = 1, 0
    while bit(pos) == "1":
        width = value + 1
        chunk = stream[pos:pos + width].ljust(width, "0")
        value, pos = int(chunk, 2), pos + width
    return value


def _reverse_bits(chunk, width):
    return int(format(chunk, f"0{width}b")[::-1], 2)


def a_of(t):
    """a(t): decode of the little-endian bit expansion of t."""
    _require_positive("t", t)
    value, pos = 1, 0
    while (t >> pos) & 1:
        width = value + 1
        chunk = (t >> pos) & ((1 << width) - 1)
        value, pos = _reverse_bits(chunk, width), pos + width
    return value


def signed_from_a(a):
    """(-1)^(a mod 2) * floor(a / 2)."""
    return -(a // 2) if a % 2 else a // 2


def a_prime_of(t):
    """a'(t), the signed synchronization exponent."""
    return signed_from_a(a_of(t))


def _bits(t, pos):
    safe = np.minimum(pos, _BITS_IN_T)
    return np.where(pos < _BITS_IN_T, (t >> safe) & 1, 0)


def a_values(ts):
    """Vectorized a(t); values >= SATURATION come back as SATURATION + parity."""
    t = np.asarray(ts, dtype=np.int64)
    if t.size and t.min() < 1:
        raise InvalidParameterError("every t must be a positive integer")
    result = np.empty(t.shape, dtype=np.int64)
    flat_t = t.reshape(-1)
    flat_out = result.reshape(-1)
    value = np.ones(flat_t.shape, dtype=np.int64)
    pos = np.zeros(flat_t.shape, dtype=np.int64)
    idx = np.arange(flat_t.size)
    while idx.size:
        tt, vv, pp = flat_t[idx], value[idx], pos[idx]
        done = _bits(tt, pp) == 0
        flat_out[idx[done]] = vv[done]
        keep = ~done
        idx, tt, vv, pp = idx[keep], tt[keep], vv[keep], pp[keep]
        if not idx.size:
            break
        width = vv + 1
        wide = width > _SATURATION_WIDTH
        if wide.any():
            # The group decodes to >= SATURATION. If another group follows it
            # runs past bit 62 and ends in 0, so the final value is even.
            end = pp[wide] + width[wide]
            follows = _bits(tt[wide], end) == 1
            parity = np.where(follows, 0, _bits(tt[wide], end - 1))
            flat_out[idx[wide]] = SATURATION + parity
        narrow = ~wide
        idx, tt, pp, width = idx[narrow], tt[narrow], pp[narrow], width[narrow]
        decoded = np.zeros(idx.shape, dtype=np.int64)
        for k in range(int(width.max()) if width.size else 0):
            inside = k < width
            decoded = np.where(inside, (decoded << 1) | _bits(tt, pp + k), decoded)
        value[idx] = decoded
        pos[idx] = pp + width
    return result


def a_prime_values(ts):
    """Vectorized a'(t) built on a_values."""
    a = a_values(ts)
    return np.where(a % 2 == 1, -(a // 2), a // 2)


def iterated_log2(x, i):
    """log^{(i)}(x) with log^{(0)}(x) = x."""
    for _ in range(i):
        x = math.log2(x)
    return x


def log_star(x):
    """Number of times log2 must be applied before the value drops to <= 1."""
    if x <= 0:
        raise InvalidParameterError(f"log_star needs x > 0, got {x}")
    count = 0
    while x > 1:
        x = math.log2(x)
        count += 1
    return count


def zeta(x):
    """(2x)(2 log x)(2 log^{(2)} x) ... with every factor clamped at 2."""
    if x < 2:
        raise InvalidParameterError(f"zeta needs x >= 2, got {x}")
    product = 1.0
    value = float(x)
    for _ in range(log_star(x) + 1):
        product *= 2.0 * max(value, 1.0)
        if value > 1:
            value = math.log2(value)
    return product
