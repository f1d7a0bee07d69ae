from __future__ import annotations

U64_MAX = (1 << 64) - 1


def comm_volume(batch: int, seq_len: int, dim: int, bytes_per_elem: int) -> int:
    """Bytes needed to ship a ``[batch, seq_len, dim]`` tensor.

    Raises ``OverflowError`` if the product does not fit the u64 size field
    used on the wire.
    """
    total = 1
    for name, v in (("batch", batch), ("seq_len", seq_len), ("dim", dim), ("bytes_per_elem", bytes_per_elem)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
        total *= int(v)
        if total > U64_MAX:
            raise OverflowError(f"communication volume exceeds 2**64 - 1 bytes at {name}")
    return total
