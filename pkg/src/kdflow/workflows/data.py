"""Datasets of (prompt, response) pairs and deterministic batch construction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from ..tensor import make_rng
from .config import ConfigError


class DatasetError(ConfigError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__("dataset_path", where + message)


@dataclass(frozen=True)
class KDSample:
    prompt_ids: tuple[int, ...]
    response_ids: tuple[int, ...]

    @property
    def tokens(self) -> np.ndarray:
        return np.array(self.prompt_ids + self.response_ids, dtype=np.int32)

    @property
    def mask(self) -> np.ndarray:
        """1 on response positions, 0 on prompt positions."""
        return np.array([0] * len(self.prompt_ids) + [1] * len(self.response_ids), dtype=np.int32)


def _id_list(record: dict, key: str, line: int) -> tuple[int, ...]:
    value = record.get(key)
    if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise DatasetError(f"field {key!r} must be an array of integers", line)
    if any(v < 0 for v in value):
        raise DatasetError(f"field {key!r} contains a negative token id", line)
    return tuple(value)


def iter_dataset(path: str | Path) -> Iterator[KDSample]:
    try:
        f = open(path)
    except OSError as e:
        raise DatasetError(f"cannot open {path}: {e}") from None
    with f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"parse error: {e.msg}", lineno) from None
            if not isinstance(record, dict):
                raise DatasetError("record must be an object", lineno)
            prompt = _id_list(record, "prompt_ids", lineno)
            response = _id_list(record, "response_ids", lineno)
            if not prompt:
                raise DatasetError("empty prompt", lineno)
            if not response:
                raise DatasetError("empty response", lineno)
            yield KDSample(prompt, response)


def load_dataset(path: str | Path) -> list[KDSample]:
    samples = list(iter_dataset(path))
    if not samples:
        raise DatasetError(f"dataset {path} is empty")
    return samples


def write_dataset(samples, path: str | Path) -> None:
    with open(path, "w") as f:
        for s in samples:
            f.write(json.dumps({"prompt_ids": list(s.prompt_ids), "response_ids": list(s.response_ids)}) + "\n")


# -- batching ------------------------------------------------------------------------


@dataclass
class MicroBatch:
    tokens: np.ndarray  # int32 [B, T]
    loss_mask: np.ndarray  # float32 [B, T]; position t scores the prediction of token t+1

    @property
    def shape(self) -> tuple[int, int]:
        return self.tokens.shape


@dataclass
class GlobalBatch:
    step: int
    epoch: int
    micro: list[MicroBatch]

    @property
    def denom(self) -> float:
        """Unmasked positions across all micro-batches (the loss normaliser)."""
        return float(sum(int(m.loss_mask.sum()) for m in self.micro))


def collate(samples: list[KDSample], grad_accum: int, max_len: int, vocab_size: int, step: int = 0,
            epoch: int = 0) -> GlobalBatch:
    """Pad samples to a common length and split into ``grad_accum`` micro-batches.

    Sequences are right-truncated to ``max_len`` and right-padded with id 0 to
    the longest sequence in the global batch. The loss mask is shifted so that
    position ``t`` is scored iff token ``t + 1`` is a response token.
    """
    lengths = [min(len(s.prompt_ids) + len(s.response_ids), max_len) for s in samples]
    t = max(2, max(lengths))
    tokens = np.zeros((len(samples), t), np.int32)
    mask = np.zeros((len(samples), t), np.float32)
    for i, (s, n) in enumerate(zip(samples, lengths)):
        ids = s.tokens[:n]
        if ids.size and ids.max() >= vocab_size:
            bad = int(np.argmax(ids >= vocab_size))
            raise DatasetError(f"sample {i} of step {step}: token id {int(ids[bad])} at position {bad} >= vocab {vocab_size}")
        tokens[i, :n] = ids
        mask[i, : n - 1] = s.mask[1:n]
    mb = len(samples) // grad_accum
    micro = [MicroBatch(tokens[j * mb : (j + 1) * mb], mask[j * mb : (j + 1) * mb]) for j in range(grad_accum)]
    return GlobalBatch(step, epoch, micro)


class BatchBuilder:
    """Deterministic global batches cycling through a dataset.

    The visiting order is a seeded permutation fixed for the whole run, so
    epoch ``e`` visits samples in the same order as epoch 0.
    """

    def __init__(self, samples: list[KDSample], global_batch: int, grad_accum: int, max_len: int,
                 vocab_size: int, seed: int):
        if not samples:
            raise DatasetError("dataset is empty")
        self.samples = samples
        self.global_batch = global_batch
        self.grad_accum = grad_accum
        self.max_len = max_len
        self.vocab_size = vocab_size
        self.order = make_rng(seed, 0x6F72646572).permutation(len(samples))

    def indices(self, step: int) -> tuple[int, list[int]]:
        start = step * self.global_batch
        n = len(self.samples)
        return start // n, [int(self.order[(start + i) % n]) for i in range(self.global_batch)]

    def batch(self, step: int) -> GlobalBatch:
        epoch, idx = self.indices(step)
        gb = collate([self.samples[i] for i in idx], self.grad_accum, self.max_len, self.vocab_size, step, epoch)
        if gb.denom == 0:
            raise DatasetError(f"step {step}: no response tokens survive truncation to max_len {self.max_len}")
        return gb

    def prompts(self, step: int) -> tuple[int, list[tuple[int, ...]]]:
        epoch, idx = self.indices(step)
        return epoch, [self.samples[i].prompt_ids for i in idx]
