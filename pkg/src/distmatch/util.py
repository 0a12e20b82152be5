"""Seed derivation, worker-pool sizing, config parsing, atomic file output."""

from __future__ import annotations

import hashlib
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

from distmatch.errors import ConfigError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

THREADS_ENV_VAR = "DISTMATCH_THREADS"


def _mix64(z: int) -> int:
    """splitmix64 finalizer: bijective 64-bit avalanche mix."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, *indices: int) -> int:
    """Deterministic 64-bit child seed from a master seed and integer indices.

    Chains the splitmix64 mixing function over (master_seed, i1, i2, ...),
    so every (master, index path) pair maps to an independent, reproducible
    stream regardless of platform.
    """
    z = _mix64(master_seed & _MASK64)
    for i in indices:
        z = _mix64((z + _GOLDEN * ((int(i) + 1) & _MASK64)) & _MASK64)
    return z


def derive_seed_from_key(master_seed: int, key: str | bytes) -> int:
    """Deterministic 64-bit child seed keyed by an arbitrary string or bytes.

    The key is hashed with SHA-256 and folded into the master seed with
    splitmix64, giving stable seeds for structured keys (grid identities,
    participant ids) independent of iteration order.
    """
    data = key.encode() if isinstance(key, str) else key
    digest = hashlib.sha256(data).digest()
    folded = int.from_bytes(digest[:8], "little")
    return _mix64((_mix64(master_seed & _MASK64) ^ folded) & _MASK64)


def fresh_seed() -> int:
    """Entropy-backed 64-bit seed, for runs where the user supplied none."""
    return int.from_bytes(os.urandom(8), "little")


def resolve_threads(requested: int | None = None) -> int:
    """Worker count: explicit argument, then DISTMATCH_THREADS, then CPU count."""
    if requested is not None:
        if requested < 1:
            raise ConfigError(f"thread count must be >= 1, got {requested}")
        return requested
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {env!r}") from None
        if value < 1:
            raise ConfigError(f"{THREADS_ENV_VAR} must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def read_kv_config(path: str | Path, allowed_keys: set[str]) -> dict[str, str]:
    """Parse a `key = value` config file; '#' starts a comment, unknown keys are rejected."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in allowed_keys:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} (allowed: {sorted(allowed_keys)})")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


@contextmanager
def atomic_write(path: str | Path, mode: str = "w"):
    """Write to a temp file in the target directory, then atomically rename.

    The destination is never left partially written: on any failure the temp
    file is removed and the old destination (if any) is untouched.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    tmp = Path(tmp_name)
    try:
        with os.fdopen(fd, mode) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
