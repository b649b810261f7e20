"""
Cache of full-rank whitening models, keyed by cube identity.

Two implementations share one interface (get/put/pop bytes):
- InMemoryModelStore: process-local dictionary (local runs, tests)
- RedisModelStore: Redis-backed with key prefix and TTL, so several service
  workers reuse one decomposition

Values are HSWM blobs (see app.pca.dump_whitening_model); a cached full-rank
model serves every k by column truncation.
"""
from __future__ import annotations

import hashlib
import logging
import os
from typing import Any, Dict, Optional

from .errors import IoFailure

logger = logging.getLogger("app.model_store")


def cube_key(header_path: str, mask_path: Optional[str] = None) -> str:
    """Stable key from cube path, payload size/mtime and optional band mask file."""
    parts = []
    for p in (header_path, mask_path):
        if p is None:
            parts.append("-")
            continue
        try:
            st = os.stat(p)
        except OSError as e:
            raise IoFailure(f"cannot stat {p}: {e}")
        parts.append(f"{os.path.abspath(p)}:{st.st_size}:{st.st_mtime_ns}")
    stem, _ = os.path.splitext(header_path)
    img = stem + ".img"
    if os.path.isfile(img):
        st = os.stat(img)
        parts.append(f"{st.st_size}:{st.st_mtime_ns}")
    return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()


class InMemoryModelStore:
    def __init__(self) -> None:
        self._store: Dict[str, bytes] = {}

    def get(self, key: str) -> Optional[bytes]:
        return self._store.get(key)

    def put(self, key: str, blob: bytes) -> None:
        self._store[key] = blob

    def pop(self, key: str) -> Optional[bytes]:
        return self._store.pop(key, None)

    def __contains__(self, key: str) -> bool:
        return key in self._store

    def __len__(self) -> int:
        return len(self._store)


class RedisModelStore:
    """Redis-backed store with TTL and key prefix.

    Parameters
    - url: full redis URL, if provided (takes precedence over host/port/db/password)
    - host, port, db, password: standard Redis connection fields
    - prefix: string prefix for namespacing keys
    - ttl: expiration in seconds; if > 0, applied on write
    - client: an already-constructed redis client (skips connection setup)
    """

    def __init__(
        self,
        *,
        url: Optional[str] = None,
        host: Optional[str] = None,
        port: int = 6379,
        db: int = 0,
        password: Optional[str] = None,
        prefix: str = "hswm:",
        ttl: int = 3600,
        client: Any = None,
    ) -> None:
        self._prefix = prefix
        self._ttl = ttl
        if client is not None:
            self.r = client
            return
        try:
            import redis  # type: ignore
        except Exception as e:  # pragma: no cover - import error path
            raise RuntimeError(f"Redis library not available: {e}")

        # binary values: no decode_responses
        if url:
            self.r = redis.from_url(url)
        else:
            self.r = redis.Redis(host=host, port=port, db=db, password=password)

        try:
            self.r.ping()
        except Exception as e:  # pragma: no cover - network error path
            raise RuntimeError(f"Cannot connect to Redis: {e}")

    def _k(self, key: str) -> str:
        return f"{self._prefix}{key}"

    def get(self, key: str) -> Optional[bytes]:
        raw = self.r.get(self._k(key))
        return bytes(raw) if raw else None

    def put(self, key: str, blob: bytes) -> None:
        pipe = self.r.pipeline()
        pipe.set(self._k(key), blob)
        if self._ttl > 0:
            pipe.expire(self._k(key), self._ttl)
        pipe.execute()

    def pop(self, key: str) -> Optional[bytes]:
        val = self.get(key)
        self.r.delete(self._k(key))
        return val

    def __contains__(self, key: str) -> bool:
        return bool(self.r.exists(self._k(key)))


def build_model_store(backend: str, **redis_kwargs: Any):
    if backend == "redis":
        return RedisModelStore(**redis_kwargs)
    if backend != "memory":
        logger.warning("unknown MODEL_STORE_BACKEND %r; using memory", backend)
    return InMemoryModelStore()


__all__ = ["cube_key", "InMemoryModelStore", "RedisModelStore", "build_model_store"]
