"""Host and registrable-domain helpers."""

from __future__ import annotations

import ipaddress
from functools import lru_cache
from importlib import resources
from typing import Iterable, Optional
from urllib.parse import urlsplit


def _load_suffixes() -> frozenset[str]:
    text = resources.files("adscape.data").joinpath("two_level_suffixes.txt").read_text(encoding="utf-8")
    return frozenset(
        line.strip().lower() for line in text.splitlines() if line.strip() and not line.startswith("!")
    )


TWO_LEVEL_SUFFIXES = _load_suffixes()


def host_of(url: Optional[str]) -> Optional[str]:
    """Lower-cased host of an absolute URL, or None for relative/opaque ones."""
    if not url:
        return None
    try:
        parts = urlsplit(url.strip())
    except ValueError:
        return None
    if parts.scheme not in ("http", "https") or not parts.hostname:
        return None
    return parts.hostname.rstrip(".").lower()


@lru_cache(maxsize=65536)
def _registrable(host: str, suffixes: frozenset[str]) -> str:
    host = host.rstrip(".").lower()
    try:
        ipaddress.ip_address(host)
        return host
    except ValueError:
        pass
    labels = host.split(".")
    if len(labels) <= 2:
        return host
    if ".".join(labels[-2:]) in suffixes:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


def registrable_domain(host_or_url: Optional[str], suffixes: Iterable[str] = TWO_LEVEL_SUFFIXES) -> Optional[str]:
    """Last two labels of the host, or three when the suffix is in the two-level table."""
    if not host_or_url:
        return None
    host = host_of(host_or_url) if "://" in host_or_url else host_or_url.split(":")[0]
    if not host:
        return None
    return _registrable(host, frozenset(suffixes) if not isinstance(suffixes, frozenset) else suffixes)
