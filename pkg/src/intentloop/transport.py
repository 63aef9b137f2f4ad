"""Small HTTP helpers with retry and backoff shared by the providers."""

from __future__ import annotations

import time

import requests

from .errors import TransportError


def post_json(
    url: str,
    payload: dict,
    timeout: float = 10.0,
    max_retries: int = 3,
    backoff: float = 0.5,
) -> dict:
    last: Exception | None = None
    for attempt in range(1, max_retries + 1):
        try:
            resp = requests.post(url, json=payload, timeout=timeout)
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            last = exc
            if attempt < max_retries:
                time.sleep(backoff * attempt)
    raise TransportError(f"POST {url} failed after {max_retries} attempts: {last}",
                         attempts=max_retries, cause=last)


def get_json(
    url: str,
    params: dict | None = None,
    headers: dict | None = None,
    timeout: float = 10.0,
    max_retries: int = 3,
    backoff: float = 0.5,
) -> dict:
    last: Exception | None = None
    for attempt in range(1, max_retries + 1):
        try:
            resp = requests.get(url, params=params, headers=headers, timeout=timeout)
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            last = exc
            if attempt < max_retries:
                time.sleep(backoff * attempt)
    raise TransportError(f"GET {url} failed after {max_retries} attempts: {last}",
                         attempts=max_retries, cause=last)
