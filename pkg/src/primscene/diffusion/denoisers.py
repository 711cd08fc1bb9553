"""Noise predictors: an exact oracle for Gaussian data and an HTTP bridge.

A denoiser is any callable ``(z_t, t, y) -> eps_hat`` returning an array of the
same shape as ``z_t``. ``t`` is the original (un-strided) timestep and ``y``
an optional density label.

Wire protocol for remote denoisers: the request body is five little-endian
int32 values ``(h, w, C, t, y)`` followed by ``z_t`` as little-endian float32
in C order; ``y = -1`` means no label. The response body is ``eps_hat`` in
the same float32 layout.
"""

import socket
import struct
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Protocol

import numpy as np

from ..exceptions import (
    ConfigError,
    DenoiserUnavailableError,
    InvalidVarianceError,
    ProtocolError,
)
from ..scene import DENSITY_LABELS
from .schedule import linear_beta_schedule

_HEADER = struct.Struct("<5i")


class Denoiser(Protocol):
    def __call__(self, z_t: np.ndarray, t: int, y=None) -> np.ndarray: ...


def label_code(y):
    if y is None:
        return -1
    if isinstance(y, str):
        if y not in DENSITY_LABELS:
            raise ConfigError(f"unknown density label {y!r}")
        return DENSITY_LABELS.index(y)
    return int(y)


def analytic_gaussian_denoiser(mu0, var0, schedule=None):
    """Exact noise prediction for data ``z0 ~ N(mu0, var0 I)``."""
    if not var0 > 0:
        raise InvalidVarianceError("data variance must be positive")
    schedule = linear_beta_schedule() if schedule is None else schedule
    mu0 = np.asarray(mu0, dtype=np.float64)

    def denoise(z_t, t, y=None):
        if int(t) != t or not 1 <= t <= schedule.T:
            raise ConfigError(f"denoiser called at timestep {t}")
        ab = schedule.alpha_bar[int(t)]
        z_t = np.asarray(z_t, dtype=np.float64)
        mean = (var0 * np.sqrt(ab) * z_t + (1.0 - ab) * mu0) / (ab * var0 + 1.0 - ab)
        return (z_t - np.sqrt(ab) * mean) / np.sqrt(1.0 - ab)

    return denoise


def zero_denoiser(z_t, t, y=None):
    return np.zeros_like(np.asarray(z_t, dtype=np.float64))


def encode_request(z_t, t, y=None):
    z = np.asarray(z_t)
    if z.ndim != 3:
        raise ConfigError("latents must be (h, w, C)")
    return _HEADER.pack(*z.shape, int(t), label_code(y)) + z.astype("<f4").tobytes()


def decode_request(body):
    if len(body) < _HEADER.size:
        raise ProtocolError("request is shorter than its header")
    h, w, c, t, y = _HEADER.unpack_from(body)
    if min(h, w, c) <= 0 or len(body) != _HEADER.size + 4 * h * w * c:
        raise ProtocolError("request payload does not match its header")
    z = np.frombuffer(body, "<f4", h * w * c, _HEADER.size).reshape(h, w, c)
    return z.astype(np.float64), t, (None if y < 0 else y)


def external_denoiser(endpoint, timeout=30.0):
    """Denoiser that forwards every call to an HTTP endpoint."""

    def denoise(z_t, t, y=None):
        z_t = np.asarray(z_t)
        req = urllib.request.Request(endpoint, data=encode_request(z_t, t, y), method="POST",
                                     headers={"Content-Type": "application/octet-stream"})
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                body = resp.read()
        except (TimeoutError, socket.timeout) as exc:
            raise DenoiserUnavailableError(f"denoiser at {endpoint} timed out") from exc
        except urllib.error.URLError as exc:
            raise DenoiserUnavailableError(f"denoiser at {endpoint} unreachable: {exc.reason}") from exc
        if len(body) != 4 * z_t.size:
            raise ProtocolError(f"denoiser returned {len(body)} bytes, expected {4 * z_t.size}")
        return np.frombuffer(body, "<f4").reshape(z_t.shape).astype(np.float64)

    return denoise


class DenoiserServer:
    """Loopback HTTP server exposing an in-process denoiser (tests and demos)."""

    def __init__(self, denoiser, host="127.0.0.1", port=0):
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
                try:
                    z, t, y = decode_request(body)
                    out = np.asarray(outer.denoiser(z, t, y), dtype="<f4").tobytes()
                    self.send_response(200)
                except (ProtocolError, ConfigError) as exc:
                    out = str(exc).encode()
                    self.send_response(400)
                self.send_header("Content-Length", str(len(out)))
                self.end_headers()
                self.wfile.write(out)

            def log_message(self, *args):
                pass

        self.denoiser = denoiser
        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self):
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/"

    def close(self):
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_denoiser(denoiser, host="127.0.0.1", port=0):
    return DenoiserServer(denoiser, host, port)
