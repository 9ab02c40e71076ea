"""Subprocess backend adapter: serialized writes, response demultiplexing by id."""

from __future__ import annotations

import logging
import shlex
import subprocess
import threading
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout

from .protocol import (
    BackendCrashed,
    BackendFailure,
    BackendRequest,
    BackendResponse,
    BackendTimeout,
    Handshake,
    ProtocolViolation,
    decode_handshake,
    decode_response,
    encode_request,
)

logger = logging.getLogger(__name__)

DEFAULT_REQUEST_TIMEOUT_S = 120.0


class BackendHandle:
    """Anything that can answer protocol requests (subprocess or in-process)."""

    capabilities: tuple[str, ...] = ()

    def request(self, req: BackendRequest, timeout: float | None = None) -> BackendResponse:
        raise NotImplementedError

    def close(self) -> None:
        pass


def call(request: BackendRequest, backend: BackendHandle, timeout: float | None = None) -> BackendResponse:
    """Send one request and return its correlated response.

    Precondition failures (op not advertised by the backend) raise before
    anything touches the wire; error responses surface as exceptions.
    """
    if backend.capabilities and request.op.value not in backend.capabilities:
        raise ValueError(f"backend does not advertise {request.op.value}")
    response = backend.request(request, timeout=timeout)
    if response.request_id != request.request_id:
        raise ProtocolViolation(
            f"response id {response.request_id!r} does not match request {request.request_id!r}"
        )
    if isinstance(response.payload, BackendFailure):
        from .protocol import BackendError

        raise BackendError(f"{response.payload.kind}: {response.payload.message}")
    return response


class SubprocessBackend(BackendHandle):
    """Drives one backend child process over line-delimited stdio records.

    Writes are serialized under a lock; a reader thread demultiplexes
    responses to pending futures by request id. A malformed response line or
    child exit fails all in-flight requests fast instead of hanging them.
    """

    def __init__(
        self,
        command: str | list[str],
        handshake_timeout_s: float = 30.0,
        request_timeout_s: float = DEFAULT_REQUEST_TIMEOUT_S,
    ):
        self._command = shlex.split(command) if isinstance(command, str) else list(command)
        self._handshake_timeout_s = handshake_timeout_s
        self._request_timeout_s = request_timeout_s
        self._write_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending: dict[str, Future] = {}
        self._broken: Exception | None = None
        self._start()

    def _start(self) -> None:
        self._proc = subprocess.Popen(
            self._command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,  # line-buffered
        )
        self._broken = None
        handshake_future: Future = Future()
        self._reader = threading.Thread(
            target=self._read_loop, args=(handshake_future, self._proc), daemon=True
        )
        self._reader.start()
        try:
            self.handshake: Handshake = handshake_future.result(timeout=self._handshake_timeout_s)
        except FutureTimeout:
            self.close()
            raise BackendTimeout(
                f"no handshake from {self._command[0]} within {self._handshake_timeout_s}s"
            ) from None
        self.capabilities = self.handshake.capabilities

    def _read_loop(self, handshake_future: Future, proc: subprocess.Popen) -> None:
        # `proc` pins the reader to one child generation: after restart(), a
        # stale reader must neither answer nor fail the replacement's requests.
        stream = proc.stdout
        first = True
        try:
            for line in stream:
                line = line.strip()
                if not line:
                    continue
                if first:
                    first = False
                    try:
                        handshake_future.set_result(decode_handshake(line))
                    except ProtocolViolation as exc:
                        handshake_future.set_exception(exc)
                        self._fail_all(exc, proc)
                        return
                    continue
                try:
                    response = decode_response(line)
                except ProtocolViolation as exc:
                    logger.error("backend %s: %s", self._command[0], exc)
                    self._fail_all(exc, proc)
                    return
                self._dispatch(response, proc)
        except ValueError:
            pass  # stream closed mid-read
        finally:
            exc = BackendCrashed(f"backend process {self._command[0]} exited")
            if first and not handshake_future.done():
                handshake_future.set_exception(exc)
            self._fail_all(exc, proc)

    def _dispatch(self, response: BackendResponse, proc: subprocess.Popen) -> None:
        with self._pending_lock:
            if proc is not self._proc:
                return
            future = self._pending.pop(response.request_id, None)
        if future is None:
            logger.warning("dropping response for unknown request id %r", response.request_id)
            return
        future.set_result(response)

    def _fail_all(self, exc: Exception, proc: subprocess.Popen | None = None) -> None:
        with self._pending_lock:
            if proc is not None and proc is not self._proc:
                return
            self._broken = exc
            pending, self._pending = self._pending, {}
        for future in pending.values():
            if not future.done():
                future.set_exception(exc)

    def request(self, req: BackendRequest, timeout: float | None = None) -> BackendResponse:
        timeout = self._request_timeout_s if timeout is None else timeout
        future: Future = Future()
        with self._pending_lock:
            if self._broken is not None:
                raise type(self._broken)(str(self._broken))
            if req.request_id in self._pending:
                raise ValueError(f"request id {req.request_id!r} already in flight")
            self._pending[req.request_id] = future
        try:
            with self._write_lock:
                if self._proc.poll() is not None:
                    raise BackendCrashed(f"backend process {self._command[0]} is not running")
                self._proc.stdin.write(encode_request(req) + "\n")
                self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._fail_all(BackendCrashed(f"write to backend failed: {exc}"))
            raise BackendCrashed(f"write to backend failed: {exc}") from exc
        try:
            return future.result(timeout=timeout)
        except FutureTimeout:
            with self._pending_lock:
                self._pending.pop(req.request_id, None)
            raise BackendTimeout(f"request {req.request_id!r} timed out after {timeout}s") from None

    def restart(self) -> None:
        """Respawn the child; call after BackendCrashed to keep serving requests."""
        self.close()
        with self._pending_lock:
            self._pending = {}
        self._start()

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
