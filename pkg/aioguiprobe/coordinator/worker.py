from __future__ import annotations

import asyncio
import base64
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Awaitable, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, TypeVar

from cachetools import LRUCache
from yarl import URL

from aioguiprobe.app.app_model import ActionSpec, AppModel, GuiState
from aioguiprobe.coordinator.protocol import (
    ErrorCode,
    MessageType,
    error_message,
    read_frame,
    write_frame,
)
from aioguiprobe.encoder import GuiEncoder
from aioguiprobe.learner.episode import EpisodeSequence
from aioguiprobe.learner.trainer import ModelStorage, Snapshot, Trainer
from aioguiprobe.qnet import argmax_lowest, forward_batch
from aioguiprobe.util import BackpressureError, ProtocolError, RuntimeFailure, ValidationError, fingerprint


logger = logging.getLogger(__name__)

DEFAULT_URL = URL("tcp://127.0.0.1:7878")
RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 0.05
ACCEPTED_MEMORY = 65_536

T = TypeVar("T")


async def retrying(
    operation: Callable[[], Awaitable[T]],
    retry_on: Tuple[type[BaseException], ...],
    attempts: int = RETRY_ATTEMPTS,
    base_delay: float = RETRY_BASE_DELAY,
    what: str = "request",
) -> T:
    """Runs `operation`, backing off exponentially on `retry_on`; RuntimeFailure after the last attempt"""
    for attempt in range(1, attempts + 1):
        try:
            return await operation()
        except retry_on as e:
            if attempt == attempts:
                raise RuntimeFailure(f"{what} failed after {attempts} attempts: {e}")
            delay = base_delay * 2 ** (attempt - 1)
            logger.warning("%s failed (attempt %d/%d), retrying in %.2fs: %s", what, attempt, attempts, delay, e)
            await asyncio.sleep(delay)
    raise AssertionError("unreachable")


@dataclass
class QResult:
    q_values: List[float]
    chosen: int
    model_version: int


@dataclass
class SessionInfo:
    session_id: str
    snapshot: Optional[Snapshot] = None
    get_q_calls: int = 0
    sequences: int = 0
    accepted_steps: int = 0


class Worker:
    """
    Server side of the device protocol: answers Q queries from per-session
    snapshots and forwards training sequences to the trainer intake.
    """

    def __init__(
        self,
        model: AppModel,
        encoder: GuiEncoder,
        storage: ModelStorage,
        trainer: Optional[Trainer] = None,
    ) -> None:
        if storage.encoder_cfg != encoder.cfg:
            raise ValidationError("Model was trained with a different encoder configuration")
        self.model = model
        self.encoder = encoder
        self.storage = storage
        self.trainer = trainer
        self.app_fingerprint = model.fingerprint
        self.sessions: Dict[str, SessionInfo] = {}
        self.accepted_ids: List[str] = []
        # (sequence id, content digest) -> accepted steps; a resent sequence is acked without a second push
        self._accepted: LRUCache[Tuple[str, str], int] = LRUCache(maxsize=ACCEPTED_MEMORY)
        self.requests = 0

    def _session(self, session_id: Any) -> SessionInfo:
        info = self.sessions.get(session_id) if isinstance(session_id, str) else None
        if info is None:
            raise ProtocolError(ErrorCode.unknown_session.value, f"Unknown session {session_id!r}")
        return info

    def register(self, session_id: str, app_fingerprint: str) -> SessionInfo:
        if app_fingerprint != self.app_fingerprint:
            raise ProtocolError(
                ErrorCode.incompatible.value,
                f"Session {session_id!r} runs app {app_fingerprint}, the worker serves {self.app_fingerprint}",
            )
        info = self.sessions.get(session_id)
        if info is None:
            info = self.sessions[session_id] = SessionInfo(session_id, self.storage.latest())
            logger.info("Session %s registered", session_id)
        return info

    def refresh(self, session_id: str) -> int:
        info = self._session(session_id)
        latest = self.storage.latest()
        if latest is not None:
            info.snapshot = latest
        return info.snapshot.version if info.snapshot is not None else 0

    def q_values(self, session_id: str, state: GuiState, candidates: Sequence[ActionSpec], goal: int) -> QResult:
        info = self._session(session_id)
        if not candidates:
            raise ValidationError("get_q needs at least one candidate")
        if goal not in self.model.function_table:
            raise ValidationError(f"Unknown goal function {goal}")
        if info.snapshot is None:
            info.snapshot = self.storage.latest()
            if info.snapshot is None:
                raise RuntimeFailure("No model has been published yet")
        info.get_q_calls += 1
        q = forward_batch(info.snapshot.params, self.encoder.candidate_matrix(state, candidates, goal))
        return QResult([float(v) for v in q], argmax_lowest(q), info.snapshot.version)

    def add_sequence(self, session_id: str, seq: EpisodeSequence) -> int:
        info = self._session(session_id)
        key = (seq.sequence_id, fingerprint(seq.to_dict()))
        previous = self._accepted.get(key)
        if previous is not None:
            logger.debug("Sequence %s from %s was already accepted", seq.sequence_id, session_id)
            return previous
        seq.validate(self.model.function_table)
        if self.trainer is None:
            raise RuntimeFailure("This worker does not accept training data")
        self.trainer.submit(seq)
        info.sequences += 1
        info.accepted_steps += len(seq)
        self.accepted_ids.append(seq.sequence_id)
        self._accepted[key] = len(seq)
        return len(seq)

    def handle_hello(self, msg: Mapping[str, Any]) -> Dict[str, Any]:
        self.register(str(msg["session_id"]), str(msg["app_fingerprint"]))
        return {"type": MessageType.ack.value, "cid": msg["cid"], "accepted": 0}

    def handle_get_q(self, msg: Mapping[str, Any]) -> Dict[str, Any]:
        result = self.q_values(
            msg["session"],
            GuiState.from_dict(msg["state"]),
            [ActionSpec.from_dict(c) for c in msg["candidates"]],
            int(msg["goal"]),
        )
        return {
            "type": MessageType.get_q_resp.value,
            "cid": msg["cid"],
            "q_values": result.q_values,
            "chosen": result.chosen,
            "model_version": result.model_version,
        }

    def handle_add_training_data(self, msg: Mapping[str, Any]) -> Dict[str, Any]:
        self._session(msg["session"])
        try:
            accepted = self.add_sequence(msg["session"], EpisodeSequence.from_dict(msg["sequence"]))
        except BackpressureError as e:
            raise ProtocolError(ErrorCode.backpressure.value, str(e))
        except ValidationError as e:
            raise ProtocolError(ErrorCode.invalid_sequence.value, str(e))
        return {"type": MessageType.ack.value, "cid": msg["cid"], "accepted": accepted}

    def handle_get_model(self, msg: Mapping[str, Any]) -> Dict[str, Any]:
        have_version = int(msg.get("have_version", -1))
        version = self.refresh(msg["session"]) if "session" in msg else self.storage.version
        blob = self.storage.blob()
        payload = None
        if blob is not None and self.storage.version > have_version:
            payload = base64.b64encode(blob).decode("ascii")
        return {"type": MessageType.model_blob.value, "cid": msg["cid"], "version": version, "bytes": payload}

    def handle(self, msg: Mapping[str, Any]) -> Dict[str, Any]:
        """Answers one request; never raises"""
        self.requests += 1
        cid = msg.get("cid")
        handlers: Dict[str, Callable[[Mapping[str, Any]], Dict[str, Any]]] = {
            MessageType.hello.value: self.handle_hello,
            MessageType.get_q.value: self.handle_get_q,
            MessageType.add_training_data.value: self.handle_add_training_data,
            MessageType.get_model.value: self.handle_get_model,
        }
        handler = handlers.get(msg.get("type"))  # type: ignore[arg-type]
        if handler is None:
            return error_message(cid, ErrorCode.unknown_type, f"Unknown message type {msg.get('type')!r}")
        if not isinstance(cid, int):
            return error_message(None, ErrorCode.malformed, "Request without an integer 'cid'")
        try:
            return handler(msg)
        except ProtocolError as e:
            return error_message(cid, ErrorCode(e.code), e.message)
        except BackpressureError as e:
            return error_message(cid, ErrorCode.backpressure, str(e))
        except (KeyError, TypeError, ValueError) as e:
            return error_message(cid, ErrorCode.malformed, f"{type(e).__name__}: {e}")
        except Exception as e:
            logger.exception("Internal error handling %s", msg.get("type"))
            return error_message(cid, ErrorCode.internal, str(e))


class WorkerServer:
    """Serves a Worker over length-prefixed JSON frames on a stream socket"""

    def __init__(self, worker: Worker, url: URL | str = DEFAULT_URL) -> None:
        url = URL(str(url))
        if url.scheme not in ("tcp", ""):
            raise ValidationError(f"Unsupported URL scheme {url.scheme!r}, expected tcp://")
        self.worker = worker
        self.url = url
        self.server: Optional[asyncio.AbstractServer] = None
        self.connections = 0

    async def __aenter__(self) -> WorkerServer:
        self.server = await asyncio.start_server(
            self.handle_connection, self.url.host or "127.0.0.1", self.url.port or 0
        )
        host, port = self.server.sockets[0].getsockname()[:2]
        self.url = URL.build(scheme="tcp", host=host, port=port)
        return self

    async def __aexit__(self, *exc: Any) -> None:
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()

    async def handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self.connections += 1
        peer = writer.get_extra_info("peername")
        try:
            while True:
                try:
                    msg = await read_frame(reader)
                except ProtocolError as e:
                    await write_frame(writer, error_message(None, ErrorCode(e.code), e.message))
                    break
                if msg is None:
                    break
                await write_frame(writer, self.worker.handle(msg))
        except (ConnectionError, asyncio.IncompleteReadError) as e:
            logger.debug("Connection from %s dropped: %s", peer, e)
        finally:
            writer.close()


class WorkerClient:
    """Device-side view of a worker; subclasses choose the transport"""

    session_id: str

    async def hello(self, app_fingerprint: str) -> None:
        raise NotImplementedError()

    async def get_q(self, state: GuiState, candidates: Sequence[ActionSpec], goal: int) -> QResult:
        raise NotImplementedError()

    async def add_training_data(self, seq: EpisodeSequence) -> int:
        raise NotImplementedError()

    async def refresh(self, have_version: int) -> int:
        raise NotImplementedError()

    async def close(self) -> None:
        pass


class LocalWorkerClient(WorkerClient):
    """In-process client; calls the worker without serializing"""

    def __init__(self, worker: Worker, session_id: str) -> None:
        self.worker = worker
        self.session_id = session_id

    async def hello(self, app_fingerprint: str) -> None:
        self.worker.register(self.session_id, app_fingerprint)

    async def get_q(self, state: GuiState, candidates: Sequence[ActionSpec], goal: int) -> QResult:
        return self.worker.q_values(self.session_id, state, candidates, goal)

    async def add_training_data(self, seq: EpisodeSequence) -> int:
        return await retrying(
            lambda: self._add(seq), (BackpressureError,), what=f"add_training_data from {self.session_id}"
        )

    async def _add(self, seq: EpisodeSequence) -> int:
        return self.worker.add_sequence(self.session_id, seq)

    async def refresh(self, have_version: int) -> int:
        return self.worker.refresh(self.session_id)


class RemoteWorkerClient(WorkerClient):
    """One connection per session; requests are strictly sequential on it"""

    TRANSPORT_ERRORS = (OSError, ConnectionError, asyncio.IncompleteReadError, asyncio.TimeoutError)

    def __init__(self, url: URL | str, session_id: str, timeout: float = 30.0) -> None:
        self.url = URL(str(url))
        self.session_id = session_id
        self.timeout = timeout
        self._cids = itertools.count(1)
        self._reader: Optional[asyncio.StreamReader] = None
        self._writer: Optional[asyncio.StreamWriter] = None
        self._lock = asyncio.Lock()
        self._fingerprint: Optional[str] = None

    async def _connect(self) -> None:
        self._reader, self._writer = await asyncio.open_connection(self.url.host, self.url.port)
        if self._fingerprint is not None:
            await self._roundtrip(
                {"type": MessageType.hello.value, "session_id": self.session_id, "app_fingerprint": self._fingerprint}
            )

    async def _disconnect(self) -> None:
        if self._writer is not None:
            self._writer.close()
        self._reader = self._writer = None

    async def _roundtrip(self, msg: Dict[str, Any]) -> Dict[str, Any]:
        assert self._reader is not None and self._writer is not None
        cid = next(self._cids)
        await write_frame(self._writer, {**msg, "cid": cid})
        resp = await asyncio.wait_for(read_frame(self._reader), self.timeout)
        if resp is None:
            raise ConnectionError("Worker closed the connection")
        if resp.get("cid") != cid:
            # the stream is out of step with our requests; start over on a fresh connection
            await self._disconnect()
            raise ProtocolError(ErrorCode.malformed.value, f"Response cid {resp.get('cid')!r} does not match {cid}")
        if resp["type"] == MessageType.error.value:
            if resp["code"] == ErrorCode.backpressure.value:
                raise BackpressureError(resp["message"])
            raise ProtocolError(resp["code"], resp["message"])
        return resp

    async def request(self, msg: Dict[str, Any]) -> Dict[str, Any]:
        async def attempt() -> Dict[str, Any]:
            async with self._lock:
                try:
                    if self._writer is None:
                        await self._connect()
                    return await self._roundtrip(msg)
                except self.TRANSPORT_ERRORS:
                    await self._disconnect()
                    raise

        return await retrying(
            attempt, self.TRANSPORT_ERRORS + (BackpressureError,), what=f"{msg['type']} to {self.url}"
        )

    async def hello(self, app_fingerprint: str) -> None:
        self._fingerprint = app_fingerprint
        async with self._lock:
            await retrying(self._connect, self.TRANSPORT_ERRORS, what=f"connect to {self.url}")

    async def get_q(self, state: GuiState, candidates: Sequence[ActionSpec], goal: int) -> QResult:
        resp = await self.request(
            {
                "type": MessageType.get_q.value,
                "session": self.session_id,
                "state": state.to_dict(),
                "candidates": [c.to_dict() for c in candidates],
                "goal": goal,
            }
        )
        return QResult(resp["q_values"], resp["chosen"], resp["model_version"])

    async def add_training_data(self, seq: EpisodeSequence) -> int:
        resp = await self.request(
            {"type": MessageType.add_training_data.value, "session": self.session_id, "sequence": seq.to_dict()}
        )
        return int(resp["accepted"])

    async def refresh(self, have_version: int) -> int:
        resp = await self.request(
            {"type": MessageType.get_model.value, "session": self.session_id, "have_version": have_version}
        )
        return int(resp["version"])

    async def close(self) -> None:
        async with self._lock:
            await self._disconnect()
