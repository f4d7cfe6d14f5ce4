import asyncio
from collections import defaultdict
from typing import Any, Awaitable, Callable, Dict, List, Mapping, Tuple

import numpy as np
import pytest
from yarl import URL

from aioguiprobe.app.app_model import ActionSpec, AppModel, EventKind, initial_state, render_state, state_actions
from aioguiprobe.coordinator.protocol import MessageType, read_frame, write_frame
from aioguiprobe.coordinator.worker import (
    LocalWorkerClient,
    RemoteWorkerClient,
    Worker,
    WorkerServer,
    retrying,
)
from aioguiprobe.encoder import EncoderConfig, GuiEncoder
from aioguiprobe.learner.trainer import ModelStorage, Trainer, TrainerConfig
from aioguiprobe.qnet import forward
from aioguiprobe.util import BackpressureError, ProtocolError, RuntimeFailure, ValidationError

from .conftest import SMALL_ENCODER, random_sequences


def make_worker(diary: AppModel, storage: ModelStorage, intake_capacity: int = 1_024) -> Worker:
    encoder = GuiEncoder(SMALL_ENCODER, diary.function_table)
    trainer = Trainer(TrainerConfig(intake_capacity=intake_capacity, hidden=(16, 8)), encoder, storage)
    return Worker(diary, encoder, storage, trainer)


def get_q_msg(diary: AppModel, session: str, candidates: List[ActionSpec], goal: int = 2, cid: int = 5) -> Dict[str, Any]:
    return {
        "type": MessageType.get_q.value,
        "cid": cid,
        "session": session,
        "state": initial_state(diary).to_dict(),
        "candidates": [c.to_dict() for c in candidates],
        "goal": goal,
    }


def hello(worker: Worker, session: str, fingerprint: str = "", cid: int = 1) -> Dict[str, Any]:
    return worker.handle(
        {"type": "hello", "cid": cid, "session_id": session, "app_fingerprint": fingerprint or worker.app_fingerprint}
    )


def test_rejects_other_encoder(diary: AppModel, trained_storage: ModelStorage) -> None:
    with pytest.raises(ValidationError):
        Worker(diary, GuiEncoder(EncoderConfig(), diary.function_table), trained_storage)


def test_unknown_type_and_missing_cid(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    resp = worker.handle({"type": "shutdown", "cid": 3})
    assert resp == {"type": "error", "cid": 3, "code": "unknown_type", "message": "Unknown message type 'shutdown'"}
    assert worker.handle({"type": "get_model"})["code"] == "malformed"


def test_hello_checks_app(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    assert hello(worker, "d0") == {"type": "ack", "cid": 1, "accepted": 0}
    resp = hello(worker, "d1", fingerprint="0000")
    assert resp["code"] == "incompatible"
    assert "d1" not in worker.sessions


def test_unknown_session(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    resp = worker.handle(get_q_msg(diary, "ghost", [ActionSpec(EventKind.back)]))
    assert resp["code"] == "unknown_session"
    assert resp["cid"] == 5


def test_malformed_request(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    hello(worker, "d0")
    msg = get_q_msg(diary, "d0", [ActionSpec(EventKind.back)])
    del msg["goal"]
    assert worker.handle(msg)["code"] == "malformed"
    msg = get_q_msg(diary, "d0", [])
    assert worker.handle(msg)["code"] == "malformed"


def test_get_q(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    hello(worker, "d0")
    candidates = [ActionSpec(EventKind.click, 0), ActionSpec(EventKind.click, 3), ActionSpec(EventKind.back)]
    resp = worker.handle(get_q_msg(diary, "d0", candidates, goal=11))
    assert resp["type"] == "get_q_resp"
    assert resp["cid"] == 5
    assert len(resp["q_values"]) == 3
    assert resp["chosen"] == resp["q_values"].index(max(resp["q_values"]))
    assert resp["model_version"] == 2

    snapshot = trained_storage.latest()
    assert snapshot is not None
    state = initial_state(diary)
    for q, action in zip(resp["q_values"], candidates):
        assert q == pytest.approx(forward(snapshot.params, worker.encoder.input_vector(state, action, 11)))


def test_get_q_unknown_goal(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    hello(worker, "d0")
    assert worker.handle(get_q_msg(diary, "d0", [ActionSpec(EventKind.back)], goal=999))["code"] == "malformed"


def test_add_training_data(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    hello(worker, "d0")
    (seq,) = random_sequences(diary, 1, 10, seed=8, prefix="d0")
    resp = worker.handle({"type": "add_training_data", "cid": 9, "session": "d0", "sequence": seq.to_dict()})
    assert resp == {"type": "ack", "cid": 9, "accepted": 10}
    assert worker.accepted_ids == ["d0:000000"]
    assert worker.sessions["d0"].accepted_steps == 10


def test_add_training_data_rejects_broken_chain(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    hello(worker, "d0")
    (seq,) = random_sequences(diary, 1, 10, seed=8)
    data = seq.to_dict()
    data["steps"][4]["next_state_key"] = "0" * 40
    resp = worker.handle({"type": "add_training_data", "cid": 2, "session": "d0", "sequence": data})
    assert resp["code"] == "invalid_sequence"
    assert worker.accepted_ids == []


def test_add_training_data_backpressure(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage, intake_capacity=1)
    hello(worker, "d0")
    a, b = random_sequences(diary, 2, 4, seed=1)
    assert worker.handle({"type": "add_training_data", "cid": 1, "session": "d0", "sequence": a.to_dict()})["accepted"] == 4
    resp = worker.handle({"type": "add_training_data", "cid": 2, "session": "d0", "sequence": b.to_dict()})
    assert resp["code"] == "backpressure"


def test_per_session_snapshots(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    hello(worker, "d0")
    actions = [ActionSpec(EventKind.click, 0), ActionSpec(EventKind.back)]
    before = worker.handle(get_q_msg(diary, "d0", actions))

    snapshot = trained_storage.latest()
    assert snapshot is not None
    changed = snapshot.params.copy()
    changed.biases[-1] += 1.0
    trained_storage.publish(changed, changed, None, {})
    hello(worker, "d1")

    # d0 keeps answering from its own snapshot until it asks for the model
    assert worker.handle(get_q_msg(diary, "d0", actions)) == before
    assert worker.handle(get_q_msg(diary, "d1", actions))["model_version"] == 3
    resp = worker.handle({"type": "get_model", "cid": 6, "session": "d0", "have_version": 2})
    assert resp["version"] == 3
    assert resp["bytes"]
    after = worker.handle(get_q_msg(diary, "d0", actions))
    assert after["model_version"] == 3
    assert after["q_values"] == pytest.approx([q + 1.0 for q in before["q_values"]])

    resp = worker.handle({"type": "get_model", "cid": 7, "session": "d0", "have_version": 3})
    assert resp["bytes"] is None


def test_local_client(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    client = LocalWorkerClient(worker, "local")
    (seq,) = random_sequences(diary, 1, 6, seed=2, prefix="local")

    async def main() -> Tuple[int, int]:
        await client.hello(diary.fingerprint)
        result = await client.get_q(render_state(diary.screens["S1"]), [ActionSpec(EventKind.back)], 4)
        assert result.chosen == 0
        return await client.add_training_data(seq), await client.refresh(0)

    assert asyncio.run(main()) == (6, 2)


def test_retrying_gives_up() -> None:
    calls: List[int] = []

    async def flaky() -> int:
        calls.append(1)
        if len(calls) < 3:
            raise BackpressureError("full")
        return 42

    async def broken() -> int:
        raise BackpressureError("full")

    assert asyncio.run(retrying(flaky, (BackpressureError,), base_delay=0.001)) == 42
    with pytest.raises(RuntimeFailure, match="after 3 attempts"):
        asyncio.run(retrying(broken, (BackpressureError,), base_delay=0.001))


def test_server_rejects_other_schemes(diary: AppModel, trained_storage: ModelStorage) -> None:
    with pytest.raises(ValidationError):
        WorkerServer(make_worker(diary, trained_storage), "udp://127.0.0.1:1")


def test_concurrent_remote_sessions(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    n = 8

    async def device(url: Any, i: int) -> Tuple[List[int], int]:
        client = RemoteWorkerClient(url, f"dev{i}")
        await client.hello(diary.fingerprint)
        rng = np.random.default_rng(i)
        versions = []
        state = initial_state(diary, rng)
        for _ in range(5):
            result = await client.get_q(state, [ActionSpec(EventKind.click, 0), ActionSpec(EventKind.back)], 2 + i)
            assert len(result.q_values) == 2
            versions.append(result.model_version)
            await asyncio.sleep(0)
        accepted = 0
        for seq in random_sequences(diary, 2, 8, seed=100 + i, prefix=f"dev{i}"):
            accepted += await client.add_training_data(seq)
        await client.close()
        return versions, accepted

    async def main() -> List[Tuple[List[int], int]]:
        async with WorkerServer(worker, "tcp://127.0.0.1:0") as server:
            return await asyncio.gather(*(device(server.url, i) for i in range(n)))

    results = asyncio.run(main())
    assert all(versions == [2] * 5 for versions, _ in results)
    assert all(accepted == 16 for _, accepted in results)
    assert sorted(worker.accepted_ids) == sorted(f"dev{i}:{j:06d}" for i in range(n) for j in range(2))
    assert len(worker.sessions) == n
    assert all(info.get_q_calls == 5 and info.sequences == 2 for info in worker.sessions.values())
    assert worker.trainer is not None and worker.trainer.intake.qsize() == 2 * n


def test_remote_error_surfaces(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)

    async def main() -> None:
        async with WorkerServer(worker, "tcp://127.0.0.1:0") as server:
            client = RemoteWorkerClient(server.url, "dev")
            await client.hello(diary.fingerprint)
            try:
                with pytest.raises(ProtocolError) as e:
                    await client.get_q(initial_state(diary), [ActionSpec(EventKind.back)], 999)
                assert e.value.code == "malformed"
            finally:
                await client.close()

    asyncio.run(main())


def test_resent_sequence_is_acked_once(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    hello(worker, "d0")
    (seq,) = random_sequences(diary, 1, 10, seed=8, prefix="d0")
    msg = {"type": "add_training_data", "session": "d0", "sequence": seq.to_dict()}
    assert worker.handle({**msg, "cid": 1})["accepted"] == 10
    assert worker.handle({**msg, "cid": 2}) == {"type": "ack", "cid": 2, "accepted": 10}
    assert worker.accepted_ids == ["d0:000000"]
    assert worker.trainer is not None and worker.trainer.intake.qsize() == 1

    # same id, different content: a restarted device numbering from zero again
    (other,) = random_sequences(diary, 1, 10, seed=9, prefix="d0")
    assert worker.handle({**msg, "cid": 3, "sequence": other.to_dict()})["accepted"] == 10
    assert worker.accepted_ids == ["d0:000000", "d0:000000"]


Tamper = Callable[[Dict[str, Any], Dict[str, Any]], Awaitable[List[Dict[str, Any]]]]


async def scripted_server(worker: Worker, tamper: Tamper) -> Tuple[asyncio.AbstractServer, URL]:
    """Answers through `worker`, letting `tamper` rewrite, delay or add the frames sent back"""

    async def handle(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while (msg := await read_frame(reader)) is not None:
                for frame in await tamper(msg, worker.handle(msg)):
                    await write_frame(writer, frame)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    server = await asyncio.start_server(handle, "127.0.0.1", 0)
    host, port = server.sockets[0].getsockname()[:2]
    return server, URL.build(scheme="tcp", host=host, port=port)


def test_late_ack_does_not_duplicate_training_data(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    (seq,) = random_sequences(diary, 1, 10, seed=4, prefix="dev")
    delayed: List[int] = []

    async def slow_first_ack(msg: Dict[str, Any], resp: Dict[str, Any]) -> List[Dict[str, Any]]:
        if msg["type"] == "add_training_data" and not delayed:
            delayed.append(msg["cid"])
            await asyncio.sleep(0.5)
        return [resp]

    async def main() -> int:
        server, url = await scripted_server(worker, slow_first_ack)
        client = RemoteWorkerClient(url, "dev", timeout=0.2)
        try:
            await client.hello(diary.fingerprint)
            accepted = await client.add_training_data(seq)
            # let the late ack go out to the dropped connection
            await asyncio.sleep(0.5)
        finally:
            await client.close()
            server.close()
            await server.wait_closed()
        return accepted

    assert asyncio.run(main()) == 10
    assert delayed
    assert worker.accepted_ids == ["dev:000000"]
    assert worker.trainer is not None and worker.trainer.intake.qsize() == 1


def test_client_reconnects_after_cid_mismatch(diary: AppModel, trained_storage: ModelStorage) -> None:
    worker = make_worker(diary, trained_storage)
    connections: List[int] = []
    stray: List[int] = []

    async def stray_frame_first(msg: Dict[str, Any], resp: Dict[str, Any]) -> List[Dict[str, Any]]:
        if msg["type"] == "hello":
            connections.append(msg["cid"])
        if msg["type"] == "get_q" and not stray:
            stray.append(msg["cid"])
            return [{**resp, "cid": resp["cid"] + 1_000}, resp]
        return [resp]

    candidates = [ActionSpec(EventKind.click, 0), ActionSpec(EventKind.back)]
    state = initial_state(diary)

    async def main() -> None:
        server, url = await scripted_server(worker, stray_frame_first)
        client = RemoteWorkerClient(url, "dev", timeout=2.0)
        try:
            await client.hello(diary.fingerprint)
            with pytest.raises(ProtocolError, match="does not match"):
                await client.get_q(state, candidates, 2)
            for _ in range(3):
                result = await client.get_q(state, candidates, 2)
                assert result.q_values == pytest.approx(worker.q_values("dev", state, candidates, 2).q_values)
        finally:
            await client.close()
            server.close()
            await server.wait_closed()

    asyncio.run(main())
    assert len(connections) == 2


class CountingWorker(Worker):
    def __init__(self, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.received: Dict[str, List[int]] = defaultdict(list)

    def handle(self, msg: Mapping[str, Any]) -> Dict[str, Any]:
        self.received[str(msg.get("session", msg.get("session_id")))].append(msg["cid"])
        return super().handle(msg)


class CountingClient(RemoteWorkerClient):
    def __init__(self, url: Any, session_id: str) -> None:
        super().__init__(url, session_id)
        self.answered: List[int] = []

    async def _roundtrip(self, msg: Dict[str, Any]) -> Dict[str, Any]:
        resp = await super()._roundtrip(msg)
        self.answered.append(resp["cid"])
        return resp


@pytest.mark.slow
def test_every_request_answered_once_under_load(diary: AppModel, trained_storage: ModelStorage) -> None:
    encoder = GuiEncoder(SMALL_ENCODER, diary.function_table)
    worker = CountingWorker(diary, encoder, trained_storage)
    n_devices, per_device = 8, 1_250
    screens = list(diary.screens.values())
    goals = diary.function_table.ids

    async def device(url: URL, i: int) -> CountingClient:
        client = CountingClient(url, f"dev{i}")
        rng = np.random.default_rng(i)
        await client.hello(diary.fingerprint)
        for _ in range(per_device):
            state = render_state(screens[int(rng.integers(len(screens)))], rng)
            candidates = state_actions(state)
            result = await client.get_q(state, candidates, int(rng.choice(goals)))
            assert len(result.q_values) == len(candidates)
        await client.close()
        return client

    async def main() -> List[CountingClient]:
        async with WorkerServer(worker, "tcp://127.0.0.1:0") as server:
            return await asyncio.gather(*(device(server.url, i) for i in range(n_devices)))

    clients = asyncio.run(main())
    assert sum(len(c.answered) for c in clients) >= 10_000
    for client in clients:
        received = worker.received[client.session_id]
        assert len(client.answered) == per_device + 1
        assert len(set(client.answered)) == len(client.answered)
        assert sorted(received) == sorted(client.answered)
    assert worker.sessions.keys() == {f"dev{i}" for i in range(n_devices)}
