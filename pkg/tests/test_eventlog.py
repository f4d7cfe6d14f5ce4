import asyncio
import json
from pathlib import Path
from typing import List

import httpx
from yarl import URL

from aioguiprobe.eventlog import EventLog, EventLog_, read_events


def test_json_lines(tmp_path: Path) -> None:
    path = tmp_path / "run" / "events.jsonl"
    log = EventLog_(path)
    log.log("directed_step", {"index": 1, "covered": [2, 3]})
    log.log("run_start", {"seed": 0})
    log.log("directed_step", {"index": 2, "covered": []})
    log.close()

    lines = path.read_text().splitlines()
    assert lines[0] == '{"covered":[2,3],"index":1,"kind":"directed_step"}'
    assert [e["index"] for e in read_events(path, "directed_step")] == [1, 2]
    assert len(list(read_events(path))) == 3
    assert log.counts == {"directed_step": 2, "run_start": 1}


def test_noop_log() -> None:
    EventLog_.NOOP.log("anything", {"x": 1}, mirror=True)
    assert EventLog_.NOOP.counts == {}


def test_mirror_posts_summaries(tmp_path: Path) -> None:
    requests: List[httpx.Request] = []

    def handler(request: httpx.Request) -> httpx.Response:
        requests.append(request)
        return httpx.Response(201, json={"result": "created"})

    async def main() -> None:
        async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
            log = EventLog_(tmp_path / "events.jsonl", URL("http://elastic:9200/"), client)
            log.log("directed_step", {"index": 1})
            log.log("evaluate", {"run_id": "abc", "covered": 3}, mirror=True)
            await asyncio.gather(*log.pending_tasks)
            log.close()

    asyncio.run(main())
    (request,) = requests
    assert str(request.url) == "http://elastic:9200/evaluate/_doc"
    body = json.loads(request.content)
    assert body["run_id"] == "abc" and body["covered"] == 3
    assert "@timestamp" in body


def test_mirror_failures_are_not_fatal(tmp_path: Path) -> None:
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(503)

    async def main() -> None:
        async with httpx.AsyncClient(transport=httpx.MockTransport(handler)) as client:
            log = EventLog_(tmp_path / "events.jsonl", URL("http://elastic:9200/"), client)
            log.log("train_summary", {"steps": 1}, mirror=True)
            await asyncio.gather(*log.pending_tasks)
            log.close()

    asyncio.run(main())
    assert len(list(read_events(tmp_path / "events.jsonl"))) == 1


def test_context_manager_without_mirror(tmp_path: Path) -> None:
    path = tmp_path / "events.jsonl"

    async def main() -> None:
        async with EventLog(path) as log:
            log.log("run_start", {"seed": 1}, mirror=True)
            assert log.pending_tasks == []

    asyncio.run(main())
    assert list(read_events(path)) == [{"kind": "run_start", "seed": 1}]
