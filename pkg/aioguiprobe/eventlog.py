from __future__ import annotations

import asyncio
import json
import logging
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Any, AsyncIterator, ClassVar, Dict, Iterator, List, Mapping, Optional

import httpx
from yarl import URL


logger = logging.getLogger(__name__)


class EventLog_:
    """
    Append-only JSON-lines record of every event a run executes.

    Documents logged with `mirror=True` are also posted to an Elasticsearch
    index named after their kind, when a base URL is configured.
    """

    NOOP: ClassVar[EventLog_]

    def __init__(
        self,
        path: Optional[Path] = None,
        base_url: Optional[URL] = None,
        client: Optional[httpx.AsyncClient] = None,
    ) -> None:
        self.path = path
        self.base_url = base_url
        self.client = client
        self.pending_tasks: List[asyncio.Task[None]] = []
        self.counts: Dict[str, int] = {}
        self._file: Optional[IO[str]] = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._file = path.open("a", encoding="utf-8")

    def log(self, kind: str, document: Mapping[str, Any], mirror: bool = False) -> None:
        if self is EventLog_.NOOP:
            return
        self.counts[kind] = self.counts.get(kind, 0) + 1
        if self._file is not None:
            self._file.write(json.dumps({"kind": kind, **document}, sort_keys=True, separators=(",", ":")) + "\n")
        if mirror and self.base_url is not None and self.client is not None:
            self.pending_tasks.append(asyncio.create_task(self._post(kind, document)))

    async def _post(self, dataset: str, document: Mapping[str, Any]) -> None:
        assert self.base_url is not None and self.client is not None
        url = self.base_url.join(URL(f"{dataset}/_doc"))
        try:
            response = await self.client.post(
                str(url), json={"@timestamp": datetime.now(timezone.utc).isoformat(), **document}
            )
            response.raise_for_status()
        except httpx.HTTPError as e:
            logger.warning("Elasticsearch mirror to %s failed: %s", url, e)

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


EventLog_.NOOP = EventLog_()


@asynccontextmanager
async def EventLog(path: Optional[Path] = None, elastic_url: Optional[URL] = None) -> AsyncIterator[EventLog_]:
    async with httpx.AsyncClient() as http_client:
        ret = EventLog_(path, elastic_url, http_client if elastic_url is not None else None)
        try:
            yield ret
            await asyncio.gather(*ret.pending_tasks)
        finally:
            ret.close()


def read_events(path: Path, kind: Optional[str] = None) -> Iterator[Dict[str, Any]]:
    with path.open(encoding="utf-8") as f:
        for line in f:
            if line.strip():
                event = json.loads(line)
                if kind is None or event["kind"] == kind:
                    yield event
