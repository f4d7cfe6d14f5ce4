from __future__ import annotations

import asyncio
import hashlib
import json
import logging
import os
import tempfile
from functools import wraps
from math import floor
from pathlib import Path
from time import perf_counter
from typing import Any, Callable, Iterable, List, Optional, Sequence

import pytimeparse
import typer
from rich.logging import RichHandler


class GuiProbeError(Exception):
    exit_code = 3


class ValidationError(GuiProbeError, ValueError):
    exit_code = 2


class ParseError(ValidationError):
    pass


class ChecksumError(ParseError):
    pass


class RuntimeFailure(GuiProbeError, RuntimeError):
    pass


class BackpressureError(RuntimeFailure):
    pass


class ProtocolError(GuiProbeError):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


def timer() -> float:
    return perf_counter()


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=verbose, show_path=verbose)],
        force=True,
    )


def quantiles(data: Sequence[float], quantiles: Iterable[float]) -> Optional[List[float]]:
    """Linear-interpolated quantiles of already sorted data"""
    if not data:
        return None

    ret: List[float] = []
    for quantile in quantiles:
        i = quantile * (len(data) - 1)
        i_int = floor(i)
        i_frac = i - i_int
        value = (1 - i_frac) * data[i_int]
        if i_frac > 0:
            value += i_frac * data[i_int + 1]
        ret.append(value)
    return ret


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(obj: Any, length: int = 16) -> str:
    if isinstance(obj, bytes):
        data = obj
    else:
        data = canonical_json(obj).encode("utf-8")
    return hashlib.sha256(data).hexdigest()[:length]


def run_id(manifest_body: Any) -> str:
    return hashlib.sha1(canonical_json(manifest_body).encode("utf-8")).hexdigest()[:12]


def atomic_write(path: Path, data: bytes | str) -> None:
    """Writes to a temporary file next to `path`, then renames over it"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except FileNotFoundError:
            pass
        raise


def _exit_on_error(f: Callable[..., Any]) -> Callable[..., Any]:
    @wraps(f)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return f(*args, **kwargs)
        except GuiProbeError as e:
            typer.secho(f"error: {e}", err=True, fg=typer.colors.RED)
            raise typer.Exit(e.exit_code)
        except OSError as e:
            typer.secho(f"error: {e}", err=True, fg=typer.colors.RED)
            raise typer.Exit(3)

    return wrapper


def command(app: typer.Typer, *args: Any, **kwargs: Any) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    def decorator(f: Callable[..., Any]) -> Callable[..., Any]:
        app.command(*args, **kwargs)(_exit_on_error(f))
        return f

    return decorator


def async_command(app: typer.Typer, *args: Any, **kwargs: Any) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    def decorator(f: Callable[..., Any]) -> Callable[..., Any]:
        @wraps(f)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            async def f_cancellable(*args: Any, **kwargs: Any) -> Any:
                task = asyncio.create_task(f(*args, **kwargs))
                try:
                    return await task
                except asyncio.CancelledError:
                    ...

            return asyncio.run(f_cancellable(*args, **kwargs))

        app.command(*args, **kwargs)(_exit_on_error(wrapper))
        return f

    return decorator


def autocomplete(values: Iterable[str], name: str = "", fast: bool = False) -> Callable[..., Iterable[str]]:
    def wrapped(ctx: typer.Context, args: List[str], incomplete: str) -> Iterable[str]:
        used = ctx.params.get(name) or []
        for value in values:
            if value.startswith(incomplete) and value not in used:
                yield value
                if fast and incomplete == "":
                    break

    return wrapped


def parse_interval(value: Any) -> Optional[float]:
    if value is None:
        return None
    if isinstance(value, int | float):
        return value
    parsed = pytimeparse.parse(value)
    if parsed is not None:
        return parsed
    try:
        return float(value)
    except ValueError:
        raise ValidationError(f"Invalid time interval: {value!r}")
