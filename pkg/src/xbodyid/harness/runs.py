"""Run directories: lock, write to a staging dir, rename on success."""

from __future__ import annotations

import json
import os
import shutil
from contextlib import contextmanager
from pathlib import Path

OUTPUT_ROOT_ENV = "XBODYID_OUTPUT_ROOT"


class RunError(RuntimeError):
    pass


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def new_run_dir(command: str, seed: int, root=None) -> Path:
    root = Path(root) if root is not None else default_output_root()
    n = 0
    while (root / f"{command}-s{seed}-{n:03d}").exists():
        n += 1
    return root / f"{command}-s{seed}-{n:03d}"


@contextmanager
def run_directory(final: Path):
    """Yield a staging directory that becomes ``final`` only if the block succeeds.

    A ``<final>.lock`` file guards against concurrent writers; an existing
    ``final`` is never overwritten.
    """
    final = Path(final)
    if final.exists():
        raise RunError(f"run directory already exists: {final}")
    final.parent.mkdir(parents=True, exist_ok=True)
    lock = final.with_name(final.name + ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunError(f"run directory is locked by another process: {lock}") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    staging = final.with_name(f".{final.name}.partial-{os.getpid()}")
    try:
        if staging.exists():
            shutil.rmtree(staging)
        staging.mkdir(parents=True)
        yield staging
        os.replace(staging, final)
    finally:
        if staging.exists():
            shutil.rmtree(staging, ignore_errors=True)
        lock.unlink(missing_ok=True)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path
