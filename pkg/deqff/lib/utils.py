import datetime as dt
import logging
import os
from pathlib import Path
from typing import Optional, Union

import pandas as pd
import torch

THREADS_ENV = "DEQFF_THREADS"

PathLike = Union[str, Path]


def setup_logging(verbosity: int = 0) -> None:
    """Configure the root logger once; 0 -> INFO, >= 1 -> DEBUG, < 0 -> WARNING."""
    if verbosity < 0:
        level = logging.WARNING
    elif verbosity == 0:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def configure_threads(env: Optional[dict] = None) -> Optional[int]:
    """Cap torch intra-op threads from $DEQFF_THREADS."""
    env = os.environ if env is None else env
    value = env.get(THREADS_ENV)
    if value is None or value == "":
        return None
    try:
        threads = int(value)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if threads < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {threads}")
    torch.set_num_threads(threads)
    return threads


def write_csv(df: pd.DataFrame, path: PathLike, comment: Optional[str] = None) -> Path:
    """CSV with a single leading '# generated ...' line; the body has no timestamps."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = dt.datetime.now().strftime("%Y-%m-%dT%H:%M:%S")
    header = f"# generated {stamp}" + (f" {comment}" if comment else "")
    with open(path, "w", newline="") as f:
        f.write(header + "\n")
        df.to_csv(f, index=False, float_format="%.10g")
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def csv_body(path: PathLike) -> str:
    """File contents without the generated-header line."""
    lines = Path(path).read_text().splitlines(keepends=True)
    return "".join(line for line in lines if not line.startswith("# generated"))
