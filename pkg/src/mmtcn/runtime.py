"""Precision and determinism switches shared by the torch modules."""

import os
import random

import numpy as np
import torch

DETERMINISTIC_ENV = "MMGF_DETERMINISTIC"


def deterministic_mode() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "") == "1"


def float_dtype() -> torch.dtype:
    return torch.float64 if deterministic_mode() else torch.float32


def configure(seed: int | None = None) -> None:
    """Apply the precision mode and (optionally) seed every RNG in one place."""
    torch.set_default_dtype(float_dtype())
    if deterministic_mode():
        torch.use_deterministic_algorithms(True)
    if seed is not None:
        random.seed(seed)
        np.random.seed(seed % 2**32)
        torch.manual_seed(seed)


def as_tensor(x, dtype: torch.dtype | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    a = np.array(x)  # copy: inputs may be read-only views
    if dtype is None:
        dtype = torch.float64 if a.dtype == np.float64 else float_dtype()
    return torch.as_tensor(a, dtype=dtype)
