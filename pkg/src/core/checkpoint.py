# src/core/checkpoint.py

from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from src.common.binary_format import read_container, write_container
from src.common.errors import ContractViolation
from src.core.optimizer import Adam
from src.core.parameters import ParameterStore
from src.core.rng import Rng

CHECKPOINT_KIND = "checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class CheckpointData:
    metadata: Dict[str, Any]
    arrays: Dict[str, np.ndarray]

    def parameter_names(self, group: str) -> list:
        prefix = f"{group}/param/"
        return [name[len(prefix):] for name in self.arrays if name.startswith(prefix)]

    def restore(self, group: str, store: ParameterStore, optimizer: Optional[Adam] = None) -> None:
        prefix = f"{group}/param/"
        values = {name[len(prefix):]: arr for name, arr in self.arrays.items() if name.startswith(prefix)}
        extra = set(values) - set(store.names())
        if extra:
            raise ContractViolation(f"Checkpoint group '{group}' holds unknown parameters: {sorted(extra)}")
        store.load(values)
        if optimizer is not None:
            opt_meta = self.metadata.get("optimizers", {}).get(group)
            if opt_meta is None:
                raise ContractViolation(f"Checkpoint has no optimizer state for group '{group}'")
            opt_prefix = f"{group}/"
            opt_arrays = {
                name[len(opt_prefix):]: arr
                for name, arr in self.arrays.items()
                if name.startswith(opt_prefix + "adam.")
            }
            optimizer.load_state(opt_meta, opt_arrays)

    def rng(self) -> Optional[Rng]:
        state = self.metadata.get("rng")
        return Rng.from_state(state) if state is not None else None


def write_checkpoint(
    path: str,
    metadata: Mapping[str, Any],
    groups: Mapping[str, Tuple[ParameterStore, Optional[Adam]]],
    rng: Optional[Rng] = None,
) -> None:
    """
    Dumps every named parameter array (and optimizer moments) per group, plus
    RNG stream states, into one versioned container file.
    """
    arrays: Dict[str, np.ndarray] = {}
    optimizers: Dict[str, Any] = {}
    for group, (store, optimizer) in groups.items():
        for name, value in store.items():
            arrays[f"{group}/param/{name}"] = value
        if optimizer is not None:
            for name, value in optimizer.state_arrays().items():
                arrays[f"{group}/{name}"] = value
            optimizers[group] = optimizer.state_metadata()

    header = {
        "checkpoint_version": CHECKPOINT_VERSION,
        **dict(metadata),
        "optimizers": optimizers,
        "rng": rng.state() if rng is not None else None,
    }
    write_container(path, CHECKPOINT_KIND, header, arrays)


def read_checkpoint(path: str) -> CheckpointData:
    metadata, arrays = read_container(path, expected_kind=CHECKPOINT_KIND)
    if metadata.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ContractViolation(f"Unsupported checkpoint version {metadata.get('checkpoint_version')}")
    return CheckpointData(metadata=metadata, arrays=arrays)
