"""Ensemble configuration shared by both reconciling hosts."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

P_SUM_TOL = 1e-12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MetConfig:
    """A MET IBLT ensemble: cell-type sizes, type distribution, degree matrix.

    ``degrees[i][j]`` is the number of type-``i`` cells a type-``j`` pair is
    mapped into. Cells are laid out by type, type 0 first.
    """

    m: tuple[int, ...]
    p: tuple[float, ...]
    degrees: tuple[tuple[int, ...], ...]
    seed: int = 0
    nu: int = 32
    kappa: int = 32
    extendable: bool = False
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        object.__setattr__(self, "degrees", tuple(tuple(int(a) for a in row) for row in self.degrees))
        self._validate()

    def _validate(self) -> None:
        if not self.m or any(mi < 1 for mi in self.m):
            raise ConfigError(f"cell-type sizes must be positive, got {self.m}")
        if not self.p or any(pj < 0 or not math.isfinite(pj) for pj in self.p):
            raise ConfigError(f"type distribution must be non-negative, got {self.p}")
        if abs(math.fsum(self.p) - 1.0) > P_SUM_TOL:
            raise ConfigError(f"type distribution sums to {math.fsum(self.p)!r}, not 1")
        if len(self.degrees) != len(self.m):
            raise ConfigError("degree matrix needs one row per cell type")
        for row in self.degrees:
            if len(row) != len(self.p):
                raise ConfigError("degree matrix needs one column per data type")
            if any(a < 0 for a in row):
                raise ConfigError("degrees must be non-negative")
        if any(a < 1 for a in self.degrees[0]):
            # pairs untouched by type-0 cells could go unnoticed by the receiver
            raise ConfigError("every data type needs at least one type-1 cell")
        for bits, label in ((self.nu, "nu"), (self.kappa, "kappa")):
            if bits <= 0 or bits % 8:
                raise ConfigError(f"{label} must be a positive multiple of 8, got {bits}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")

    @property
    def d_c(self) -> int:
        return len(self.m)

    @property
    def d_d(self) -> int:
        return len(self.p)

    @property
    def num_cells(self) -> int:
        return sum(self.m)

    @property
    def offsets(self) -> tuple[int, ...]:
        """Index of the first cell of each type, plus the total length."""
        out = [0]
        for mi in self.m:
            out.append(out[-1] + mi)
        return tuple(out)

    @property
    def cell_size(self) -> int:
        """Serialized bytes per cell: 4-byte count, key, value."""
        return 4 + self.nu // 8 + self.kappa // 8

    def column(self, j: int) -> tuple[int, ...]:
        return tuple(row[j] for row in self.degrees)

    def cell_type(self, index: int) -> int:
        offs = self.offsets
        if not 0 <= index < offs[-1]:
            raise IndexError(index)
        for i in range(self.d_c):
            if index < offs[i + 1]:
                return i
        raise AssertionError("unreachable")

    def truncated(self, num_types: int) -> MetConfig:
        if not 1 <= num_types <= self.d_c:
            raise ConfigError(f"cannot keep {num_types} of {self.d_c} cell types")
        return MetConfig(
            m=self.m[:num_types],
            p=self.p,
            degrees=self.degrees[:num_types],
            seed=self.seed,
            nu=self.nu,
            kappa=self.kappa,
            extendable=self.extendable,
            name=self.name,
        )

    def extended(self, extra_types: int) -> MetConfig:
        """Append cell types: each doubles the last size and repeats the last row."""
        if extra_types < 0:
            raise ConfigError("extra_types must be >= 0")
        if extra_types == 0:
            return self
        if not self.extendable:
            raise ConfigError("configuration is not extendable")
        m = list(self.m)
        rows = list(self.degrees)
        for _ in range(extra_types):
            m.append(2 * m[-1])
            rows.append(rows[-1])
        return MetConfig(m=tuple(m), p=self.p, degrees=tuple(rows), seed=self.seed,
                         nu=self.nu, kappa=self.kappa, extendable=True, name=self.name)

    def with_seed(self, seed: int) -> MetConfig:
        return MetConfig(m=self.m, p=self.p, degrees=self.degrees, seed=seed, nu=self.nu,
                         kappa=self.kappa, extendable=self.extendable, name=self.name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "m": list(self.m),
            "p": list(self.p),
            "D": [list(row) for row in self.degrees],
            "seed": self.seed,
            "nu": self.nu,
            "kappa": self.kappa,
            "extendable": self.extendable,
        }

    def digest(self) -> bytes:
        """8-byte fingerprint of everything that affects the cell mapping."""
        payload = self.to_dict()
        payload.pop("name")
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.blake2b(blob, digest_size=8).digest()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MetConfig:
        if "m" in data:
            m = data["m"]
        else:
            m = sizes_from_ratios(data["m_ratios"], int(data["num_cells"]))
        return cls(
            m=tuple(m),
            p=tuple(data["p"]),
            degrees=tuple(tuple(row) for row in data["D"]),
            seed=int(data.get("seed", 0)),
            nu=int(data.get("nu", 32)),
            kappa=int(data.get("kappa", 32)),
            extendable=bool(data.get("extendable", False)),
            name=str(data.get("name", "")),
        )

    @classmethod
    def regular(cls, k: int, m: int, **kwargs: Any) -> MetConfig:
        """Single cell type, single data type, every pair in ``k`` cells."""
        return cls(m=(m,), p=(1.0,), degrees=((k,),), **kwargs)


def sizes_from_ratios(ratios: Sequence[float], total: int) -> tuple[int, ...]:
    """Split ``total`` cells by ``ratios``; remainders go to the earliest types."""
    weight = math.fsum(ratios)
    exact = [total * r / weight for r in ratios]
    sizes = [int(math.floor(x)) for x in exact]
    short = total - sum(sizes)
    for i in range(short):
        sizes[i % len(sizes)] += 1
    return tuple(sizes)


def load_config(path: str | Path) -> MetConfig:
    from jsonschema import ValidationError

    from metiblt.schemas import validate

    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        validate(data, "config")
    except ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from exc
    try:
        return MetConfig.from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_config(config: MetConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
