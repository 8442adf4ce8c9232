"""Device profiles and the cost ledger.

Latency is instructions-per-MAC x MACs / clock. Energy is time x power,
with separate compute and radio power draws. Communication time is
8 x bytes / link rate. Compute power is stored in watts (the product of
the hardware table's mW/MHz density and the clock) so that energy
arithmetic stays exact for the reference workloads.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

TIERS = ("ucd", "ap")
CATEGORIES = ("train_compute", "selection_compute", "comm_up", "comm_down")


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    cpu_freq_hz: float
    storage_bytes: int
    compute_power_w: float
    uplink_bps: float
    downlink_bps: float
    comm_power_w: float
    disconnect_prob: float
    instr_per_mac: float = 2.0

    def __post_init__(self):
        positive = (
            self.cpu_freq_hz, self.storage_bytes, self.compute_power_w,
            self.uplink_bps, self.downlink_bps, self.comm_power_w, self.instr_per_mac,
        )
        if any(v <= 0 for v in positive):
            raise ValueError(f"profile {self.name}: all rates and powers must be positive")
        if not 0.0 <= self.disconnect_prob <= 1.0:
            raise ValueError(f"profile {self.name}: disconnect_prob must be in [0, 1]")


# Wearable-class endpoint: 100 MHz, 5 MB storage, 0.05 mW/MHz -> 5 mW,
# symmetric 2 Mbit/s radio at 0.1 mW, offline half the time.
UCD = DeviceProfile(
    name="ucd",
    cpu_freq_hz=100e6,
    storage_bytes=5 * 2**20,
    compute_power_w=0.005,
    uplink_bps=2e6,
    downlink_bps=2e6,
    comm_power_w=0.0001,
    disconnect_prob=0.5,
)

# Phone/router-class upstream device: 2 GHz, 4 GB, 1.5 mW/MHz -> 3 W,
# 10/100 Mbit/s up/down at 10 W radio, always reachable.
AP = DeviceProfile(
    name="ap",
    cpu_freq_hz=2000e6,
    storage_bytes=4096 * 2**20,
    compute_power_w=3.0,
    uplink_bps=10e6,
    downlink_bps=100e6,
    comm_power_w=10.0,
    disconnect_prob=0.0,
)


def compute_latency(macs: int, profile: DeviceProfile) -> float:
    """Seconds to execute the MACs on the profile's CPU."""
    if macs < 0:
        raise ValueError("macs must be non-negative")
    return profile.instr_per_mac * macs / profile.cpu_freq_hz


def compute_energy(seconds: float, profile: DeviceProfile, mode: str) -> float:
    """Joules drawn over the interval by the compute or comm subsystem."""
    if seconds < 0:
        raise ValueError("seconds must be non-negative")
    if mode == "compute":
        return seconds * profile.compute_power_w
    if mode == "comm":
        return seconds * profile.comm_power_w
    raise ValueError(f"mode must be compute or comm, got {mode!r}")


def compute_comm(nbytes: int, direction: str, profile: DeviceProfile) -> tuple[float, float]:
    """(seconds, joules) to move nbytes over the profile's link."""
    if nbytes < 0:
        raise ValueError("bytes must be non-negative")
    if direction == "up":
        rate = profile.uplink_bps
    elif direction == "down":
        rate = profile.downlink_bps
    else:
        raise ValueError(f"direction must be up or down, got {direction!r}")
    seconds = 8 * nbytes / rate
    return seconds, compute_energy(seconds, profile, "comm")


class CostTotals(NamedTuple):
    macs: int
    nbytes: int
    seconds: float
    joules: float


class CostLedger:
    """Accumulates cost per (round, tier, category) cell.

    Each record() derives seconds and joules for its own increment, so
    the time-energy relationship is exact per entry. Callers must record
    in a fixed order (the simulator does: ascending client id) because
    float accumulation order is part of the determinism contract.
    """

    def __init__(self) -> None:
        self._cells: dict[tuple[int, str, str], list] = {}

    def record(
        self,
        round_idx: int,
        tier: str,
        category: str,
        profile: DeviceProfile,
        macs: int = 0,
        nbytes: int = 0,
    ) -> None:
        if tier not in TIERS:
            raise ValueError(f"unknown tier {tier!r}")
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}")
        if round_idx < 0:
            raise ValueError("round index must be non-negative")
        if category.startswith("comm_"):
            seconds, joules = compute_comm(nbytes, category.removeprefix("comm_"), profile)
        else:
            seconds = compute_latency(macs, profile)
            joules = compute_energy(seconds, profile, "compute")
        cell = self._cells.setdefault((round_idx, tier, category), [0, 0, 0.0, 0.0])
        cell[0] += macs
        cell[1] += nbytes
        cell[2] += seconds
        cell[3] += joules

    def cells(self) -> Iterator[tuple[tuple[int, str, str], CostTotals]]:
        """Cells in sorted key order; the canonical reduction order."""
        for key in sorted(self._cells):
            yield key, CostTotals(*self._cells[key])

    def totals(
        self,
        tier: str | None = None,
        category: str | None = None,
        round_idx: int | None = None,
    ) -> CostTotals:
        macs = nbytes = 0
        seconds = joules = 0.0
        for (r, t, c), cell in self.cells():
            if tier is not None and t != tier:
                continue
            if category is not None and c != category:
                continue
            if round_idx is not None and r != round_idx:
                continue
            macs += cell.macs
            nbytes += cell.nbytes
            seconds += cell.seconds
            joules += cell.joules
        return CostTotals(macs, nbytes, seconds, joules)

    def to_rows(self) -> list[dict]:
        return [
            {
                "round": r,
                "tier": t,
                "category": c,
                "macs": cell.macs,
                "bytes": cell.nbytes,
                "seconds": cell.seconds,
                "joules": cell.joules,
            }
            for (r, t, c), cell in self.cells()
        ]


def storage_overflow(used_bytes: int, profile: DeviceProfile) -> bool:
    """True when the working set no longer fits the device's storage."""
    return used_bytes > profile.storage_bytes
