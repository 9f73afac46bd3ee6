"""Qubit train generation, optical channel effects, and detection.

The source emits one polarization-encoded photon candidate per 20 ns
slot (50 MHz), locked to the same master clock as the classical stream.
The channel thins the train (transmittance x detector efficiency) and
adds background/dark events; the receiver measures in a random basis
(passive beam-splitter), adds detection-chain jitter, and time-tags with
a TDC on a fixed-resolution grid.

States are drawn per slot with a counter-based generator keyed from the
scenario seed, so any slot's transmitted state can be recomputed in O(1)
— this is what lets the matching stage (and the sparse scenario sampler
in `simulate`) look up the sent pattern for arbitrary slot indices
without materializing 5e8 emissions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .timebase import ClockModel, EdgeTrain, Instant, local_time, quantize

# detector / state channel codes; H and V span the Z basis, D and A the X basis
H, V, D, A = 0, 1, 2, 3
CHANNEL_LABELS = ("H", "V", "D", "A")
Z, X = 0, 1

# origin codes (simulation ground truth, stripped on export)
ORIGIN_SIGNAL, ORIGIN_BACKGROUND, ORIGIN_DARK, ORIGIN_UNKNOWN = 0, 1, 2, 3

MAX_DOPPLER_BETA = 1e-4

DEFAULT_QUBIT_RATE_HZ = 50e6

# transmitted-state ensemble over (H, V, D)
DEFAULT_STATE_PROBS = (0.25, 0.25, 0.5)


class ChannelConfigError(ValueError):
    """A channel parameter violates its sanity bounds."""


@dataclass(frozen=True)
class ChannelParams:
    """Loss, noise, detector and Doppler parameters of the quantum path."""

    transmittance: float = 1.0
    background_rate_hz: float = 0.0   # per detector
    dark_rate_hz: float = 0.0         # per detector
    detector_jitter_sigma_s: float = 0.0
    detector_efficiency: float = 1.0
    doppler_beta: float = 0.0

    def __post_init__(self):
        if not 0 < self.transmittance <= 1:
            raise ChannelConfigError(f"transmittance must be in (0, 1], got {self.transmittance}")
        if not 0 < self.detector_efficiency <= 1:
            raise ChannelConfigError(
                f"detector_efficiency must be in (0, 1], got {self.detector_efficiency}"
            )
        if self.background_rate_hz < 0 or self.dark_rate_hz < 0:
            raise ChannelConfigError("noise rates must be >= 0")
        if self.detector_jitter_sigma_s < 0:
            raise ChannelConfigError("detector_jitter_sigma_s must be >= 0")
        if abs(self.doppler_beta) >= MAX_DOPPLER_BETA:
            raise ChannelConfigError(
                f"|doppler_beta| must be < {MAX_DOPPLER_BETA}, got {self.doppler_beta}"
            )


@dataclass(frozen=True)
class QubitPattern:
    """Random access to the transmitted state of any slot index.

    The state of slot k is a deterministic function of (key, k); the
    same key drives emission generation and post-processing matching.
    """

    key: int
    probabilities: tuple

    @classmethod
    def from_seed(cls, seed: int, probabilities=DEFAULT_STATE_PROBS) -> "QubitPattern":
        p = tuple(float(x) for x in probabilities)
        if len(p) != 3 or any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-9:
            raise ValueError(f"state distribution over (H, V, D) must sum to 1, got {p}")
        return cls(rng.derive_key(seed, "qubit-states"), p)

    def states(self, slot_index) -> np.ndarray:
        """Transmitted state codes (H/V/D) for the given slot indices."""
        return rng.choice_at(self.key, slot_index, self.probabilities)


@dataclass(frozen=True)
class QubitEmission:
    """One emitted qubit: its slot, transmitter-local time, and state."""

    slot_index: int
    emission_time: Instant
    state: str


@dataclass(frozen=True)
class EmissionSet:
    """A contiguous run of slots with their transmitted states.

    Emission times are computed on demand (slot_index * 20 ns through
    the transmitter clock, with per-slot jitter) rather than stored, so
    second-long trains stay cheap.
    """

    states: np.ndarray
    tx_clock: ClockModel
    qubit_rate_hz: float = DEFAULT_QUBIT_RATE_HZ
    first_slot: int = 0

    def __len__(self) -> int:
        return int(self.states.size)

    @property
    def slot_index(self) -> np.ndarray:
        return self.first_slot + np.arange(len(self), dtype=np.int64)

    def emission_times_s(self, slots=None) -> np.ndarray:
        if slots is None:
            slots = self.slot_index
        slots = np.asarray(slots, dtype=np.int64)
        return np.asarray(
            local_time(
                self.tx_clock,
                slots / self.qubit_rate_hz,
                jitter_index=slots,
                jitter_stream="qubit-emit",
            )
        )

    def __getitem__(self, i: int) -> QubitEmission:
        slot = int(self.first_slot + i)
        t = self.emission_times_s(np.asarray([slot]))[0]
        return QubitEmission(slot, Instant(t), CHANNEL_LABELS[self.states[i]])


def generate_qubits(
    tx_clock: ClockModel,
    duration_s: float,
    distribution,
    *,
    seed: int,
    qubit_rate_hz: float = DEFAULT_QUBIT_RATE_HZ,
) -> EmissionSet:
    """One emission per nominal slot over `duration_s` of schedule time.

    States are i.i.d. over (H, V, D) with the given probabilities
    (`distribution` may also be a prebuilt QubitPattern), deterministic
    for a fixed seed.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    if isinstance(distribution, QubitPattern):
        pattern = distribution
    else:
        pattern = QubitPattern.from_seed(seed, distribution)
    n = int(np.floor(duration_s * qubit_rate_hz))
    states = pattern.states(np.arange(n, dtype=np.int64))
    return EmissionSet(states=states, tx_clock=tx_clock, qubit_rate_hz=qubit_rate_hz)


@dataclass(frozen=True)
class TransmitResult:
    """Channel output: which emissions survived, plus noise events."""

    kept_index: np.ndarray     # indices into the input EmissionSet
    noise_time_s: np.ndarray   # background + dark arrival times (receiver frame)
    noise_detector: np.ndarray
    noise_origin: np.ndarray


def transmit(
    emissions: EmissionSet,
    params: ChannelParams,
    duration_s: float,
    generator: np.random.Generator,
) -> TransmitResult:
    """Thin the train and draw Poisson background/dark events per detector."""
    p = params.transmittance * params.detector_efficiency
    kept = np.flatnonzero(generator.random(len(emissions)) < p)

    noise_t = []
    noise_det = []
    noise_orig = []
    for rate, origin in (
        (params.background_rate_hz, ORIGIN_BACKGROUND),
        (params.dark_rate_hz, ORIGIN_DARK),
    ):
        if rate <= 0:
            continue
        for det in (H, V, D, A):
            k = generator.poisson(rate * duration_s)
            noise_t.append(generator.random(k) * duration_s)
            noise_det.append(np.full(k, det, dtype=np.int8))
            noise_orig.append(np.full(k, origin, dtype=np.int8))
    if noise_t:
        t = np.concatenate(noise_t)
        det = np.concatenate(noise_det)
        orig = np.concatenate(noise_orig)
    else:
        t = np.empty(0)
        det = np.empty(0, dtype=np.int8)
        orig = np.empty(0, dtype=np.int8)
    return TransmitResult(kept, t, det, orig)


def measure_polarization(state, generator: np.random.Generator, basis=None):
    """Passive-basis polarization measurement.

    Basis is chosen uniformly (or forced via `basis` = "Z"/"X"); within
    the basis, detector probabilities follow the projection of the sent
    state: same-basis states project onto their own detector, the
    cross-basis state splits 50/50.  Accepts a state code array or a
    single state label; returns detector codes (or a label).
    """
    scalar = isinstance(state, str)
    if scalar:
        s = np.asarray([CHANNEL_LABELS.index(state)], dtype=np.int8)
    else:
        s = np.asarray(state, dtype=np.int8)
    if s.size and (s.min() < H or s.max() > D):
        raise ValueError("sent states must be H, V or D")
    n = s.size
    if basis is None:
        in_z = generator.random(n) < 0.5
    elif isinstance(basis, str):
        if basis not in ("Z", "X"):
            raise ValueError(f"basis must be 'Z', 'X' or None, got {basis!r}")
        in_z = np.full(n, basis == "Z")
    else:
        in_z = np.asarray(basis) == Z
    coin = generator.random(n)
    det = np.empty(n, dtype=np.int8)
    z = in_z
    det[z] = np.where(s[z] == D, np.where(coin[z] < 0.5, H, V), s[z])
    x = ~in_z
    det[x] = np.where(s[x] == D, D, np.where(coin[x] < 0.5, D, A))
    if scalar:
        return CHANNEL_LABELS[det[0]]
    return det


def detector_basis(detector) -> np.ndarray:
    """Z for the H/V detectors, X for D/A."""
    return np.where(np.asarray(detector) < D, Z, X).astype(np.int8)


@dataclass(frozen=True)
class DetectionEvent:
    """One time-tagged click: channel, TDC ticks, and true origin."""

    detector: str
    ticks: int
    origin: str = "unknown"


@dataclass(frozen=True)
class DetectionSet:
    """Time-tagged detections (struct of arrays, sorted by ticks).

    `origin` and `slot` are simulation-only ground truth (noise events
    carry slot -1); both are stripped when exporting, matching what real
    hardware would produce.
    """

    ticks: np.ndarray
    detector: np.ndarray
    origin: np.ndarray | None = None
    slot: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.ticks) < 0):
            raise ValueError("TDC ticks must be non-negative")

    def __len__(self) -> int:
        return int(self.ticks.size)

    def __getitem__(self, i: int) -> DetectionEvent:
        origin = "unknown"
        if self.origin is not None:
            origin = ("signal", "background", "dark", "unknown")[self.origin[i]]
        return DetectionEvent(CHANNEL_LABELS[self.detector[i]], int(self.ticks[i]), origin)

    def times_s(self, tdc_resolution_s: float) -> np.ndarray:
        return self.ticks * tdc_resolution_s

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("detector,ticks\n")
            for d, t in zip(self.detector, self.ticks):
                fh.write(f"{CHANNEL_LABELS[d]},{int(t)}\n")

    @classmethod
    def from_csv(cls, path) -> "DetectionSet":
        dets = []
        ticks = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "detector,ticks":
                raise ValueError(f"unexpected detection CSV header: {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                d, t = line.split(",")
                dets.append(CHANNEL_LABELS.index(d))
                ticks.append(int(t))
        return cls(
            ticks=np.asarray(ticks, dtype=np.int64),
            detector=np.asarray(dets, dtype=np.int8),
        )


def time_tag(
    arrival_time_s,
    detector,
    *,
    chain_jitter_sigma_s: float,
    tdc_resolution_s: float,
    generator: np.random.Generator,
    propagation_delay_s: float = 0.0,
    origin=None,
    slot=None,
) -> DetectionSet:
    """Detection-chain jitter plus TDC quantization, sorted by ticks.

    No dead time: events closer than one tick may share a tick value.
    """
    t = np.asarray(arrival_time_s, dtype=np.float64) + propagation_delay_s
    if chain_jitter_sigma_s > 0:
        t = t + generator.normal(0.0, chain_jitter_sigma_s, t.size)
    keep = t >= 0  # jitter can push the earliest events before the TDC epoch
    t = t[keep]
    det = np.asarray(detector, dtype=np.int8)[keep]
    ticks = quantize(t, tdc_resolution_s)
    order = np.argsort(ticks, kind="stable")
    return DetectionSet(
        ticks=ticks[order],
        detector=det[order],
        origin=None if origin is None else np.asarray(origin, dtype=np.int8)[keep][order],
        slot=None if slot is None else np.asarray(slot, dtype=np.int64)[keep][order],
    )


def apply_doppler(stream, beta: float):
    """Scale every timestamp by (1 + beta) — a common relative-motion shift.

    Must be applied identically to the classical and quantum streams of
    a scenario; accepts a time array, EdgeTrain, OokStream, or
    SyncPulseTrain and returns the same kind.
    """
    if abs(beta) >= MAX_DOPPLER_BETA:
        raise ValueError(f"|beta| must be < {MAX_DOPPLER_BETA}, got {beta}")
    from .classical_link import OokStream, SyncPulseTrain  # local import to avoid a cycle

    if isinstance(stream, OokStream):
        return OokStream(
            EdgeTrain(stream.edges.times_s * (1.0 + beta), label=stream.edges.label),
            stream.symbol_rate_hz,
        )
    if isinstance(stream, EdgeTrain):
        return EdgeTrain(stream.times_s * (1.0 + beta), label=stream.label)
    if isinstance(stream, SyncPulseTrain):
        scaled = EdgeTrain(stream.times_s * (1.0 + beta), label=stream.pulses.label)
        return replace(stream, pulses=scaled)
    return np.asarray(stream, dtype=np.float64) * (1.0 + beta)
