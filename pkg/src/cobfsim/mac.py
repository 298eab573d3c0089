"""Deterministic event-driven MAC for two coordinated BSSs.

Implements DCF contention with binary exponential backoff, the coordinated
TXOP signaling sequence (invite/response, joint-NDP sounding with uplink
compressed feedback, trigger, simultaneous A-MPDUs, BlockACKs), legacy
RTS/CTS TXOPs on a shared 80 MHz or split 40 MHz channels, batch-Poisson
traffic and per-packet latency accounting. The event queue orders strictly
by (time, sequence), so runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .channel import (
    ChannelConfig,
    ChannelTensor,
    LsNoiseParams,
    add_ls_noise,
    evolve_channel,
    scale_power,
)
from .csi import (
    BeamformingVectorSet,
    CsiReport,
    LearnedCompressorProfile,
    apply_learned_compression,
    extract_v,
    givens_roundtrip,
    report_size_bits,
)
from .precoding import (
    McsTable,
    ScheduleSet,
    build_cea_zf_with_fallback,
    effective_sinr,
    per_at,
    select_mcs,
    sinr_per_subcarrier,
)

TIME_EPS = 1e-12


@dataclass(frozen=True)
class MacParams:
    """MAC timing and framing parameters (defaults follow the 802.11bn draft era)."""

    txop_limit: float = 5.484e-3
    cw_min: int = 16
    cw_max: int = 1024
    payload_bytes: int = 1500
    mac_header_bits: int = 240
    mpdu_delimiter_bits: int = 32
    service_bits: int = 16
    tail_bits: int = 18
    uhr_preamble: float = 88.8e-6
    legacy_preamble: float = 20e-6
    legacy_rate: float = 6e6
    sifs: float = 16e-6
    difs: float = 34e-6
    slot: float = 9e-6
    csi_max_age: float = 25e-3
    guard_interval: float = 0.8e-6
    feedback_mcs: int = 1          # fixed uplink MCS for CB report frames
    retry_limit: int = 7
    tx_psd_dbm_mhz: float = 5.0
    mobility_step: float = 0.1
    direction_period: float = 2.0
    full_buffer_depth: int = 512

    def validate(self) -> None:
        if self.cw_min > self.cw_max:
            raise ValueError("cw_min must not exceed cw_max")
        for cw in (self.cw_min, self.cw_max):
            if cw < 1 or cw & (cw - 1):
                raise ValueError(f"contention windows must be powers of two, got {cw}")
        for name in ("txop_limit", "sifs", "difs", "slot", "legacy_rate",
                     "uhr_preamble", "legacy_preamble", "csi_max_age"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def tx_power_per_sc(self, subcarrier_spacing: float) -> float:
        """Per-subcarrier transmit power from the PSD limit [W]."""
        psd_w_hz = 10.0 ** ((self.tx_psd_dbm_mhz - 30.0) / 10.0) / 1e6
        return psd_w_hz * subcarrier_spacing


@dataclass(frozen=True)
class FrameSizes:
    """Control-frame payload sizes in bytes, all sent at the legacy rate."""

    cobf_invite: int = 48
    cobf_response: int = 32
    sounding_invite: int = 40
    sounding_response: int = 32
    ndpa: int = 48
    bfrp: int = 40
    cobf_trigger: int = 56
    rts: int = 20
    cts: int = 14
    block_ack: int = 32


def load_frame_sizes(path=None) -> FrameSizes:
    if path is None:
        path = Path(__file__).parent / "data" / "frame_sizes.json"
    with open(path) as fh:
        return FrameSizes(**json.load(fh))


@dataclass(slots=True)
class Packet:
    id: int
    sta_id: int
    size_bytes: int
    t_arr: float
    t_rec: float | None = None
    retry_count: int = 0

    def mark_received(self, t_rec: float) -> None:
        if t_rec < self.t_arr:
            raise ValueError("reception cannot precede arrival")
        self.t_rec = t_rec


def packet_latency(p: Packet) -> float:
    """Queuing + contention + transmission delay of one delivered packet."""
    if p.t_rec is None:
        raise ValueError(f"packet {p.id} was never received")
    return p.t_rec - p.t_arr


@dataclass(frozen=True)
class TrafficConfig:
    load_bps: float
    batch_mean: float = 8.0
    payload_bytes: int = 1500

    @property
    def packet_rate(self) -> float:
        return self.load_bps / (self.payload_bytes * 8.0)


def bpp_generate(cfg: TrafficConfig, horizon: float, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Batch-Poisson arrivals: (batch times, batch sizes) over [0, horizon).

    Batch interarrivals are Exp(packet_rate / B); sizes are geometric with
    mean B so the generated packet rate matches the offered load.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if cfg.load_bps <= 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    lam_b = cfg.packet_rate / cfg.batch_mean
    # draw in blocks until the horizon is covered
    times = []
    t = 0.0
    block = max(16, int(lam_b * horizon * 1.2) + 16)
    while t < horizon:
        gaps = rng.exponential(1.0 / lam_b, size=block)
        cum = t + np.cumsum(gaps)
        times.append(cum)
        t = float(cum[-1])
    times = np.concatenate(times)
    times = times[times < horizon]
    sizes = rng.geometric(1.0 / cfg.batch_mean, size=times.size)
    return times, sizes


class EventKind(IntEnum):
    ARRIVAL = 0
    BACKOFF_EXPIRY = 1
    FRAME_END = 2      # trace-only: emitted per frame inside a TXOP
    TXOP_END = 3
    CSI_EXPIRY = 4     # trace-only: report aged past the limit
    MOBILITY_STEP = 5


@dataclass(frozen=True)
class TxopRecord:
    owner: int
    mode: str                      # cobf | legacy | declined_legacy
    t_start: float
    t_end: float
    sounding_airtime: float
    data_airtime: float
    csi_bits_fed_back: int
    scheduled: tuple[int, ...]
    mpdus_ok: int
    mpdus_failed: int
    txop_limit: float = 5.484e-3

    def __post_init__(self):
        if self.t_end - self.t_start > self.txop_limit + TIME_EPS:
            raise AssertionError(
                f"TXOP duration {self.t_end - self.t_start:.6e} exceeds limit"
            )
        if self.sounding_airtime < 0 or self.data_airtime < 0:
            raise AssertionError("airtimes must be non-negative")
        if self.sounding_airtime + self.data_airtime > self.t_end - self.t_start + TIME_EPS:
            raise AssertionError("airtimes exceed the TXOP duration")


# ---------------------------------------------------------------------------
# Airtime arithmetic


def symbol_time(subcarrier_spacing: float, guard_interval: float) -> float:
    return 1.0 / subcarrier_spacing + guard_interval


def legacy_frame_airtime(size_bytes: int, mac: MacParams) -> float:
    return mac.legacy_preamble + size_bytes * 8.0 / mac.legacy_rate


def ampdu_airtime(num_mpdus: int, bits_per_sc_per_symbol: float, n_sc: int,
                  mac: MacParams, subcarrier_spacing: float,
                  payload_bytes: int | None = None) -> float:
    """A-MPDU duration: preamble plus OFDM-symbol-quantized aggregate bits."""
    if num_mpdus < 1:
        raise ValueError("an A-MPDU carries at least one MPDU")
    payload = mac.payload_bytes if payload_bytes is None else payload_bytes
    bits = (mac.service_bits + mac.tail_bits
            + num_mpdus * (mac.mpdu_delimiter_bits + mac.mac_header_bits + payload * 8))
    per_symbol = bits_per_sc_per_symbol * n_sc
    symbols = math.ceil(bits / per_symbol)
    return mac.uhr_preamble + symbols * symbol_time(subcarrier_spacing, mac.guard_interval)


def max_mpdus_within(budget: float, bits_per_sc_per_symbol: float, n_sc: int,
                     mac: MacParams, subcarrier_spacing: float) -> int:
    """Largest MPDU count whose A-MPDU airtime fits in the budget."""
    t_sym = symbol_time(subcarrier_spacing, mac.guard_interval)
    symbols = math.floor((budget - mac.uhr_preamble) / t_sym + TIME_EPS)
    if symbols < 1:
        return 0
    capacity = symbols * bits_per_sc_per_symbol * n_sc
    per_mpdu = mac.mpdu_delimiter_bits + mac.mac_header_bits + mac.payload_bytes * 8
    return max(0, int((capacity - mac.service_bits - mac.tail_bits) // per_mpdu))


def uhr_frame_airtime(payload_bits: int, bits_per_sc_per_symbol: float, n_sc: int,
                      mac: MacParams, subcarrier_spacing: float) -> float:
    """Single UHR PPDU (used for uplink CB report frames)."""
    bits = mac.service_bits + mac.mac_header_bits + payload_bits + mac.tail_bits
    symbols = math.ceil(bits / (bits_per_sc_per_symbol * n_sc))
    return mac.uhr_preamble + symbols * symbol_time(subcarrier_spacing, mac.guard_interval)


def ndp_airtime(n_ltf: int, mac: MacParams, subcarrier_spacing: float) -> float:
    return mac.uhr_preamble + n_ltf * symbol_time(subcarrier_spacing, mac.guard_interval)


def dcf_backoff(cw: int, mac: MacParams, rng: np.random.Generator) -> tuple[int, float]:
    """Draw a DCF backoff: (slot count, DIFS + slots wait time)."""
    slots = int(rng.integers(0, cw))
    return slots, mac.difs + slots * mac.slot


def schedule_stas(hol_ages: dict[int, dict[int, float]], ap_ids: tuple[int, int],
                  per_bss_limit: int = 2) -> ScheduleSet:
    """Pick up to `per_bss_limit` STAs per BSS by head-of-line packet age.

    `hol_ages[ap][sta]` is the age of the oldest queued packet; ties break
    towards the lower STA id.
    """
    picks = {}
    for ap in ap_ids:
        ranked = sorted(hol_ages.get(ap, {}).items(), key=lambda kv: (-kv[1], kv[0]))
        picks[ap] = tuple(sta for sta, _ in ranked[:per_bss_limit])
    return ScheduleSet.for_two_aps(ap_ids, picks[ap_ids[0]], picks[ap_ids[1]])


# ---------------------------------------------------------------------------
# Compressors


class GivensCompressor:
    """IEEE 802.11 compressed beamforming with configurable grouping and bits."""

    kind = "givens"

    def __init__(self, n_g: int = 16, phi_bits: int = 9, psi_bits: int = 7):
        self.n_g = n_g
        self.phi_bits = phi_bits
        self.psi_bits = psi_bits

    def compress(self, h_est: ChannelTensor, rng: np.random.Generator
                 ) -> tuple[BeamformingVectorSet, int]:
        vs = extract_v(h_est, n_g=self.n_g)
        reconstructed, report = givens_roundtrip(vs, self.phi_bits, self.psi_bits)
        return reconstructed, report.bit_size


class LearnedCompressor:
    """Profile-driven emulation of a trained CSI compressor."""

    kind = "learned"

    def __init__(self, profile: LearnedCompressorProfile, n_g: int = 16):
        profile.validate()
        self.profile = profile
        self.n_g = n_g

    def compress(self, h_est: ChannelTensor, rng: np.random.Generator
                 ) -> tuple[BeamformingVectorSet, int]:
        vs = extract_v(h_est, n_g=self.n_g)
        return apply_learned_compression(vs, self.profile, h_est.los, rng)


# ---------------------------------------------------------------------------
# Simulation state


@dataclass
class StaState:
    sta_id: int
    ap_id: int
    pos: np.ndarray
    room_bounds: tuple[float, float, float, float]   # xmin, xmax, ymin, ymax
    direction: np.ndarray = field(default_factory=lambda: np.zeros(2))
    queue: deque = field(default_factory=deque)
    delivered_bits: int = 0


@dataclass
class ApState:
    ap_id: int
    pos: np.ndarray
    sta_ids: tuple[int, ...]
    cw: int = 16
    medium: int = 0


@dataclass
class LinkState:
    tensor: ChannelTensor
    seed_rng: np.random.Generator   # yields evolve seeds, one per update
    ref_distance: float


@dataclass
class Medium:
    medium_id: int
    ap_ids: tuple[int, ...]
    sc_lo: int
    sc_hi: int
    busy_until: float = 0.0
    round_id: int = 0
    round_active: bool = False

    @property
    def n_sc(self) -> int:
        return self.sc_hi - self.sc_lo


class Simulation:
    """One seeded deployment run. All state is private to the instance."""

    def __init__(self, *, mode: str, mac: MacParams, chan_cfg: ChannelConfig,
                 noise: LsNoiseParams, mcs_table: McsTable, frames: FrameSizes,
                 compressor, aps: list[ApState], stas: list[StaState],
                 links: dict[tuple[int, int], LinkState],
                 arrivals: dict[int, tuple[np.ndarray, np.ndarray]],
                 duration: float, mac_seed: int, mobility_seed: int,
                 full_buffer: bool = False, collect_trace: bool = False):
        if mode not in ("cobf", "legacy80", "legacy40"):
            raise ValueError(f"unknown mode {mode!r}")
        mac.validate()
        self.mode = mode
        self.mac = mac
        self.chan_cfg = chan_cfg
        self.noise = noise
        self.mcs_table = mcs_table
        self.frames = frames
        self.compressor = compressor
        self.aps = {ap.ap_id: ap for ap in aps}
        self.stas = {sta.sta_id: sta for sta in stas}
        self.links = links
        self.arrivals = arrivals
        self.duration = duration
        self.full_buffer = full_buffer
        self.rng = np.random.default_rng(mac_seed)
        self.mobility_rng = np.random.default_rng(mobility_seed)

        for ap in self.aps.values():
            ap.cw = mac.cw_min
        if mode == "legacy40":
            half = chan_cfg.n_sc // 2
            ids = sorted(self.aps)
            self.media = [
                Medium(0, (ids[0],), 0, half),
                Medium(1, (ids[1],), half, chan_cfg.n_sc),
            ]
            for i, ap_id in enumerate(ids):
                self.aps[ap_id].medium = i
        else:
            self.media = [Medium(0, tuple(sorted(self.aps)), 0, chan_cfg.n_sc)]

        self.t_sym = symbol_time(chan_cfg.subcarrier_spacing, mac.guard_interval)
        self.p_sc = mac.tx_power_per_sc(chan_cfg.subcarrier_spacing)
        self.fb_entry = mcs_table[mac.feedback_mcs]

        # CSI reports cached per (sta, ap); absent means stale.
        self.csi: dict[tuple[int, int], CsiReport] = {}

        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.trace: list[dict] | None = [] if collect_trace else None

        self.generated = 0
        self.delivered = 0
        self.dropped = 0
        self.queued = 0
        self.next_packet_id = 0
        self.collisions = 0
        self.records: list[TxopRecord] = []
        self.packets: list[Packet] = []

        for sta_id, (times, sizes) in arrivals.items():
            for t, n in zip(times, sizes):
                self._push(float(t), EventKind.ARRIVAL, (sta_id, int(n)))
        n_steps = int(duration / mac.mobility_step)
        for k in range(1, n_steps + 1):
            self._push(k * mac.mobility_step, EventKind.MOBILITY_STEP, k)
        self._redraw_directions()

    # -- event plumbing -----------------------------------------------------

    def _push(self, time: float, kind: EventKind, data) -> None:
        heapq.heappush(self.heap, (time, self.seq, int(kind), data))
        self.seq += 1

    def _emit_trace(self, time: float, kind: str, **fields) -> None:
        if self.trace is not None:
            self.trace.append({"t": time, "kind": kind, **fields})

    def run(self) -> None:
        if self.full_buffer:
            for medium in self.media:
                self._refill_full_buffer(0.0, medium)
                self._maybe_start_round(medium, 0.0)
        while self.heap:
            time, seq, kind, data = heapq.heappop(self.heap)
            if time > self.duration:
                break
            self.now = time
            kind = EventKind(kind)
            self._emit_trace(time, kind.name.lower(), seq=seq)
            if kind == EventKind.ARRIVAL:
                self._on_arrival(time, data)
            elif kind == EventKind.BACKOFF_EXPIRY:
                self._on_backoff_expiry(time, data)
            elif kind == EventKind.TXOP_END:
                self._on_txop_end(time, data)
            elif kind == EventKind.MOBILITY_STEP:
                self._on_mobility(time, data)
            assert self.delivered + self.dropped + self.queued == self.generated, (
                "packet conservation violated"
            )

    # -- traffic ------------------------------------------------------------

    def _new_packet(self, sta_id: int, t_arr: float) -> Packet:
        pkt = Packet(id=self.next_packet_id, sta_id=sta_id,
                     size_bytes=self.mac.payload_bytes, t_arr=t_arr)
        self.next_packet_id += 1
        self.generated += 1
        self.queued += 1
        self.packets.append(pkt)
        return pkt

    def _on_arrival(self, time: float, data) -> None:
        sta_id, count = data
        sta = self.stas[sta_id]
        for _ in range(count):
            sta.queue.append(self._new_packet(sta_id, time))
        medium = self.media[self.aps[sta.ap_id].medium]
        self._maybe_start_round(medium, time)

    def _refill_full_buffer(self, time: float, medium: Medium) -> None:
        for ap_id in medium.ap_ids:
            for sta_id in self.aps[ap_id].sta_ids:
                sta = self.stas[sta_id]
                while len(sta.queue) < self.mac.full_buffer_depth:
                    sta.queue.append(self._new_packet(sta_id, time))

    def _ap_buffered(self, ap_id: int) -> bool:
        return any(self.stas[s].queue for s in self.aps[ap_id].sta_ids)

    # -- mobility -----------------------------------------------------------

    def _redraw_directions(self) -> None:
        for sta in self.stas.values():
            theta = self.mobility_rng.uniform(0.0, 2.0 * np.pi)
            sta.direction = np.array([np.cos(theta), np.sin(theta)])

    def _on_mobility(self, time: float, step: int) -> None:
        if step % max(1, round(self.mac.direction_period / self.mac.mobility_step)) == 0:
            self._redraw_directions()
        dist = self.chan_cfg.sta_speed * self.mac.mobility_step
        for sta in self.stas.values():
            xmin, xmax, ymin, ymax = sta.room_bounds
            pos = sta.pos[:2] + sta.direction * dist
            # reflect off the room walls
            for axis, (lo, hi) in enumerate(((xmin, xmax), (ymin, ymax))):
                if pos[axis] < lo:
                    pos[axis] = lo + (lo - pos[axis])
                    sta.direction[axis] *= -1
                elif pos[axis] > hi:
                    pos[axis] = hi - (pos[axis] - hi)
                    sta.direction[axis] *= -1
                pos[axis] = min(max(pos[axis], lo), hi)
            sta.pos = np.array([pos[0], pos[1], sta.pos[2]])

    # -- channel access -----------------------------------------------------

    def _channel_now(self, sta_id: int, ap_id: int, time: float) -> ChannelTensor:
        """True channel of a link at `time`: lazy evolve plus path-loss tracking."""
        link = self.links[(sta_id, ap_id)]
        dt = time - link.tensor.timestamp
        if dt > 0:
            seed = int(link.seed_rng.integers(2**63))
            link.tensor = evolve_channel(link.tensor, dt, self.chan_cfg, seed)
        d_now = float(np.linalg.norm(self.stas[sta_id].pos - self.aps[ap_id].pos))
        if abs(d_now - link.ref_distance) > 1e-9:
            los = link.tensor.los
            factor = (self.chan_cfg.pathloss_linear(d_now, los)
                      / self.chan_cfg.pathloss_linear(link.ref_distance, los))
            link.tensor = scale_power(link.tensor, factor)
            link.ref_distance = d_now
        return link.tensor

    def _drain_simultaneous_arrivals(self, now: float) -> None:
        # arrivals stamped at exactly `now` join the contention round that is
        # about to start, as they would after sensing the same idle DIFS
        while (self.heap and self.heap[0][0] == now
               and self.heap[0][2] == int(EventKind.ARRIVAL)):
            _, _, _, data = heapq.heappop(self.heap)
            sta_id, count = data
            sta = self.stas[sta_id]
            for _ in range(count):
                sta.queue.append(self._new_packet(sta_id, now))

    def _maybe_start_round(self, medium: Medium, now: float) -> None:
        if medium.round_active:
            return
        self._drain_simultaneous_arrivals(now)
        start = max(now, medium.busy_until)
        if self.full_buffer:
            self._refill_full_buffer(now, medium)
        contenders = []
        for ap_id in medium.ap_ids:   # fixed id order keeps draws deterministic
            if self._ap_buffered(ap_id):
                draw, wait = dcf_backoff(self.aps[ap_id].cw, self.mac, self.rng)
                contenders.append((ap_id, draw, wait))
        if not contenders:
            return
        medium.round_active = True
        medium.round_id += 1
        best = min(draw for _, draw, _ in contenders)
        winners = [ap for ap, draw, _ in contenders if draw == best]
        expiry = start + self.mac.difs + best * self.mac.slot
        self._push(expiry, EventKind.BACKOFF_EXPIRY,
                   (medium.medium_id, medium.round_id, tuple(winners)))

    def _on_backoff_expiry(self, time: float, data) -> None:
        medium_id, round_id, winners = data
        medium = self.media[medium_id]
        if not medium.round_active or medium.round_id != round_id:
            return
        medium.round_active = False
        if len(winners) > 1:
            # simultaneous expiry: both initial frames collide
            self.collisions += 1
            first_frame = self.frames.cobf_invite if self.mode == "cobf" else self.frames.rts
            busy = legacy_frame_airtime(first_frame, self.mac)
            for ap_id in winners:
                ap = self.aps[ap_id]
                ap.cw = min(ap.cw * 2, self.mac.cw_max)
            medium.busy_until = time + busy
            self._push(medium.busy_until, EventKind.TXOP_END, (medium_id, None))
            return
        ap_id = winners[0]
        if not self._ap_buffered(ap_id):
            self._maybe_start_round(medium, time)
            return
        if self.mode == "cobf":
            record = self._run_cobf_txop(ap_id, time, medium)
        else:
            record = self._run_legacy_txop(ap_id, time, medium)
        self.records.append(record)
        self.aps[ap_id].cw = self.mac.cw_min
        medium.busy_until = record.t_end
        self._push(record.t_end, EventKind.TXOP_END, (medium.medium_id, record.mode))

    def _on_txop_end(self, time: float, data) -> None:
        medium = self.media[data[0]]
        self._maybe_start_round(medium, time)

    # -- TXOP construction ----------------------------------------------------

    def _hol_ages(self, ap_ids, now: float) -> dict[int, dict[int, float]]:
        ages: dict[int, dict[int, float]] = {}
        for ap_id in ap_ids:
            ages[ap_id] = {}
            for sta_id in self.aps[ap_id].sta_ids:
                q = self.stas[sta_id].queue
                if q:
                    ages[ap_id][sta_id] = now - q[0].t_arr
        return ages

    def _sound_one_sta(self, sta_id: int, t_ndp: float) -> tuple[int, float]:
        """Measure, compress and store fresh reports for both APs.

        Returns total fed-back bits and the uplink feedback-frame airtime:
        under joint sounding the STA reports the channel of each AP, so the
        report payload doubles relative to single-AP feedback.
        """
        total_bits = 0
        for ap_id in sorted(self.aps):
            h_true = self._channel_now(sta_id, ap_id, t_ndp)
            h_est = add_ls_noise(h_true, self.noise, self.rng)
            vectors, bits = self.compressor.compress(h_est, self.rng)
            self.csi[(sta_id, ap_id)] = CsiReport(
                kind=self.compressor.kind, vectors=vectors, bit_size=bits,
                sta_id=sta_id, ap_id=ap_id, timestamp=t_ndp,
            )
            total_bits += bits
        airtime = uhr_frame_airtime(
            total_bits, self.fb_entry.data_bits_per_sc_per_symbol,
            self.media[0].n_sc, self.mac, self.chan_cfg.subcarrier_spacing,
        )
        return total_bits, airtime

    def _sounding_upper_bound(self, n_phase1: int, n_phase2: int) -> float:
        """Worst-case sounding duration, used to fit the schedule to the TXOP."""
        mac, frames = self.mac, self.frames
        if self.compressor.kind == "learned":
            worst_bits = 2 * int(self.compressor.profile.size_bits.max)
        else:
            worst_bits = 2 * report_size_bits(
                self.chan_cfg.n_sc, self.compressor.n_g, self.chan_cfg.n_t, 1,
                self.compressor.phi_bits, self.compressor.psi_bits)
        fb = uhr_frame_airtime(worst_bits, self.fb_entry.data_bits_per_sc_per_symbol,
                               self.media[0].n_sc, mac, self.chan_cfg.subcarrier_spacing)
        ndp = ndp_airtime(self.noise.n_ltf, mac, self.chan_cfg.subcarrier_spacing)
        total = (mac.sifs + legacy_frame_airtime(frames.sounding_invite, mac)
                 + mac.sifs + legacy_frame_airtime(frames.sounding_response, mac))
        for n_stas in (n_phase1, n_phase2):
            if n_stas == 0:
                continue
            total += (mac.sifs + legacy_frame_airtime(frames.ndpa, mac)
                      + mac.sifs + ndp
                      + mac.sifs + legacy_frame_airtime(frames.bfrp, mac)
                      + n_stas * (mac.sifs + fb))
        return total

    def _run_sounding(self, schedule: ScheduleSet, owner: int, t: float
                      ) -> tuple[float, float, int]:
        """Execute the joint-NDP exchange; returns (t_after, airtime, fed-back bits)."""
        mac, frames = self.mac, self.frames
        t0 = t
        t += mac.sifs + legacy_frame_airtime(frames.sounding_invite, mac)
        self._emit_trace(t, "frame-end", frame="sounding_invite")
        t += mac.sifs + legacy_frame_airtime(frames.sounding_response, mac)
        self._emit_trace(t, "frame-end", frame="sounding_response")
        ndp = ndp_airtime(self.noise.n_ltf, mac, self.chan_cfg.subcarrier_spacing)
        bits_total = 0
        order = [owner] + [ap for ap in schedule.ap_ids if ap != owner]
        for ap_id in order:
            stas = schedule.in_bss[ap_id]
            if not stas:
                continue
            t += mac.sifs + legacy_frame_airtime(frames.ndpa, mac)
            self._emit_trace(t, "frame-end", frame="ndpa", ap=ap_id)
            t_ndp = t + mac.sifs + ndp
            t = t_ndp
            self._emit_trace(t, "frame-end", frame="joint_ndp", ap=ap_id)
            t += mac.sifs + legacy_frame_airtime(frames.bfrp, mac)
            self._emit_trace(t, "frame-end", frame="bfrp", ap=ap_id)
            for sta_id in stas:
                bits, airtime = self._sound_one_sta(sta_id, t_ndp)
                bits_total += bits
                t += mac.sifs + airtime
                self._emit_trace(t, "frame-end", frame="cb_report", sta=sta_id, bits=bits)
        return t, t - t0, bits_total

    def _stale_stas(self, schedule: ScheduleSet, t_data: float) -> list[int]:
        stale = []
        for ap_id in schedule.ap_ids:
            for sta_id in schedule.in_bss[ap_id]:
                fresh = True
                for other_ap in schedule.ap_ids:
                    report = self.csi.get((sta_id, other_ap))
                    if report is None or t_data - report.timestamp > self.mac.csi_max_age:
                        fresh = False
                if not fresh:
                    stale.append(sta_id)
        return stale

    def _drop_youngest(self, schedule: ScheduleSet, ages: dict[int, dict[int, float]]
                       ) -> ScheduleSet:
        scheduled = [(ages[ap][sta], sta, ap) for ap in schedule.ap_ids
                     for sta in schedule.in_bss[ap]]
        scheduled.sort(key=lambda x: (x[0], -x[1]))   # youngest first, higher id first
        _, victim, _ = scheduled[0]
        in_bss = {ap: tuple(s for s in stas if s != victim)
                  for ap, stas in schedule.in_bss.items()}
        a, b = schedule.ap_ids
        return ScheduleSet.for_two_aps((a, b), in_bss[a], in_bss[b])

    def _data_phase(self, precoders, schedule: ScheduleSet, t: float, t_start: float,
                    sinr_by_sta: dict[int, float]) -> tuple[float, float, int, int]:
        """Simultaneous A-MPDUs plus BlockACKs; returns (t_end, data_airtime, ok, failed)."""
        mac = self.mac
        ba_time = mac.sifs + legacy_frame_airtime(self.frames.block_ack, mac)
        t_data = t + mac.sifs
        budget = t_start + mac.txop_limit - t_data - ba_time
        n_sc = self.media[0].n_sc

        plans = []   # (sta_id, entry, num_mpdus)
        for ap_id, pre in precoders.per_ap.items():
            for sta_id in pre.sta_ids:
                eff = sinr_by_sta[sta_id]
                entry = self.mcs_table[select_mcs(eff, self.mcs_table)]
                fit = max_mpdus_within(budget, entry.data_bits_per_sc_per_symbol,
                                       n_sc, mac, self.chan_cfg.subcarrier_spacing)
                num = min(len(self.stas[sta_id].queue), fit)
                if num > 0:
                    plans.append((sta_id, entry, num, eff))
        if not plans:
            return t, 0.0, 0, 0

        airtime = max(
            ampdu_airtime(num, entry.data_bits_per_sc_per_symbol, n_sc, mac,
                          self.chan_cfg.subcarrier_spacing)
            for _, entry, num, _ in plans
        )
        t_ba_end = t_data + airtime + ba_time
        ok = failed = 0
        for sta_id, entry, num, eff in plans:
            ok_i, failed_i = self._deliver_mpdus(sta_id, num, eff, entry, t_ba_end)
            ok += ok_i
            failed += failed_i
        self._emit_trace(t_data + airtime, "frame-end", frame="ampdu")
        self._emit_trace(t_ba_end, "frame-end", frame="block_ack")
        return t_ba_end, airtime, ok, failed

    def _deliver_mpdus(self, sta_id: int, num: int, eff_sinr: float, entry,
                       t_rec: float) -> tuple[int, int]:
        """Pop MPDUs, draw per-MPDU outcomes, re-queue or drop failures."""
        sta = self.stas[sta_id]
        per = per_at(eff_sinr, entry)
        outcomes = self.rng.random(num) >= per
        delivered = []
        retried = []
        for success in outcomes:
            pkt = sta.queue.popleft()
            if success:
                pkt.mark_received(t_rec)
                delivered.append(pkt)
            else:
                pkt.retry_count += 1
                if pkt.retry_count > self.mac.retry_limit:
                    self.dropped += 1
                    self.queued -= 1
                else:
                    retried.append(pkt)
        for pkt in reversed(retried):   # failed MPDUs return to the queue head
            sta.queue.appendleft(pkt)
        self.delivered += len(delivered)
        self.queued -= len(delivered)
        sta.delivered_bits += sum(p.size_bytes * 8 for p in delivered)
        return len(delivered), int(num - np.count_nonzero(outcomes))

    def _run_cobf_txop(self, owner: int, t_start: float, medium: Medium) -> TxopRecord:
        mac, frames = self.mac, self.frames
        other = next(ap for ap in medium.ap_ids if ap != owner)
        t = t_start + legacy_frame_airtime(frames.cobf_invite, mac)
        self._emit_trace(t, "frame-end", frame="cobf_invite", ap=owner)
        t += mac.sifs + legacy_frame_airtime(frames.cobf_response, mac)
        self._emit_trace(t, "frame-end", frame="cobf_response", ap=other)

        if not self._ap_buffered(other):
            # coordinated AP declines; owner falls back to a legacy A-MPDU
            t_end, data_airtime, ok, failed, sched = self._single_user_data(owner, t, t_start)
            return TxopRecord(owner=owner, mode="declined_legacy", t_start=t_start,
                              t_end=t_end, sounding_airtime=0.0, data_airtime=data_airtime,
                              csi_bits_fed_back=0, scheduled=sched, mpdus_ok=ok,
                              mpdus_failed=failed, txop_limit=mac.txop_limit)

        ages = self._hol_ages(medium.ap_ids, t_start)
        schedule = schedule_stas(ages, (owner, other))
        trigger_time = legacy_frame_airtime(frames.cobf_trigger, mac)

        sounding_airtime = 0.0
        csi_bits = 0
        t_data_projection = t + mac.sifs + trigger_time + mac.sifs
        stale = self._stale_stas(schedule, t_data_projection)
        for sta_id in stale:
            self._emit_trace(t, "csi_expiry", sta=sta_id)
        if stale:
            # fit the sounding exchange inside the TXOP, shrinking the schedule
            # from the youngest head-of-line STA if necessary
            while True:
                n1 = len(schedule.in_bss[owner])
                n2 = len(schedule.in_bss[other])
                bound = self._sounding_upper_bound(n1, n2)
                if t + bound <= t_start + mac.txop_limit or n1 + n2 <= 1:
                    break
                schedule = self._drop_youngest(schedule, ages)
            t, sounding_airtime, csi_bits = self._run_sounding(schedule, owner, t)

        t += mac.sifs + trigger_time
        self._emit_trace(t, "frame-end", frame="cobf_trigger", ap=owner)

        ok = failed = 0
        data_airtime = 0.0
        t_end = t
        if t + mac.sifs < t_start + mac.txop_limit:
            vectors = {}
            missing = False
            for ap_id in schedule.ap_ids:
                for sta_id in schedule.in_bss[ap_id] + schedule.obss[ap_id]:
                    report = self.csi.get((sta_id, ap_id))
                    if report is None:
                        missing = True
                        break
                    vectors[(sta_id, ap_id)] = report.vectors
                if missing:
                    break
            if not missing and any(schedule.in_bss.values()):
                precoders, schedule = build_cea_zf_with_fallback(
                    vectors, schedule, self.p_sc)
                t_tx = t + mac.sifs
                true_now = {}
                for ap_id in schedule.ap_ids:
                    for sta_id in schedule.in_bss[ap_id]:
                        for other_ap in schedule.ap_ids:
                            true_now[(sta_id, other_ap)] = self._channel_now(
                                sta_id, other_ap, t_tx)
                        # precoding must never use CSI older than the limit
                        age = t_tx - self.csi[(sta_id, ap_id)].timestamp
                        assert age <= mac.csi_max_age + TIME_EPS, "stale CSI in precoder"
                per_sc = sinr_per_subcarrier(true_now, precoders, schedule, self.noise)
                eff = {sta: effective_sinr(v) for sta, v in per_sc.items()}
                t_end, data_airtime, ok, failed = self._data_phase(
                    precoders, schedule, t, t_start, eff)

        scheduled = tuple(s for ap in schedule.ap_ids for s in schedule.in_bss[ap])
        return TxopRecord(owner=owner, mode="cobf", t_start=t_start, t_end=t_end,
                          sounding_airtime=sounding_airtime, data_airtime=data_airtime,
                          csi_bits_fed_back=csi_bits, scheduled=scheduled,
                          mpdus_ok=ok, mpdus_failed=failed, txop_limit=mac.txop_limit)

    def _single_user_data(self, ap_id: int, t: float, t_start: float,
                          medium: Medium | None = None
                          ) -> tuple[float, float, int, int, tuple[int, ...]]:
        """SU A-MPDU with matched beamforming over the medium's subcarriers."""
        mac = self.mac
        medium = medium or self.media[self.aps[ap_id].medium]
        ages = self._hol_ages((ap_id,), t)
        if not ages.get(ap_id):
            return t, 0.0, 0, 0, ()
        sta_id = max(ages[ap_id].items(), key=lambda kv: (kv[1], -kv[0]))[0]

        ba_time = mac.sifs + legacy_frame_airtime(self.frames.block_ack, mac)
        t_data = t + mac.sifs
        budget = t_start + mac.txop_limit - t_data - ba_time
        h = self._channel_now(sta_id, ap_id, t_data).gains[medium.sc_lo:medium.sc_hi]
        # matched beamforming: per-subcarrier SNR is ||h||^2 * P / noise
        snr = (np.linalg.norm(h, axis=1) ** 2) * self.p_sc / self.noise.noise_power
        eff = effective_sinr(snr)
        entry = self.mcs_table[select_mcs(eff, self.mcs_table)]
        fit = max_mpdus_within(budget, entry.data_bits_per_sc_per_symbol,
                               medium.n_sc, mac, self.chan_cfg.subcarrier_spacing)
        num = min(len(self.stas[sta_id].queue), fit)
        if num < 1:
            return t, 0.0, 0, 0, (sta_id,)
        airtime = ampdu_airtime(num, entry.data_bits_per_sc_per_symbol, medium.n_sc,
                                mac, self.chan_cfg.subcarrier_spacing)
        t_ba_end = t_data + airtime + ba_time
        ok, failed = self._deliver_mpdus(sta_id, num, eff, entry, t_ba_end)
        self._emit_trace(t_data + airtime, "frame-end", frame="ampdu", sta=sta_id)
        self._emit_trace(t_ba_end, "frame-end", frame="block_ack", sta=sta_id)
        return t_ba_end, airtime, ok, failed, (sta_id,)

    def _run_legacy_txop(self, owner: int, t_start: float, medium: Medium) -> TxopRecord:
        mac, frames = self.mac, self.frames
        t = t_start + legacy_frame_airtime(frames.rts, mac)
        self._emit_trace(t, "frame-end", frame="rts", ap=owner)
        t += mac.sifs + legacy_frame_airtime(frames.cts, mac)
        self._emit_trace(t, "frame-end", frame="cts")
        t_end, data_airtime, ok, failed, sched = self._single_user_data(
            owner, t, t_start, medium)
        return TxopRecord(owner=owner, mode="legacy", t_start=t_start, t_end=t_end,
                          sounding_airtime=0.0, data_airtime=data_airtime,
                          csi_bits_fed_back=0, scheduled=sched, mpdus_ok=ok,
                          mpdus_failed=failed, txop_limit=mac.txop_limit)
