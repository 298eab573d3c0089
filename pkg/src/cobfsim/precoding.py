"""CEA-ZF precoding across two coordinated BSSs, SINR evaluation and MCS selection.

The precoder stacks the fed-back beamforming vectors of the in-BSS and OBSS
scheduled STAs, takes the right pseudo-inverse per subcarrier group, keeps
the in-BSS columns and renormalizes them to unit norm with an equal power
split. SINR is always evaluated against true channels, so feedback
compression error and CSI aging show up as residual interference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .channel import ChannelTensor, LsNoiseParams
from .csi import BeamformingVectorSet

COND_LIMIT = 1e10


class PrecodingError(RuntimeError):
    """The stacked feedback matrix is too ill-conditioned to invert."""


@dataclass(frozen=True)
class ScheduleSet:
    """Scheduled STAs per AP: in-BSS sets (<= 2 each) plus the OBSS view."""

    in_bss: dict[int, tuple[int, ...]]    # ap_id -> ordered STA ids
    obss: dict[int, tuple[int, ...]]      # ap_id -> ordered OBSS STA ids

    def __post_init__(self):
        all_scheduled = [s for stas in self.in_bss.values() for s in stas]
        if len(set(all_scheduled)) != len(all_scheduled):
            raise ValueError("a STA may be scheduled by exactly one AP")
        for ap, stas in self.in_bss.items():
            if len(stas) > 2:
                raise ValueError(f"AP {ap} schedules {len(stas)} STAs; limit is 2")
            others = [s for other, stas2 in self.in_bss.items() if other != ap
                      for s in stas2]
            if sorted(self.obss[ap]) != sorted(others):
                raise ValueError(f"OBSS set of AP {ap} must mirror the other APs' schedules")

    @classmethod
    def for_two_aps(cls, ap_ids: tuple[int, int], stas_a: tuple[int, ...],
                    stas_b: tuple[int, ...]) -> "ScheduleSet":
        a, b = ap_ids
        return cls(in_bss={a: tuple(stas_a), b: tuple(stas_b)},
                   obss={a: tuple(stas_b), b: tuple(stas_a)})

    @property
    def ap_ids(self) -> tuple[int, ...]:
        return tuple(self.in_bss)

    def serving_ap(self, sta_id: int) -> int:
        for ap, stas in self.in_bss.items():
            if sta_id in stas:
                return ap
        raise KeyError(f"STA {sta_id} is not scheduled")


@dataclass(frozen=True)
class ApPrecoder:
    """Per-group unit-norm precoding columns for one AP's scheduled streams."""

    ap_id: int
    sta_ids: tuple[int, ...]
    columns: np.ndarray       # complex, shape (n_vs, n_t, n_streams)
    stream_power: float       # W per stream per subcarrier
    n_g: int
    n_sc: int

    def expand(self) -> np.ndarray:
        """Per-subcarrier columns, shape (n_sc, n_t, n_streams)."""
        n_vs = self.columns.shape[0]
        idx = np.minimum(np.arange(self.n_sc) // self.n_g, n_vs - 1)
        return self.columns[idx]


@dataclass(frozen=True)
class PrecoderSet:
    per_ap: dict[int, ApPrecoder]


def build_cea_zf(vectors: dict[tuple[int, int], BeamformingVectorSet],
                 schedule: ScheduleSet, tx_power: float) -> PrecoderSet:
    """Right pseudo-inverse of the stacked feedback, in-BSS columns kept.

    `vectors[(sta_id, ap_id)]` is what STA sta_id fed back about AP ap_id's
    channel. `tx_power` is the per-subcarrier transmit power of one AP,
    split equally over its scheduled streams.
    """
    per_ap = {}
    for ap in schedule.ap_ids:
        order = list(schedule.in_bss[ap]) + list(schedule.obss[ap])
        if not schedule.in_bss[ap]:
            continue
        stack = np.stack([vectors[(sta, ap)].vectors for sta in order], axis=2)
        ref = vectors[(order[0], ap)]
        gram = np.einsum("gtm,gtn->gmn", stack.conj(), stack)
        # Gram eigenvalues are squared singular values of the stack
        eig = np.linalg.eigvalsh(gram)
        worst = float(np.max(eig[:, -1] / np.maximum(eig[:, 0], 1e-300)))
        if not np.isfinite(worst) or worst > COND_LIMIT**2 or np.any(eig[:, 0] <= 0):
            raise PrecodingError(
                f"stacked feedback for AP {ap} is rank deficient "
                f"(cond={np.sqrt(worst):.3g})"
            )
        pinv = stack @ np.linalg.inv(gram)
        kept = pinv[:, :, : len(schedule.in_bss[ap])]
        kept = kept / np.linalg.norm(kept, axis=1, keepdims=True)
        per_ap[ap] = ApPrecoder(
            ap_id=ap,
            sta_ids=tuple(schedule.in_bss[ap]),
            columns=kept,
            stream_power=tx_power / len(schedule.in_bss[ap]),
            n_g=ref.n_g,
            n_sc=ref.n_sc,
        )
    return PrecoderSet(per_ap=per_ap)


def build_cea_zf_with_fallback(vectors, schedule: ScheduleSet, tx_power: float
                               ) -> tuple[PrecoderSet, ScheduleSet]:
    """Retry on rank deficiency, dropping the most recently added OBSS STA first."""
    current = schedule
    while True:
        try:
            return build_cea_zf(vectors, current, tx_power), current
        except PrecodingError:
            obss = {ap: list(stas) for ap, stas in current.obss.items()}
            longest = max(obss, key=lambda ap: len(obss[ap]))
            if obss[longest]:
                # dropping an OBSS entry means unscheduling that STA everywhere
                victim = obss[longest][-1]
            else:
                victims = [s for stas in current.in_bss.values() for s in stas]
                if len(victims) <= 1:
                    raise
                victim = victims[-1]
            in_bss = {ap: tuple(s for s in stas if s != victim)
                      for ap, stas in current.in_bss.items()}
            obss = {ap: tuple(s for s in stas if s != victim)
                    for ap, stas in current.obss.items()}
            current = ScheduleSet(in_bss=in_bss, obss=obss)


def sinr_per_subcarrier(true_channels: dict[tuple[int, int], ChannelTensor],
                        precoders: PrecoderSet, schedule: ScheduleSet,
                        noise: LsNoiseParams) -> dict[int, np.ndarray]:
    """SINR of every scheduled STA on every subcarrier, true channels applied.

    Signal and interference are |h w|^2 weighted by the per-stream power;
    the noise term is the thermal power over one subcarrier times the
    receiver noise figure.
    """
    expanded = {ap: pre.expand() for ap, pre in precoders.per_ap.items()}
    noise_w = noise.noise_power
    out = {}
    for ap, pre in precoders.per_ap.items():
        for idx, sta in enumerate(pre.sta_ids):
            h = true_channels[(sta, ap)].gains          # (n_sc, n_t)
            proj = np.einsum("st,stm->sm", h, expanded[ap])
            powers = np.abs(proj) ** 2 * pre.stream_power
            signal = powers[:, idx]
            intra = powers.sum(axis=1) - signal
            inter = np.zeros_like(signal)
            for other, pre_o in precoders.per_ap.items():
                if other == ap:
                    continue
                if (sta, other) not in true_channels:
                    raise KeyError(f"missing interference channel for STA {sta}, AP {other}")
                h_o = true_channels[(sta, other)].gains
                proj_o = np.einsum("st,stm->sm", h_o, expanded[other])
                inter += (np.abs(proj_o) ** 2).sum(axis=1) * pre_o.stream_power
            out[sta] = signal / (intra + inter + noise_w)
    return out


def effective_sinr(per_subcarrier: np.ndarray) -> float:
    """Arithmetic mean of per-subcarrier SINRs, in linear scale."""
    arr = np.asarray(per_subcarrier, dtype=float)
    if arr.size == 0:
        raise ValueError("effective SINR of an empty array is undefined")
    if np.any(arr < 0):
        raise ValueError("SINR values must be non-negative")
    return float(arr.mean())


# ---------------------------------------------------------------------------
# MCS selection


@dataclass(frozen=True)
class McsEntry:
    index: int
    modulation: str
    code_rate: str
    data_bits_per_sc_per_symbol: float
    min_sinr_db: float


@dataclass(frozen=True)
class McsTable:
    entries: tuple[McsEntry, ...]

    def __post_init__(self):
        thr = [e.min_sinr_db for e in self.entries]
        rates = [e.data_bits_per_sc_per_symbol for e in self.entries]
        if any(b <= a for a, b in zip(thr, thr[1:])):
            raise ValueError("MCS thresholds must be strictly increasing")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("MCS data rates must be strictly increasing")

    def __getitem__(self, index: int) -> McsEntry:
        return self.entries[index]

    def __len__(self) -> int:
        return len(self.entries)


def load_mcs_table(path=None) -> McsTable:
    if path is None:
        path = Path(__file__).parent / "data" / "mcs_table.json"
    with open(path) as fh:
        raw = json.load(fh)
    entries = tuple(
        McsEntry(
            index=int(e["index"]),
            modulation=e["modulation"],
            code_rate=e["code_rate"],
            data_bits_per_sc_per_symbol=float(Fraction(e["data_bits_per_sc_per_symbol"]))
            if isinstance(e["data_bits_per_sc_per_symbol"], str)
            else float(e["data_bits_per_sc_per_symbol"]),
            min_sinr_db=float(e["min_sinr_db"]),
        )
        for e in raw
    )
    return McsTable(entries=entries)


def select_mcs(eff_sinr: float, table: McsTable) -> int:
    """Highest MCS whose 10%-PER threshold is met; floor at index 0."""
    if eff_sinr <= 0.0:
        return 0
    sinr_db = 10.0 * np.log10(eff_sinr)
    best = 0
    for entry in table.entries:
        if entry.min_sinr_db <= sinr_db:
            best = entry.index
    return best


def per_at(eff_sinr: float, entry: McsEntry, slope_per_db: float = 2.0) -> float:
    """Packet error rate: logistic around the 10%-PER threshold."""
    if eff_sinr <= 0.0:
        return 1.0
    sinr_db = 10.0 * np.log10(eff_sinr)
    x = slope_per_db * (sinr_db - entry.min_sinr_db) + np.log(9.0)
    return float(1.0 / (1.0 + np.exp(min(x, 50.0))))
