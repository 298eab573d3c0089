"""Frequency-selective MIMO downlink channels with temporal correlation.

Channels are drawn from a clustered tapped-delay-line model (exponential
power-delay profile, Rayleigh or Rician cluster fading) and transformed to
the frequency domain, replacing ray-traced channels while keeping the same
dimensions, LOS/NLOS dichotomy and path-loss behaviour. Temporal evolution
is a first-order Gauss-Markov process with a Jakes-consistent correlation
coefficient, and imperfect CSI is modelled as additive LS estimation noise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import j0

C_LIGHT = 299_792_458.0

# Header of the binary channel container: magic, version, n_sc, n_t, n_samples.
_CONTAINER_MAGIC = b"CHNS"
_CONTAINER_VERSION = 1
_HEADER_STRUCT = struct.Struct(">4sHIII")


class ConfigurationError(ValueError):
    """A channel configuration failed validation."""


@dataclass(frozen=True)
class ChannelConfig:
    """Scene and channel parameters (defaults: 80 MHz indoor office at 5.3 GHz)."""

    n_sc: int = 980
    n_t: int = 16
    carrier_frequency: float = 5.3e9
    bandwidth: float = 80e6
    subcarrier_spacing: float = 78.125e3
    num_clusters: int = 8
    delay_spread: float = 50e-9
    rician_k_db: float = 10.0          # LOS clusters only
    pathloss_exponent: float = 2.0
    nlos_pathloss_exponent: float = 3.3
    nlos_penalty_db: float = 8.0       # wall penetration
    reference_loss_db: float = 46.93   # free-space loss at 1 m, 5.3 GHz
    sta_speed: float = 0.25            # m/s (0.9 km/h)
    room_size: tuple[float, float, float] = (5.0, 5.0, 3.0)
    corridor_width: float = 1.0
    rooms_per_side: int = 2

    def validate(self) -> None:
        positives = {
            "n_sc": self.n_sc,
            "n_t": self.n_t,
            "carrier_frequency": self.carrier_frequency,
            "bandwidth": self.bandwidth,
            "subcarrier_spacing": self.subcarrier_spacing,
            "num_clusters": self.num_clusters,
            "delay_spread": self.delay_spread,
            "sta_speed": self.sta_speed,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if self.n_sc * self.subcarrier_spacing > self.bandwidth:
            raise ConfigurationError(
                "data subcarriers exceed the channel bandwidth: "
                f"{self.n_sc} x {self.subcarrier_spacing} > {self.bandwidth}"
            )

    @property
    def room_pitch(self) -> float:
        return self.room_size[0] + self.corridor_width

    def scene_bounds(self) -> tuple[float, float, float]:
        extent = self.rooms_per_side * self.room_size[0] + (
            self.rooms_per_side - 1
        ) * self.corridor_width
        return (extent, extent, self.room_size[2])

    def room_of(self, pos) -> int | None:
        """Room index for a position, or None if it falls in the corridor."""
        ix = int(pos[0] // self.room_pitch)
        iy = int(pos[1] // self.room_pitch)
        in_x = pos[0] - ix * self.room_pitch <= self.room_size[0]
        in_y = pos[1] - iy * self.room_pitch <= self.room_size[1]
        if not (in_x and in_y):
            return None
        return iy * self.rooms_per_side + ix

    def line_of_sight(self, sta_pos, ap_pos) -> bool:
        """Same-room rule: shared room index means LOS, anything else NLOS."""
        room_s, room_a = self.room_of(sta_pos), self.room_of(ap_pos)
        return room_s is not None and room_s == room_a

    def pathloss_linear(self, distance: float, los: bool) -> float:
        """Mean per-entry channel power |h|^2 at the given link distance."""
        d = max(distance, 0.1)
        if los:
            pl_db = self.reference_loss_db + 10.0 * self.pathloss_exponent * np.log10(d)
        else:
            pl_db = (
                self.reference_loss_db
                + 10.0 * self.nlos_pathloss_exponent * np.log10(d)
                + self.nlos_penalty_db
            )
        return 10.0 ** (-pl_db / 10.0)


@dataclass(frozen=True)
class LsNoiseParams:
    """LS channel-estimation noise parameters.

    `pilot_energy` is the mean-square pilot amplitude per subcarrier, derived
    by default from a 5 dBm/MHz transmit PSD. `noise_bandwidth` selects the
    convention for the thermal noise power (per-subcarrier by default; set to
    the full sounding bandwidth to switch)."""

    n0_w_hz: float = 10.0 ** (-174.0 / 10.0) / 1000.0   # -174 dBm/Hz
    nf_db: float = 7.0
    n_ltf: int = 16
    pilot_energy: float = 10.0 ** ((5.0 - 30.0) / 10.0) / 1e6 * 78.125e3
    noise_bandwidth: float = 78.125e3

    def validate(self) -> None:
        if self.n_ltf < 1:
            raise ConfigurationError(f"n_ltf must be >= 1, got {self.n_ltf}")
        if self.pilot_energy <= 0:
            raise ConfigurationError("pilot_energy must be positive")

    @property
    def noise_power(self) -> float:
        """Thermal noise power over `noise_bandwidth`, noise figure included [W]."""
        return self.n0_w_hz * 10.0 ** (self.nf_db / 10.0) * self.noise_bandwidth

    @property
    def estimation_variance(self) -> float:
        """Per-entry variance of the LS estimation noise."""
        return self.noise_power / (self.n_ltf * self.pilot_energy)


@dataclass(frozen=True)
class ChannelTensor:
    """Complex channel gains over subcarriers x Tx antennas for one STA-AP link.

    Gains are complex64: single precision is far below every physical noise
    floor here and halves the memory traffic of the event loop's hot path."""

    gains: np.ndarray   # complex64, shape (n_sc, n_t), linear amplitude
    sta_id: int
    ap_id: int
    timestamp: float
    los: bool

    def __post_init__(self):
        self.gains.setflags(write=False)

    @property
    def n_sc(self) -> int:
        return self.gains.shape[0]

    @property
    def n_t(self) -> int:
        return self.gains.shape[1]


def _cluster_profile(cfg: ChannelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Cluster delays and normalized exponential power-delay profile."""
    delays = np.arange(cfg.num_clusters) * cfg.delay_spread
    powers = np.exp(-np.arange(cfg.num_clusters, dtype=float))
    powers /= powers.sum()
    return delays, powers


def generate_channel(cfg: ChannelConfig, sta_pos, ap_pos, seed: int) -> ChannelTensor:
    """Draw a fresh frequency-domain channel for one STA-AP link.

    Deterministic for fixed (cfg, positions, seed). The frequency response is
    the DFT of a clustered exponential power-delay profile with Rayleigh
    (NLOS) or Rician (LOS, first cluster) fading; the mean per-entry power
    equals the path-loss model at the link distance.
    """
    cfg.validate()
    bounds = cfg.scene_bounds()
    for pos in (sta_pos, ap_pos):
        if not all(0.0 <= pos[i] <= bounds[i] for i in range(3)):
            raise ConfigurationError(f"position {tuple(pos)} outside scene bounds {bounds}")

    rng = np.random.default_rng(seed)
    sta = np.asarray(sta_pos, dtype=float)
    ap = np.asarray(ap_pos, dtype=float)
    distance = float(np.linalg.norm(sta - ap))
    los = cfg.line_of_sight(sta, ap)
    mean_power = cfg.pathloss_linear(distance, los)

    delays, powers = _cluster_profile(cfg)
    shape = (cfg.num_clusters, cfg.n_t)
    diffuse_power = powers.copy()
    taps = np.zeros(shape, dtype=complex)
    if los:
        # Rician first cluster: deterministic component with a seeded phase.
        k_lin = 10.0 ** (cfg.rician_k_db / 10.0)
        diffuse_power[0] = powers[0] / (k_lin + 1.0)
        phases = rng.uniform(0.0, 2.0 * np.pi, cfg.n_t)
        taps[0] = np.sqrt(powers[0] * k_lin / (k_lin + 1.0)) * np.exp(1j * phases)
    scale = np.sqrt(diffuse_power / 2.0)[:, None]
    taps = taps + scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    # DFT of the tapped-delay line onto the data subcarrier grid.
    freqs = np.arange(cfg.n_sc) * cfg.subcarrier_spacing
    steering = np.exp(-2j * np.pi * np.outer(freqs, delays))  # (n_sc, clusters)
    gains = (np.sqrt(mean_power) * (steering @ taps)).astype(np.complex64)

    return ChannelTensor(gains=gains, sta_id=-1, ap_id=-1, timestamp=0.0, los=los)


def evolve_channel(h: ChannelTensor, dt: float, cfg: ChannelConfig, seed: int) -> ChannelTensor:
    """Gauss-Markov update with Jakes correlation alpha = J0(2 pi f_d dt).

    The innovation is scaled to the tensor's mean entry power, so average
    power is preserved while old and new entries decorrelate with dt.
    """
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return h
    f_doppler = cfg.sta_speed * cfg.carrier_frequency / C_LIGHT
    alpha = float(j0(2.0 * np.pi * f_doppler * dt))
    rng = np.random.default_rng(seed)
    mean_power = float(np.vdot(h.gains, h.gains).real) / h.gains.size
    # work on the interleaved float view: one draw, no complex temporaries
    out = rng.standard_normal((h.gains.shape[0], 2 * h.gains.shape[1]),
                              dtype=np.float32)
    out *= np.float32(np.sqrt(max(0.0, 1.0 - alpha**2) * mean_power / 2.0))
    out += np.float32(alpha) * h.gains.view(np.float32)
    return replace(h, gains=out.view(np.complex64), timestamp=h.timestamp + dt)


def add_ls_noise(h: ChannelTensor, params: LsNoiseParams, rng: np.random.Generator) -> ChannelTensor:
    """Return h plus i.i.d. circularly-symmetric LS estimation noise."""
    params.validate()
    out = rng.standard_normal((h.gains.shape[0], 2 * h.gains.shape[1]),
                              dtype=np.float32)
    out *= np.float32(np.sqrt(params.estimation_variance / 2.0))
    out += h.gains.view(np.float32)
    return replace(h, gains=out.view(np.complex64))


def scale_power(h: ChannelTensor, factor: float) -> ChannelTensor:
    """Rescale all entries by sqrt(factor), e.g. to track a new link distance."""
    if factor < 0:
        raise ValueError("power factor must be >= 0")
    return replace(h, gains=h.gains * np.float32(np.sqrt(factor)))


def export_channel_dataset(path, cfg: ChannelConfig, tensors: list[ChannelTensor],
                           room_ids: list[int] | None = None) -> None:
    """Write a binary channel container plus its JSON sidecar.

    Layout: header (magic, version, n_sc, n_t, n_samples big-endian), then per
    sample n_sc*n_t interleaved real/imag float32 pairs, row-major over
    subcarriers. The sidecar `<path>.json` holds the ChannelConfig and the
    per-sample LOS/room labels the trainer conditions on.
    """
    path = Path(path)
    for t in tensors:
        if t.gains.shape != (cfg.n_sc, cfg.n_t):
            raise ValueError("tensor dimensions do not match the config")
    with open(path, "wb") as fh:
        fh.write(_HEADER_STRUCT.pack(_CONTAINER_MAGIC, _CONTAINER_VERSION,
                                     cfg.n_sc, cfg.n_t, len(tensors)))
        for t in tensors:
            interleaved = np.empty((cfg.n_sc, cfg.n_t, 2), dtype=">f4")
            interleaved[..., 0] = t.gains.real
            interleaved[..., 1] = t.gains.imag
            fh.write(interleaved.tobytes())
    sidecar = {
        "config": {
            "n_sc": cfg.n_sc,
            "n_t": cfg.n_t,
            "carrier_frequency": cfg.carrier_frequency,
            "bandwidth": cfg.bandwidth,
            "subcarrier_spacing": cfg.subcarrier_spacing,
            "num_clusters": cfg.num_clusters,
            "delay_spread": cfg.delay_spread,
            "rician_k_db": cfg.rician_k_db,
        },
        "samples": [
            {"los": t.los, "room_id": room_ids[i] if room_ids else -1}
            for i, t in enumerate(tensors)
        ],
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_channel_dataset(path) -> tuple[dict, list[ChannelTensor]]:
    """Read a container written by export_channel_dataset."""
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json")) as fh:
        sidecar = json.load(fh)
    with open(path, "rb") as fh:
        magic, version, n_sc, n_t, n_samples = _HEADER_STRUCT.unpack(
            fh.read(_HEADER_STRUCT.size)
        )
        if magic != _CONTAINER_MAGIC:
            raise ValueError(f"not a channel container: bad magic {magic!r}")
        if version != _CONTAINER_VERSION:
            raise ValueError(f"unsupported container version {version}")
        tensors = []
        for i in range(n_samples):
            raw = np.frombuffer(fh.read(n_sc * n_t * 8), dtype=">f4")
            planes = raw.reshape(n_sc, n_t, 2).astype(np.float32)
            gains = (planes[..., 0] + 1j * planes[..., 1]).astype(np.complex64)
            tensors.append(ChannelTensor(
                gains=gains, sta_id=-1, ap_id=-1, timestamp=0.0,
                los=bool(sidecar["samples"][i]["los"]),
            ))
    return sidecar, tensors
