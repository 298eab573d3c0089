"""Compressed beamforming feedback: Givens-rotation codec and learned-compressor profiles.

The standard path decomposes sampled unit beamforming vectors into quantized
(phi, psi) angle pairs and accounts for the exact report size. The learned
path emulates a trained compressor from published accuracy/size statistics:
per-vector target correlations are drawn from a Beta fit and injected
exactly, and feedback sizes are drawn from a truncated normal fit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .channel import ChannelTensor

UNIT_NORM_TOL = 1e-9


class DegenerateChannelError(ValueError):
    """A subcarrier row was all-zero; no beamforming vector exists."""


class DecodeError(ValueError):
    """A quantized angle index fell outside its code range."""


def angle_pair_count(n_t: int, n_ss: int) -> int:
    """Number of (phi, psi) pairs for an n_t x n_ss beamforming matrix."""
    if n_ss > n_t:
        raise ValueError(f"n_ss={n_ss} exceeds n_t={n_t}")
    if n_t < 1 or n_ss < 1:
        raise ValueError("n_t and n_ss must be positive")
    return (n_ss * (2 * n_t - n_ss - 1)) // 2


def report_size_bits(n_sc: int, n_g: int, n_t: int, n_ss: int,
                     phi_bits: int, psi_bits: int) -> int:
    """Exact compressed-beamforming report size in bits."""
    if min(n_sc, n_g, phi_bits, psi_bits) < 1:
        raise ValueError("all sizing parameters must be positive")
    n_groups = -(-n_sc // n_g)
    return n_groups * angle_pair_count(n_t, n_ss) * (phi_bits + psi_bits)


def group_sizes(n_sc: int, n_g: int) -> np.ndarray:
    """Subcarriers covered by each sampled vector (last group may be short)."""
    n_vs = -(-n_sc // n_g)
    sizes = np.full(n_vs, n_g)
    sizes[-1] = n_sc - (n_vs - 1) * n_g
    return sizes


@dataclass(frozen=True)
class BeamformingVectorSet:
    """Unit-norm beamforming vectors sampled every n_g subcarriers."""

    vectors: np.ndarray   # complex, shape (n_vs, n_t)
    n_g: int
    n_sc: int

    def __post_init__(self):
        n_vs = -(-self.n_sc // self.n_g)
        if self.vectors.shape[0] != n_vs:
            raise ValueError(
                f"expected {n_vs} sampled vectors for n_sc={self.n_sc}, "
                f"n_g={self.n_g}; got {self.vectors.shape[0]}"
            )
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise ValueError("beamforming vectors must be unit norm")
        self.vectors.setflags(write=False)

    @property
    def n_vs(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_t(self) -> int:
        return self.vectors.shape[1]

    def expand(self) -> np.ndarray:
        """Per-subcarrier vectors, each sampled vector repeated n_g times."""
        idx = np.minimum(np.arange(self.n_sc) // self.n_g, self.n_vs - 1)
        return self.vectors[idx]


def extract_v(h_est: ChannelTensor, n_g: int = 16) -> BeamformingVectorSet:
    """First right singular vectors of the estimated 1 x n_t channels.

    For a single-antenna receiver the SVD reduces to conj(h)/||h||. Vectors
    are sampled at the first subcarrier of every group of n_g and
    phase-normalized so the first nonzero element is real non-negative.
    """
    # upcast: the codec needs full precision regardless of the channel dtype
    rows = h_est.gains[::n_g].astype(np.complex128)
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0]) * n_g
        raise DegenerateChannelError(f"all-zero channel at subcarrier {bad}")
    v = np.conj(rows) / norms[:, None]
    # rotate each row by the phase of its first nonzero element
    first_nz = np.argmax(np.abs(v) > 0.0, axis=1)
    pivot = v[np.arange(v.shape[0]), first_nz]
    v = v * np.exp(-1j * np.angle(pivot))[:, None]
    return BeamformingVectorSet(vectors=v, n_g=n_g, n_sc=h_est.n_sc)


# ---------------------------------------------------------------------------
# Givens-rotation decomposition


def _decompose_rows(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (phi, psi) decomposition of unit rows, shape (m, n_t).

    After removing per-element phases the rotation sequence reduces to
    psi_l = atan2(u_l, ||u_0..u_{l-1}||), the closed form of the running
    Givens eliminations against the first coordinate.
    """
    m, n = v.shape
    last = v[:, -1]
    rot = np.where(np.abs(last) > 0.0, np.exp(-1j * np.angle(last)), 1.0)
    v = v * rot[:, None]
    phi = np.mod(np.angle(v[:, :-1]), 2.0 * np.pi)
    u = np.empty((m, n))
    u[:, :-1] = np.abs(v[:, :-1])
    u[:, -1] = v[:, -1].real
    prefix = np.sqrt(np.cumsum(u**2, axis=1))
    psi = np.arctan2(u[:, 1:], prefix[:, :-1])
    return phi, psi


def _reconstruct_rows(phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Inverse of _decompose_rows; returns unit rows with a real last element.

    The composed inverse rotations acting on e1 leave u_0 = prod(cos psi)
    and u_l = sin(psi_l) * prod_{k>l}(cos psi_k).
    """
    m, n_pairs = psi.shape
    n = n_pairs + 1
    c = np.cos(psi)
    s = np.sin(psi)
    suffix = np.ones((m, n_pairs + 1))
    suffix[:, :-1] = np.cumprod(c[:, ::-1], axis=1)[:, ::-1]
    u = np.empty((m, n))
    u[:, 0] = suffix[:, 0]
    u[:, 1:] = s * suffix[:, 1:]
    v = u.astype(complex)
    v[:, :-1] *= np.exp(1j * phi)
    return v


def givens_decompose(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decompose one unit vector into n_t - 1 (phi, psi) angle pairs.

    phi lies in [0, 2*pi), psi in [0, pi/2]; reconstructing from the
    unquantized angles recovers v up to a global phase.
    """
    v = np.asarray(v, dtype=complex)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_NORM_TOL:
        raise ValueError("input vector must be unit norm")
    phi, psi = _decompose_rows(v[None, :])
    return phi[0], psi[0]


def reconstruct_from_angles(phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    v = _reconstruct_rows(np.atleast_2d(phi), np.atleast_2d(psi))
    return v[0]


# ---------------------------------------------------------------------------
# Quantization and reports

# Uniform mid-rise quantizers from the 802.11 compressed-beamforming format:
#   phi(k) = k*pi/2^(b-1) + pi/2^b      over [0, 2*pi)
#   psi(k) = k*pi/2^(b+1) + pi/2^(b+2)  over [0, pi/2)


@lru_cache(maxsize=32)
def _phi_codebook(bits: int) -> np.ndarray:
    k = np.arange(2**bits)
    return k * np.pi / 2 ** (bits - 1) + np.pi / 2**bits


@lru_cache(maxsize=32)
def _psi_codebook(bits: int) -> np.ndarray:
    k = np.arange(2**bits)
    return k * np.pi / 2 ** (bits + 1) + np.pi / 2 ** (bits + 2)


@dataclass(frozen=True)
class GivensReport:
    """Quantized angle indices for every subcarrier group of one report."""

    phi_idx: np.ndarray   # uint32, shape (n_groups, n_a)
    psi_idx: np.ndarray
    phi_bits: int = 9
    psi_bits: int = 7
    n_t: int = 16
    n_ss: int = 1
    n_g: int = 16
    n_sc: int = 980

    def __post_init__(self):
        n_a = angle_pair_count(self.n_t, self.n_ss)
        n_groups = -(-self.n_sc // self.n_g)
        if self.phi_idx.shape != (n_groups, n_a) or self.psi_idx.shape != (n_groups, n_a):
            raise ValueError("angle index arrays do not match the report geometry")
        if np.any(self.phi_idx >= 2**self.phi_bits) or np.any(self.phi_idx < 0):
            raise DecodeError("phi index out of range")
        if np.any(self.psi_idx >= 2**self.psi_bits) or np.any(self.psi_idx < 0):
            raise DecodeError("psi index out of range")
        self.phi_idx.setflags(write=False)
        self.psi_idx.setflags(write=False)

    @property
    def n_a(self) -> int:
        return angle_pair_count(self.n_t, self.n_ss)

    @property
    def bit_size(self) -> int:
        return report_size_bits(self.n_sc, self.n_g, self.n_t, self.n_ss,
                                self.phi_bits, self.psi_bits)


def quantize_angles(phi: np.ndarray, psi: np.ndarray, phi_bits: int, psi_bits: int,
                    n_g: int = 16, n_sc: int = 980, n_ss: int = 1) -> GivensReport:
    """Quantize per-group (phi, psi) angle arrays into a GivensReport."""
    if n_ss != 1:
        raise NotImplementedError("only single-stream feedback is supported")
    phi = np.atleast_2d(phi)
    psi = np.atleast_2d(psi)
    phi_step = np.pi / 2 ** (phi_bits - 1)
    psi_step = np.pi / 2 ** (psi_bits + 1)
    phi_idx = np.floor(np.mod(phi, 2.0 * np.pi) / phi_step).astype(np.int64)
    phi_idx = np.clip(phi_idx, 0, 2**phi_bits - 1)
    psi_idx = np.clip(np.floor(psi / psi_step).astype(np.int64), 0, 2**psi_bits - 1)
    return GivensReport(phi_idx=phi_idx, psi_idx=psi_idx, phi_bits=phi_bits,
                        psi_bits=psi_bits, n_t=phi.shape[1] + 1, n_ss=n_ss,
                        n_g=n_g, n_sc=n_sc)


def reconstruct_from_report(report: GivensReport) -> BeamformingVectorSet:
    """Decode a GivensReport back into unit-norm beamforming vectors."""
    phi = _phi_codebook(report.phi_bits)[report.phi_idx]
    psi = _psi_codebook(report.psi_bits)[report.psi_idx]
    vectors = _reconstruct_rows(phi, psi)
    return BeamformingVectorSet(vectors=vectors, n_g=report.n_g, n_sc=report.n_sc)


def serialize_report(report: GivensReport) -> bytes:
    """Pack a report as big-endian bitfields, group-major, (phi, psi) per pair."""
    acc = 0
    n_bits = 0
    for g in range(report.phi_idx.shape[0]):
        for a in range(report.n_a):
            acc = (acc << report.phi_bits) | int(report.phi_idx[g, a])
            acc = (acc << report.psi_bits) | int(report.psi_idx[g, a])
            n_bits += report.phi_bits + report.psi_bits
    pad = (-n_bits) % 8
    acc <<= pad
    return acc.to_bytes((n_bits + pad) // 8, "big")


def parse_report(data: bytes, phi_bits: int, psi_bits: int, n_t: int,
                 n_ss: int = 1, n_g: int = 16, n_sc: int = 980) -> GivensReport:
    n_a = angle_pair_count(n_t, n_ss)
    n_groups = -(-n_sc // n_g)
    total = n_groups * n_a * (phi_bits + psi_bits)
    if len(data) * 8 < total:
        raise DecodeError(f"report payload too short: {len(data) * 8} < {total} bits")
    acc = int.from_bytes(data, "big") >> (len(data) * 8 - total)
    phi_idx = np.empty((n_groups, n_a), dtype=np.int64)
    psi_idx = np.empty((n_groups, n_a), dtype=np.int64)
    shift = total
    for g in range(n_groups):
        for a in range(n_a):
            shift -= phi_bits
            phi_idx[g, a] = (acc >> shift) & (2**phi_bits - 1)
            shift -= psi_bits
            psi_idx[g, a] = (acc >> shift) & (2**psi_bits - 1)
    return GivensReport(phi_idx=phi_idx, psi_idx=psi_idx, phi_bits=phi_bits,
                        psi_bits=psi_bits, n_t=n_t, n_ss=n_ss, n_g=n_g, n_sc=n_sc)


def givens_roundtrip(vs: BeamformingVectorSet, phi_bits: int = 9,
                     psi_bits: int = 7) -> tuple[BeamformingVectorSet, GivensReport]:
    """Decompose, quantize and reconstruct a full vector set."""
    phi, psi = _decompose_rows(vs.vectors)
    report = quantize_angles(phi, psi, phi_bits, psi_bits, n_g=vs.n_g, n_sc=vs.n_sc)
    return reconstruct_from_report(report), report


# ---------------------------------------------------------------------------
# Learned-compressor emulation


@dataclass(frozen=True)
class CorrelationStats:
    mean: float
    p1: float

    def validate(self):
        if not (0.0 <= self.p1 <= self.mean <= 1.0):
            raise ValueError(f"need 0 <= p1 <= mean <= 1, got mean={self.mean}, p1={self.p1}")


@dataclass(frozen=True)
class SizeStats:
    median: float
    min: float
    max: float
    stdev: float

    def validate(self):
        if not (self.min <= self.median <= self.max):
            raise ValueError("size stats must satisfy min <= median <= max")
        if self.stdev < 0:
            raise ValueError("stdev must be non-negative")


def _fit_beta(mean: float, p1: float) -> tuple[float, float]:
    """Beta(a, b) matching a mean and a 1st percentile on [0, 1].

    Parametrized by concentration c with (a, b) = (mean*c, (1-mean)*c); the
    1st percentile rises towards the mean as c grows, but is not monotone in
    the bimodal small-c regime, so bracket a sign change by scanning first.
    """
    def gap(log_conc):
        conc = 10.0**log_conc
        return stats.beta.ppf(0.01, mean * conc, (1.0 - mean) * conc) - p1

    grid = np.linspace(-3.0, 9.0, 120)
    values = [gap(g) for g in grid]
    bracket = None
    for i in range(len(grid) - 1):
        if values[i] < 0.0 <= values[i + 1]:
            bracket = (grid[i], grid[i + 1])
            break
    if bracket is None:
        raise ValueError(
            f"correlation stats (mean={mean}, p1={p1}) not fittable by a Beta law"
        )
    log_conc = optimize.brentq(gap, *bracket, xtol=1e-12)
    conc = 10.0**log_conc
    return mean * conc, (1.0 - mean) * conc


@dataclass(frozen=True)
class LearnedCompressorProfile:
    """Accuracy/size behaviour of a trained CSI compressor, by LOS condition."""

    eta: float
    latent_dim: int
    los: CorrelationStats
    nlos: CorrelationStats
    size_bits: SizeStats
    _beta_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def validate_stats(self) -> None:
        """Geometry-free checks: eta range, correlation and size statistics."""
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        self.los.validate()
        self.nlos.validate()
        self.size_bits.validate()

    def validate(self, n_vs: int = 62, n_t: int = 16) -> None:
        """Full check against the profile's native input geometry."""
        self.validate_stats()
        expected_m = math.ceil(self.eta * 2 * n_vs * n_t)
        if self.latent_dim != expected_m:
            raise ValueError(
                f"latent_dim {self.latent_dim} does not match "
                f"ceil(eta * 2 * {n_vs} * {n_t}) = {expected_m}"
            )

    def _beta_params(self, los: bool) -> tuple[float, float]:
        cond = self.los if los else self.nlos
        key = bool(los)
        if key not in self._beta_cache:
            self._beta_cache[key] = _fit_beta(cond.mean, cond.p1)
        return self._beta_cache[key]

    def draw_correlations(self, n: int, los: bool, rng: np.random.Generator) -> np.ndarray:
        cond = self.los if los else self.nlos
        if cond.p1 >= cond.mean or cond.mean >= 1.0:
            return np.full(n, cond.mean)   # point mass, e.g. a lossless profile
        a, b = self._beta_params(los)
        return rng.beta(a, b, size=n)

    def draw_size_bits(self, rng: np.random.Generator) -> int:
        s = self.size_bits
        if s.stdev == 0.0 or s.max == s.min:
            return int(s.median)
        lo, hi = (s.min - s.median) / s.stdev, (s.max - s.median) / s.stdev
        raw = stats.truncnorm.rvs(lo, hi, loc=s.median, scale=s.stdev, random_state=rng)
        byte_rounded = int(round(raw / 8.0)) * 8
        return int(np.clip(byte_rounded, s.min, s.max))


def latent_dim(eta: float, n_vs: int, n_t: int) -> int:
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    return math.ceil(eta * 2 * n_vs * n_t)


def apply_learned_compression(vs: BeamformingVectorSet, profile: LearnedCompressorProfile,
                              los: bool, rng: np.random.Generator
                              ) -> tuple[BeamformingVectorSet, int]:
    """Emulate compressor reconstruction loss with exact correlation injection.

    Each row v is replaced by rho*v + sqrt(1 - rho^2)*e with e a random unit
    vector orthogonal to v, so |v~^H v| equals the drawn rho exactly. The
    report size is drawn from the profile's truncated-normal size model.
    """
    profile.validate_stats()
    rho = profile.draw_correlations(vs.n_vs, los, rng)
    v = vs.vectors
    g = rng.standard_normal(v.shape) + 1j * rng.standard_normal(v.shape)
    g -= np.sum(np.conj(v) * g, axis=1, keepdims=True) * v
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero projection residual is a probability-zero event; guard anyway
    norms[norms == 0.0] = 1.0
    e = g / norms
    out = rho[:, None] * v + np.sqrt(1.0 - rho**2)[:, None] * e
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return (BeamformingVectorSet(vectors=out, n_g=vs.n_g, n_sc=vs.n_sc),
            profile.draw_size_bits(rng))


def cosine_correlation(vs: BeamformingVectorSet, vs_tilde: BeamformingVectorSet) -> float:
    """Mean |v~^H v| across all data subcarriers (sampled vectors expanded n_g times)."""
    if (vs.n_sc, vs.n_g, vs.n_t) != (vs_tilde.n_sc, vs_tilde.n_g, vs_tilde.n_t):
        raise ValueError("vector sets cover different subcarrier geometries")
    inner = np.abs(np.sum(np.conj(vs_tilde.vectors) * vs.vectors, axis=1))
    weights = group_sizes(vs.n_sc, vs.n_g)
    return float(np.dot(weights, inner) / vs.n_sc)


# ---------------------------------------------------------------------------
# Unified feedback report


@dataclass(frozen=True)
class CsiReport:
    """One STA's compressed feedback about one AP's channel."""

    kind: str                       # "givens" | "learned"
    vectors: BeamformingVectorSet   # reconstructed beamforming vectors
    bit_size: int
    sta_id: int
    ap_id: int
    timestamp: float

    def __post_init__(self):
        if self.kind not in ("givens", "learned"):
            raise ValueError(f"unknown report kind {self.kind!r}")
        if self.bit_size <= 0:
            raise ValueError("bit_size must be positive")


# ---------------------------------------------------------------------------
# Profile files


def profile_to_dict(profile: LearnedCompressorProfile) -> dict:
    return {
        "eta": profile.eta,
        "latent_dim": profile.latent_dim,
        "conditions": {
            "los": {"corr_mean": profile.los.mean, "corr_p1": profile.los.p1},
            "nlos": {"corr_mean": profile.nlos.mean, "corr_p1": profile.nlos.p1},
        },
        "size_bits": {
            "median": profile.size_bits.median,
            "min": profile.size_bits.min,
            "max": profile.size_bits.max,
            "stdev": profile.size_bits.stdev,
        },
    }


def profile_from_dict(raw: dict) -> LearnedCompressorProfile:
    try:
        cond = raw["conditions"]
        profile = LearnedCompressorProfile(
            eta=float(raw["eta"]),
            latent_dim=int(raw["latent_dim"]),
            los=CorrelationStats(float(cond["los"]["corr_mean"]), float(cond["los"]["corr_p1"])),
            nlos=CorrelationStats(float(cond["nlos"]["corr_mean"]), float(cond["nlos"]["corr_p1"])),
            size_bits=SizeStats(
                median=float(raw["size_bits"]["median"]),
                min=float(raw["size_bits"]["min"]),
                max=float(raw["size_bits"]["max"]),
                stdev=float(raw["size_bits"]["stdev"]),
            ),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed compressor profile: {exc}") from exc
    return profile


def load_profile(path) -> LearnedCompressorProfile:
    with open(path) as fh:
        raw = json.load(fh)
    profile = profile_from_dict(raw)
    profile.validate()
    return profile


def save_profile(profile: LearnedCompressorProfile, path) -> None:
    with open(path, "w") as fh:
        json.dump(profile_to_dict(profile), fh, indent=2, sort_keys=True)


def builtin_profile_path(name: str) -> Path:
    """Path of a packaged profile, e.g. 'ae_eta_1_4'."""
    path = Path(__file__).parent / "data" / "profiles" / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in path.parent.glob("*.json"))
        raise FileNotFoundError(f"no builtin profile {name!r}; available: {available}")
    return path
