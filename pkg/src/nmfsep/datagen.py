"""Synthetic damped-harmonic mixtures with controlled spectral overlap.

Each source is a sum of exponentially damped sinusoids at integer multiples
of a fundamental.  Mixtures come in overlap classes:

* ``"none"``   — every cross-source pair of partials sits more than two
  analysis bins apart (rejection sampled),
* ``"forced"`` — two sources put a partial in the same analysis bin
  (close enough to collide in the time-frequency plane, yet generally a
  few Hz apart, so the collided bin carries a beating sum),
* ``"any"``    — unconstrained draw.

A case carries its clean sources, the low-level white noise floor, and the
mixture built as ``sum(sources) + noise`` in that exact floating-point
order, so additivity holds to the last bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import read_wav, write_wav

# partial spacing is judged against this analysis geometry (the narrower of
# the two benchmark windows, i.e. the stricter bin width)
_CLASSIFY_WINDOW = 512
_F0_RANGE = (110.0, 880.0)
_MAX_HARMONICS = 10
_MAX_ATTEMPTS = 1000

__all__ = [
    "HarmonicSourceSpec",
    "MixtureCase",
    "random_source_spec",
    "classify_overlap",
    "gen_harmonic_mixture",
    "gen_dataset",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class HarmonicSourceSpec:
    """Deterministic recipe for one damped harmonic source."""

    f0: float
    amplitudes: tuple
    phases: tuple
    damping: float
    onset: float = 0.0
    vibrato_depth: float = 0.0
    vibrato_rate: float = 0.0

    def __post_init__(self):
        if self.f0 <= 0:
            raise ValueError("f0 must be positive")
        if len(self.amplitudes) < 1 or len(self.amplitudes) != len(self.phases):
            raise ValueError("need one (amplitude, phase) pair per harmonic")
        if any(a <= 0 for a in self.amplitudes):
            raise ValueError("amplitudes must be positive")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")
        if self.onset < 0:
            raise ValueError("onset must be nonnegative")
        if not 0 <= self.vibrato_depth < 1:
            raise ValueError("vibrato_depth must be in [0, 1)")
        if self.vibrato_depth > 0 and self.vibrato_rate <= 0:
            raise ValueError("vibrato needs a positive rate")

    @property
    def n_harmonics(self) -> int:
        return len(self.amplitudes)

    def harmonic_frequencies(self) -> np.ndarray:
        return self.f0 * np.arange(1, self.n_harmonics + 1)

    def render(self, duration: float, sample_rate: int) -> np.ndarray:
        """Synthesize the source at the given rate (duration in seconds).

        The note starts ``onset`` seconds in (silence before); envelope and
        phase are measured from the onset instant.
        """
        n = round(duration * sample_rate)
        if n < 1:
            raise ValueError("duration too short for the sample rate")
        lead = round(self.onset * sample_rate)
        if lead >= n:
            raise ValueError("onset lies at or beyond the total duration")
        t = np.arange(n - lead) / sample_rate
        if self.vibrato_depth > 0:
            # integral of f0*(1 + depth*sin(2*pi*rate*t)), zero at t=0
            wobble = (1.0 - np.cos(2 * np.pi * self.vibrato_rate * t)) * (
                self.vibrato_depth / (2 * np.pi * self.vibrato_rate)
            )
            base_phase = 2 * np.pi * self.f0 * (t + wobble)
        else:
            base_phase = 2 * np.pi * self.f0 * t
        x = np.zeros(n - lead)
        for m, (amp, phi) in enumerate(zip(self.amplitudes, self.phases), start=1):
            x += amp * np.sin(m * base_phase + phi)
        tail = np.exp(-self.damping * t) * x
        if lead == 0:
            return tail
        return np.concatenate([np.zeros(lead), tail])

    def to_dict(self) -> dict:
        return {
            "f0": self.f0,
            "amplitudes": list(self.amplitudes),
            "phases": list(self.phases),
            "damping": self.damping,
            "onset": self.onset,
            "vibrato_depth": self.vibrato_depth,
            "vibrato_rate": self.vibrato_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HarmonicSourceSpec":
        return cls(
            f0=float(d["f0"]),
            amplitudes=tuple(d["amplitudes"]),
            phases=tuple(d["phases"]),
            damping=float(d["damping"]),
            onset=float(d.get("onset", 0.0)),
            vibrato_depth=float(d.get("vibrato_depth", 0.0)),
            vibrato_rate=float(d.get("vibrato_rate", 0.0)),
        )


@dataclass
class MixtureCase:
    """One mixture with its ground truth."""

    case_id: str
    mixture: np.ndarray
    sources: list
    noise: np.ndarray
    source_specs: list
    sample_rate: int
    overlap_class: str
    seed: int

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def duration(self) -> float:
        return self.mixture.size / self.sample_rate


def random_source_spec(rng, sample_rate: int = 11025, f0: float | None = None,
                       min_harmonics: int = 4, vibrato_depth: float = 0.0,
                       vibrato_rate: float = 0.0,
                       onset_range: tuple = (0.0, 0.0)) -> HarmonicSourceSpec:
    """Draw a source recipe; partials at or above Nyquist are dropped."""
    if f0 is None:
        f0 = rng.uniform(*_F0_RANGE)
    n = int(rng.integers(min_harmonics, _MAX_HARMONICS + 1))
    n = min(n, int(math.ceil(sample_rate / 2 / f0)) - 1)  # keep m*f0 < Nyquist
    n = max(n, 1)
    amps = 1.0 - rng.uniform(0.0, 0.8, size=n)  # in (0.2, 1.0]
    phases = rng.uniform(0.0, 2 * np.pi, size=n)
    damping = float(rng.uniform(0.5, 8.0))
    # drawn last, and only when live, so the default stream stays unchanged
    onset = float(rng.uniform(*onset_range)) if onset_range != (0.0, 0.0) else 0.0
    return HarmonicSourceSpec(
        f0=float(f0),
        amplitudes=tuple(amps),
        phases=tuple(phases),
        damping=damping,
        onset=onset,
        vibrato_depth=vibrato_depth,
        vibrato_rate=vibrato_rate,
    )


def _partial_intervals(spec: HarmonicSourceSpec):
    freqs = spec.harmonic_frequencies()
    lo = freqs * (1.0 - spec.vibrato_depth)
    hi = freqs * (1.0 + spec.vibrato_depth)
    return freqs, lo, hi


def classify_overlap(specs, sample_rate: int, window_length: int = _CLASSIFY_WINDOW,
                     min_bins_apart: float = 2.0) -> str:
    """Re-derive the overlap class of a set of source recipes.

    ``"forced"`` when some cross-source pair of partials lands in the same
    analysis bin (``round(f * window_length / rate)`` agrees), ``"none"``
    when every cross pair is separated by more than ``min_bins_apart``
    analysis bins (vibrato excursions included), ``"any"`` otherwise.
    """
    bin_hz = sample_rate / window_length
    coincide = False
    well_separated = True
    for i in range(len(specs)):
        fi, lo_i, hi_i = _partial_intervals(specs[i])
        for j in range(i + 1, len(specs)):
            fj, lo_j, hi_j = _partial_intervals(specs[j])
            if np.any(np.round(fi[:, None] / bin_hz) == np.round(fj[None, :] / bin_hz)):
                coincide = True
            gap = np.maximum(lo_i[:, None] - hi_j[None, :], lo_j[None, :] - hi_i[:, None])
            if np.any(gap <= min_bins_apart * bin_hz):
                well_separated = False
    if coincide:
        return "forced"
    if well_separated:
        return "none"
    return "any"


def _draw_forced_specs(rng, n_sources, sample_rate, vibrato_depth, vibrato_rate,
                       onset_range=(0.0, 0.0)):
    bin_hz = sample_rate / _CLASSIFY_WINDOW
    for _ in range(_MAX_ATTEMPTS):
        first = random_source_spec(rng, sample_rate, vibrato_depth=vibrato_depth,
                                   vibrato_rate=vibrato_rate,
                                   onset_range=onset_range)
        m1 = int(rng.integers(1, first.n_harmonics + 1))
        m2 = int(rng.integers(1, _MAX_HARMONICS + 1))
        # land harmonic m2 of the second source anywhere inside the analysis
        # bin occupied by harmonic m1 of the first (same rounded bin index,
        # not the same frequency: the partials beat against each other)
        target_bin = np.round(m1 * first.f0 / bin_hz)
        collide = (target_bin + rng.uniform(-0.45, 0.45)) * bin_hz
        f0 = collide / m2
        if not _F0_RANGE[0] <= f0 <= _F0_RANGE[1]:
            continue
        second = random_source_spec(
            rng, sample_rate, f0=f0, min_harmonics=max(4, m2),
            vibrato_depth=vibrato_depth, vibrato_rate=vibrato_rate,
            onset_range=onset_range,
        )
        if second.n_harmonics < m2:
            continue  # the colliding partial fell above Nyquist
        specs = [first, second]
        while len(specs) < n_sources:
            specs.append(random_source_spec(rng, sample_rate,
                                            vibrato_depth=vibrato_depth,
                                            vibrato_rate=vibrato_rate,
                                            onset_range=onset_range))
        if classify_overlap(specs, sample_rate) == "forced":
            return specs
    raise RuntimeError("could not construct a same-bin partial collision")


def gen_harmonic_mixture(seed: int, overlap: str = "none", n_sources: int = 2,
                         duration: float = 1.0, sample_rate: int = 11025,
                         noise_db: float = 60.0, vibrato: bool = False,
                         onset_range: tuple = (0.0, 0.0),
                         case_id: str | None = None) -> MixtureCase:
    """Generate one mixture of damped harmonic sources plus a noise floor.

    ``noise_db`` positions the white noise that many decibels below the
    clean mixture's power.  With ``vibrato`` the whole case shares one slow
    frequency modulation, so forced collisions stay coincident over time.
    ``onset_range`` staggers note starts (seconds, uniform per source); the
    default keeps every source starting at zero.
    """
    if n_sources < 1:
        raise ValueError("n_sources must be >= 1")
    if overlap not in ("none", "forced", "any"):
        raise ValueError(f"unknown overlap class {overlap!r}")
    if overlap == "forced" and n_sources < 2:
        raise ValueError("a forced collision needs at least two sources")
    if not 0.0 <= onset_range[0] <= onset_range[1] < duration:
        raise ValueError("onset_range must satisfy 0 <= lo <= hi < duration")
    rng = np.random.default_rng(seed)
    depth = float(rng.uniform(0.005, 0.02)) if vibrato else 0.0
    rate = float(rng.uniform(4.0, 7.0)) if vibrato else 0.0

    if overlap == "forced":
        specs = _draw_forced_specs(rng, n_sources, sample_rate, depth, rate,
                                   onset_range)
    elif overlap == "none":
        for _ in range(_MAX_ATTEMPTS):
            specs = [random_source_spec(rng, sample_rate, vibrato_depth=depth,
                                        vibrato_rate=rate,
                                        onset_range=onset_range)
                     for _ in range(n_sources)]
            if classify_overlap(specs, sample_rate) == "none":
                break
        else:
            raise RuntimeError("could not draw well-separated sources")
    else:
        specs = [random_source_spec(rng, sample_rate, vibrato_depth=depth,
                                    vibrato_rate=rate,
                                    onset_range=onset_range)
                 for _ in range(n_sources)]

    sources = [s.render(duration, sample_rate) for s in specs]
    clean = sum(sources)
    clean_power = float(np.mean(clean**2))
    raw = rng.standard_normal(clean.size)
    noise = raw * np.sqrt(clean_power * 10.0 ** (-noise_db / 10.0) / np.mean(raw**2))
    mixture = sum(sources) + noise
    return MixtureCase(
        case_id=case_id or f"case-{seed}",
        mixture=mixture,
        sources=sources,
        noise=noise,
        source_specs=specs,
        sample_rate=sample_rate,
        overlap_class=overlap,
        seed=int(seed),
    )


def gen_dataset(n_per_class: int = 30, classes=("none", "forced"), seed: int = 0,
                **case_kwargs) -> list:
    """Generate ``n_per_class`` mixtures per overlap class, deterministically.

    Each case gets its own sub-seed drawn from the master sequence, so any
    case can be regenerated in isolation from the manifest.
    """
    master = np.random.default_rng(seed)
    taken = set()
    cases = []
    for cls in classes:
        for i in range(n_per_class):
            s = int(master.integers(0, 2**63))
            while s in taken:
                s = int(master.integers(0, 2**63))
            taken.add(s)
            cases.append(gen_harmonic_mixture(
                seed=s, overlap=cls, case_id=f"{cls}-{i:03d}", **case_kwargs))
    return cases


def save_dataset(cases, out_dir) -> Path:
    """Write WAVs (32-bit float, bit-exact) plus a JSON manifest; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for case in cases:
        stem = case.case_id
        mix_name = f"{stem}-mixture.wav"
        write_wav(out / mix_name, case.mixture, case.sample_rate, encoding="float32")
        src_names = []
        for k, src in enumerate(case.sources):
            name = f"{stem}-source{k}.wav"
            write_wav(out / name, src, case.sample_rate, encoding="float32")
            src_names.append(name)
        entries.append({
            "case_id": case.case_id,
            "seed": case.seed,
            "overlap_class": case.overlap_class,
            "sample_rate": case.sample_rate,
            "mixture": mix_name,
            "sources": src_names,
            "source_specs": [s.to_dict() for s in case.source_specs],
        })
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"format": "harmonic-mixtures-v1",
                                    "cases": entries}, indent=2))
    return manifest


def load_dataset(manifest_path) -> list:
    """Read a saved dataset back into :class:`MixtureCase` objects.

    Signals round-trip through 32-bit floats, so additivity holds only to
    float32 precision; the stored noise floor is recovered as the residual.
    """
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    if doc.get("format") != "harmonic-mixtures-v1":
        raise ValueError(f"{manifest_path}: not a dataset manifest")
    root = manifest_path.parent
    cases = []
    for entry in doc["cases"]:
        mixture, rate = read_wav(root / entry["mixture"])
        if rate != entry["sample_rate"]:
            raise ValueError(f"{entry['case_id']}: sample rate mismatch")
        sources = []
        for name in entry["sources"]:
            src, src_rate = read_wav(root / name)
            if src_rate != rate or src.size != mixture.size:
                raise ValueError(f"{entry['case_id']}: inconsistent source {name}")
            sources.append(src)
        cases.append(MixtureCase(
            case_id=entry["case_id"],
            mixture=mixture,
            sources=sources,
            noise=mixture - sum(sources),
            source_specs=[HarmonicSourceSpec.from_dict(d)
                          for d in entry["source_specs"]],
            sample_rate=rate,
            overlap_class=entry["overlap_class"],
            seed=int(entry["seed"]),
        ))
    return cases
