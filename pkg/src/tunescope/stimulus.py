"""Stimuli on the constant-energy sphere.

A stimulus is a flat real pattern with a 2-D shape and a fixed Euclidean
norm (its energy).  The search layer never manipulates pixel arrays
directly; everything goes through the projections defined here so that
the constraint always holds exactly at the point of evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDirectionError,
    EmptySetError,
    ImprobableFailureError,
    NonFiniteError,
    ZeroVectorError,
)

__all__ = [
    "Stimulus",
    "StimulusSet",
    "project_sphere",
    "project_cone",
    "sample_pink_noise",
    "random_orthogonal_unit",
    "angular_distance",
    "average_energy",
    "write_stimulus_csv",
    "read_stimulus_csv",
    "write_stimulus_pgm",
]

_DEGENERATE_TOL = 1e-12
_MAX_RETRIES = 100


@dataclass(frozen=True, eq=False)
class Stimulus:
    """A flat pattern of ``height * width`` reals with fixed energy.

    ``energy`` always equals the Euclidean norm of ``values``; the
    constructor checks consistency, the projection operations guarantee
    it by construction.
    """

    values: np.ndarray
    height: int
    width: int
    energy: float

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("stimulus contains non-finite values")
        n = self.height * self.width
        if self.height < 1 or self.width < 1 or values.size != n:
            raise ValueError(
                f"shape ({self.height}, {self.width}) does not match {values.size} values"
            )
        if not (self.energy > 0):
            raise ZeroVectorError("stimulus energy must be positive")
        norm = float(np.linalg.norm(values))
        if abs(norm - self.energy) > 1e-6 * self.energy:
            raise ValueError(f"energy {self.energy} inconsistent with norm {norm}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values: np.ndarray, height: int, width: int) -> "Stimulus":
        """Wrap an arbitrary finite array, taking its own norm as energy."""
        flat = np.asarray(values, dtype=np.float64).ravel()
        norm = float(np.linalg.norm(flat))
        if norm == 0.0:
            raise ZeroVectorError("cannot wrap an all-zero pattern")
        return cls(values=flat, height=height, width=width, energy=norm)

    @property
    def size(self) -> int:
        return self.height * self.width

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def image(self) -> np.ndarray:
        """The pattern as a read-only (height, width) array."""
        return self.values.reshape(self.height, self.width)

    def unit(self) -> np.ndarray:
        """Direction of the stimulus: values scaled to unit norm."""
        return self.values / np.linalg.norm(self.values)

    def replace_values(self, values: np.ndarray) -> "Stimulus":
        return Stimulus.from_values(values, self.height, self.width)


@dataclass(frozen=True)
class StimulusSet:
    """An ordered collection of same-shape stimuli, optionally labelled."""

    items: tuple[Stimulus, ...]
    labels: tuple[object, ...] | None = field(default=None)

    def __post_init__(self) -> None:
        items = tuple(self.items)
        if not items:
            raise EmptySetError("stimulus set is empty")
        shape = items[0].shape
        for item in items:
            if item.shape != shape:
                raise ValueError(f"mixed shapes in set: {item.shape} vs {shape}")
        if self.labels is not None and len(self.labels) != len(items):
            raise ValueError("labels length does not match items")
        object.__setattr__(self, "items", items)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, index: int) -> Stimulus:
        return self.items[index]

    @property
    def shape(self) -> tuple[int, int]:
        return self.items[0].shape

    def matrix(self) -> np.ndarray:
        """Stack all patterns into an (n_items, N) array."""
        return np.stack([s.values for s in self.items])


def project_sphere(values: np.ndarray, energy: float, shape: tuple[int, int] | None = None) -> Stimulus:
    """Radially project a raw array onto the sphere of the given energy.

    ``shape`` may be omitted when ``values`` is already 2-D.
    """
    arr = np.asarray(values, dtype=np.float64)
    if shape is None:
        if arr.ndim != 2:
            raise ValueError("shape required for non-2-D input")
        shape = arr.shape
    height, width = int(shape[0]), int(shape[1])
    flat = arr.ravel()
    if not np.all(np.isfinite(flat)):
        raise NonFiniteError("cannot project non-finite values")
    norm = float(np.linalg.norm(flat))
    if norm == 0.0:
        raise ZeroVectorError("cannot project the zero vector onto the sphere")
    return Stimulus(values=flat * (energy / norm), height=height, width=width, energy=energy)


def project_cone(x: Stimulus, x_hat: Stimulus, delta: float) -> Stimulus:
    """Project onto the cone at angle ``delta`` around the axis ``x_hat``.

    The output keeps the energy of ``x_hat`` and sits at exactly
    ``delta`` radians from it.  The component of ``x`` along the axis is
    discarded; only its orthogonal direction survives.
    """
    if x.shape != x_hat.shape:
        raise ValueError("stimulus and axis shapes differ")
    if not (0 < delta <= np.pi):
        raise ValueError(f"delta {delta} outside (0, pi]")
    energy = x_hat.energy
    axis = x_hat.values
    coeff = float(axis @ x.values) / (energy * energy)
    residual = x.values - coeff * axis
    res_norm = float(np.linalg.norm(residual))
    if res_norm < _DEGENERATE_TOL:
        raise DegenerateDirectionError(
            "point is parallel to the cone axis; resupply a random direction"
        )
    out = np.cos(delta) * axis + (energy * np.sin(delta) / res_norm) * residual
    return Stimulus(values=out, height=x.height, width=x.width, energy=energy)


def _radial_frequency(height: int, width: int) -> np.ndarray:
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    return np.hypot(fy, fx)


def sample_pink_noise(
    height: int,
    width: int,
    alpha: float,
    energy: float,
    rng: np.random.Generator,
) -> Stimulus:
    """Random stimulus with Fourier amplitude envelope ``f ** (-alpha)``.

    ``alpha = 0`` gives white noise.  The DC bin is always zeroed so the
    pattern is mean-free, then the result is projected to ``energy``.
    """
    noise = rng.standard_normal((height, width))
    spectrum = np.fft.fft2(noise)
    freq = _radial_frequency(height, width)
    envelope = np.zeros_like(freq)
    nonzero = freq > 0
    envelope[nonzero] = freq[nonzero] ** (-alpha)
    shaped = np.fft.ifft2(spectrum * envelope).real
    return project_sphere(shaped, energy)


def random_orthogonal_unit(x_hat: Stimulus, rng: np.random.Generator) -> Stimulus:
    """A random direction orthogonal to ``x_hat``, scaled to its energy."""
    if x_hat.size < 2:
        raise ValueError("need at least two dimensions for an orthogonal direction")
    axis = x_hat.unit()
    for _ in range(_MAX_RETRIES):
        draw = rng.standard_normal(x_hat.size)
        residual = draw - (axis @ draw) * axis
        norm = float(np.linalg.norm(residual))
        if norm > _DEGENERATE_TOL:
            return Stimulus(
                values=residual * (x_hat.energy / norm),
                height=x_hat.height,
                width=x_hat.width,
                energy=x_hat.energy,
            )
    raise ImprobableFailureError("100 consecutive degenerate orthogonal draws")


def angular_distance(x: Stimulus, y: Stimulus) -> float:
    """Angle between two stimuli in radians, in [0, pi]."""
    if x.shape != y.shape:
        raise ValueError("stimulus shapes differ")
    nx = float(np.linalg.norm(x.values))
    ny = float(np.linalg.norm(y.values))
    if nx == 0.0 or ny == 0.0:
        raise ZeroVectorError("angular distance undefined for zero vectors")
    cosine = float(x.values @ y.values) / (nx * ny)
    return float(np.arccos(np.clip(cosine, -1.0, 1.0)))


def average_energy(stimuli: StimulusSet) -> float:
    """Mean Euclidean norm over the set (the shared energy budget)."""
    return float(np.mean([np.linalg.norm(s.values) for s in stimuli.items]))


# ---------------------------------------------------------------------------
# serialization


def write_stimulus_csv(stimulus: Stimulus, path) -> None:
    """Flat CSV: first line ``height,width``, second line energy, then values."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{stimulus.height},{stimulus.width}\n")
        fh.write(f"{float(stimulus.energy)!r}\n")
        for v in stimulus.values:
            fh.write(f"{float(v)!r}\n")


def read_stimulus_csv(path) -> Stimulus:
    with open(path, "r", encoding="ascii") as fh:
        height, width = (int(tok) for tok in fh.readline().strip().split(","))
        energy = float(fh.readline().strip())
        values = np.array([float(line) for line in fh if line.strip()])
    return Stimulus(values=values, height=height, width=width, energy=energy)


def write_stimulus_pgm(stimulus: Stimulus, path) -> None:
    """8-bit binary PGM with linear min -> 0, max -> 255 mapping."""
    image = stimulus.image
    lo = float(image.min())
    hi = float(image.max())
    if hi > lo:
        scaled = np.round((image - lo) * (255.0 / (hi - lo)))
    else:
        scaled = np.zeros_like(image)
    data = scaled.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{stimulus.width} {stimulus.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
