"""Synthetic optical-system distortions: a stand-in for a real bench.

A distorted capture is produced from the ideal complex field in this order:

  1. pupil phase error  E -> E * exp(i Phi), Phi a Zernike sum (radians) with
     the unit disk inscribed in the grid (rho = r / extent),
  2. intensity detection |E|^2,
  3. Gaussian blur (defocused imaging / finite camera PSF),
  4. radial vignette  * (1 - v * (r/extent)^2),
  5. additive background plus multiplicative speckle noise,
  6. peak normalization and quantization to the 256-level [-1, 1] image grid.

The Zernike amplitudes are the *systematic* part: a dataset freezes them once
(like a fixed bench) while background/speckle vary per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import Image, intensity_to_image
from .lgfield import FieldGrid

MAX_ZERNIKE_AMPLITUDE = 2.0


def zernike_radial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    """Radial Zernike polynomial R_n^|m|(rho)."""
    m = abs(m)
    if (n - m) % 2 != 0 or m > n:
        raise ValueError(f"invalid Zernike orders (n={n}, m={m})")
    out = np.zeros_like(rho)
    for k in range((n - m) // 2 + 1):
        coef = (
            (-1) ** k
            * math.factorial(n - k)
            / (math.factorial(k) * math.factorial((n + m) // 2 - k) * math.factorial((n - m) // 2 - k))
        )
        out += coef * rho ** (n - 2 * k)
    return out


def zernike(n: int, m: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Zernike polynomial Z_n^m; cos branch for m >= 0, sin branch for m < 0."""
    radial = zernike_radial(n, m, rho)
    if m > 0:
        return radial * np.cos(m * theta)
    if m < 0:
        return radial * np.sin(-m * theta)
    return radial


@dataclass
class AberrationConfig:
    """Distortion parameters; fully serializable for dataset manifests."""

    zernike_coeffs: list[tuple[int, int, float]] = field(default_factory=list)
    blur_sigma: float = 0.0          # pixels
    background_level: float = 0.0    # fraction of peak intensity
    vignette_strength: float = 0.0   # 0 = none, 1 = zero at r = extent
    speckle_sigma: float = 0.0       # std of multiplicative noise
    seed: int = 0

    def __post_init__(self):
        for n, m, amp in self.zernike_coeffs:
            if abs(m) > n or (n - abs(m)) % 2 != 0:
                raise ValueError(f"invalid Zernike term (n={n}, m={m})")
            if abs(amp) > MAX_ZERNIKE_AMPLITUDE:
                raise ValueError(f"Zernike amplitude {amp} rad exceeds bound {MAX_ZERNIKE_AMPLITUDE}")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")
        if not 0.0 <= self.vignette_strength <= 1.0:
            raise ValueError("vignette_strength must be in [0, 1]")

    def is_identity(self) -> bool:
        return (
            not any(amp != 0.0 for _, _, amp in self.zernike_coeffs)
            and self.blur_sigma == 0.0
            and self.background_level == 0.0
            and self.vignette_strength == 0.0
            and self.speckle_sigma == 0.0
        )

    def scaled(self, factor: float) -> "AberrationConfig":
        """Same config with every Zernike amplitude multiplied by `factor`."""
        return AberrationConfig(
            zernike_coeffs=[(n, m, amp * factor) for n, m, amp in self.zernike_coeffs],
            blur_sigma=self.blur_sigma,
            background_level=self.background_level,
            vignette_strength=self.vignette_strength,
            speckle_sigma=self.speckle_sigma,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return {
            "zernike_coeffs": [[n, m, amp] for n, m, amp in self.zernike_coeffs],
            "blur_sigma": self.blur_sigma,
            "background_level": self.background_level,
            "vignette_strength": self.vignette_strength,
            "speckle_sigma": self.speckle_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AberrationConfig":
        return cls(
            zernike_coeffs=[(int(n), int(m), float(a)) for n, m, a in doc["zernike_coeffs"]],
            blur_sigma=float(doc["blur_sigma"]),
            background_level=float(doc["background_level"]),
            vignette_strength=float(doc["vignette_strength"]),
            speckle_sigma=float(doc["speckle_sigma"]),
            seed=int(doc["seed"]),
        )


# Low-order terms a typical bench misaligns: defocus, both astigmatisms,
# both comas, primary spherical.
SYSTEMATIC_TERMS = [(2, 0), (2, -2), (2, 2), (3, -1), (3, 1), (4, 0)]


def moderate_config(seed: int = 0) -> AberrationConfig:
    """Default 'moderate bench' used by the synthetic-experimental datasets.

    Zernike amplitudes are drawn once from the seed (systematic, frozen per
    dataset); noise strengths are fixed and applied per sample.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAB]))
    coeffs = []
    for n, m in SYSTEMATIC_TERMS:
        amp = float(rng.uniform(-0.7, 0.7))
        coeffs.append((n, m, amp))
    return AberrationConfig(
        zernike_coeffs=coeffs,
        blur_sigma=0.8,
        background_level=0.02,
        vignette_strength=0.2,
        speckle_sigma=0.08,
        seed=seed,
    )


def pupil_phase(cfg: AberrationConfig, grid) -> np.ndarray:
    """Total Zernike phase map Phi(x, y) in radians over the whole grid.

    rho is normalized by the grid extent; the polynomials are evaluated beyond
    rho = 1 as well (grid corners) to keep the phase smooth where the beam has
    negligible energy anyway.
    """
    X, Y = grid.coords()
    rho = np.sqrt(X * X + Y * Y) / grid.extent
    theta = np.arctan2(Y, X)
    phi = np.zeros_like(rho)
    for n, m, amp in cfg.zernike_coeffs:
        if amp != 0.0:
            phi += amp * zernike(n, m, rho, theta)
    return phi


def apply_pupil_phase(field: FieldGrid, cfg: AberrationConfig) -> FieldGrid:
    """Unitary step 1 alone (exposed so tests can check energy conservation)."""
    phi = pupil_phase(cfg, field.spec)
    return FieldGrid(field.spec, field.values * np.exp(1j * phi))


def aberrate(field: FieldGrid, cfg: AberrationConfig, rng: np.random.Generator | None = None) -> Image:
    """Distorted capture of `field` as a quantized Image.

    `rng` drives the per-sample noise terms; defaults to a generator seeded
    from cfg.seed, so a fixed config reproduces identical bytes.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    grid = field.spec

    distorted = apply_pupil_phase(field, cfg) if cfg.zernike_coeffs else field
    inten = (distorted.values.real ** 2 + distorted.values.imag ** 2).astype(np.float64)

    if cfg.blur_sigma > 0.0:
        inten = gaussian_filter(inten, sigma=cfg.blur_sigma, mode="constant", cval=0.0)

    if cfg.vignette_strength > 0.0:
        X, Y = grid.coords()
        inten = inten * (1.0 - cfg.vignette_strength * (X * X + Y * Y) / grid.extent**2)

    peak = float(inten.max())
    if cfg.background_level > 0.0:
        inten = inten + cfg.background_level * peak
    if cfg.speckle_sigma > 0.0:
        inten = inten * np.maximum(0.0, 1.0 + rng.normal(0.0, cfg.speckle_sigma, inten.shape))

    return intensity_to_image(np.maximum(inten, 0.0))
