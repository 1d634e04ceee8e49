"""Contrastive objectives: pixel-wise spatial InfoNCE over generator feature
taps, patch-wise InfoNCE over low-frequency DFT coefficients, and the
identity variants of both.

Negatives are always the other samples of the same image (K = N - 1), scored
against the query through a temperature-scaled softmax.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F


# ---------------------------------------------------------------------------
# InfoNCE core


@dataclass
class ContrastiveTriplet:
    """One query against one positive and K negatives, all unit vectors."""

    query: torch.Tensor  # (d,)
    positive: torch.Tensor  # (d,)
    negatives: torch.Tensor  # (d, K)
    tau: float = 0.07

    def validate(self, atol: float = 1e-5) -> None:
        if self.tau <= 0:
            raise ValueError("temperature tau must be positive")
        if self.negatives.ndim != 2 or self.negatives.shape[1] < 1:
            raise ValueError("need at least one negative (d, K) column")
        for name, v in (("query", self.query), ("positive", self.positive)):
            if abs(v.norm().item() - 1.0) > atol:
                raise ValueError(f"{name} is not unit-norm")
        norms = self.negatives.norm(dim=0)
        if (norms - 1.0).abs().max().item() > atol:
            raise ValueError("negatives are not unit-norm")


def _info_nce_vectors(
    query: torch.Tensor, positive: torch.Tensor, negatives: torch.Tensor, tau: float
) -> torch.Tensor:
    pos = query @ positive / tau
    neg = query @ negatives / tau  # (K,)
    logits = torch.cat([pos.reshape(1), neg])
    return torch.logsumexp(logits, dim=0) - pos


def info_nce(triplet: ContrastiveTriplet) -> torch.Tensor:
    """-log( e^(q.p/tau) / (e^(q.p/tau) + sum_k e^(q.n_k/tau)) ).

    Computed through logsumexp so large similarity/temperature ratios stay
    finite.
    """
    triplet.validate()
    return _info_nce_vectors(triplet.query, triplet.positive, triplet.negatives, triplet.tau)


def _nce_rows(pos_logits: torch.Tensor, neg_logits: torch.Tensor) -> torch.Tensor:
    """Mean InfoNCE over rows; pos (..., N), neg (..., N, K)."""
    logits = torch.cat([pos_logits.unsqueeze(-1), neg_logits], dim=-1)
    return (torch.logsumexp(logits, dim=-1) - pos_logits).mean()


def _as_batch(img: torch.Tensor) -> torch.Tensor:
    """Promote (H, W) or (C, H, W) images to a (B, C, H, W) batch."""
    if img.ndim == 2:
        return img[None, None]
    if img.ndim == 3:
        return img[None]
    return img


# ---------------------------------------------------------------------------
# Projection heads


def _mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(d_in, d_hidden), nn.ReLU(inplace=True), nn.Linear(d_hidden, d_out)
    )


class ProjectionHeads(nn.Module):
    """Per-tap MLPs for pixel features plus one MLP for frequency patches.

    Input widths bind lazily on first use so the heads fit whatever tap
    widths and patch dimension the generator configuration produces. Every
    projection is normalized to unit length.
    """

    def __init__(self, embed_dim: int = 256, theta_hidden: int = 1024):
        super().__init__()
        self.embed_dim = embed_dim
        self.theta_hidden = theta_hidden
        self.phi = nn.ModuleList()
        self.theta: nn.Module | None = None

    def build_spatial(self, tap_widths: list[int]) -> None:
        if len(self.phi):
            return
        for d in tap_widths:
            self.phi.append(_mlp(d, self.embed_dim, self.embed_dim))

    def build_frequency(self, d_f: int) -> None:
        if self.theta is None:
            self.theta = _mlp(2 * d_f, self.theta_hidden, self.embed_dim)

    def project_spatial(self, layer: int, features: torch.Tensor) -> torch.Tensor:
        if not len(self.phi):
            raise RuntimeError("spatial heads not built; call build_spatial first")
        return F.normalize(self.phi[layer](features), dim=-1)

    def project_frequency(self, z: torch.Tensor) -> torch.Tensor:
        """z: complex (..., d_f) -> unit embeddings (..., embed_dim)."""
        parts = torch.cat([z.real, z.imag], dim=-1)
        if self.theta is None:
            self.build_frequency(z.shape[-1])
            self.theta = self.theta.to(dtype=parts.dtype)
        return F.normalize(self.theta(parts), dim=-1)


# ---------------------------------------------------------------------------
# Spatial (pixel-wise) loss


@dataclass
class PixelSampleSet:
    """Per-layer pixel features at shared spatial indices, unit-normalized.

    ``query`` and ``reference`` hold (B, N_s, C_m) tensors for each of the
    tapped layers; negatives for sample i are the other N_s - 1 reference
    samples of the same image.
    """

    query: list[torch.Tensor]
    reference: list[torch.Tensor]
    indices: list[np.ndarray]

    @property
    def n_samples(self) -> int:
        return self.query[0].shape[1]


def _gather_pixels(feat: torch.Tensor, flat_idx: np.ndarray) -> torch.Tensor:
    b, c = feat.shape[0], feat.shape[1]
    flat = feat.flatten(2)  # (B, C, H*W)
    idx = torch.as_tensor(flat_idx, dtype=torch.long, device=feat.device)
    picked = flat[:, :, idx]  # (B, C, N)
    return F.normalize(picked.transpose(1, 2), dim=-1)  # (B, N, C)


def sample_pixel_features(
    query_feats: list[torch.Tensor],
    reference_feats: list[torch.Tensor],
    n_samples: int,
    rng: np.random.Generator,
) -> PixelSampleSet:
    """Draw N_s spatial positions per layer (without replacement, shared
    between the two streams) and extract unit-normalized feature vectors."""
    if len(query_feats) != len(reference_feats):
        raise ValueError("feature lists must pair up layer by layer")
    query, reference, indices = [], [], []
    for fq, fr in zip(query_feats, reference_feats):
        if fq.shape[2:] != fr.shape[2:]:
            raise ValueError("query/reference layer geometry mismatch")
        n_positions = fq.shape[2] * fq.shape[3]
        if n_samples > n_positions:
            raise ValueError(
                f"cannot draw {n_samples} samples from {n_positions} positions"
            )
        flat_idx = rng.choice(n_positions, size=n_samples, replace=False)
        query.append(_gather_pixels(fq, flat_idx))
        reference.append(_gather_pixels(fr, flat_idx))
        indices.append(flat_idx)
    return PixelSampleSet(query=query, reference=reference, indices=indices)


def spatial_contrastive_loss(
    samples: PixelSampleSet, heads: ProjectionHeads, tau: float = 0.07
) -> torch.Tensor:
    """Average InfoNCE over sampled positions and tapped layers."""
    if tau <= 0:
        raise ValueError("temperature tau must be positive")
    total = 0.0
    for m, (sq, sp) in enumerate(zip(samples.query, samples.reference)):
        q = heads.project_spatial(m, sq)  # (B, N, d)
        p = heads.project_spatial(m, sp)
        logits = q @ p.transpose(1, 2) / tau  # (B, N, N); diagonal is positive
        n = logits.shape[-1]
        labels = torch.arange(n, device=logits.device)
        labels = labels.expand(logits.shape[0], n).reshape(-1)
        total = total + F.cross_entropy(logits.reshape(-1, n), labels)
    return total / len(samples.query)


def identity_spatial_loss(
    y: torch.Tensor,
    gen: nn.Module,
    heads: ProjectionHeads,
    n_samples: int = 256,
    tau: float = 0.07,
    rng: np.random.Generator | None = None,
) -> torch.Tensor:
    """Spatial loss with the target image in the source slot: query taps from
    G(G(y)), reference taps from G(y)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    y_tilde, taps_ref = gen(_as_batch(y), return_taps=True)
    _, taps_query = gen(y_tilde, return_taps=True)
    samples = sample_pixel_features(taps_query, taps_ref, n_samples, rng)
    return spatial_contrastive_loss(samples, heads, tau)


# ---------------------------------------------------------------------------
# Frequency (patch-wise) loss


@dataclass
class FrequencyConfig:
    """Patch grid and spectrum truncation for the frequency loss.

    A tile of edge T is cut into (T/patch_size)^2 non-overlapping patches;
    each patch's 2-D DFT is truncated to its lowest ``keep`` x ``keep``
    coefficient block, giving d_f = keep^2 complex values per patch.
    """

    patch_size: int = 32
    keep: int = 16

    @property
    def d_f(self) -> int:
        return self.keep * self.keep

    @classmethod
    def for_tile(cls, tile_size: int) -> "FrequencyConfig":
        # 256px tiles keep the published geometry (64 patches of 32px);
        # smaller benchmark tiles scale to 16px patches so the grid stays
        # at least 4x4.
        if tile_size >= 256:
            return cls(patch_size=32, keep=16)
        return cls(patch_size=16, keep=8)


@dataclass
class FrequencyPatch:
    z: torch.Tensor  # complex (d_f,)
    patch_index: int
    grid: tuple[int, int]


def _to_plane(img: torch.Tensor) -> torch.Tensor:
    """Channel-mean planes (B, H, W) from any accepted image layout."""
    return _as_batch(img).mean(dim=1)


def patch_spectrum(img: torch.Tensor, index: int, patch_size: int = 32) -> torch.Tensor:
    """Full (untruncated) 2-D DFT of one grid patch, for a single image."""
    plane = _to_plane(img)[0]
    h, w = plane.shape
    gh, gw = h // patch_size, w // patch_size
    if not 0 <= index < gh * gw:
        raise IndexError(f"patch index {index} out of range for a {gh}x{gw} grid")
    r, c = divmod(index, gw)
    patch = plane[
        r * patch_size : (r + 1) * patch_size, c * patch_size : (c + 1) * patch_size
    ]
    return torch.fft.fft2(patch)


def dft_patch(img: torch.Tensor, index: int, config: FrequencyConfig | None = None) -> FrequencyPatch:
    """Low-frequency block of one patch's 2-D DFT, flattened to d_f values."""
    cfg = config or FrequencyConfig()
    spectrum = patch_spectrum(img, index, cfg.patch_size)
    plane = _to_plane(img)[0]
    grid = (plane.shape[0] // cfg.patch_size, plane.shape[1] // cfg.patch_size)
    z = spectrum[: cfg.keep, : cfg.keep].flatten()
    return FrequencyPatch(z=z, patch_index=index, grid=grid)


def extract_frequency_patches(img: torch.Tensor, config: FrequencyConfig) -> torch.Tensor:
    """All grid patches' truncated spectra: (B, N_f, d_f) complex."""
    planes = _to_plane(img)
    p = config.patch_size
    b, h, w = planes.shape
    if h % p or w % p:
        raise ValueError(f"tile {h}x{w} not divisible by patch size {p}")
    patches = planes.unfold(1, p, p).unfold(2, p, p)  # (B, gh, gw, p, p)
    patches = patches.reshape(b, -1, p, p)
    spectra = torch.fft.fft2(patches)
    return spectra[..., : config.keep, : config.keep].flatten(-2)


def _patch_nce(
    query_img: torch.Tensor,
    positive_img: torch.Tensor,
    negatives_img: torch.Tensor,
    heads: ProjectionHeads,
    config: FrequencyConfig,
    tau: float,
) -> torch.Tensor:
    e_q = heads.project_frequency(extract_frequency_patches(query_img, config))
    if e_q.shape[1] < 2:
        raise ValueError(
            "frequency loss needs at least a 2-patch grid "
            f"(got {e_q.shape[1]} patches of {config.patch_size}px)"
        )
    e_p = heads.project_frequency(extract_frequency_patches(positive_img, config))
    if negatives_img is positive_img:
        e_n = e_p
    elif negatives_img is query_img:
        e_n = e_q
    else:
        e_n = heads.project_frequency(extract_frequency_patches(negatives_img, config))
    pos = (e_q * e_p).sum(dim=-1) / tau  # (B, N_f)
    neg = e_q @ e_n.transpose(1, 2) / tau  # (B, N_f, N_f)
    n_f = neg.shape[-1]
    eye = torch.eye(n_f, dtype=torch.bool, device=neg.device)
    neg = neg.masked_fill(eye, float("-inf"))  # patch i never negates itself
    return _nce_rows(pos, neg)


def frequency_contrastive_loss(
    x: torch.Tensor,
    y_hat: torch.Tensor,
    heads: ProjectionHeads,
    config: FrequencyConfig | None = None,
    tau: float = 0.07,
) -> torch.Tensor:
    """Patch-wise InfoNCE: queries from x, positives from G(x) = y_hat,
    negatives the other patches of x."""
    if tau <= 0:
        raise ValueError("temperature tau must be positive")
    cfg = config or FrequencyConfig.for_tile(x.shape[-1])
    x, y_hat = _as_batch(x), _as_batch(y_hat)
    return _patch_nce(x, y_hat, x, heads, cfg, tau)


def identity_frequency_loss(
    y: torch.Tensor,
    gen: nn.Module,
    heads: ProjectionHeads,
    config: FrequencyConfig | None = None,
    tau: float = 0.07,
) -> torch.Tensor:
    """Frequency loss on the identity pathway: queries from G(G(y)),
    positives and negatives from G(y)."""
    cfg = config or FrequencyConfig.for_tile(y.shape[-1])
    y_tilde = gen(_as_batch(y))
    y_double = gen(y_tilde)
    return _patch_nce(y_double, y_tilde, y_tilde, heads, cfg, tau)
