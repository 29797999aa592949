"""Multi-body attenuation models and network snapshots.

MAM adds the single-body losses of every target on a link. C-MAM keeps only
targets inside the link's Fresnel region and takes the largest of their
losses, so bodies shadowed by a dominant one add nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffraction import QuadratureConfig, clamped_attenuation_db, sheet_ratios
from .geometry import (
    MembershipConfig,
    NetworkGraph,
    TargetParams,
    fresnel_membership,
    pair_membership,
    targets_array,
)

MODEL_KINDS = ("MAM", "C-MAM")


@dataclass(frozen=True, eq=False)
class AttenuationSnapshot:
    node_features: np.ndarray
    timestamp: int = 0
    model_kind: str = "MAM"
    raw_features: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, AttenuationSnapshot):
            return NotImplemented
        raw_eq = (self.raw_features is None and other.raw_features is None) or (
            self.raw_features is not None and other.raw_features is not None
            and np.array_equal(self.raw_features, other.raw_features, equal_nan=True)
        )
        return (
            np.array_equal(self.node_features, other.node_features)
            and self.timestamp == other.timestamp
            and self.model_kind == other.model_kind
            and raw_eq
        )

    __hash__ = None


@dataclass(frozen=True)
class NoiseConfig:
    sigma_db: float = 0.0
    enabled: bool = False

    def __post_init__(self):
        if self.sigma_db < 0:
            raise ValueError("sigma_db must be non-negative")


@dataclass(frozen=True, eq=False)
class RssSnapshot:
    link_power: np.ndarray
    free_space_power: np.ndarray


def pair_losses(graph: NetworkGraph, targets: Sequence[TargetParams] | np.ndarray, wavelength: float,
                quad: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """Single-body loss of every target on every unordered pair, in dB.

    Losses are floored at 0 dB: the diffraction ripple of a body beside the
    link can slightly raise the field, which the attenuation models ignore.
    """
    arr = targets if isinstance(targets, np.ndarray) else targets_array(targets)
    pairs = graph.pairs
    n_t, n_p = len(arr), len(pairs)
    if n_t == 0 or n_p == 0:
        return np.zeros((n_t, n_p))
    p = graph.node_positions[pairs[:, 0]]
    q = graph.node_positions[pairs[:, 1]]
    az = np.arctan2(q[:, 1] - p[:, 1], q[:, 0] - p[:, 0])
    tx = np.repeat(p[None], n_t, axis=0).reshape(-1, 3)
    rx = np.repeat(q[None], n_t, axis=0).reshape(-1, 3)
    azz = np.tile(az, n_t)
    x, y, phi, h, w1, w2 = (np.repeat(arr[:, i], n_p) for i in range(6))
    psi = phi - azz
    width = 2 * np.sqrt((w1 / 2 * np.sin(psi)) ** 2 + (w2 / 2 * np.cos(psi)) ** 2)
    ratios = sheet_ratios(tx, rx, np.column_stack([x, y]), azz, width, h, wavelength, quad)
    return np.maximum(clamped_attenuation_db(ratios), 0.0).reshape(n_t, n_p)


def _link_pair_row(graph: NetworkGraph, link: int) -> int:
    return int(graph.link_pair[link])


def _single_pair_losses(link, graph, targets, wavelength, quad):
    row = _link_pair_row(graph, link)
    sub = NetworkGraph(graph.node_positions, (tuple(graph.pairs[row]),), graph.area, graph.node_height,
                       graph.node_ids)
    return pair_losses(sub, targets, wavelength, quad)[:, 0]


def mam_link_attenuation(link: int, graph: NetworkGraph, targets: Sequence[TargetParams], wavelength: float,
                         quad: QuadratureConfig = QuadratureConfig()) -> float:
    if not targets:
        return 0.0
    return float(np.sum(_single_pair_losses(link, graph, targets, wavelength, quad)))


def cmam_target_attenuation(link: int, graph: NetworkGraph, target: TargetParams, wavelength: float,
                            quad: QuadratureConfig = QuadratureConfig(),
                            cfg: MembershipConfig = MembershipConfig()) -> float:
    if not fresnel_membership(target, link, graph, wavelength, cfg):
        return 0.0
    return float(_single_pair_losses(link, graph, [target], wavelength, quad)[0])


def cmam_link_attenuation(link: int, graph: NetworkGraph, targets: Sequence[TargetParams], wavelength: float,
                          quad: QuadratureConfig = QuadratureConfig(),
                          cfg: MembershipConfig = MembershipConfig()) -> float:
    values = [cmam_target_attenuation(link, graph, t, wavelength, quad, cfg) for t in targets]
    return max(values, default=0.0)


def compose(losses: np.ndarray, members: np.ndarray | None, model_kind: str) -> np.ndarray:
    """Per-pair link values from (n_targets, n_pairs) single-body losses."""
    if model_kind == "MAM":
        return losses.sum(axis=0)
    if model_kind == "C-MAM":
        if members is None:
            raise ValueError("C-MAM needs the membership matrix")
        if losses.shape[0] == 0:
            return np.zeros(losses.shape[1])
        return np.where(members, losses, 0.0).max(axis=0)
    raise ValueError(f"unknown model kind {model_kind!r}")


def features_from_links(graph: NetworkGraph, link_values: np.ndarray) -> np.ndarray:
    """Arrange per-link values into the zero-padded node feature matrix."""
    rows, cols, idx = graph.feature_slots
    out = np.zeros((graph.n_nodes, graph.max_degree))
    out[rows, cols] = np.asarray(link_values, dtype=float)[idx]
    return out


def links_from_features(graph: NetworkGraph, features: np.ndarray) -> np.ndarray:
    rows, cols, idx = graph.feature_slots
    out = np.empty(graph.n_links)
    out[idx] = features[rows, cols]
    return out


def snapshot(graph: NetworkGraph, targets: Sequence[TargetParams], model_kind: str, wavelength: float,
             quad: QuadratureConfig = QuadratureConfig(), cfg: MembershipConfig = MembershipConfig(),
             timestamp: int = 0) -> AttenuationSnapshot:
    losses = pair_losses(graph, targets, wavelength, quad)
    members = pair_membership(graph, targets, wavelength, cfg) if model_kind == "C-MAM" else None
    return snapshot_from_losses(graph, losses, members, model_kind, timestamp)


def snapshot_from_losses(graph: NetworkGraph, losses: np.ndarray, members: np.ndarray | None, model_kind: str,
                         timestamp: int = 0) -> AttenuationSnapshot:
    per_pair = compose(losses, members, model_kind)
    return AttenuationSnapshot(features_from_links(graph, per_pair[graph.link_pair]), timestamp, model_kind)


def simulate_rss(snap: AttenuationSnapshot, graph: NetworkGraph, free_space_power, noise: NoiseConfig = NoiseConfig(),
                 rng_seed=None) -> RssSnapshot:
    """Received power per link: free-space power minus attenuation plus dB-domain noise."""
    p0 = np.broadcast_to(np.asarray(free_space_power, dtype=float), (graph.n_links,)).copy()
    power = p0 - links_from_features(graph, snap.node_features)
    if noise.enabled and noise.sigma_db > 0:
        rng = np.random.default_rng(rng_seed)
        power = power + rng.normal(0.0, noise.sigma_db, size=graph.n_links)
    return RssSnapshot(power, p0)


def simulate_dataset(graph: NetworkGraph, profile, n_values: Sequence[int], samples_per_n: int, wavelength: float,
                     rng_seed: int, quad: QuadratureConfig = QuadratureConfig(),
                     cfg: MembershipConfig = MembershipConfig(),
                     model_kinds: Sequence[str] = MODEL_KINDS) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Random scenes for every requested count, featurized under each model.

    Scene ``i`` with ``n`` targets is seeded from ``(rng_seed, n, i)``, so the
    MAM and C-MAM datasets are built from the very same placements.
    Returns ``({kind: (samples, nodes, width) features}, labels)``.
    """
    from .geometry import sample_targets

    for kind in model_kinds:
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
    feats: dict[str, list[np.ndarray]] = {k: [] for k in model_kinds}
    labels = []
    for n in n_values:
        for i in range(samples_per_n):
            targets = sample_targets(n, graph.area, profile, [rng_seed, n, i])
            losses = pair_losses(graph, targets, wavelength, quad)
            members = pair_membership(graph, targets, wavelength, cfg) if "C-MAM" in model_kinds else None
            for kind in model_kinds:
                feats[kind].append(snapshot_from_losses(graph, losses, members, kind).node_features)
            labels.append(n)
    shape = (0, graph.n_nodes, graph.max_degree)
    return ({k: np.stack(v) if v else np.zeros(shape) for k, v in feats.items()}, np.array(labels, dtype=np.int64))
