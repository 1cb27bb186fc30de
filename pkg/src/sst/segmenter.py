"""Toy semi-supervised segmentation pipeline around the encoder.

Embeddings come straight from a synthetic renderer or a tensor file (no
CNN backbone).  Each frame is segmented from a sliding buffer of ``tau``
frames whose masks are the reference or earlier predictions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from sst.encoder import EncoderConfig, ObjectMaskSequence, encode, init_params, routing_params
from sst.posenc import add_positional_encoding
from sst.tensor import check_video

FEATURE_MODES = ("orthonormal", "noisy", "rgb")


@dataclass
class ObjectSpec:
    shape: str = "rect"  # "rect" or "disc"
    size: tuple[int, int] = (2, 2)  # (height, width); a disc uses size[0] as diameter
    start: tuple[int, int] = (0, 0)  # top-left (y, x) at frame 0
    velocity: tuple[int, int] = (0, 0)  # (dy, dx) per frame

    def footprint(self) -> np.ndarray:
        if self.shape == "rect":
            return np.ones(self.size, dtype=bool)
        if self.shape == "disc":
            d = self.size[0]
            c = (d - 1) / 2
            yy, xx = np.mgrid[:d, :d]
            return (yy - c) ** 2 + (xx - c) ** 2 <= (d / 2) ** 2
        raise ValueError(f"unknown object shape {self.shape!r}")


@dataclass
class SyntheticVideoSpec:
    dims: tuple[int, int, int] = (4, 8, 8)
    objects: list[ObjectSpec] = field(default_factory=list)
    channels: int = 8
    mode: str = "orthonormal"
    sigma: float = 0.1
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticVideoSpec":
        d = dict(d)
        objs = [ObjectSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in o.items()})
                for o in d.pop("objects", [])]
        known = {k: d[k] for k in ("channels", "mode", "sigma", "seed") if k in d}
        return cls(dims=tuple(d.get("dims", (4, 8, 8))), objects=objs, **known)

    @classmethod
    def from_json(cls, path) -> "SyntheticVideoSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    @property
    def num_objects(self) -> int:
        return len(self.objects) + 1


def render_labels(spec: SyntheticVideoSpec) -> np.ndarray:
    """``(T, H, W)`` labels; later objects are drawn over earlier ones."""
    T, H, W = spec.dims
    labels = np.zeros((T, H, W), dtype=np.int64)
    for o, obj in enumerate(spec.objects, start=1):
        fp = obj.footprint()
        fh, fw = fp.shape
        if fh > H or fw > W or fh < 1 or fw < 1:
            raise ValueError(f"object {o} of size {fp.shape} does not fit a {H}x{W} frame")
        for t in range(T):
            y = min(max(obj.start[0] + t * obj.velocity[0], 0), H - fh)
            x = min(max(obj.start[1] + t * obj.velocity[1], 0), W - fw)
            labels[t, y:y + fh, x:x + fw][fp] = o
    return labels


def synthesize_video(spec: SyntheticVideoSpec):
    """Render ``(embeddings, masks)``; masks hold the ground truth of every frame."""
    if spec.mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {spec.mode!r}; choose from {FEATURE_MODES}")
    if not spec.objects:
        raise ValueError("a synthetic video needs at least one object besides background")
    o = spec.num_objects
    labels = render_labels(spec)
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "rgb":
        if spec.channels < 3:
            raise ValueError("rgb mode needs at least 3 channels")
        table = np.zeros((o, spec.channels))
        table[:, :3] = rng.uniform(0.0, 1.0, size=(o, 3))
    else:
        if spec.channels < o:
            raise ValueError(f"{o} orthonormal ids need at least {o} channels")
        table = np.eye(o, spec.channels)
    emb = np.moveaxis(table[labels], -1, 0)
    if spec.mode == "noisy":
        emb = emb + spec.sigma * rng.standard_normal(emb.shape)
    return np.ascontiguousarray(emb), ObjectMaskSequence(labels, o)


@dataclass
class ScoringHead:
    """Per-pixel linear map from decoder channels to ``O`` object scores.

    Decoder channels are ``[embedding (C), affinity (L*O), encoder output (C)]``.
    """

    weight: np.ndarray  # (O, 2C + L*O)

    @classmethod
    def passthrough(cls, channels: int, layers: int, objects: int) -> "ScoringHead":
        w = np.zeros((objects, 2 * channels + layers * objects))
        for l in range(layers):
            w[np.arange(objects), channels + l * objects + np.arange(objects)] = 1.0
        return cls(w)

    @classmethod
    def random(cls, channels: int, layers: int, objects: int, seed: int = 0) -> "ScoringHead":
        d = 2 * channels + layers * objects
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-1.0, 1.0, size=(objects, d)) / np.sqrt(d))

    def __call__(self, features: np.ndarray) -> np.ndarray:
        if features.shape[0] != self.weight.shape[1]:
            raise ValueError(f"scoring head expects {self.weight.shape[1]} channels, got {features.shape[0]}")
        return np.tensordot(self.weight, features, axes=1)


def object_probabilities(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def naive_inference(scores) -> np.ndarray:
    """Per-pixel argmax over objects (axis 0); ties go to the lowest id."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite scores")
    return np.argmax(scores, axis=0)


def evaluate_iou(predicted, truth, objects: int | None = None, background: bool = False) -> dict[int, float]:
    """Region similarity (intersection over union) per object id.

    An object absent from both masks scores 1.0.
    """
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {predicted.shape} vs {truth.shape}")
    if objects is None:
        objects = int(max(predicted.max(initial=0), truth.max(initial=0))) + 1
    out = {}
    for o in range(0 if background else 1, objects):
        a, b = predicted == o, truth == o
        union = np.logical_or(a, b).sum()
        out[o] = 1.0 if union == 0 else float(np.logical_and(a, b).sum() / union)
    return out


def mean_iou(j: dict[int, float]) -> float:
    return float(np.mean(list(j.values()))) if j else 1.0


@dataclass
class PipelineConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    posenc: str = "none"
    params: str = "routing"  # "routing" or "random"
    head: str = "passthrough"  # "passthrough" or "random"
    sharpness: float = 30.0
    causal: bool = True
    teacher_forcing: bool = False
    seed: int = 0


@dataclass
class SegmentResult:
    labels: np.ndarray  # (T, H, W)
    scores: np.ndarray  # (T, O, H, W) probabilities
    affinity: np.ndarray  # (T, L, O, H, W) current-frame slice per step


def buffer_frames(t: int, tau: int) -> list[int]:
    """Frame ids in the buffer ending at ``t``; the start pads with frame 0."""
    return [max(0, t - tau + 1 + j) for j in range(tau)]


def segment(embeddings, masks: ObjectMaskSequence, cfg: PipelineConfig | None = None,
            threads: int | None = None) -> SegmentResult:
    """Propagate the frame-0 reference mask through the whole clip.

    ``masks.labels[0]`` must be a reference frame.  Later frames are
    predicted; their given labels are only read with ``teacher_forcing``.
    """
    cfg = cfg or PipelineConfig()
    emb = check_video(np.asarray(embeddings, dtype=np.float64), "embeddings")
    c, T, H, W = emb.shape
    if masks.labels.shape[1:] != (H, W) or masks.labels.shape[0] < 1:
        raise ValueError("mask frames do not match the embedding frames")
    if masks.status[0] != "reference":
        raise ValueError("frame 0 needs a reference mask")
    enc = cfg.encoder
    if cfg.causal:
        att = replace(enc.attention, pattern=replace(enc.attention.pattern, causal=True))
        enc = replace(enc, attention=att)
    o, tau, n_layers = masks.objects, enc.tau, enc.layers
    if cfg.params == "routing":
        params = routing_params(enc, c, cfg.sharpness)
    elif cfg.params == "random":
        params = init_params(enc, c, cfg.seed)
    else:
        raise ValueError(f"unknown encoder parameters {cfg.params!r}")
    if cfg.head == "passthrough":
        head = ScoringHead.passthrough(c, n_layers, o)
    elif cfg.head == "random":
        head = ScoringHead.random(c, n_layers, o, cfg.seed)
    else:
        raise ValueError(f"unknown scoring head {cfg.head!r}")

    labels = np.zeros((T, H, W), dtype=np.int64)
    labels[0] = masks.labels[0]
    scores = np.zeros((T, o, H, W))
    scores[0] = np.eye(o)[labels[0]].transpose(2, 0, 1)
    affinity = np.zeros((T, n_layers, o, H, W))
    for t in range(1, T):
        frames = buffer_frames(t, tau)
        buf = add_positional_encoding(emb[:, frames], cfg.posenc)
        buf_labels = np.zeros((tau, H, W), dtype=np.int64)
        status = []
        for j, f in enumerate(frames[:-1]):
            use_truth = f == 0 or (cfg.teacher_forcing and masks.status[min(f, len(masks.status) - 1)] != "unknown")
            buf_labels[j] = masks.labels[f] if use_truth else labels[f]
            status.append("reference" if use_truth else "predicted")
        status.append("unknown")
        feats, aff = encode(buf, enc, params, ObjectMaskSequence(buf_labels, o, status), threads=threads)
        cur_aff = aff[:, :, -1]
        decoder_in = np.concatenate([emb[:, t], cur_aff.reshape(n_layers * o, H, W), feats[:, -1]])
        probs = object_probabilities(head(decoder_in))
        labels[t] = naive_inference(probs)
        scores[t] = probs
        affinity[t] = cur_aff
    return SegmentResult(labels, scores, affinity)


def translation_scenario(channels: int = 8) -> SyntheticVideoSpec:
    """Two rectangles sliding one cell per frame on an 8x8 grid."""
    return SyntheticVideoSpec(
        dims=(6, 8, 8),
        objects=[
            ObjectSpec("rect", (3, 3), (0, 0), (0, 1)),
            ObjectSpec("rect", (2, 3), (5, 5), (0, -1)),
        ],
        channels=channels,
    )


def occlusion_scenario(channels: int = 8) -> tuple[SyntheticVideoSpec, int]:
    """Object 1 sits still while object 2 sweeps across in front of it.

    Object 1 is fully hidden at frame 2 only.  Returns the spec and the
    first frame after disocclusion.
    """
    spec = SyntheticVideoSpec(
        dims=(5, 8, 13),
        objects=[
            ObjectSpec("rect", (3, 3), (2, 6), (0, 0)),
            ObjectSpec("rect", (3, 4), (2, 0), (0, 3)),
        ],
        channels=channels,
    )
    return spec, 3
