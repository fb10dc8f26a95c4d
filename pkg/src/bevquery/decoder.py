"""Decoder orchestration and the shared parameter set.

One layer runs attention -> sampling -> mixing -> heads -> box update. The
same ``ModelParams`` are reused by every layer, so the first ``l`` layers of
an ``L``-layer run are exactly an ``l``-layer run.
"""
import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .attention import DISTANCE_FNS, TAU_MODES, SasaParams, head_taus, sasa_layer
from .errors import ConfigurationError
from .mixing import (MIXING_ORDERS, MixingParams, aggregate, apply_box_update,
                     class_scores, mix, predict_heads)
from .queries import QuerySet, init_queries
from .sampling import (SamplingConfig, SamplingParams, prepare_inputs, sample_spatiotemporal,
                       sampling_points)
from .scene import Scene

MAX_LAYERS = 6
PARAMS_MAGIC = b"BEVQPRM1"
PARAMS_VERSION = 1


@dataclass
class ModelConfig:
    num_queries: int = 64
    embed_dim: int = 32
    num_heads: int = 4
    head_dim: int = 8
    num_classes: int = 3
    channels: int = 64
    num_layers: int = MAX_LAYERS
    tau_mode: str = "adaptive"
    distance_fn: str = "linear"
    mixing_order: str = "channel_then_point"
    head_hidden: int = 0
    roi_half_extent: float = 20.0
    query_seed: int = 0
    init_cls_prob: float = 0.5

    def __post_init__(self):
        if self.num_queries < 1:
            raise ConfigurationError("num_queries must be >= 1")
        if min(self.embed_dim, self.num_heads, self.head_dim,
               self.num_classes, self.channels) < 1:
            raise ConfigurationError("model dimensions must be >= 1")
        if not 1 <= self.num_layers <= MAX_LAYERS:
            raise ConfigurationError(f"num_layers must be in 1..{MAX_LAYERS}")
        if self.tau_mode not in TAU_MODES:
            raise ConfigurationError(f"tau_mode must be one of {TAU_MODES}")
        if self.distance_fn not in DISTANCE_FNS:
            raise ConfigurationError(f"distance_fn must be one of {tuple(DISTANCE_FNS)}")
        if self.mixing_order not in MIXING_ORDERS:
            raise ConfigurationError(f"mixing_order must be one of {MIXING_ORDERS}")
        if not 0 < self.init_cls_prob < 1:
            raise ConfigurationError("init_cls_prob must be in (0, 1)")


def _sub_arrays(obj):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if value is not None:
            yield f.name, value


@dataclass(eq=False)
class ModelParams:
    config: ModelConfig
    sampling_config: SamplingConfig
    query_embed: np.ndarray
    sasa: SasaParams
    sampling: SamplingParams
    mixing: MixingParams

    @classmethod
    def init(cls, config, sampling_config, seed=0):
        rng = np.random.default_rng([seed, 4242])
        d = config.embed_dim
        prob = config.init_cls_prob
        return cls(
            config, sampling_config,
            query_embed=rng.normal(0.0, 1.0, (config.num_queries, d)),
            sasa=SasaParams.init(rng, d, config.num_heads, config.head_dim),
            sampling=SamplingParams.init(rng, d, sampling_config),
            mixing=MixingParams.init(
                rng, d, config.channels, sampling_config.total_points,
                config.num_classes, config.mixing_order,
                hidden=config.head_hidden or None,
                cls_bias=np.log(prob / (1 - prob))))

    def named_arrays(self):
        """(name, array) pairs in the stable flat-serialisation order."""
        yield "query_embed", self.query_embed
        for group in ("sasa", "sampling", "mixing"):
            for name, arr in _sub_arrays(getattr(self, group)):
                yield f"{group}.{name}", arr

    def manifest(self):
        out, offset = [], 0
        for name, arr in self.named_arrays():
            out.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
        return out

    @property
    def size(self):
        return sum(a.size for _, a in self.named_arrays())

    def flat(self):
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])

    def with_flat(self, vec):
        """Copy of these params with values taken from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ConfigurationError(f"flat vector has {vec.shape}, expected ({self.size},)")
        groups = {}
        offset = 0
        embed = None
        for name, arr in self.named_arrays():
            chunk = vec[offset:offset + arr.size].reshape(arr.shape).copy()
            offset += arr.size
            if name == "query_embed":
                embed = chunk
            else:
                g, n = name.split(".", 1)
                groups.setdefault(g, {})[n] = chunk
        return ModelParams(
            self.config, self.sampling_config, embed,
            _replace(self.sasa, groups["sasa"]),
            _replace(self.sampling, groups["sampling"]),
            _replace(self.mixing, groups["mixing"]))

    def save(self, path):
        header = json.dumps({
            "format": "bevquery-params", "version": PARAMS_VERSION,
            "model": asdict(self.config),
            "sampling": self.sampling_config.to_dict(),
            "dtype": "<f8", "manifest": self.manifest()},
            sort_keys=True).encode()
        blob = (PARAMS_MAGIC + struct.pack("<I", len(header)) + header
                + self.flat().astype("<f8").tobytes())
        from .io import atomic_write_bytes
        atomic_write_bytes(path, blob)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != PARAMS_MAGIC:
            raise ConfigurationError(f"{path}: not a bevquery params file")
        (hlen,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12:12 + hlen])
        if header.get("version") != PARAMS_VERSION:
            raise ConfigurationError(f"{path}: unsupported params version")
        model = ModelConfig(**header["model"])
        sampling = SamplingConfig(**header["sampling"])
        template = cls.init(model, sampling)
        if template.manifest() != header["manifest"]:
            raise ConfigurationError(f"{path}: parameter manifest mismatch")
        vec = np.frombuffer(data[12 + hlen:], dtype="<f8").astype(np.float64)
        return template.with_flat(vec)


def _replace(obj, arrays):
    kwargs = {f.name: getattr(obj, f.name) for f in fields(obj)}
    kwargs.update(arrays)
    return type(obj)(**kwargs)


@dataclass(eq=False)
class Detections:
    """Per-layer decoder outputs; arrays are indexed [layer, query, ...]."""
    boxes: np.ndarray
    scores: np.ndarray
    taus: np.ndarray

    @property
    def num_layers(self):
        return self.boxes.shape[0]

    @property
    def final_boxes(self):
        return self.boxes[-1]

    @property
    def final_scores(self):
        return self.scores[-1]


def decoder_layer(qs, inputs, params):
    """One refinement step; returns (new QuerySet, class scores N x K, taus N x H)."""
    cfg = params.config
    taus = head_taus(qs.features, params.sasa, cfg.tau_mode)
    feat = sasa_layer(qs.features, qs.boxes, params.sasa, cfg.tau_mode,
                      cfg.distance_fn, taus=taus)
    sampled = sample_spatiotemporal(qs.boxes, feat, inputs, params.sampling,
                                    params.sampling_config)
    mixed = mix(sampled, feat, params.mixing, cfg.mixing_order)
    feat = aggregate(mixed, feat, params.mixing)
    deltas, logits = predict_heads(feat, params.mixing)
    boxes = apply_box_update(qs.boxes, deltas)
    return QuerySet(boxes, feat), class_scores(logits), taus


def initial_queries(params):
    cfg = params.config
    return init_queries(cfg.num_queries, cfg.query_seed, cfg.roi_half_extent,
                        params.query_embed)


def run_decoder(params, scene, num_layers=None):
    """Run ``num_layers`` shared-weight layers. ``scene`` is a Scene or SceneInputs."""
    num_layers = params.config.num_layers if num_layers is None else num_layers
    if not 1 <= num_layers <= MAX_LAYERS:
        raise ConfigurationError(f"num_layers must be in 1..{MAX_LAYERS}")
    inputs = prepare_inputs(scene, params.sampling_config) if isinstance(scene, Scene) else scene
    qs = initial_queries(params)
    boxes, scores, taus = [], [], []
    for _ in range(num_layers):
        qs, s, t = decoder_layer(qs, inputs, params)
        boxes.append(qs.boxes)
        scores.append(s)
        taus.append(t)
    return Detections(np.stack(boxes), np.stack(scores), np.stack(taus))


def sampling_probe(params, inputs, layer):
    """Sampling points used by decoder layer ``layer`` (1-based), N x T x S x 3.

    Each frame's points are in that frame's ego coordinates.
    """
    if not 1 <= layer <= MAX_LAYERS:
        raise ConfigurationError(f"layer must be in 1..{MAX_LAYERS}")
    cfg = params.config
    qs = initial_queries(params)
    for _ in range(layer - 1):
        qs, _, _ = decoder_layer(qs, inputs, params)
    feat = sasa_layer(qs.features, qs.boxes, params.sasa, cfg.tau_mode, cfg.distance_fn)
    return sampling_points(qs.boxes, feat, inputs.poses, params.sampling,
                           params.sampling_config)


def finalize(dets, score_threshold=0.0, layer=-1):
    """Detections of one layer as dicts, best first (ties by query index).

    Each query contributes one detection: its highest-scoring class.
    """
    boxes = dets.boxes[layer]
    scores = dets.scores[layer]
    layer_number = layer % dets.num_layers + 1
    cls = np.argmax(scores, axis=1)
    best = scores[np.arange(len(cls)), cls]
    order = sorted(range(len(cls)), key=lambda i: (-best[i], i))
    return [{"query_id": int(i), "layer": layer_number,
             "box": [float(x) for x in boxes[i]], "class": int(cls[i]),
             "score": float(best[i])}
            for i in order if best[i] >= score_threshold]
