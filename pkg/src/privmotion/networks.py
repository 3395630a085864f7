"""Interpolation (ITP) and final-prediction (FP) networks.

Both take DCT coefficient matrices of padded sequences (K x C).  The encoders
end in a K x hidden latent where their outputs are summed; the decoder maps
the latent back to K x C and an outer skip adds the weighted inputs:

    ITP: e = priv(h_priv);  out = dec(obs(h_obs) + e) + 0.7 h_obs + 0.3 h_priv
    FP:  s = sim(h_obs);    out = dec(obs(h_obs) + s) + 1.0 h_obs

``psl`` is the single-network variant without a simulator branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .config import TrainConfig
from .errors import CheckpointError, DimensionError
from .gcn import EVAL, CodecSpec, Mode, codec_forward, init_codec

KINDS = {
    "itp": ("obs", "priv", "dec"),
    "fp": ("obs", "sim", "dec"),
    "psl": ("obs", "dec"),
}
# keeps initialization streams of the different networks apart
_INIT_TAG = {"itp": 1, "fp": 2, "psl": 3}


@dataclass(frozen=True)
class NetSpec:
    kind: str
    k: int
    coeffs: int
    hidden: int

    @classmethod
    def from_config(cls, kind: str, cfg: TrainConfig, k: int) -> "NetSpec":
        return cls(kind, k, cfg.coeffs, cfg.hidden)

    def codecs(self) -> dict[str, CodecSpec]:
        out = {}
        for role in KINDS[self.kind]:
            prefix = f"{self.kind}.{role}"
            if role == "dec":
                out[role] = CodecSpec(prefix, self.k, self.hidden, self.hidden, self.coeffs, "none")
            else:
                out[role] = CodecSpec(prefix, self.k, self.coeffs, self.hidden, self.hidden, "tanh")
        return out

    def param_shapes(self) -> dict[str, tuple[int, int]]:
        shapes = {}
        for codec in self.codecs().values():
            shapes.update(codec.param_shapes())
        return shapes

    def init(self, seed: int) -> tc.ParamStore:
        rng = np.random.default_rng([seed, _INIT_TAG[self.kind]])
        store = tc.ParamStore()
        for codec in self.codecs().values():
            for name, value in init_codec(codec, rng).items():
                store[name] = value
        return store

    def zeros(self) -> tc.ParamStore:
        return tc.ParamStore({name: np.zeros(shape) for name, shape in self.param_shapes().items()})

    def check(self, store: tc.ParamStore) -> None:
        """Raise CheckpointError unless ``store`` holds exactly this network's parameters."""
        expected = self.param_shapes()
        missing = [n for n in expected if n not in store]
        extra = [n for n in store.names() if n not in expected]
        if missing or extra:
            parts = []
            if missing:
                parts.append(f"missing {missing[:3]}{' ...' if len(missing) > 3 else ''}")
            if extra:
                parts.append(f"unexpected {extra[:3]}{' ...' if len(extra) > 3 else ''}")
            raise CheckpointError(f"parameters do not match a {self.kind!r} network: " + "; ".join(parts))
        for name, shape in expected.items():
            if store[name].shape != shape:
                raise CheckpointError(f"parameter {name!r} has shape {store[name].shape}, expected {shape}")


def spec_from_store(kind: str, store: tc.ParamStore) -> NetSpec:
    """Recover K, C and hidden width from a stored network."""
    try:
        w_in = store[f"{kind}.obs.layer_in.W"]
        a_in = store[f"{kind}.obs.layer_in.A"]
    except KeyError:
        raise CheckpointError(f"checkpoint holds no {kind!r} network") from None
    spec = NetSpec(kind, a_in.shape[0], w_in.shape[0], w_in.shape[1])
    spec.check(store)
    return spec


def warm_start_fp(fp: tc.ParamStore, itp: tc.ParamStore) -> tc.ParamStore:
    """Copy ITP's observation encoder and decoder into an FP store of the same shape."""
    for role in ("obs", "dec"):
        for name in list(fp.names()):
            if name.startswith(f"fp.{role}."):
                source = "itp." + name[len("fp."):]
                fp[name] = itp[source]
    return fp


def _check_input(h: tc.Node, spec: NetSpec, what: str) -> None:
    if h.shape[-2:] != (spec.k, spec.coeffs):
        raise DimensionError(f"{what}: expected (..., {spec.k}, {spec.coeffs}), got {h.shape}")


def itp_forward(h_obs: tc.Node, h_priv: tc.Node, store: tc.ParamStore, spec: NetSpec, mode: Mode = EVAL,
                obs_skip: float = 0.7, priv_skip: float = 0.3) -> tuple[tc.Node, tc.Node]:
    """Returns (interpolated coefficients, privileged representation E)."""
    _check_input(h_obs, spec, "itp observed input")
    _check_input(h_priv, spec, "itp privileged input")
    if h_obs.shape != h_priv.shape:
        raise DimensionError(f"itp inputs differ in shape: {h_obs.shape} vs {h_priv.shape}")
    nodes = store.bind(h_obs.graph)
    codecs = spec.codecs()
    e = codec_forward(h_priv, codecs["priv"], nodes, mode)
    latent = tc.add(codec_forward(h_obs, codecs["obs"], nodes, mode), e)
    skip = tc.affine_combine(obs_skip, h_obs, priv_skip, h_priv)
    return tc.add(codec_forward(latent, codecs["dec"], nodes, mode), skip), e


def fp_forward(h_obs: tc.Node, store: tc.ParamStore, spec: NetSpec, mode: Mode = EVAL,
               skip: float = 1.0) -> tuple[tc.Node, tc.Node | None]:
    """Returns (predicted coefficients, simulator output S); S is None for ``psl``."""
    _check_input(h_obs, spec, f"{spec.kind} input")
    nodes = store.bind(h_obs.graph)
    codecs = spec.codecs()
    latent = codec_forward(h_obs, codecs["obs"], nodes, mode)
    s = None
    if "sim" in codecs:
        s = codec_forward(h_obs, codecs["sim"], nodes, mode)
        latent = tc.add(latent, s)
    out = codec_forward(latent, codecs["dec"], nodes, mode)
    return tc.add(out, tc.scale(h_obs, skip)), s


def priv_representation(h_priv: np.ndarray, store: tc.ParamStore, spec: NetSpec) -> np.ndarray:
    """E from the privileged encoder alone, in eval mode, as a plain array."""
    g = tc.Graph()
    h = g.const(h_priv)
    _check_input(h, spec, "privileged input")
    codec = spec.codecs()["priv"]
    nodes = {name: g.const(store[name]) for name in codec.param_shapes()}
    return codec_forward(h, codec, nodes, EVAL).value
