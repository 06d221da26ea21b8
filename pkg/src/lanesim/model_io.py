"""Self-describing model container (NPZ with a versioned JSON header).

Two payload kinds share one file format:

  compact -- quantized codes, bitmasks, sign-split scales, and biases per
             layer; loaded verbatim.
  dense   -- float weights plus optional per-layer input batch-norm and a
             prep recipe (target nonzero fraction, code width); the loader
             folds the batch norm, prunes, and quantizes deterministically.

Array names are ``layer{i}/{wx|wh|vx|vh}/...`` plus optional ``utt/...``
for an embedded utterance.  Masks are bit-packed.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ParameterError, StructureError
from .rnn import (
    ActVector,
    BatchNormParams,
    QuantParams,
    RnnLayer,
    RnnNetwork,
    Utterance,
    prune_magnitude,
    quantize,
    refactor_batchnorm,
)
from .sparse import BitMask, CompactMatrix, CompactVector

FORMAT_NAME = "lanesim-model"
FORMAT_VERSION = 1
_MATS = ("wx", "wh", "vx", "vh")


def _pack_mask(mask: np.ndarray) -> np.ndarray:
    return np.packbits(np.asarray(mask, dtype=bool).ravel())


def _unpack_mask(packed: np.ndarray, shape) -> np.ndarray:
    n = int(np.prod(shape))
    return np.unpackbits(packed, count=n).astype(bool).reshape(shape)


def _matrix_arrays(prefix: str, m: CompactMatrix) -> dict:
    q = m.quant
    if q is None:
        raise ParameterError("compact payloads must carry quantization scales")
    return {
        f"{prefix}/mask": _pack_mask(m.mask),
        f"{prefix}/shape": np.array(m.shape, dtype=np.int64),
        f"{prefix}/values": np.asarray(m.values, dtype=np.int16),
        f"{prefix}/quant": np.array([q.bits, q.s_pos, q.s_neg]),
    }


def _matrix_from(arrays, prefix: str) -> CompactMatrix:
    shape = tuple(arrays[f"{prefix}/shape"])
    mask = _unpack_mask(arrays[f"{prefix}/mask"], shape)
    bits, s_pos, s_neg = arrays[f"{prefix}/quant"]
    return CompactMatrix(mask, arrays[f"{prefix}/values"],
                         quant=QuantParams(bits=int(bits), s_pos=float(s_pos),
                                           s_neg=float(s_neg)))


def save_network(path, net: RnnNetwork, utterance: Utterance | None = None):
    """Write a compact-kind model file, optionally with an utterance."""
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": "compact",
        "name": net.name,
        "direction": net.direction,
        "layers": len(net.layers),
        "meta": net.meta,
    }
    arrays = {"header": np.frombuffer(
        json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for i, layer in enumerate(net.layers):
        for key, m in zip(_MATS, (layer.w_x, layer.w_h, layer.v_x, layer.v_h)):
            arrays.update(_matrix_arrays(f"layer{i}/{key}", m))
        arrays[f"layer{i}/bias_fwd"] = layer.bias_fwd
        arrays[f"layer{i}/bias_bwd"] = layer.bias_bwd
    if utterance is not None:
        codes = np.stack([x.dense_codes() for x in utterance.inputs])
        quants = np.array([[x.quant.bits, x.quant.s_pos, x.quant.s_neg]
                           for x in utterance.inputs])
        arrays["utt/codes"] = codes.astype(np.int16)
        arrays["utt/quant"] = quants
    np.savez_compressed(path, **arrays)


def save_dense_model(path, dense_layers, direction: str = "bidirectional",
                     bn_params=None, target_nz: float = 0.33,
                     bits: int = 10, name: str = ""):
    """Write a dense-kind model file.

    dense_layers: list of dicts with float arrays ``wx, wh, vx, vh`` (shape
    input_dim x hidden for the x-side) and ``bias_fwd, bias_bwd``.
    bn_params: optional list of BatchNormParams (or None per layer) applying
    to each layer's inputs.
    """
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": "dense",
        "name": name,
        "direction": direction,
        "layers": len(dense_layers),
        "prep": {"target_nz": target_nz, "bits": bits},
        "meta": {},
    }
    arrays = {"header": np.frombuffer(
        json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for i, layer in enumerate(dense_layers):
        for key in _MATS:
            arrays[f"layer{i}/{key}/dense"] = np.asarray(layer[key],
                                                         dtype=np.float64)
        arrays[f"layer{i}/bias_fwd"] = np.asarray(layer["bias_fwd"])
        arrays[f"layer{i}/bias_bwd"] = np.asarray(layer["bias_bwd"])
        if bn_params is not None and bn_params[i] is not None:
            bn = bn_params[i]
            arrays[f"layer{i}/bn"] = np.stack([bn.mu, bn.sigma2, bn.gamma,
                                               bn.beta])
            arrays[f"layer{i}/bn_eps"] = np.array([bn.epsilon])
    np.savez_compressed(path, **arrays)


def _load_header(arrays) -> dict:
    if "header" not in arrays:
        raise StructureError("not a model file: missing header")
    header = json.loads(bytes(arrays["header"]).decode())
    if header.get("format") != FORMAT_NAME:
        raise StructureError(f"unexpected format {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise StructureError(
            f"unsupported model version {header.get('version')!r}")
    return header


def _dense_layer_to_compact(arrays, i: int, header: dict) -> RnnLayer:
    prep = header.get("prep", {})
    target_nz = float(prep.get("target_nz", 0.33))
    bits = int(prep.get("bits", 10))
    mats = {key: np.asarray(arrays[f"layer{i}/{key}/dense"]) for key in _MATS}
    bias_fwd = np.asarray(arrays[f"layer{i}/bias_fwd"], dtype=np.float64)
    bias_bwd = np.asarray(arrays[f"layer{i}/bias_bwd"], dtype=np.float64)
    if f"layer{i}/bn" in arrays:
        mu, sigma2, gamma, beta = arrays[f"layer{i}/bn"]
        bn = BatchNormParams(mu=mu, sigma2=sigma2,
                             epsilon=float(arrays[f"layer{i}/bn_eps"][0]),
                             gamma=gamma, beta=beta)
        mats["wx"], bias_fwd = refactor_batchnorm(mats["wx"], bias_fwd, bn)
        mats["vx"], bias_bwd = refactor_batchnorm(mats["vx"], bias_bwd, bn)

    def prep_matrix(dense):
        pruned = prune_magnitude(dense, target_nz)
        m, _ = quantize(pruned.decode(), bits)
        return m

    hidden = mats["wh"].shape[1]
    return RnnLayer(w_x=prep_matrix(mats["wx"]), w_h=prep_matrix(mats["wh"]),
                    v_x=prep_matrix(mats["vx"]), v_h=prep_matrix(mats["vh"]),
                    bias_fwd=bias_fwd, bias_bwd=bias_bwd, hidden=hidden)


def load_network(path):
    """Read a model file; returns (network, utterance-or-None)."""
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files}
    header = _load_header(arrays)
    layers = []
    for i in range(header["layers"]):
        if header["kind"] == "compact":
            mats = {key: _matrix_from(arrays, f"layer{i}/{key}")
                    for key in _MATS}
            layers.append(RnnLayer(
                w_x=mats["wx"], w_h=mats["wh"], v_x=mats["vx"],
                v_h=mats["vh"],
                bias_fwd=np.asarray(arrays[f"layer{i}/bias_fwd"],
                                    dtype=np.float64),
                bias_bwd=np.asarray(arrays[f"layer{i}/bias_bwd"],
                                    dtype=np.float64),
                hidden=int(arrays[f"layer{i}/wh/shape"][1])))
        elif header["kind"] == "dense":
            layers.append(_dense_layer_to_compact(arrays, i, header))
        else:
            raise StructureError(f"unknown payload kind {header['kind']!r}")
    net = RnnNetwork(layers=tuple(layers), direction=header["direction"],
                     name=header.get("name", ""),
                     meta=header.get("meta", {}))
    utt = None
    if "utt/codes" in arrays:
        vecs = []
        for codes, (bits, s_pos, s_neg) in zip(arrays["utt/codes"],
                                               arrays["utt/quant"]):
            mask = codes != 0
            vecs.append(ActVector(
                CompactVector(BitMask(mask), codes[mask]),
                QuantParams(bits=int(bits), s_pos=float(s_pos),
                            s_neg=float(s_neg))))
        utt = Utterance(tuple(vecs))
    return net, utt
