"""JSON encoding of complex arrays and ensemble/observation bundles.

Complex arrays are stored as nested lists in row-major order whose
innermost items are ``[re, im]`` pairs.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DimensionError
from .operators import (
    BasisKind,
    Encoder,
    FactoredSignal,
    MeasurementEnsemble,
    Observation,
    SubspaceBasis,
)

__all__ = [
    "encode_complex",
    "decode_complex",
    "bundle_to_dict",
    "bundle_from_dict",
    "dump_bundle",
    "load_bundle",
]

BUNDLE_VERSION = 1


def encode_complex(a):
    """Nested lists of ``[re, im]`` pairs for a complex array."""
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def decode_complex(obj):
    """Inverse of :func:`encode_complex`."""
    a = np.asarray(obj, dtype=float)
    if a.ndim < 1 or a.shape[-1] != 2:
        raise DimensionError("complex data must end in [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def bundle_to_dict(ens, obs, truth=None):
    """Ensemble, observation and optional ground truth as a JSON-ready dict."""
    out = {
        "version": BUNDLE_VERSION,
        "L": ens.L,
        "r": ens.r,
        "K": list(ens.K_dims),
        "N": list(ens.N_dims),
        "basis_kind": [b.kind.value for b, _ in ens.blocks],
        "B": [encode_complex(ens.basis(i)) for i in range(ens.r)],
        "C": [encode_complex(ens.encoder(i)) for i in range(ens.r)],
        "tau": float(obs.tau),
        "y": encode_complex(obs.y),
    }
    if truth is not None:
        out["truth"] = {
            "channels": [encode_complex(h) for h in truth.channels],
            "messages": [encode_complex(x) for x in truth.messages],
        }
    return out


def bundle_from_dict(d):
    """Returns ``(ensemble, observation, truth_or_None)``."""
    L, r = int(d["L"]), int(d["r"])
    kinds = d.get("basis_kind", [BasisKind.GENERAL_ORTHONORMAL.value] * r)
    if not (len(d["B"]) == len(d["C"]) == len(kinds) == r):
        raise DimensionError("bundle block count does not match r")
    blocks = []
    for i in range(r):
        B = decode_complex(d["B"][i])
        C = decode_complex(d["C"][i])
        if B.shape != (L, int(d["K"][i])) or C.shape != (L, int(d["N"][i])):
            raise DimensionError(f"bundle block {i} has inconsistent shapes")
        blocks.append((SubspaceBasis(B, BasisKind(kinds[i])), Encoder(C)))
    ens = MeasurementEnsemble(L, tuple(blocks))
    obs = Observation(decode_complex(d["y"]), float(d["tau"]))
    if obs.y.shape != (L,):
        raise DimensionError("bundle y has the wrong length")
    truth = None
    if d.get("truth") is not None:
        t = d["truth"]
        truth = FactoredSignal(
            tuple(decode_complex(h) for h in t["channels"]),
            tuple(decode_complex(x) for x in t["messages"]),
        )
    return ens, obs, truth


def dump_bundle(path, ens, obs, truth=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bundle_to_dict(ens, obs, truth), fh)


def load_bundle(path):
    with open(path, encoding="utf-8") as fh:
        return bundle_from_dict(json.load(fh))
