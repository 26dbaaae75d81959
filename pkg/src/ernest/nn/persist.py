"""Binary model container.

Layout: ``b"ERNM"``, format version (u16 LE), manifest length (u32 LE), a JSON
manifest describing layers and blobs, then one little-endian float32 blob per
parameter in layer order. Each blob carries a CRC32 in the manifest.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .layers import spec_from_dict
from .network import Network

MAGIC = b"ERNM"
VERSION = 1


def dumps_network(net: Network, meta=None) -> bytes:
    blobs, entries = [], []
    for i, params in enumerate(net.params):
        for name in sorted(params):
            raw = np.ascontiguousarray(params[name], dtype="<f4").tobytes()
            entries.append({
                "layer": i,
                "name": name,
                "shape": list(params[name].shape),
                "nbytes": len(raw),
                "crc32": zlib.crc32(raw),
            })
            blobs.append(raw)
    manifest = {
        "layers": [layer.to_dict() for layer in net.layers],
        "input_shape": list(net.input_shape),
        "blobs": entries,
        "meta": meta or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode()
    return MAGIC + struct.pack("<HI", VERSION, len(head)) + head + b"".join(blobs)


def loads_network(data: bytes):
    """Inverse of :func:`dumps_network`; returns ``(network, meta)``."""
    if data[:4] != MAGIC:
        raise FormatError("not a model file (bad magic)")
    version, head_len = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported model format version {version}")
    offset = 10
    manifest = json.loads(data[offset : offset + head_len])
    offset += head_len
    layers = [spec_from_dict(d) for d in manifest["layers"]]
    params = [{} for _ in layers]
    for entry in manifest["blobs"]:
        raw = data[offset : offset + entry["nbytes"]]
        offset += entry["nbytes"]
        if len(raw) != entry["nbytes"] or zlib.crc32(raw) != entry["crc32"]:
            raise FormatError(f"checksum mismatch in layer {entry['layer']} {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        params[entry["layer"]][entry["name"]] = arr.reshape(entry["shape"])
    if offset != len(data):
        raise FormatError("trailing bytes after last parameter blob")
    return Network(layers, manifest["input_shape"], params), manifest["meta"]


def save_network(net, path, meta=None):
    Path(path).write_bytes(dumps_network(net, meta))


def load_network(path):
    return loads_network(Path(path).read_bytes())


def round_to_stored_precision(net: Network) -> Network:
    """The network exactly as it will read back from disk."""
    return loads_network(dumps_network(net))[0]
