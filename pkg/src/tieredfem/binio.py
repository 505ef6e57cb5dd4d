"""Single-file binary containers: JSON manifest + raw little-endian arrays.

Layout (all integers little-endian):

    bytes 0..8    magic, 8 bytes, NUL padded (e.g. b"TFDS1")
    bytes 8..16   u64 manifest byte length
    manifest      canonical JSON (sorted keys, compact separators), UTF-8
    padding       NUL bytes to the next 16-byte boundary
    arrays        raw C-order little-endian array payloads, back to back

The manifest carries a "meta" dict (caller data, must be JSON) and an
"arrays" list with name/dtype/shape/offset/nbytes/sha256 per array.
Offsets are absolute file offsets. Writing is atomic (tmp + rename) and
fully deterministic for identical inputs: arrays are laid out in sorted
name order and no timestamps are recorded.
"""

import hashlib
import json
import os

import numpy as np

from .errors import InputError

_ALIGN = 16


def _pad(n):
    return (-n) % _ALIGN


def _canonical_manifest(manifest):
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, magic, meta, arrays):
    """Write a container file. arrays: dict name -> ndarray."""
    if len(magic) > 8:
        raise InputError("magic must be at most 8 bytes")
    magic_b = magic.encode("ascii").ljust(8, b"\x00")

    items = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        # force little-endian on-disk representation
        dt = a.dtype.newbyteorder("<")
        a = a.astype(dt, copy=False)
        items.append((name, a))

    # two passes: sizes first (manifest length feeds the offsets), then write
    entries = []
    for name, a in items:
        entries.append(
            {
                "name": name,
                "dtype": a.dtype.str,
                "shape": list(a.shape),
                "nbytes": int(a.nbytes),
                "sha256": hashlib.sha256(a.tobytes()).hexdigest(),
            }
        )

    # manifest length depends on offsets which depend on manifest length;
    # iterate until stable (offsets are plain ints, converges in <=3 rounds)
    manifest = {"meta": meta, "arrays": entries}
    blob = _canonical_manifest(manifest)
    for _ in range(8):
        off = 16 + len(blob) + _pad(16 + len(blob))
        for e in entries:
            e["offset"] = off
            off += e["nbytes"]
        new_blob = _canonical_manifest(manifest)
        if len(new_blob) == len(blob):
            blob = new_blob
            break
        blob = new_blob
    else:
        raise RuntimeError("manifest layout did not stabilize")

    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(magic_b)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        f.write(b"\x00" * _pad(16 + len(blob)))
        for _, a in items:
            f.write(a.tobytes())
    os.replace(tmp, path)


def read_container(path, magic=None, verify=True):
    """Read a container. Returns (meta, arrays dict)."""
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) < 16:
            raise InputError(f"{path}: truncated container header")
        got_magic = head[:8].rstrip(b"\x00").decode("ascii", errors="replace")
        if magic is not None and got_magic != magic:
            raise InputError(f"{path}: magic {got_magic!r}, expected {magic!r}")
        mlen = int.from_bytes(head[8:16], "little")
        blob = f.read(mlen)
        if len(blob) != mlen:
            raise InputError(f"{path}: truncated manifest")
        manifest = json.loads(blob.decode("utf-8"))
        arrays = {}
        for e in manifest["arrays"]:
            f.seek(e["offset"])
            raw = f.read(e["nbytes"])
            if len(raw) != e["nbytes"]:
                raise InputError(f"{path}: truncated array {e['name']!r}")
            if verify:
                digest = hashlib.sha256(raw).hexdigest()
                if digest != e["sha256"]:
                    raise InputError(f"{path}: checksum mismatch for {e['name']!r}")
            a = np.frombuffer(raw, dtype=np.dtype(e["dtype"]))
            arrays[e["name"]] = a.reshape(e["shape"]).copy()
    return manifest["meta"], arrays
