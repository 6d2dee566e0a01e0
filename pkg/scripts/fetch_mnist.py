#!/usr/bin/env python3
"""Download the MNIST IDX files into data/mnist/.

Tries a list of public mirrors of the original distribution and verifies
the IDX headers before keeping anything.
"""

import gzip
import pathlib
import struct
import sys
import urllib.request

FILES = {
    "train-images-idx3-ubyte.gz": (2051, 60000),
    "train-labels-idx1-ubyte.gz": (2049, 60000),
    "t10k-images-idx3-ubyte.gz": (2051, 10000),
    "t10k-labels-idx1-ubyte.gz": (2049, 10000),
}

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "https://github.com/fgnt/mnist/raw/master/",
]


def verify(payload: bytes, magic: int, count: int) -> bool:
    try:
        raw = gzip.decompress(payload)
    except OSError:
        return False
    got_magic, got_count = struct.unpack(">II", raw[:8])
    return (got_magic, got_count) == (magic, count)


def main() -> int:
    dest = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else pathlib.Path("data/mnist")
    dest.mkdir(parents=True, exist_ok=True)
    for name, (magic, count) in FILES.items():
        target = dest / name
        if target.exists() and verify(target.read_bytes(), magic, count):
            print(f"ok (cached): {target}")
            continue
        for mirror in MIRRORS:
            url = mirror + name
            try:
                with urllib.request.urlopen(url, timeout=60) as resp:
                    payload = resp.read()
            except Exception as exc:
                print(f"  {url}: {exc}")
                continue
            if verify(payload, magic, count):
                target.write_bytes(payload)
                print(f"ok: {target} ({len(payload)} bytes from {mirror})")
                break
            print(f"  {url}: header check failed")
        else:
            print(f"FAILED to fetch {name} from any mirror", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
