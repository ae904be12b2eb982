#!/usr/bin/env python3
"""Download MNIST and write it as IDX files under data/mnist/.

Pulls the parquet shards of the ylecun/mnist dataset from Hugging Face
(override the host with --base-url if you sit behind a mirror) and
converts them to the classic gzipped IDX layout the loader expects.
Requires pandas + pyarrow for the parquet step.
"""

import argparse
import gzip
import io
import os
import struct
import sys
import urllib.request

DEFAULT_BASE = "https://huggingface.co/datasets/ylecun/mnist/resolve/main"
FILES = {
    "train": ["mnist/train-00000-of-00001.parquet"],
    "t10k": ["mnist/test-00000-of-00001.parquet"],
}


def fetch(url):
    print(f"fetching {url}", file=sys.stderr)
    with urllib.request.urlopen(url) as resp:
        return resp.read()


def write_idx(out_dir, split, images, labels):
    import numpy as np

    n = images.shape[0]
    images_path = os.path.join(out_dir, f"{split}-images-idx3-ubyte.gz")
    labels_path = os.path.join(out_dir, f"{split}-labels-idx1-ubyte.gz")
    with gzip.open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())
    with gzip.open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    print(f"wrote {images_path} and {labels_path} ({n} samples)", file=sys.stderr)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--base-url", default=DEFAULT_BASE)
    parser.add_argument("--out", default="data/mnist")
    args = parser.parse_args()

    import numpy as np
    import pandas as pd
    from PIL import Image

    os.makedirs(args.out, exist_ok=True)
    for split, shards in FILES.items():
        frames = [
            pd.read_parquet(io.BytesIO(fetch(f"{args.base_url}/{shard}")))
            for shard in shards
        ]
        df = pd.concat(frames, ignore_index=True)
        images = np.stack(
            [np.array(Image.open(io.BytesIO(rec["bytes"]))) for rec in df["image"]]
        )
        labels = df["label"].to_numpy()
        write_idx(args.out, split, images, labels)


if __name__ == "__main__":
    main()
