"""Convert the 5,000-digit MNIST subset shipped inside the mlxtend wheel to IDX files.

Usage: pip download mlxtend --no-deps -d /tmp/mlx
       python3 scripts/mnist5k_to_idx.py /tmp/mlx/mlxtend-*.whl data/mnist5k
"""
import glob
import gzip
import os
import struct
import sys
import zipfile


def main():
    wheel = glob.glob(sys.argv[1])[0]
    out = sys.argv[2]
    os.makedirs(out, exist_ok=True)
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = [line.split(",") for line in gzip.decompress(raw).decode().strip().split("\n")]
    pixels = bytearray()
    labels = bytearray()
    for row in rows:
        pixels.extend(int(float(v)) for v in row[:-1])
        labels.append(int(float(row[-1])))
    n = len(rows)
    with open(os.path.join(out, "images.idx"), "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(pixels)
    with open(os.path.join(out, "labels.idx"), "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels)


if __name__ == "__main__":
    main()
