#!/usr/bin/env python3
"""Regenerate the bundled PGM corpora under data/.

Training images: grayscale conversions of the scikit-image sample
collection (public-domain/CC0 imagery) plus a few procedural textures,
all resized to a 256-pixel maximum side. Test images: six standard
pictures (cameraman, moon, coins, page, text, clock) held out from
training. Grayscale uses the BT.601 luma weights; resizing uses local
mean pooling. Everything is deterministic.
"""

import os
import numpy as np

OUT = os.path.join(os.path.dirname(__file__), "..", "data")

TRAIN_SOURCES = [
    "astronaut", "brick", "cell", "chelsea", "checkerboard", "coffee",
    "colorwheel", "grass", "gravel", "horse", "hubble_deep_field",
    "immunohistochemistry", "logo", "microaneurysms",
    "shepp_logan_phantom", "retina", "rocket",
]
TEST_SOURCES = ["camera", "moon", "coins", "page", "text", "clock"]


def to_gray(img):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = (255 * np.clip(img.astype(np.float64) / img.max(), 0, 1)).astype(np.uint8)
    if img.ndim == 3:
        rgb = img[..., :3].astype(np.float64)
        img = np.clip(
            0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2], 0, 255
        ).round().astype(np.uint8)
    return img


def shrink(img, max_side=256):
    h, w = img.shape
    f = max(1, int(np.ceil(max(h, w) / max_side)))
    if f == 1:
        return img
    h2, w2 = (h // f) * f, (w // f) * f
    img = img[:h2, :w2].astype(np.float64)
    img = img.reshape(h2 // f, f, w2 // f, f).mean(axis=(1, 3))
    return np.clip(img, 0, 255).round().astype(np.uint8)


def write_pgm(path, img):
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())
    print(f"{path}: {w}x{h}")


def norm255(a):
    a = a.astype(np.float64)
    a -= a.min()
    if a.max() > 0:
        a /= a.max()
    return (a * 255).round().astype(np.uint8)


def procedural_textures(size=256):
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(20170811)
    out = {}

    # 1/f^2 spectral noise, cloud-like.
    freqs = np.fft.fftfreq(size)
    fx, fy = np.meshgrid(freqs, freqs)
    amp = 1.0 / np.maximum(np.hypot(fx, fy), 1.0 / size) ** 2
    phase = np.exp(2j * np.pi * rng.random((size, size)))
    out["tex_clouds"] = norm255(np.real(np.fft.ifft2(amp * phase)))

    # Smooth blobs.
    out["tex_blobs"] = norm255(gaussian_filter(rng.random((size, size)), 12))

    # Oriented stripes with a slow frequency sweep.
    yy, xx = np.mgrid[0:size, 0:size] / size
    out["tex_stripes"] = norm255(np.sin(2 * np.pi * (8 * xx + 20 * xx * yy)))

    # Overlapping disks on a gradient.
    img = 0.6 * xx + 0.4 * yy
    for _ in range(40):
        cy, cx, r = rng.random(3) * [1.0, 1.0, 0.12]
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < (0.02 + r) ** 2
        img = np.where(mask, rng.random(), img)
    out["tex_disks"] = norm255(gaussian_filter(img, 1.5))

    # Plaid: sum of axis-aligned waves.
    out["tex_plaid"] = norm255(
        np.sin(2 * np.pi * 6 * xx) + np.sin(2 * np.pi * 11 * yy)
        + 0.5 * np.sin(2 * np.pi * 17 * (xx + yy))
    )
    return out


def main():
    import skimage.data as data

    os.makedirs(os.path.join(OUT, "train"), exist_ok=True)
    os.makedirs(os.path.join(OUT, "test"), exist_ok=True)
    os.makedirs(os.path.join(OUT, "manifests"), exist_ok=True)

    train_names = []
    for name in TRAIN_SOURCES:
        img = shrink(to_gray(getattr(data, name)()))
        fname = f"{name}.pgm"
        write_pgm(os.path.join(OUT, "train", fname), img)
        train_names.append(fname)
    left, right, _ = data.stereo_motorcycle()
    for name, img in [("motorcycle_left", left), ("motorcycle_right", right)]:
        fname = f"{name}.pgm"
        write_pgm(os.path.join(OUT, "train", fname), shrink(to_gray(img)))
        train_names.append(fname)
    for name, img in procedural_textures().items():
        fname = f"{name}.pgm"
        write_pgm(os.path.join(OUT, "train", fname), img)
        train_names.append(fname)

    test_names = []
    for name in TEST_SOURCES:
        img = shrink(to_gray(getattr(data, name)()))
        fname = f"{name}.pgm"
        write_pgm(os.path.join(OUT, "test", fname), img)
        test_names.append(fname)

    with open(os.path.join(OUT, "manifests", "train.txt"), "w") as f:
        f.write("# training corpus: scikit-image sample collection + procedural textures\n")
        for n in sorted(train_names):
            f.write(f"../train/{n}\n")
    with open(os.path.join(OUT, "manifests", "test.txt"), "w") as f:
        f.write("# held-out standard test images\n")
        for n in test_names:
            f.write(f"../test/{n}\n")
    print(f"{len(train_names)} training images, {len(test_names)} test images")


if __name__ == "__main__":
    main()
