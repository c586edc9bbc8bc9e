"""PFM (HDR) and binary PPM (preview) images.

Images are (H, W, 3) float arrays with row 0 at the top.
"""

import numpy as np


def write_pfm(path, img):
    """Little-endian float32 PFM, scanlines stored bottom-up (scale -1.0)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PFM image must be (H, W, 3)")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(img[::-1], dtype="<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        channels = 3 if tag == b"PF" else 1
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * channels)
    return data.reshape(h, w, channels)[::-1].astype(np.float64)


def tonemap(img):
    """c / (1 + c) followed by gamma 1/2.2, quantized to 8 bits."""
    c = np.maximum(np.asarray(img, dtype=np.float64), 0.0)
    v = (c / (1.0 + c)) ** (1.0 / 2.2)
    return np.clip(np.round(v * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img):
    """Binary P6 preview of an HDR image."""
    px = tonemap(img)
    h, w, _ = px.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(px.tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        if f.readline().strip() != b"P6":
            raise ValueError(f"{path}: not a binary PPM")
        w, h = (int(v) for v in f.readline().split())
        f.readline()
        return np.frombuffer(f.read(), dtype=np.uint8).reshape(h, w, 3)
