"""Image rendering over a thread pool.

Pixels are split into fixed-size chunks independent of the thread count;
every pixel draws from its own counter-based streams, so the output is
bit-identical for any number of workers.
"""

import concurrent.futures

import numpy as np

from . import estimator

CHUNK = 256


def render_pixels(scene, pixel_ids, cfg, sampler, spp, seed, ref_fn=None, fast_fn=None, trial0=0):
    """Mean over ``spp`` trials of the pixel estimates for the given camera pixels."""
    o, d = scene.camera.rays(pixel_ids)
    acc = np.zeros((len(pixel_ids), 3))
    for s in range(spp):
        est = estimator.estimate_pixels(scene, o, d, pixel_ids, trial0 + s, seed, cfg, sampler, ref_fn, fast_fn)
        acc += est.value
    return acc / spp


def render_image(scene, cfg, sampler, spp, seed, ref_fn=None, fast_fn=None, threads=1, chunk=CHUNK):
    """(H, W, 3) image; rows from the top."""
    cam = scene.camera
    if cam is None:
        raise ValueError("scene has no camera")
    ids = np.arange(cam.n_pixels)
    chunks = [ids[i : i + chunk] for i in range(0, ids.size, chunk)]

    def work(c):
        return render_pixels(scene, c, cfg, sampler, spp, seed, ref_fn, fast_fn)

    if threads <= 1:
        parts = [work(c) for c in chunks]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    return np.concatenate(parts).reshape(cam.height, cam.width, 3)


def pixel_trials(scene, pixel_ids, cfg, sampler, trials, seed, ref_fn=None, fast_fn=None, threads=1):
    """Independent single-sample pixel estimates, shape (trials, P, 3)."""

    def work(t):
        return render_pixels(scene, pixel_ids, cfg, sampler, 1, seed, ref_fn, fast_fn, trial0=t)

    if threads <= 1:
        return np.stack([work(t) for t in range(trials)])
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return np.stack(list(pool.map(work, range(trials))))


def variance_variants(scene, pixel_ids, trials, seed, m=16, m_fast=64, field=None, fast_fn=None, ref_fn=None, threads=1):
    """Single-sample pixel trials for the sampling/caching ablation.

    Variants: ``neither`` (cosine, reference only), ``vmf`` (fitted sampler,
    reference only) and ``vmf+cache`` (fitted sampler with the control
    variate).  Variants whose ingredients are missing are skipped.
    """
    out = {}
    plain = estimator.EstimatorConfig("ref", m=m)
    out["neither"] = pixel_trials(scene, pixel_ids, plain, estimator.Sampler(), trials, seed, ref_fn, None, threads)
    if field is not None:
        sampler = estimator.Sampler(field)
        out["vmf"] = pixel_trials(scene, pixel_ids, plain, sampler, trials, seed, ref_fn, None, threads)
        if fast_fn is not None:
            cv = estimator.EstimatorConfig("cv", m=m, m_fast=m_fast)
            out["vmf+cache"] = pixel_trials(scene, pixel_ids, cv, sampler, trials, seed, ref_fn, fast_fn, threads)
    return out


def variance_csv(samples, spp):
    """CSV text from ``variant -> (T, P, 3)`` trial arrays."""
    lines = [estimator.CSV_HEADER]
    for name, s in samples.items():
        lines += estimator.variance_rows(name, spp, s)
    return "\n".join(lines) + "\n"


def spread_pixels(camera, count, scene=None):
    """``count`` pixel ids evenly spaced in scan order (over pixels that meet density if a scene is given)."""
    ids = np.arange(camera.n_pixels)
    if scene is not None:
        o, d = camera.rays(ids)
        t0, t1, _ = scene.segment(o, d)
        hit = ids[t1 > t0]
        ids = hit if hit.size >= count else ids
    return ids[np.linspace(0, ids.size - 1, count).astype(np.int64)]
