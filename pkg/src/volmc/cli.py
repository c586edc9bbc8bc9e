"""Command-line front end.

    volmc render SCENE [--spp N] [--mode auto|cv|ref|fast] [--vmf F.json] [--cache C.bin]
    volmc reference SCENE [--spp N]
    volmc variance SCENE [--spp M] [--pixels P] [--trials T]
    volmc fit-vmf SCENE [--steps N]
    volmc fit-cache SCENE [--steps N]
    volmc invert SCENE [--views V] [--steps N]
    volmc selftest [--only 1,3]

SCENE is a JSON file or the name of a built-in scene.  Every command takes
--seed, --threads and --out (output directory).  Exit codes: 0 success,
1 usage, 2 data, 3 numeric failure, 4 acceptance failure.
"""

import argparse
import json
import logging
import os
import sys
import time

from . import autodiff as ad
from . import brdf, cache, estimator, imageio, optimize, presets, render, vmf
from .rng import RngStream
from .scene import Camera, SceneError, load_scene

log = logging.getLogger("volmc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_ACCEPT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def build_parser():
    p = _Parser(prog="volmc", description="Volumetric Monte Carlo rendering and material inversion.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, scene=True):
        if scene:
            sp.add_argument("scene", help="scene JSON file or built-in name (" + ", ".join(presets.PRESETS) + ")")
        sp.add_argument("--seed", type=_seed, default=0)
        sp.add_argument("--threads", type=_positive, default=1)
        sp.add_argument("--out", default="out", help="output directory")
        return sp

    def counts(sp, spp=None):
        if spp is not None:
            sp.add_argument("--spp", type=_positive, default=spp)
        sp.add_argument("--n", type=_positive, default=64, help="primary quadrature samples")
        sp.add_argument("--k", type=_positive, default=1, help="surface samples per ray")
        sp.add_argument("--m", type=_positive, default=16, help="reference samples per shading point")
        sp.add_argument("--m-fast", type=_positive, default=64, help="fast-cache samples per shading point")
        sp.add_argument("--n-sec", type=_positive, default=32, help="reference-cache quadrature samples")
        sp.add_argument("--width", type=_positive)
        sp.add_argument("--height", type=_positive)

    sp = common(sub.add_parser("render", help="render an image (PFM + PPM)"))
    counts(sp, 4)
    sp.add_argument("--mode", choices=("auto", "cv", "ref", "fast"), default="auto")
    sp.add_argument("--vmf", help="fitted vMF field JSON")
    sp.add_argument("--cache", help="fast-cache blob")

    sp = common(sub.add_parser("reference", help="high-spp reference-only render"))
    counts(sp, 64)

    sp = common(sub.add_parser("variance", help="variance CSV for the sampling/caching ablation"))
    counts(sp, 16)
    sp.add_argument("--pixels", type=_positive, default=64)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--vmf", help="fitted vMF field JSON (fitted on the fly if absent)")
    sp.add_argument("--cache", help="fast-cache blob (trained on the fly if absent)")
    sp.add_argument("--fit-steps", type=_positive, default=800)
    sp.add_argument("--cache-steps", type=_positive, default=2000)

    sp = common(sub.add_parser("fit-vmf", help="fit the vMF sampler (JSON + loss CSV)"))
    counts(sp)
    sp.add_argument("--steps", type=_positive, default=800)
    sp.add_argument("--res", type=_positive, default=8)
    sp.add_argument("--lobes", type=_positive, default=32)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--batch", type=_positive, default=256)

    sp = common(sub.add_parser("fit-cache", help="train the fast cache (blob + loss CSV)"))
    sp.add_argument("--steps", type=_positive, default=2000)
    sp.add_argument("--batch", type=_positive, default=1024)
    sp.add_argument("--lr", type=float, default=3e-3)
    sp.add_argument("--lr-final", type=float, default=3e-4)
    sp.add_argument("--n-sec", type=_positive, default=32, help="reference-cache quadrature samples")

    sp = common(sub.add_parser("invert", help="recover the material from synthetic views"))
    counts(sp)
    sp.add_argument("--views", type=_positive, default=16)
    sp.add_argument("--size", type=_positive, default=32)
    sp.add_argument("--target-spp", type=_positive, default=16)
    sp.add_argument("--steps", type=_positive, default=250)
    sp.add_argument("--batch", type=_positive, default=512)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--cache-steps", type=int, default=300)
    sp.add_argument("--init", default="0.05,0.5,0.5,0.5,0.5", help="initial m,r,a_r,a_g,a_b")
    sp.add_argument("--render-every", type=int, default=50)

    sp = common(sub.add_parser("selftest", help="run the acceptance suite"), scene=False)
    sp.add_argument("--only", help="comma-separated criterion numbers")
    return p


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _scene(args):
    name = args.scene
    if os.path.isfile(name):
        try:
            return load_scene(name)
        except SceneError as exc:
            raise DataError(f"{name}: {exc}") from None
        except (OSError, UnicodeDecodeError) as exc:
            raise DataError(f"{name}: {exc}") from None
    if name in presets.PRESETS:
        return presets.by_name(name)
    raise DataError(f"{name}: no such scene file or built-in scene")


def _resize(scene, args):
    if scene.camera is None:
        raise DataError(f"{args.scene}: camera: scene has no camera")
    if getattr(args, "width", None) or getattr(args, "height", None):
        c = scene.camera
        scene.camera = Camera(
            c.position, c.look_at, c.up, c.fov_deg, args.width or c.width, args.height or c.height
        )
    return scene


def _outdir(args):
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{args.out}: {exc}") from None
    return args.out


def _write_text(path, text):
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_vmf(path):
    try:
        return vmf.VmfField.load(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_cache(path):
    try:
        return cache.FastCache.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _loss_csv(name, trace):
    return f"step,{name}\n" + "".join(f"{i},{v:.10g}\n" for i, v in enumerate(trace))


def _save_images(out, stem, img):
    imageio.write_pfm(os.path.join(out, stem + ".pfm"), img)
    imageio.write_ppm(os.path.join(out, stem + ".ppm"), img)


def _cfg(args, mode):
    return estimator.EstimatorConfig(mode, k=args.k, m=args.m, m_fast=args.m_fast, n=args.n)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_render(args):
    scene = _resize(_scene(args), args)
    field = _load_vmf(args.vmf) if args.vmf else None
    fast = _load_cache(args.cache) if args.cache else None
    mode = args.mode
    if mode == "auto":
        mode = "cv" if fast is not None else "ref"
    if mode in ("cv", "fast") and fast is None:
        raise UsageError(f"--mode {mode} needs --cache")
    ref = cache.ReferenceCache(scene, n_sec=args.n_sec, seed=args.seed)
    fast_fn = fast.bind(scene) if fast is not None else None
    img = render.render_image(
        scene, _cfg(args, mode), estimator.Sampler(field), args.spp, args.seed, ref, fast_fn, args.threads
    )
    out = _outdir(args)
    _save_images(out, "render", img)
    log.info("wrote %s/render.pfm and render.ppm (%s mode, %d spp)", out, mode, args.spp)
    return EXIT_OK


def cmd_reference(args):
    scene = _resize(_scene(args), args)
    ref = cache.ReferenceCache(scene, n_sec=args.n_sec, seed=args.seed)
    img = render.render_image(scene, _cfg(args, "ref"), estimator.Sampler(), args.spp, args.seed, ref, None, args.threads)
    out = _outdir(args)
    _save_images(out, "reference", img)
    return EXIT_OK


def cmd_variance(args):
    if args.trials < 2:
        raise UsageError("--trials must be >= 2")
    scene = _resize(_scene(args), args)
    rng = RngStream(args.seed)
    ref = cache.ReferenceCache(scene, n_sec=args.n_sec, seed=args.seed)
    if args.vmf:
        field = _load_vmf(args.vmf)
    else:
        field, _ = optimize.fit_vmf_scene(scene, args.fit_steps, rng.spawn(1), seed=args.seed, ref_fn=ref)
    if args.cache:
        fast = _load_cache(args.cache)
    else:
        fast = cache.FastCache.init(rng.spawn(2), scene.lo, scene.hi)
        cache.train_fast_cache(fast, scene, ref, args.cache_steps, rng.spawn(3), lr_final=3e-4)
    pix = render.spread_pixels(scene.camera, min(args.pixels, scene.camera.n_pixels), scene)
    samples = render.variance_variants(
        scene, pix, args.trials, args.seed, args.m, args.m_fast, field, fast.bind(scene), ref, args.threads
    )
    out = _outdir(args)
    _write_text(os.path.join(out, "variance.csv"), render.variance_csv(samples, args.m))
    for name, s in samples.items():
        log.info("%-10s mean variance %.6g", name, float(s.var(axis=0, ddof=1).mean()))
    return EXIT_OK


def cmd_fit_vmf(args):
    scene = _resize(_scene(args), args)
    ref = cache.ReferenceCache(scene, n_sec=args.n_sec, seed=args.seed)
    field, trace = optimize.fit_vmf_scene(
        scene, args.steps, RngStream(args.seed), args.res, args.lobes, args.lr, args.batch, args.m, args.n,
        seed=args.seed, ref_fn=ref,
    )
    out = _outdir(args)
    field.save(os.path.join(out, "vmf.json"))
    _write_text(os.path.join(out, "vmf_loss.csv"), _loss_csv("loss", trace))
    return EXIT_OK


def cmd_fit_cache(args):
    scene = _scene(args)
    rng = RngStream(args.seed)
    ref = cache.ReferenceCache(scene, n_sec=args.n_sec, seed=args.seed)
    fast = cache.FastCache.init(rng.spawn(1), scene.lo, scene.hi)
    trace = cache.train_fast_cache(fast, scene, ref, args.steps, rng.spawn(2), args.batch, args.lr, args.lr_final)
    x, w = cache.TrainingRays(scene, rng.spawn(3)).draw(rng.spawn(4), 10_000)
    log.info("held-out relative L2 %.4f", cache.relative_l2(fast, scene, ref, x, w))
    out = _outdir(args)
    fast.save(os.path.join(out, "cache.bin"))
    _write_text(os.path.join(out, "cache_loss.csv"), _loss_csv("loss", trace))
    return EXIT_OK


def _parse_init(text):
    try:
        v = [float(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"--init: expected 5 comma-separated numbers, got {text!r}") from None
    if len(v) != 5:
        raise UsageError(f"--init: expected 5 values (m,r,a_r,a_g,a_b), got {len(v)}")
    return brdf.ConstantMaterial(v[0], v[1], v[2:])


def cmd_invert(args):
    scene = _scene(args)
    truth = scene.materials
    init = _parse_init(args.init)
    views = Camera.orbit(args.views, width=args.size, height=args.size, fov_deg=30.0)
    out = _outdir(args)
    images = synth_views(scene, views, args.target_spp, args.seed, args.threads)
    cfg = optimize.InvertConfig(
        steps=args.steps,
        batch=args.batch,
        lr=args.lr,
        lr_final=args.lr / 10.0,
        cache_steps=args.cache_steps,
        m=args.m,
        m_fast=args.m_fast,
        n=args.n,
        k=args.k,
        n_sec=args.n_sec,
        seed=args.seed,
        log_every=25,
    )

    def on_step(step, material, fast, field):
        if args.render_every > 0 and (step + 1) % args.render_every == 0:
            scene.camera = views[0]
            img = render.render_image(
                scene, _cfg(args, "cv"), estimator.Sampler(field), 1, args.seed, ref, fast.bind(scene), args.threads
            )
            imageio.write_ppm(os.path.join(out, f"step_{step + 1:04d}.ppm"), img)

    ref = cache.ReferenceCache(scene, n_sec=args.n_sec, seed=args.seed)
    material, rows, _, _ = optimize.invert_scene(scene, views, images, init, cfg, truth=truth, on_step=on_step)
    _write_text(os.path.join(out, "invert.csv"), optimize.trace_csv(rows))
    _write_text(os.path.join(out, "material.json"), json.dumps(material.to_json(), indent=1) + "\n")
    log.info("recovered %s (truth %s)", material.to_json(), truth.to_json())
    return EXIT_OK


def synth_views(scene, views, spp, seed, threads=1):
    """Reference-only target images (H*W, 3) of ``scene`` from each camera."""
    ref = cache.ReferenceCache(scene, n_sec=32, seed=seed)
    cfg = estimator.EstimatorConfig("ref", m=16, n=64)
    images = []
    keep = scene.camera
    for v, cam in enumerate(views):
        scene.camera = cam
        img = render.render_image(scene, cfg, estimator.Sampler(), spp, seed + 1000 + v, ref, None, threads)
        images.append(img.reshape(-1, 3))
    scene.camera = keep
    return images


def cmd_selftest(args):
    from . import acceptance

    only = None
    if args.only:
        try:
            only = [int(t) for t in args.only.split(",")]
        except ValueError:
            raise UsageError(f"--only: expected criterion numbers, got {args.only!r}") from None
        bad = [c for c in only if c not in acceptance.CRITERIA]
        if bad:
            raise UsageError(f"--only: unknown criteria {bad}")
    results = acceptance.run(only, seed=args.seed, workdir=args.out, threads=args.threads)
    print(acceptance.summary_table(results))
    failed = [r for r in results if not r.passed]
    if failed:
        print("failing: " + ", ".join(f"criterion {r.number} ({r.name})" for r in failed), file=sys.stderr)
        return EXIT_ACCEPT
    return EXIT_OK


COMMANDS = {
    "render": cmd_render,
    "reference": cmd_reference,
    "variance": cmd_variance,
    "fit-vmf": cmd_fit_vmf,
    "fit-cache": cmd_fit_cache,
    "invert": cmd_invert,
    "selftest": cmd_selftest,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("volmc: a command is required (" + ", ".join(COMMANDS) + ")")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
        t0 = time.time()
        code = COMMANDS[args.command](args)
        log.debug("%s finished in %.1fs", args.command, time.time() - t0)
        return code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (DataError, SceneError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (cache.NumericError, ad.DomainError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
