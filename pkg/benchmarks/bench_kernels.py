"""Time the hot kernels on both backends and check they agree.

Shapes mirror the reference network's busiest layers (level-1 feature
blocks and the first strided downsampler) at a desk-sized extent.  Run
from the repo root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --extent 32 --repeats 5
"""

import argparse
import time

import numpy as np

from voxseg.engine.backend import available_backends, kernels, use_backend


def _cases(extent, width, rng):
    e = extent
    x = rng.standard_normal((width, e, e, e)).astype(np.float32)
    w3 = rng.standard_normal((width, width, 3, 3, 3)).astype(np.float32)
    w4 = rng.standard_normal((3 * width, width, 4, 4, 4)).astype(np.float32)
    dy3 = rng.standard_normal((width, e, e, e)).astype(np.float32)
    dy4 = rng.standard_normal((3 * width, e // 4, e // 4, e // 4)).astype(np.float32)

    def pool_fwd(k):
        return k.maxpool3d_forward(x, (2, 2, 2), (2, 2, 2))[0]

    def pool_bwd(k):
        vals, idx = k.maxpool3d_forward(x, (2, 2, 2), (2, 2, 2))
        return k.maxpool3d_backward(np.ones_like(vals), idx, x.shape)

    return [
        (f"conv3d fwd {width}->{width} k3 p1",
         lambda k: k.conv3d_forward(x, w3, (1, 1, 1), (1, 1, 1))),
        (f"conv3d fwd {width}->{3 * width} k4 s4",
         lambda k: k.conv3d_forward(x, w4, (4, 4, 4), (0, 0, 0))),
        (f"conv3d input grad k3 p1",
         lambda k: k.conv3d_input_grad(dy3, w3, (1, 1, 1), (1, 1, 1), x.shape)),
        (f"conv3d input grad k4 s4",
         lambda k: k.conv3d_input_grad(dy4, w4, (4, 4, 4), (0, 0, 0), x.shape)),
        (f"conv3d weight grad k3 p1",
         lambda k: k.conv3d_weight_grad(x, dy3, (1, 1, 1), (1, 1, 1), w3.shape)),
        ("maxpool3d fwd 2^3",
         pool_fwd),
        ("maxpool3d bwd 2^3",
         pool_bwd),
    ]


def _median_ms(fn, k, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(k)
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--extent", type=int, default=24,
                    help="cubic spatial extent (default 24)")
    ap.add_argument("--width", type=int, default=32,
                    help="level-1 channel width (default 32)")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = available_backends()
    print(f"backends: {', '.join(backends)}   "
          f"extent {args.extent}^3, width {args.width}, "
          f"median of {args.repeats}")
    if "cython" not in backends:
        print("note: compiled extension not built; timing numpy only")

    rng = np.random.default_rng(args.seed)
    cases = _cases(args.extent, args.width, rng)

    name_w = max(len(n) for n, _ in cases)
    header = f"{'kernel':<{name_w}}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) > 1:
        header += f"{'ratio':>9}{'rel diff':>11}"
    print(header)
    for name, fn in cases:
        row = f"{name:<{name_w}}"
        outs, med = {}, {}
        for b in backends:
            with use_backend(b):
                k = kernels()
                outs[b] = np.asarray(fn(k))
                med[b] = _median_ms(fn, k, args.repeats)
            row += f"{med[b]:>10.1f}ms"
        if len(backends) > 1:
            ratio = med["cython"] / med["numpy"]
            # accumulation order differs, so compare relative to the scale
            scale = max(np.max(np.abs(outs["cython"])), 1e-30)
            diff = float(np.max(np.abs(outs["cython"] - outs["numpy"])) / scale)
            row += f"{ratio:>8.2f}x{diff:>11.2e}"
            if diff > 1e-4:
                row += "  <-- backends disagree"
        print(row)


if __name__ == "__main__":
    main()
