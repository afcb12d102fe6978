"""Mixture-of-experts depth estimation with sharp boundaries."""

from ._moe_depth import (
    __version__,
    boundary_metrics,
    depth_metrics,
    derive_seed,
    detect_flying_points,
    extract_edges,
    gate_entropy,
    gate_softmax,
    generate_scene,
    mixture_nll,
    run_cli,
    sobel_magnitude,
    unproject,
)


def main(argv=None):
    import sys

    code, out, err = run_cli(sys.argv[1:] if argv is None else list(argv))
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code
