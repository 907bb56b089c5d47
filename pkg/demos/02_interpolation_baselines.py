"""Dropping frames and filling them back in without learning.

Keep every (K+1)-th frame, then reconstruct the rest by blending the two
neighbours (linear) or by warping along a Horn-Schunck flow field (flow).
The phantom's texture changes as tissue moves through the slice, so neither
method is exact and both degrade as K grows.

    python demos/02_interpolation_baselines.py
"""
from mvmtwin import metrics
from mvmtwin.baselines import interpolate_series_baseline
from mvmtwin.core import DownsampleSpec, drop_frames
from mvmtwin.phantom import PhantomParams, generate_phantom
from mvmtwin.pipeline import frame_reports

study = generate_phantom(PhantomParams(seed=2))
print(f"{'K':>2} {'method':>7} {'DICE':>7} {'MSEW1':>9} {'PSNR':>6} {'SSIM':>6}")
for K in (1, 3, 6):
    spec = DownsampleSpec(K)
    gappy = drop_frames(study, spec)
    for method in ("linear", "flow"):
        filled = interpolate_series_baseline(gappy, spec, method)
        r = metrics.mean_report(frame_reports(filled, study, spec))
        print(f"{K:>2} {method:>7} {r['dice']['mean']:7.4f} {r['msew1']['mean']:9.2e} "
              f"{r['psnr']['mean']:6.2f} {r['ssim']['mean']:6.4f}")
