"""2D rigid and deformable image registration toolkit with a synthetic benchmark harness."""
from .datagen import GenSpec, PairSample, draw_transform, generate_dataset, generate_pair, resize_to, synth_test_image
from .deform import DeformConfig, deform_gradient, deform_loss, register_deformable
from .evalbench import BenchConfig, BenchReport, MethodResult, estimate_field_for, field_mae, field_rmse, render_montage, run_benchmark
from .feature import FeatureConfig, detect_fast, describe_brief, estimate_affine_ransac, match_hamming, register_feature
from .geometry import (
    AffineTransform,
    DisplacementField,
    affine_to_field,
    compose_affine,
    invert_affine,
    make_affine,
    read_field,
    upsample_field,
    warp,
    write_field,
)
from .imagecore import build_pyramid, gaussian_blur, sample_bilinear, to_grayscale
from .rigid import OptimizerConfig, ParamModel, cost, register_intensity

__version__ = "0.1.0"
