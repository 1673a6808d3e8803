"""GeoMeld: synthetic multimodal geospatial pretraining."""

from geomeld._core import (
    TileSample,
    caption_pipeline,
    dw_class_names,
    esa_class_names,
    evaluate,
    generate_tile,
    geomorphon_classify,
    geomorphon_forms,
    gradient_oracles,
    make_masks,
    selfcheck,
    temporal_anchor,
    train,
    verify_caption,
    water_consensus,
    __version__,
)

__all__ = [
    "TileSample",
    "caption_pipeline",
    "dw_class_names",
    "esa_class_names",
    "evaluate",
    "generate_tile",
    "geomorphon_classify",
    "geomorphon_forms",
    "gradient_oracles",
    "make_masks",
    "selfcheck",
    "temporal_anchor",
    "train",
    "verify_caption",
    "water_consensus",
    "__version__",
]
