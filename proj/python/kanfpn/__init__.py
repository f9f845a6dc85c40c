"""Python access to the kanfpn C++ core."""

from ._kanfpn import (
    KanfpnError,
    PoseModel,
    conv2d,
    decode_keypoints,
    generate,
    gradcheck,
    gradcheck_scopes,
    gram_basis,
    kagn_param_count,
    lr_at,
    paper_ap,
    pck,
    render_targets,
    stem_param_count,
    train_stage,
    variant_label,
    variants,
)

__all__ = [
    "KanfpnError",
    "PoseModel",
    "conv2d",
    "decode_keypoints",
    "generate",
    "gradcheck",
    "gradcheck_scopes",
    "gram_basis",
    "kagn_param_count",
    "lr_at",
    "paper_ap",
    "pck",
    "render_targets",
    "stem_param_count",
    "train_stage",
    "variant_label",
    "variants",
]
