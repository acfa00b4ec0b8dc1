"""Python surface of the block-reusing speech transformer core."""

from ._core import (  # noqa: F401
    BrstError,
    Model,
    apply_cmvn,
    cer,
    compute_fbank,
    ctc_greedy,
    ctc_loss,
    ctc_prefix_beam,
    linear_cka,
    lr_at,
    preset_names,
    preset_param_counts,
    read_fbnk,
    spec_augment,
    write_fbnk,
)

__all__ = [
    "BrstError",
    "Model",
    "apply_cmvn",
    "cer",
    "compute_fbank",
    "ctc_greedy",
    "ctc_loss",
    "ctc_prefix_beam",
    "linear_cka",
    "lr_at",
    "preset_names",
    "preset_param_counts",
    "read_fbnk",
    "spec_augment",
    "write_fbnk",
]
