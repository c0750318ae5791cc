"""Quaternion-valued convolutional neural networks in numpy.

Four-component quaternion algebra, quaternion and real convolutional
layers with exact reverse-mode gradients, RGB/HSV quaternion input
encodings, and a repeated-split experiment harness for the binary
white-blood-cell classification task.
"""

from .quat import (
    Quaternion,
    QTensor,
    add,
    hamilton,
    conjugate,
    norm,
    split_complex,
    recompose,
    qtensor_from_planes,
)
from .layers import (
    ConvParams,
    QConvParams,
    DenseParams,
    glorot_uniform,
    conv2d_forward,
    qconv2d_forward,
    maxpool2d,
    relu,
    flatten_to_real,
    unflatten_to_qtensor,
    dense_forward,
    as_block_conv,
    LayerSpec,
    ModelConfig,
    rvcnn_config,
    qvcnn_config,
    config_from_name,
    CONFIG_NAMES,
    count_parameters,
    Model,
    save_model,
    load_model,
)
from .train import (
    bce_with_logits,
    Adam,
    grad_check,
    train_model,
    save_checkpoint,
    load_checkpoint,
    run_gradient_verification,
)
from .encoding import (
    LabeledSample,
    rgb_to_hsv,
    encode_rgb_quaternion,
    encode_hsv_quaternion,
    concat_channels,
    resize,
    augment_flips,
    read_ppm,
    write_ppm,
    load_image,
)
from .harness import (
    DatasetManifest,
    load_manifest,
    split,
    ExperimentPlan,
    RunResult,
    AggregateStats,
    derive_seed,
    encode_input,
    evaluate,
    load_decoded_images,
    build_run_inputs,
    run_single,
    run_experiment,
    aggregate,
    emit_report,
    generate_synthetic_dataset,
)

__version__ = "0.1.0"
