"""What/where CNN engine: synthetic pose-labelled data, two-head training,
pruning, weight transplantation and the diagnostic probes."""

from ._wwcnn import (
    Arch,
    ConfigError,
    Dataset,
    GenConfig,
    GradProbeReport,
    IoError,
    Model,
    NetworkSpec,
    NumericError,
    ParseError,
    ShapeError,
    TrainConfig,
    TransplantReport,
    __version__,
    derive_seed,
    entropy_bits,
    generate,
    kernels,
    load_spec,
    parse_arch,
    parse_spec,
    project_2d,
    read_dataset,
    split_by_instance,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
