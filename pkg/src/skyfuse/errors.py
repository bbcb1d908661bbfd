"""Exception hierarchy shared by every stage of the pipeline."""


class SkyfuseError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1
    kind = "error"


class ContractError(SkyfuseError, ValueError):
    exit_code = 2
    kind = "contract"


class DimensionError(ContractError):
    kind = "dimension"


class ParameterError(SkyfuseError, ValueError):
    exit_code = 2
    kind = "parameter"


class InputError(SkyfuseError, ValueError):
    exit_code = 2
    kind = "input"


class FormatError(SkyfuseError, ValueError):
    exit_code = 3
    kind = "format"


class LabelingError(SkyfuseError, ValueError):
    exit_code = 3
    kind = "labeling"


class PipelineError(SkyfuseError, RuntimeError):
    exit_code = 3
    kind = "pipeline"


class SplitError(SkyfuseError, ValueError):
    exit_code = 2
    kind = "split"


class ArtifactIOError(SkyfuseError, OSError):
    exit_code = 3
    kind = "io"


class NonFiniteError(SkyfuseError, FloatingPointError):
    exit_code = 4
    kind = "divergence"
