"""Exception types shared across the package."""


class FreqPortraitError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FreqPortraitError, ValueError):
    """Input values are unusable (non-finite, out of range)."""


class ContractError(FreqPortraitError, ValueError):
    """A precondition on shapes or indices was violated."""


class ConfigError(FreqPortraitError, ValueError):
    """A configuration value is unsupported or inconsistent."""


class FormatError(FreqPortraitError, ValueError):
    """A file on disk does not follow its declared format."""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class DatasetError(FreqPortraitError, ValueError):
    """A dataset cannot support the requested operation."""


class MissingInputError(FreqPortraitError, ValueError):
    """A required input for an inference job was not supplied."""


class NonFiniteLossError(FreqPortraitError, RuntimeError):
    """Training produced a NaN or Inf loss."""

    def __init__(self, step, dump_path=None):
        self.step = step
        self.dump_path = dump_path
        msg = f"non-finite loss at step {step}"
        if dump_path is not None:
            msg += f" (batch dumped to {dump_path})"
        super().__init__(msg)
