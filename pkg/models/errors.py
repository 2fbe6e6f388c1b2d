"""
Error hierarchy for the proxy anomaly detection pipeline
Each error carries the process exit code the CLI reports for it
"""


class ProxyADError(Exception):
    """Base error; `exit_code` is what the CLI exits with"""

    exit_code = 1


class ConfigError(ProxyADError):
    exit_code = 2


class SpecError(ConfigError):
    """Invalid phantom specification"""


class ArgumentError(ProxyADError, ValueError):
    """An operation was called outside its argument contract"""

    exit_code = 2


class ModelStateError(ProxyADError):
    """Model used before it was trained or loaded"""

    exit_code = 2


class DatasetError(ProxyADError):
    exit_code = 3

    def __init__(self, message, file=None):
        if file is not None:
            message = f"{message}: {file}"
        super().__init__(message)
        self.file = file


class TrainingDivergence(ProxyADError):
    exit_code = 4

    def __init__(self, stage, epoch, batch, detail=""):
        super().__init__(
            f"training diverged in stage '{stage}' at epoch {epoch}, batch {batch}"
            + (f" ({detail})" if detail else "")
        )
        self.stage = stage
        self.epoch = epoch
        self.batch = batch
