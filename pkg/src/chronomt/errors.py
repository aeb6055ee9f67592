"""Exception hierarchy shared across the package.

Validation problems (bad files, bad configs, bad arguments) exit the CLI
with code 1; runtime failures such as training divergence exit with 2.
"""


class ChronomtError(Exception):
    pass


class ValidationError(ChronomtError):
    """Bad input: malformed file, unknown label, inconsistent config."""


class DataFormatError(ValidationError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        where = f"{path}:{line_no}" if line_no is not None else str(path)
        super().__init__(f"{where}: {message}")


class ShapeMismatch(ChronomtError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class DivergenceError(ChronomtError):
    """Non-finite loss or gradient during training."""


class DependencyError(ValidationError):
    """A pipeline stage was requested before the stage it depends on."""

    def __init__(self, stage, needs, artifact):
        self.stage = stage
        self.needs = needs
        super().__init__(
            f"stage '{stage}' requires '{artifact}' which does not exist; run stage '{needs}' first"
        )
